//! Runs the geometry acceptance checks and prints the JUnit report.

use nvs_core::verify::{junit_xml, run_suite, Suite, Tolerances};

fn main() {
    let results = run_suite(Suite::Geometry, &Tolerances::default());
    for r in &results {
        println!("{r}");
    }
    print!("{}", junit_xml(Suite::Geometry, &results));
}
