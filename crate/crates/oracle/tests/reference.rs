use nvs_oracle::{gradient, jacobian, lambda_formula, pearson, rho_ladder_sigma, transpose_apply};

#[test]
fn lambda_at_zero_q_is_minus_one() {
    assert_eq!(lambda_formula(1e-6, 1.0, 0.5, 0.25, 0.5), Some(-1.0));
}

#[test]
fn lambda_negative_radicand_has_no_value() {
    // q = -1, a = 1: q^2 + 4aq = -3
    assert_eq!(lambda_formula(1.0, 1.0, 0.0, 1.0, 0.0), None);
}

#[test]
fn ladder_hits_both_ends() {
    assert_eq!(rho_ladder_sigma(80.0, 0.002, 7, 18, 0), 80.0);
    assert!((rho_ladder_sigma(80.0, 0.002, 7, 18, 17) - 0.002).abs() < 1e-15);
}

#[test]
fn finite_differences_of_a_quadratic() {
    let g = gradient(|x| x[0] * x[0] + 3.0 * x[0] * x[1], &[1.0, 2.0], 1e-5);
    assert!((g[0] - 8.0).abs() < 1e-6 && (g[1] - 3.0).abs() < 1e-6);
    let j = jacobian(|x| vec![x[0] * x[1], x[1]], &[2.0, 5.0], 1e-5);
    let v = transpose_apply(&j, &[1.0, 1.0]);
    assert!((v[0] - 5.0).abs() < 1e-6 && (v[1] - 3.0).abs() < 1e-6);
}

#[test]
fn pearson_of_affine_data() {
    let xs = [1.0, 2.0, 3.0, 4.0];
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3.0 * x).collect();
    assert!((pearson(&xs, &ys) + 1.0).abs() < 1e-12);
}
