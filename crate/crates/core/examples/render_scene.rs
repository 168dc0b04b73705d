//! Renders each procedural scene from the canonical camera and writes PNGs.

use nvs_core::geometry::{render_synthetic, Camera, SyntheticScene};

fn main() -> nvs_core::Result<()> {
    let out = std::env::temp_dir().join("nvs-render-scene");
    std::fs::create_dir_all(&out)?;
    for scene in [SyntheticScene::Plane, SyntheticScene::BoxRoom, SyntheticScene::Spheres] {
        let (image, depth) = render_synthetic(scene, &Camera::canonical())?;
        let valid = depth.validity().iter().filter(|v| **v).count();
        let path = out.join(format!("{scene:?}.png").to_lowercase());
        image.write_png(&path)?;
        println!("{scene:?}: {valid} pixels with depth -> {}", path.display());
    }
    Ok(())
}
