//! Serves a mixture denoiser over TCP and drives it from a remote client.

use std::sync::Arc;

use nvs_core::denoiser::{Denoiser, GmmFrameDenoiser, GmmPrior, LatentVideo};
use nvs_core::image::{ImageGrid, Shape};
use nvs_core::wire::{RemoteDenoiser, WireServer};

fn main() -> nvs_core::Result<()> {
    let shape = Shape::new(4, 4, 2);
    let prior = GmmPrior::uniform(vec![vec![0.2; shape.len()], vec![0.8; shape.len()]], 1e-2)?;
    let local = Arc::new(GmmFrameDenoiser::new(prior, shape, 2)?);
    let (addr, _server) = WireServer::new(local.clone()).spawn_tcp("127.0.0.1:0")?;
    let remote = RemoteDenoiser::connect(&format!("tcp://{addr}"))?;
    println!("connected to {addr}: {:?}", remote.capabilities());

    let x = LatentVideo::new(vec![ImageGrid::filled(shape, 0.3), ImageGrid::filled(shape, 0.9)])?;
    let a = remote.denoise(&x, 0.5)?;
    let b = local.denoise(&x, 0.5)?;
    let diff = a.zip_map(&b, |p, q| (p - q).abs())?.values().fold(0.0, f64::max);
    println!("max |remote - local| = {diff:.2e} (f32 on the wire)");
    let g = remote.vjp(&x, 0.5, &x)?;
    println!("vjp norm {:.6}", g.norm());
    Ok(())
}
