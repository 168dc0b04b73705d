//! Seeded corruption corpus for the framing decoder and server loop.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::codec::{decode_capabilities, Message, Opcode, Reply, Request, TensorFrame};
use super::server::WireServer;
use crate::denoiser::EchoDenoiser;

/// Payload cap used while fuzzing so corrupted lengths never allocate much.
pub const FUZZ_MAX_PAYLOAD: u64 = 1 << 20;

fn random_tensor(rng: &mut ChaCha8Rng, rank: usize) -> TensorFrame {
    let dims: Vec<u32> = (0..rank).map(|_| rng.random_range(1..4)).collect();
    let n: u32 = dims.iter().product();
    let data = (0..n).map(|_| f32::from_bits(rng.random())).collect();
    TensorFrame { dims, data }
}

fn seed_message(rng: &mut ChaCha8Rng) -> Message {
    match rng.random_range(0..5) {
        0 => Message::new(Opcode::Hello, Vec::new()),
        1 => Request::Denoise {
            seq: rng.random(),
            sigma: rng.random(),
            x: random_tensor(rng, 4),
            conditioning: rng.random_bool(0.5).then(|| random_tensor(rng, 3)),
        }
        .to_message(),
        2 => Request::Vjp {
            seq: rng.random(),
            sigma: rng.random(),
            x: random_tensor(rng, 4),
            cotangent: random_tensor(rng, 4),
        }
        .to_message(),
        3 => Reply::Result {
            seq: rng.random(),
            tensor: random_tensor(rng, 4),
        }
        .to_message(),
        _ => Reply::Error {
            seq: rng.random(),
            message: "fuzz".into(),
        }
        .to_message(),
    }
}

/// `count` corrupted frames: truncations, byte flips, forged lengths and
/// opcodes, and random garbage, in a fixed order for a given seed.
pub fn corpus(seed: u64, count: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut b = seed_message(&mut rng).encode();
            match rng.random_range(0..6) {
                0 => {
                    let cut = rng.random_range(0..b.len());
                    b.truncate(cut);
                }
                1 => {
                    for _ in 0..rng.random_range(1..4) {
                        let i = rng.random_range(0..b.len());
                        b[i] ^= 1 << rng.random_range(0..8);
                    }
                }
                2 => {
                    let len: u64 = if rng.random_bool(0.5) { rng.random() } else { rng.random_range(0..64) };
                    b[7..15].copy_from_slice(&len.to_le_bytes());
                }
                3 => b[6] = rng.random_range(5..=255),
                4 => {
                    // inflate a tensor dimension inside the payload
                    if b.len() > 32 {
                        let i = rng.random_range(15..b.len() - 4);
                        b[i..i + 4].copy_from_slice(&rng.random::<u32>().to_le_bytes());
                    }
                }
                _ => {
                    let n = rng.random_range(0..48);
                    b = (0..n).map(|_| rng.random()).collect();
                }
            }
            b
        })
        .collect()
}

/// Runs one corrupted frame through every decoder and a server session.
/// Returns `false` if anything panicked.
pub fn survives(bytes: &[u8]) -> bool {
    catch_unwind(AssertUnwindSafe(|| {
        if let Ok((msg, _)) = Message::decode(bytes, FUZZ_MAX_PAYLOAD) {
            let _ = Request::parse(&msg);
            let _ = Reply::parse(&msg);
            let _ = decode_capabilities(&msg.payload);
        }
        let _ = TensorFrame::decode(bytes);
        let server = WireServer::new(Arc::new(EchoDenoiser {
            frame_count: 1,
            channels: 3,
            supports_vjp: true,
        }))
        .with_max_payload(FUZZ_MAX_PAYLOAD);
        let mut out = Vec::new();
        let _ = server.serve(bytes, &mut out);
        // every reply the server wrote must itself be well framed
        let mut rest = &out[..];
        while !rest.is_empty() {
            let (_, used) = Message::decode(rest, FUZZ_MAX_PAYLOAD).expect("server reply is framed");
            rest = &rest[used..];
        }
    }))
    .is_ok()
}
