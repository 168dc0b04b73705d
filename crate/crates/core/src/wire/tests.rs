use std::io::Write;
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::denoiser::{gmm_denoise, gmm_vjp, Denoiser, EchoDenoiser, GmmFrameDenoiser, GmmPrior, LatentVideo};
use crate::image::{ImageGrid, Shape};

fn echo_server(vjp: bool, frames: usize, channels: usize) -> String {
    let server = WireServer::new(Arc::new(EchoDenoiser {
        frame_count: frames,
        channels,
        supports_vjp: vjp,
    }));
    let (addr, _) = server.spawn_tcp("127.0.0.1:0").unwrap();
    format!("tcp://{addr}")
}

fn random_video(rng: &mut ChaCha8Rng, frames: usize, shape: Shape) -> LatentVideo {
    LatentVideo::new(
        (0..frames)
            .map(|_| ImageGrid::from_fn(shape, |_, _, _| rng.random_range(-2.0..2.0)))
            .collect(),
    )
    .unwrap()
}

fn as_f32(v: &LatentVideo) -> LatentVideo {
    v.map(|x| x as f32 as f64)
}

#[test]
fn handshake_reports_capabilities() {
    let client = WireClient::connect(&echo_server(false, 3, 4), DEFAULT_TIMEOUT).unwrap();
    let caps = client.capabilities();
    assert_eq!((caps.frame_count, caps.channels, caps.supports_vjp), (3, 4, false));
    assert_eq!(caps.latent_space_id, "pixel");
    assert!(caps.single_flight);
}

#[test]
fn echo_returns_input_bytes() {
    let mut client = WireClient::connect(&echo_server(true, 2, 3), DEFAULT_TIMEOUT).unwrap();
    let x = TensorFrame::new(vec![2, 2, 2, 3], (0..24).map(|i| f32::from_bits(0x3f80_0000 + i * 977)).collect()).unwrap();
    let out = client.denoise(x.clone(), 1.5, None).unwrap();
    assert_eq!(out.encode(), x.encode());
    let cot = TensorFrame::new(x.dims.clone(), vec![0.25; 24]).unwrap();
    assert_eq!(client.vjp(x, 1.5, cot.clone()).unwrap(), cot);
}

#[test]
fn vjp_refused_without_capability() {
    let mut client = WireClient::connect(&echo_server(false, 1, 1), DEFAULT_TIMEOUT).unwrap();
    let x = TensorFrame::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let err = client.vjp(x.clone(), 1.0, x.clone()).unwrap_err();
    assert!(matches!(err, WireError::Remote { seq: 1, .. }), "{err}");
    // the stream is still usable
    assert_eq!(client.denoise(x.clone(), 1.0, None).unwrap(), x);
}

#[test]
fn unknown_opcode_keeps_connection() {
    let mut client = WireClient::connect(&echo_server(false, 1, 1), DEFAULT_TIMEOUT).unwrap();
    let odd = Message {
        version: VERSION,
        opcode: 42,
        payload: vec![1, 2, 3],
    };
    client.send_raw(&odd.encode()).unwrap();
    let reply = client.recv_raw().unwrap();
    assert_eq!(reply.op(), Some(Opcode::Error));
    assert!(matches!(Reply::parse(&reply).unwrap(), Reply::Error { message, .. } if message.contains("42")));
    let x = TensorFrame::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
    assert_eq!(client.denoise(x.clone(), 1.0, None).unwrap(), x);
}

#[test]
fn malformed_request_gets_addressed_error() {
    let mut client = WireClient::connect(&echo_server(false, 2, 1), DEFAULT_TIMEOUT).unwrap();
    // wrong frame count for this server
    let x = TensorFrame::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
    assert!(matches!(client.denoise(x, 1.0, None), Err(WireError::Remote { seq: 1, .. })));
}

#[test]
fn version_mismatch_closes() {
    let addr = echo_server(false, 1, 1);
    let stream = std::net::TcpStream::connect(addr.trim_start_matches("tcp://")).unwrap();
    let mut w = stream.try_clone().unwrap();
    let hello = Message {
        version: 9,
        opcode: 0,
        payload: vec![],
    };
    w.write_all(&hello.encode()).unwrap();
    let mut r = stream;
    let reply = Message::read_from(&mut r, 1 << 20).unwrap().unwrap();
    assert_eq!(reply.op(), Some(Opcode::Error));
    assert!(Message::read_from(&mut r, 1 << 20).unwrap().is_none());
}

#[test]
fn wrong_magic_rejected() {
    let addr = echo_server(false, 1, 1);
    let mut stream = std::net::TcpStream::connect(addr.trim_start_matches("tcp://")).unwrap();
    stream.write_all(b"GET / HTTP/1.1\n").unwrap();
    let reply = Message::read_from(&mut stream, 1 << 20).unwrap().unwrap();
    assert_eq!(reply.op(), Some(Opcode::Error));
    assert!(Message::read_from(&mut stream, 1 << 20).unwrap().is_none());
}

/// Answers the handshake, then replies to every request with `reply(seq)`.
fn scripted_server(reply: impl Fn(u64) -> Option<Reply> + Send + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let caps = crate::denoiser::Capabilities {
            supports_vjp: true,
            frame_count: 1,
            channels: 1,
            latent_space_id: "pixel".into(),
            single_flight: true,
        };
        let mut pending = Vec::new();
        while let Ok(Some(m)) = Message::read_from(&mut s, 1 << 20) {
            match m.op() {
                Some(Opcode::Hello) => Message::new(Opcode::Hello, encode_capabilities(&caps))
                    .write_to(&mut s)
                    .unwrap(),
                _ => {
                    let seq = Request::parse(&m).unwrap().seq();
                    pending.push(seq);
                    // batch: answer two at a time, newest first
                    if pending.len() == 2 {
                        for seq in pending.drain(..).rev() {
                            if let Some(r) = reply(seq) {
                                r.to_message().write_to(&mut s).unwrap();
                            }
                        }
                    }
                }
            }
        }
    });
    format!("tcp://{addr}")
}

#[test]
fn pipelined_replies_matched_by_seq() {
    let uri = scripted_server(|seq| {
        Some(Reply::Result {
            seq,
            tensor: TensorFrame::new(vec![1, 1, 1, 1], vec![seq as f32]).unwrap(),
        })
    });
    let mut client = WireClient::connect(&uri, DEFAULT_TIMEOUT).unwrap();
    let x = TensorFrame::new(vec![1, 1, 1, 1], vec![0.0]).unwrap();
    let a = client.submit_denoise(x.clone(), 1.0, None).unwrap();
    let b = client.submit_denoise(x, 1.0, None).unwrap();
    assert_eq!(client.wait(a).unwrap().data, vec![a as f32]);
    assert_eq!(client.wait(b).unwrap().data, vec![b as f32]);
}

#[test]
fn reply_dims_checked() {
    let uri = scripted_server(|seq| {
        Some(Reply::Result {
            seq,
            tensor: TensorFrame::new(vec![1, 1, 2, 1], vec![0.0, 0.0]).unwrap(),
        })
    });
    let mut client = WireClient::connect(&uri, DEFAULT_TIMEOUT).unwrap();
    let x = TensorFrame::new(vec![1, 1, 1, 1], vec![0.0]).unwrap();
    let a = client.submit_denoise(x.clone(), 1.0, None).unwrap();
    client.submit_denoise(x, 1.0, None).unwrap();
    let err = client.wait(a).unwrap_err();
    assert!(matches!(err, WireError::DimsMismatch { seq: 1, .. }), "{err}");
}

#[test]
fn silent_server_times_out_and_aborts() {
    let uri = scripted_server(|_| None);
    let mut client = WireClient::connect(&uri, Duration::from_millis(200)).unwrap();
    let x = TensorFrame::new(vec![1, 1, 1, 1], vec![0.0]).unwrap();
    assert!(matches!(client.denoise(x.clone(), 1.0, None), Err(WireError::Timeout)));
    assert!(matches!(client.denoise(x, 1.0, None), Err(WireError::Aborted(_))));
}

#[test]
fn bad_uris() {
    for uri in ["http://x", "tcp://", "stdio://", "stdio://'unterminated"] {
        assert!(WireClient::connect(uri, Duration::from_millis(100)).is_err(), "{uri}");
    }
}

#[test]
fn gmm_through_loopback_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shape = Shape::new(64, 64, 4);
    let dim = shape.len();
    let means: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let prior = GmmPrior::uniform(means, 0.05).unwrap();
    let local = GmmFrameDenoiser::new(prior.clone(), shape, 3).unwrap();
    let server = WireServer::new(Arc::new(local.clone()));
    let (addr, _) = server.spawn_tcp("127.0.0.1:0").unwrap();
    let remote = RemoteDenoiser::connect(&format!("tcp://{addr}")).unwrap();
    assert_eq!(remote.capabilities().frame_count, 3);

    for sigma in [80.0, 1.0, 0.01] {
        let x = random_video(&mut rng, 3, shape);
        let xq = as_f32(&x);
        let want = as_f32(&local.denoise(&xq, sigma).unwrap());
        let got = remote.denoise(&x, sigma).unwrap();
        assert_eq!(
            TensorFrame::from_latent(&got).encode(),
            TensorFrame::from_latent(&want).encode()
        );
        let frame0: Vec<f64> = gmm_denoise(&prior, xq.frames()[0].as_slice(), sigma).unwrap();
        assert_eq!(got.frames()[0].as_slice()[..5], frame0.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>()[..5]);

        let c = random_video(&mut rng, 3, shape);
        let want = as_f32(&local.vjp(&xq, sigma, &as_f32(&c)).unwrap());
        let got = remote.vjp(&x, sigma, &c).unwrap();
        assert_eq!(
            TensorFrame::from_latent(&got).encode(),
            TensorFrame::from_latent(&want).encode()
        );
        let v0 = gmm_vjp(&prior, xq.frames()[0].as_slice(), sigma, c.map(|v| v as f32 as f64).frames()[0].as_slice()).unwrap();
        assert_eq!(got.frames()[0].as_slice()[0], v0[0] as f32 as f64);
    }
}

#[test]
fn remote_without_vjp_blocks_posterior_mode() {
    let remote = RemoteDenoiser::connect(&echo_server(false, 2, 3)).unwrap();
    let x = LatentVideo::zeros(Shape::new(1, 1, 3), 2).unwrap();
    assert!(matches!(remote.vjp(&x, 1.0, &x), Err(crate::Error::Capability(_))));
    assert_eq!(remote.denoise(&x, 1.0).unwrap(), x);
}

#[test]
fn in_memory_session() {
    let server = WireServer::new(Arc::new(EchoDenoiser {
        frame_count: 1,
        channels: 1,
        supports_vjp: false,
    }));
    let x = TensorFrame::new(vec![1, 1, 1, 1], vec![7.0]).unwrap();
    let mut input = Message::new(Opcode::Hello, vec![]).encode();
    input.extend(
        Request::Denoise {
            seq: 5,
            sigma: 2.0,
            x: x.clone(),
            conditioning: Some(TensorFrame::new(vec![1, 1, 1], vec![0.5]).unwrap()),
        }
        .to_message()
        .encode(),
    );
    let mut out = Vec::new();
    server.serve(&input[..], &mut out).unwrap();
    let (hello, used) = Message::decode(&out, 1 << 20).unwrap();
    assert_eq!(decode_capabilities(&hello.payload).unwrap().frame_count, 1);
    let (res, _) = Message::decode(&out[used..], 1 << 20).unwrap();
    assert_eq!(Reply::parse(&res).unwrap(), Reply::Result { seq: 5, tensor: x });
}
