//! Binary protocol for out-of-process denoisers.
//!
//! Every message is `"NVSW" | version u16 | opcode u8 | payload_len u64 | payload`,
//! integers little-endian. Payloads:
//!
//! | opcode | direction | payload |
//! |---|---|---|
//! | HELLO (0) | client to server | empty |
//! | HELLO (0) | server to client | `supports_vjp u8, frame_count u32, channels u32, id_len u16, latent_space_id` |
//! | DENOISE (1) | request | `seq u64, sigma f64, x, has_cond u8, [cond]` |
//! | VJP (2) | request | `seq u64, sigma f64, x, cotangent` |
//! | RESULT (3) | reply | `seq u64, tensor` |
//! | ERROR (4) | reply | `seq u64, UTF-8 message` |
//!
//! Tensors are `rank u8 | dims u32 x rank | dtype u8 (0 = f32) | data`.
//! Latent videos travel as `[frames, height, width, channels]`.

mod client;
mod codec;
pub mod fuzz;
mod server;

pub use client::{RemoteDenoiser, WireClient, DEFAULT_TIMEOUT};
pub use codec::{
    decode_capabilities, encode_capabilities, error_message, Message, Opcode, Reply, Request, TensorFrame,
    DEFAULT_MAX_PAYLOAD, HEADER_LEN, MAGIC, VERSION,
};
pub use server::WireServer;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("wire i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error("stream aborted after earlier failure: {0}")]
    Aborted(String),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("protocol version mismatch: ours {ours}, theirs {theirs}")]
    VersionMismatch { ours: u16, theirs: u16 },
    #[error("payload of {len} bytes exceeds the {max} byte cap")]
    PayloadTooLarge { len: u64, max: u64 },
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: u64, have: u64 },
    #[error("unknown opcode {0}")]
    UnknownOpcode(u8),
    #[error("unexpected opcode {0}")]
    UnexpectedOpcode(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("server error for request {seq}: {message}")]
    Remote { seq: u64, message: String },
    #[error("reply to request {seq} has dims {got:?}, expected {expected:?}")]
    DimsMismatch { seq: u64, expected: Vec<u32>, got: Vec<u32> },
    #[error("reply for unknown request {seq}")]
    UnexpectedReply { seq: u64 },
    #[error("bad denoiser uri `{0}`")]
    BadUri(String),
}

#[cfg(test)]
mod tests;
