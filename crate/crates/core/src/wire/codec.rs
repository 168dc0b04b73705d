use std::io::{ErrorKind, Read, Write};

use super::WireError;
use crate::denoiser::{Capabilities, LatentVideo};
use crate::image::{ImageGrid, Shape};

pub const MAGIC: [u8; 4] = *b"NVSW";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 15;
/// Largest payload a reader will allocate for.
pub const DEFAULT_MAX_PAYLOAD: u64 = 1 << 30;
const DTYPE_F32: u8 = 0;
const MAX_RANK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Hello = 0,
    Denoise = 1,
    Vjp = 2,
    Result = 3,
    Error = 4,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Hello,
            1 => Self::Denoise,
            2 => Self::Vjp,
            3 => Self::Result,
            4 => Self::Error,
            _ => return None,
        })
    }
}

/// One framed message. `opcode` is kept raw so unknown values survive decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub version: u16,
    pub opcode: u8,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(opcode: Opcode, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            opcode: opcode as u8,
            payload,
        }
    }

    pub fn op(&self) -> Option<Opcode> {
        Opcode::from_u8(self.opcode)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.opcode);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), WireError> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    /// Decodes one message from the front of `bytes`; returns it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8], max_payload: u64) -> Result<(Message, usize), WireError> {
        let header = bytes.get(..HEADER_LEN).ok_or(WireError::Truncated {
            needed: HEADER_LEN as u64,
            have: bytes.len() as u64,
        })?;
        let (version, opcode, len) = parse_header(header.try_into().expect("header length"), max_payload)?;
        let total = HEADER_LEN as u64 + len;
        if (bytes.len() as u64) < total {
            return Err(WireError::Truncated {
                needed: total,
                have: bytes.len() as u64,
            });
        }
        let payload = bytes[HEADER_LEN..total as usize].to_vec();
        Ok((
            Message {
                version,
                opcode,
                payload,
            },
            total as usize,
        ))
    }

    /// Reads one message; `Ok(None)` on a clean end of stream before any
    /// header byte.
    pub fn read_from(r: &mut impl Read, max_payload: u64) -> Result<Option<Message>, WireError> {
        let mut header = [0u8; HEADER_LEN];
        let got = read_full(r, &mut header)?;
        if got == 0 {
            return Ok(None);
        }
        if got < HEADER_LEN {
            if got >= 4 && header[..4] != MAGIC {
                return Err(WireError::BadMagic(header[..4].try_into().expect("4 bytes")));
            }
            return Err(WireError::Truncated {
                needed: HEADER_LEN as u64,
                have: got as u64,
            });
        }
        let (version, opcode, len) = parse_header(&header, max_payload)?;
        let mut payload = vec![0u8; len as usize];
        let got = read_full(r, &mut payload)?;
        if got < payload.len() {
            return Err(WireError::Truncated {
                needed: HEADER_LEN as u64 + len,
                have: (HEADER_LEN + got) as u64,
            });
        }
        Ok(Some(Message {
            version,
            opcode,
            payload,
        }))
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, WireError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return Err(WireError::Timeout)
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

fn parse_header(h: &[u8; HEADER_LEN], max_payload: u64) -> Result<(u16, u8, u64), WireError> {
    if h[..4] != MAGIC {
        return Err(WireError::BadMagic(h[..4].try_into().expect("4 bytes")));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    let opcode = h[6];
    let len = u64::from_le_bytes(h[7..15].try_into().expect("8 bytes"));
    if len > max_payload {
        return Err(WireError::PayloadTooLarge { len, max: max_payload });
    }
    Ok((version, opcode, len))
}

/// Bounds-checked little-endian reader over a payload.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            WireError::Malformed(format!(
                "payload ends at byte {}, field needs {n} more from {}",
                self.bytes.len(),
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(WireError::Malformed(format!(
                "{} trailing payload bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}

/// Row-major f32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFrame {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorFrame {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, WireError> {
        if dims.len() > MAX_RANK {
            return Err(WireError::Malformed(format!("rank {} above {MAX_RANK}", dims.len())));
        }
        let n = element_count(&dims)?;
        if n != data.len() as u64 {
            return Err(WireError::Malformed(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Dims `[frames, height, width, channels]`; values rounded to f32.
    pub fn from_latent(video: &LatentVideo) -> Self {
        let s = video.frame_shape();
        Self {
            dims: vec![video.len() as u32, s.height as u32, s.width as u32, s.channels as u32],
            data: video.values().map(|v| v as f32).collect(),
        }
    }

    pub fn to_latent(&self) -> Result<LatentVideo, WireError> {
        let [n, h, w, c] = self.dims[..] else {
            return Err(WireError::Malformed(format!(
                "latent tensors have rank 4, got {:?}",
                self.dims
            )));
        };
        let shape = Shape::new(h as usize, w as usize, c as usize);
        if n == 0 || shape.is_empty() {
            return Err(WireError::Malformed(format!("empty latent {:?}", self.dims)));
        }
        let frames = self
            .data
            .chunks_exact(shape.len())
            .map(|chunk| ImageGrid::from_vec(shape, chunk.iter().map(|&v| v as f64).collect()))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|e| WireError::Malformed(e.to_string()))?;
        LatentVideo::new(frames).map_err(|e| WireError::Malformed(e.to_string()))
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32);
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub(crate) fn read(c: &mut Cursor<'_>) -> Result<Self, WireError> {
        let rank = c.u8()? as usize;
        if rank > MAX_RANK {
            return Err(WireError::Malformed(format!("rank {rank} above {MAX_RANK}")));
        }
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let dtype = c.u8()?;
        if dtype != DTYPE_F32 {
            return Err(WireError::Malformed(format!("unsupported dtype {dtype}")));
        }
        let n = element_count(&dims)?;
        let bytes = n
            .checked_mul(4)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or_else(|| WireError::Malformed(format!("dims {dims:?} overflow")))?;
        let raw = c.take(bytes)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor::new(bytes);
        let t = Self::read(&mut c)?;
        c.finish()?;
        Ok(t)
    }
}

fn element_count(dims: &[u32]) -> Result<u64, WireError> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| WireError::Malformed(format!("dims {dims:?} overflow")))
}

/// Server's HELLO reply payload.
pub fn encode_capabilities(caps: &Capabilities) -> Vec<u8> {
    let id = caps.latent_space_id.as_bytes();
    let id_len = id.len().min(u16::MAX as usize);
    let mut out = Vec::with_capacity(11 + id_len);
    out.push(caps.supports_vjp as u8);
    out.extend_from_slice(&(caps.frame_count as u32).to_le_bytes());
    out.extend_from_slice(&(caps.channels as u32).to_le_bytes());
    out.extend_from_slice(&(id_len as u16).to_le_bytes());
    out.extend_from_slice(&id[..id_len]);
    out
}

pub fn decode_capabilities(payload: &[u8]) -> Result<Capabilities, WireError> {
    let mut c = Cursor::new(payload);
    let supports_vjp = match c.u8()? {
        0 => false,
        1 => true,
        v => return Err(WireError::Malformed(format!("supports_vjp flag {v}"))),
    };
    let frame_count = c.u32()? as usize;
    let channels = c.u32()? as usize;
    let id_len = c.u16()? as usize;
    let id = std::str::from_utf8(c.take(id_len)?)
        .map_err(|e| WireError::Malformed(format!("latent_space_id: {e}")))?
        .to_owned();
    c.finish()?;
    Ok(Capabilities {
        supports_vjp,
        frame_count,
        channels,
        latent_space_id: id,
        single_flight: true,
    })
}

/// DENOISE or VJP request body.
#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    Denoise {
        seq: u64,
        sigma: f64,
        x: TensorFrame,
        conditioning: Option<TensorFrame>,
    },
    Vjp {
        seq: u64,
        sigma: f64,
        x: TensorFrame,
        cotangent: TensorFrame,
    },
}

impl Request {
    pub fn seq(&self) -> u64 {
        match self {
            Request::Denoise { seq, .. } | Request::Vjp { seq, .. } => *seq,
        }
    }

    pub fn to_message(&self) -> Message {
        let mut p = Vec::new();
        match self {
            Request::Denoise {
                seq,
                sigma,
                x,
                conditioning,
            } => {
                p.extend_from_slice(&seq.to_le_bytes());
                p.extend_from_slice(&sigma.to_bits().to_le_bytes());
                x.encode_into(&mut p);
                match conditioning {
                    Some(c) => {
                        p.push(1);
                        c.encode_into(&mut p);
                    }
                    None => p.push(0),
                }
                Message::new(Opcode::Denoise, p)
            }
            Request::Vjp {
                seq,
                sigma,
                x,
                cotangent,
            } => {
                p.extend_from_slice(&seq.to_le_bytes());
                p.extend_from_slice(&sigma.to_bits().to_le_bytes());
                x.encode_into(&mut p);
                cotangent.encode_into(&mut p);
                Message::new(Opcode::Vjp, p)
            }
        }
    }

    /// Parses a DENOISE or VJP payload. On failure returns the sequence id
    /// if it could be read, so the error reply can be addressed.
    pub fn parse(msg: &Message) -> Result<Request, (u64, WireError)> {
        let mut c = Cursor::new(&msg.payload);
        let seq = c.u64().map_err(|e| (0, e))?;
        let body = |c: &mut Cursor<'_>| -> Result<Request, WireError> {
            let sigma = c.f64()?;
            let x = TensorFrame::read(c)?;
            let req = match msg.op() {
                Some(Opcode::Denoise) => {
                    let conditioning = match c.u8()? {
                        0 => None,
                        1 => Some(TensorFrame::read(c)?),
                        v => return Err(WireError::Malformed(format!("conditioning flag {v}"))),
                    };
                    Request::Denoise {
                        seq,
                        sigma,
                        x,
                        conditioning,
                    }
                }
                Some(Opcode::Vjp) => Request::Vjp {
                    seq,
                    sigma,
                    x,
                    cotangent: TensorFrame::read(c)?,
                },
                _ => return Err(WireError::UnknownOpcode(msg.opcode)),
            };
            c.finish()?;
            Ok(req)
        };
        body(&mut c).map_err(|e| (seq, e))
    }
}

/// RESULT or ERROR body.
#[derive(Clone, Debug, PartialEq)]
pub enum Reply {
    Result { seq: u64, tensor: TensorFrame },
    Error { seq: u64, message: String },
}

impl Reply {
    pub fn seq(&self) -> u64 {
        match self {
            Reply::Result { seq, .. } | Reply::Error { seq, .. } => *seq,
        }
    }

    pub fn to_message(&self) -> Message {
        let mut p = Vec::new();
        match self {
            Reply::Result { seq, tensor } => {
                p.extend_from_slice(&seq.to_le_bytes());
                tensor.encode_into(&mut p);
                Message::new(Opcode::Result, p)
            }
            Reply::Error { seq, message } => {
                p.extend_from_slice(&seq.to_le_bytes());
                p.extend_from_slice(message.as_bytes());
                Message::new(Opcode::Error, p)
            }
        }
    }

    pub fn parse(msg: &Message) -> Result<Reply, WireError> {
        let mut c = Cursor::new(&msg.payload);
        match msg.op() {
            Some(Opcode::Result) => {
                let seq = c.u64()?;
                let tensor = TensorFrame::read(&mut c)?;
                c.finish()?;
                Ok(Reply::Result { seq, tensor })
            }
            Some(Opcode::Error) => {
                // an ERROR sent before any sequence id exists may be bare text
                let seq = if msg.payload.len() >= 8 { c.u64()? } else { 0 };
                Ok(Reply::Error {
                    seq,
                    message: String::from_utf8_lossy(c.rest()).into_owned(),
                })
            }
            _ => Err(WireError::UnexpectedOpcode(msg.opcode)),
        }
    }
}

pub fn error_message(seq: u64, message: impl Into<String>) -> Message {
    Reply::Error {
        seq,
        message: message.into(),
    }
    .to_message()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn frame(dims: Vec<u32>) -> TensorFrame {
        let n: u32 = dims.iter().product();
        TensorFrame::new(dims, (0..n).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn header_layout() {
        let m = Message::new(Opcode::Vjp, vec![9, 8, 7]);
        let b = m.encode();
        assert_eq!(&b[..4], b"NVSW");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 2);
        assert_eq!(&b[7..15], &3u64.to_le_bytes());
        assert_eq!(&b[15..], &[9, 8, 7]);
        assert_eq!(Message::decode(&b, 100).unwrap(), (m, 18));
    }

    #[test]
    fn tensor_layout() {
        let t = TensorFrame::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let mut want = vec![2u8];
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.push(0);
        want.extend_from_slice(&1f32.to_le_bytes());
        want.extend_from_slice(&(-2f32).to_le_bytes());
        assert_eq!(t.encode(), want);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut b = Message::new(Opcode::Hello, vec![]).encode();
        b[0] = b'X';
        assert!(matches!(Message::decode(&b, 10), Err(WireError::BadMagic(_))));
        let big = Message::new(Opcode::Denoise, vec![0; 20]).encode();
        assert!(matches!(
            Message::decode(&big, 10),
            Err(WireError::PayloadTooLarge { len: 20, max: 10 })
        ));
        assert!(matches!(
            Message::decode(&big[..20], 100),
            Err(WireError::Truncated { needed: 35, have: 20 })
        ));
    }

    #[test]
    fn stream_read_distinguishes_eof() {
        let b = Message::new(Opcode::Hello, vec![1]).encode();
        let mut r = &b[..];
        assert!(Message::read_from(&mut r, 10).unwrap().is_some());
        assert!(Message::read_from(&mut r, 10).unwrap().is_none());
        let mut cut = &b[..10];
        assert!(matches!(Message::read_from(&mut cut, 10), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn tensor_rejects_overflow_and_dtype() {
        let mut b = vec![2u8];
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        b.push(0);
        assert!(TensorFrame::decode(&b).is_err());
        let mut t = frame(vec![2]).encode();
        t[5] = 1;
        assert!(TensorFrame::decode(&t).is_err());
        assert!(TensorFrame::new(vec![3], vec![0.0; 2]).is_err());
        let mut extra = frame(vec![1]).encode();
        extra.push(0);
        assert!(TensorFrame::decode(&extra).is_err());
    }

    #[test]
    fn scalar_tensor() {
        let t = TensorFrame::new(vec![], vec![4.5]).unwrap();
        assert_eq!(TensorFrame::decode(&t.encode()).unwrap(), t);
    }

    #[test]
    fn capabilities_round_trip() {
        let caps = Capabilities {
            supports_vjp: true,
            frame_count: 25,
            channels: 4,
            latent_space_id: "svd-latent".into(),
            single_flight: true,
        };
        assert_eq!(decode_capabilities(&encode_capabilities(&caps)).unwrap(), caps);
        assert!(decode_capabilities(&[2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn requests_round_trip() {
        let reqs = [
            Request::Denoise {
                seq: 7,
                sigma: 0.1,
                x: frame(vec![2, 1, 1, 3]),
                conditioning: None,
            },
            Request::Denoise {
                seq: 8,
                sigma: 700.0,
                x: frame(vec![1, 2, 2, 1]),
                conditioning: Some(frame(vec![2, 2, 1])),
            },
            Request::Vjp {
                seq: u64::MAX,
                sigma: 1e-3,
                x: frame(vec![1, 1, 1, 2]),
                cotangent: frame(vec![1, 1, 1, 2]),
            },
        ];
        for r in reqs {
            assert_eq!(Request::parse(&r.to_message()).unwrap(), r);
        }
        let bad = Message::new(Opcode::Denoise, 5u64.to_le_bytes().to_vec());
        assert_eq!(Request::parse(&bad).unwrap_err().0, 5);
    }

    #[test]
    fn replies_round_trip() {
        for r in [
            Reply::Result {
                seq: 3,
                tensor: frame(vec![1, 1, 1, 1]),
            },
            Reply::Error {
                seq: 4,
                message: "boom ünïcode".into(),
            },
        ] {
            assert_eq!(Reply::parse(&r.to_message()).unwrap(), r);
        }
    }

    #[test]
    fn latent_conversion_rounds_to_f32() {
        let g = ImageGrid::from_vec(Shape::new(1, 2, 1), vec![0.1, 1e300]).unwrap();
        let v = LatentVideo::new(vec![g]).unwrap();
        let t = TensorFrame::from_latent(&v);
        assert_eq!(t.dims, vec![1, 1, 2, 1]);
        assert_eq!(t.data[0], 0.1f32);
        assert!(t.data[1].is_infinite());
        // latents must be finite on the way back
        assert!(t.to_latent().is_err());
        let ok = TensorFrame::new(vec![1, 1, 1, 1], vec![0.1]).unwrap().to_latent().unwrap();
        assert_eq!(ok.frames()[0].as_slice()[0], 0.1f32 as f64);
        assert!(frame(vec![2, 3]).to_latent().is_err());
    }

    proptest! {
        #[test]
        fn tensor_bytes_round_trip(
            dims in prop::collection::vec(1u32..5, 0..5),
            seed in any::<u64>(),
        ) {
            let n: u32 = dims.iter().product();
            let mut s = seed;
            let data = (0..n)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f32::from_bits((s >> 32) as u32)
                })
                .collect();
            let t = TensorFrame::new(dims, data).unwrap();
            let bytes = t.encode();
            let back = TensorFrame::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = Message::decode(&bytes, 1 << 20);
            let _ = TensorFrame::decode(&bytes);
            let _ = decode_capabilities(&bytes);
        }
    }
}
