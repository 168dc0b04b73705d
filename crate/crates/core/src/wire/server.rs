use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::codec::{encode_capabilities, error_message, Message, Opcode, Reply, Request, TensorFrame, DEFAULT_MAX_PAYLOAD, VERSION};
use super::WireError;
use crate::denoiser::{Denoiser, LatentVideo};

/// Serves one denoiser over any number of streams.
#[derive(Clone)]
pub struct WireServer {
    denoiser: Arc<dyn Denoiser>,
    max_payload: u64,
}

impl WireServer {
    pub fn new(denoiser: Arc<dyn Denoiser>) -> Self {
        Self {
            denoiser,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }

    pub fn with_max_payload(mut self, max: u64) -> Self {
        self.max_payload = max;
        self
    }

    /// Handles messages until the peer closes the stream. Framing errors are
    /// answered with ERROR and end the session; everything else keeps it open.
    pub fn serve<R: Read, W: Write>(&self, mut reader: R, mut writer: W) -> Result<(), WireError> {
        loop {
            let msg = match Message::read_from(&mut reader, self.max_payload) {
                Ok(Some(m)) => m,
                Ok(None) => return Ok(()),
                Err(WireError::Io(e)) => return Err(WireError::Io(e)),
                Err(e) => {
                    let _ = error_message(0, e.to_string()).write_to(&mut writer);
                    return Err(e);
                }
            };
            if msg.version != VERSION {
                error_message(0, format!("version {} not supported, server speaks {VERSION}", msg.version))
                    .write_to(&mut writer)?;
                return Err(WireError::VersionMismatch {
                    ours: VERSION,
                    theirs: msg.version,
                });
            }
            let reply = match msg.op() {
                Some(Opcode::Hello) => Message::new(Opcode::Hello, encode_capabilities(&self.denoiser.capabilities())),
                Some(Opcode::Denoise | Opcode::Vjp) => match Request::parse(&msg) {
                    Ok(req) => self.handle(&req).to_message(),
                    Err((seq, e)) => error_message(seq, e.to_string()),
                },
                Some(op) => error_message(0, format!("{op:?} is not a request")),
                None => error_message(0, format!("unknown opcode {}", msg.opcode)),
            };
            reply.write_to(&mut writer)?;
        }
    }

    fn handle(&self, req: &Request) -> Reply {
        let seq = req.seq();
        match self.compute(req) {
            Ok(tensor) => Reply::Result { seq, tensor },
            Err(e) => Reply::Error {
                seq,
                message: e.to_string(),
            },
        }
    }

    fn latent(&self, t: &TensorFrame) -> crate::Result<LatentVideo> {
        let v = t.to_latent()?;
        let caps = self.denoiser.capabilities();
        if v.len() != caps.frame_count || v.frame_shape().channels != caps.channels {
            return Err(crate::Error::shape(
                format!("{} frames x {} channels", caps.frame_count, caps.channels),
                &t.dims,
            ));
        }
        Ok(v)
    }

    fn compute(&self, req: &Request) -> crate::Result<TensorFrame> {
        let out = match req {
            Request::Denoise { sigma, x, .. } => self.denoiser.denoise(&self.latent(x)?, *sigma)?,
            Request::Vjp {
                sigma, x, cotangent, ..
            } => {
                if !self.denoiser.capabilities().supports_vjp {
                    return Err(crate::Error::Capability("server does not provide VJP".into()));
                }
                self.denoiser
                    .vjp(&self.latent(x)?, *sigma, &self.latent(cotangent)?)?
            }
        };
        Ok(TensorFrame::from_latent(&out))
    }

    pub fn serve_tcp_stream(&self, stream: TcpStream) -> Result<(), WireError> {
        let reader = stream.try_clone()?;
        self.serve(reader, stream)
    }

    /// Accepts connections forever, one thread each.
    pub fn serve_listener(&self, listener: TcpListener) -> Result<(), WireError> {
        for stream in listener.incoming() {
            let stream = stream?;
            let server = self.clone();
            std::thread::spawn(move || {
                if let Err(e) = server.serve_tcp_stream(stream) {
                    log::warn!("wire session ended: {e}");
                }
            });
        }
        Ok(())
    }

    /// Binds `addr` and serves on a background thread.
    pub fn spawn_tcp(self, addr: &str) -> Result<(SocketAddr, JoinHandle<()>), WireError> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let handle = std::thread::spawn(move || {
            if let Err(e) = self.serve_listener(listener) {
                log::error!("wire listener stopped: {e}");
            }
        });
        Ok((local, handle))
    }

    pub fn serve_stdio(&self) -> Result<(), WireError> {
        self.serve(std::io::stdin().lock(), std::io::stdout().lock())
    }
}
