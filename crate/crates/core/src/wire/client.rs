use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use super::codec::{decode_capabilities, Message, Opcode, Reply, Request, TensorFrame, DEFAULT_MAX_PAYLOAD, VERSION};
use super::WireError;
use crate::denoiser::{Capabilities, Denoiser, LatentVideo};
use crate::image::ImageGrid;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

enum Transport {
    Tcp(TcpStream),
    Child(Child),
    Other,
}

/// Single connection to a wire server. Requests may be pipelined; replies
/// are matched by sequence id.
pub struct WireClient {
    writer: Box<dyn Write + Send>,
    replies: Receiver<Result<Message, WireError>>,
    transport: Transport,
    timeout: Duration,
    next_seq: u64,
    expected: HashMap<u64, Vec<u32>>,
    parked: HashMap<u64, Reply>,
    caps: Capabilities,
    dead: Option<String>,
}

impl WireClient {
    /// `tcp://host:port` or `stdio://program args...`.
    pub fn connect(uri: &str, timeout: Duration) -> Result<Self, WireError> {
        if let Some(addr) = uri.strip_prefix("tcp://") {
            let target = addr
                .to_socket_addrs()
                .map_err(|e| WireError::BadUri(format!("{uri}: {e}")))?
                .next()
                .ok_or_else(|| WireError::BadUri(format!("{uri}: no address")))?;
            let stream = TcpStream::connect_timeout(&target, timeout)?;
            stream.set_nodelay(true)?;
            stream.set_write_timeout(Some(timeout))?;
            let reader = stream.try_clone()?;
            let writer = stream.try_clone()?;
            Self::handshake(reader, writer, Transport::Tcp(stream), timeout)
        } else if let Some(cmd) = uri.strip_prefix("stdio://") {
            let argv = shlex::split(cmd).filter(|a| !a.is_empty()).ok_or_else(|| WireError::BadUri(uri.into()))?;
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Self::handshake(stdout, stdin, Transport::Child(child), timeout)
        } else {
            Err(WireError::BadUri(format!("{uri}: expected tcp:// or stdio://")))
        }
    }

    /// Handshake over an arbitrary byte stream pair.
    pub fn over<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self, WireError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(reader, writer, Transport::Other, timeout)
    }

    fn handshake<R, W>(reader: R, writer: W, transport: Transport, timeout: Duration) -> Result<Self, WireError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let next = Message::read_from(&mut reader, DEFAULT_MAX_PAYLOAD);
                let stop = !matches!(next, Ok(Some(_)));
                let item = match next {
                    Ok(Some(m)) => Ok(m),
                    Ok(None) => Err(WireError::Closed),
                    Err(e) => Err(e),
                };
                if tx.send(item).is_err() || stop {
                    break;
                }
            }
        });
        let mut client = Self {
            writer: Box::new(BufWriter::new(writer)),
            replies: rx,
            transport,
            timeout,
            next_seq: 1,
            expected: HashMap::new(),
            parked: HashMap::new(),
            caps: Capabilities {
                supports_vjp: false,
                frame_count: 0,
                channels: 0,
                latent_space_id: String::new(),
                single_flight: true,
            },
            dead: None,
        };
        Message::new(Opcode::Hello, Vec::new()).write_to(&mut client.writer)?;
        let msg = client.recv()?;
        if msg.version != VERSION {
            return Err(WireError::VersionMismatch {
                ours: VERSION,
                theirs: msg.version,
            });
        }
        match msg.op() {
            Some(Opcode::Hello) => client.caps = decode_capabilities(&msg.payload)?,
            Some(Opcode::Error) => {
                return Err(match Reply::parse(&msg)? {
                    Reply::Error { seq, message } => WireError::Remote { seq, message },
                    Reply::Result { seq, .. } => WireError::UnexpectedReply { seq },
                })
            }
            _ => return Err(WireError::UnexpectedOpcode(msg.opcode)),
        }
        Ok(client)
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        match self.replies.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(WireError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(WireError::Closed),
        }
    }

    fn check_alive(&self) -> Result<(), WireError> {
        match &self.dead {
            Some(why) => Err(WireError::Aborted(why.clone())),
            None => Ok(()),
        }
    }

    /// Sends a request and returns its sequence id without waiting.
    pub fn submit_denoise(&mut self, x: TensorFrame, sigma: f64, conditioning: Option<TensorFrame>) -> Result<u64, WireError> {
        let seq = self.take_seq();
        let dims = x.dims.clone();
        self.send(
            Request::Denoise {
                seq,
                sigma,
                x,
                conditioning,
            },
            dims,
        )
    }

    pub fn submit_vjp(&mut self, x: TensorFrame, sigma: f64, cotangent: TensorFrame) -> Result<u64, WireError> {
        let seq = self.take_seq();
        let dims = x.dims.clone();
        self.send(
            Request::Vjp {
                seq,
                sigma,
                x,
                cotangent,
            },
            dims,
        )
    }

    fn take_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn send(&mut self, req: Request, dims: Vec<u32>) -> Result<u64, WireError> {
        self.check_alive()?;
        let seq = req.seq();
        if let Err(e) = req.to_message().write_to(&mut self.writer) {
            self.dead = Some(e.to_string());
            return Err(e);
        }
        self.expected.insert(seq, dims);
        Ok(seq)
    }

    /// Blocks until the reply for `seq` arrives; replies to other pending
    /// requests are parked.
    pub fn wait(&mut self, seq: u64) -> Result<TensorFrame, WireError> {
        let dims = self.expected.remove(&seq).ok_or(WireError::UnexpectedReply { seq })?;
        let reply = loop {
            if let Some(r) = self.parked.remove(&seq) {
                break r;
            }
            self.check_alive()?;
            let msg = match self.recv() {
                Ok(m) => m,
                Err(e) => {
                    self.dead = Some(e.to_string());
                    return Err(e);
                }
            };
            let reply = match Reply::parse(&msg) {
                Ok(r) => r,
                Err(e) => {
                    self.dead = Some(e.to_string());
                    return Err(e);
                }
            };
            match reply.seq() {
                s if s == seq => break reply,
                s if self.expected.contains_key(&s) => {
                    self.parked.insert(s, reply);
                }
                // unaddressed server error: attribute it to the oldest waiter
                0 => break reply,
                s => return Err(WireError::UnexpectedReply { seq: s }),
            }
        };
        match reply {
            Reply::Result { tensor, .. } if tensor.dims == dims => Ok(tensor),
            Reply::Result { tensor, .. } => Err(WireError::DimsMismatch {
                seq,
                expected: dims,
                got: tensor.dims,
            }),
            Reply::Error { message, .. } => Err(WireError::Remote { seq, message }),
        }
    }

    pub fn denoise(&mut self, x: TensorFrame, sigma: f64, conditioning: Option<TensorFrame>) -> Result<TensorFrame, WireError> {
        let seq = self.submit_denoise(x, sigma, conditioning)?;
        self.wait(seq)
    }

    pub fn vjp(&mut self, x: TensorFrame, sigma: f64, cotangent: TensorFrame) -> Result<TensorFrame, WireError> {
        let seq = self.submit_vjp(x, sigma, cotangent)?;
        self.wait(seq)
    }

    /// Writes raw bytes to the stream; used to probe server robustness.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), WireError> {
        self.writer.write_all(bytes)?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next message from the server, undecoded.
    pub fn recv_raw(&mut self) -> Result<Message, WireError> {
        self.recv()
    }
}

impl Drop for WireClient {
    fn drop(&mut self) {
        let _ = self.writer.flush();
        match &mut self.transport {
            Transport::Tcp(s) => {
                let _ = s.shutdown(Shutdown::Both);
            }
            Transport::Child(c) => {
                // closing stdin lets a well-behaved server exit on its own
                self.writer = Box::new(std::io::sink());
                for _ in 0..50 {
                    if matches!(c.try_wait(), Ok(Some(_))) {
                        return;
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                let _ = c.kill();
                let _ = c.wait();
            }
            Transport::Other => {}
        }
    }
}

/// A wire server seen through the [`Denoiser`] trait. Values cross the wire
/// as f32.
pub struct RemoteDenoiser {
    client: Mutex<WireClient>,
    caps: Capabilities,
    conditioning: Option<TensorFrame>,
}

impl RemoteDenoiser {
    pub fn connect(uri: &str) -> Result<Self, WireError> {
        Self::connect_with_timeout(uri, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(uri: &str, timeout: Duration) -> Result<Self, WireError> {
        Ok(Self::from_client(WireClient::connect(uri, timeout)?))
    }

    pub fn from_client(client: WireClient) -> Self {
        let caps = client.capabilities().clone();
        Self {
            client: Mutex::new(client),
            caps,
            conditioning: None,
        }
    }

    /// Sends `view` (dims `[h, w, c]`) with every DENOISE request.
    pub fn with_conditioning(mut self, view: &ImageGrid) -> Self {
        let s = view.shape();
        self.conditioning = Some(TensorFrame {
            dims: vec![s.height as u32, s.width as u32, s.channels as u32],
            data: view.as_slice().iter().map(|&v| v as f32).collect(),
        });
        self
    }

    fn client(&self) -> std::sync::MutexGuard<'_, WireClient> {
        self.client.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Denoiser for RemoteDenoiser {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn denoise(&self, x: &LatentVideo, sigma: f64) -> crate::Result<LatentVideo> {
        let out = self
            .client()
            .denoise(TensorFrame::from_latent(x), sigma, self.conditioning.clone())?;
        Ok(out.to_latent()?)
    }

    fn vjp(&self, x: &LatentVideo, sigma: f64, cotangent: &LatentVideo) -> crate::Result<LatentVideo> {
        if !self.caps.supports_vjp {
            return Err(crate::Error::Capability("remote denoiser does not provide VJP".into()));
        }
        x.ensure_same_shape(cotangent)?;
        let out = self
            .client()
            .vjp(TensorFrame::from_latent(x), sigma, TensorFrame::from_latent(cotangent))?;
        Ok(out.to_latent()?)
    }
}
