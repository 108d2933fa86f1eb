// SPDX-License-Identifier: MIT OR Apache-2.0

//! Client and server ends of the wire protocol.
//!
//! A server writes a handshake as soon as a connection opens, then answers
//! each request frame with exactly one response frame carrying the same id.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use super::protocol::{read_frame, write_frame, Message};
use super::{Backend, BackendError, BackendResult, Generation, ModelInfo, ScoreRequest, ScoreResponse};

struct Conn {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
}

/// A backend reached over a byte stream (TCP or a child process' stdio).
///
/// Requests are serialized on the connection, so at most one is in flight.
pub struct RemoteBackend {
    info: ModelInfo,
    conn: Mutex<Conn>,
    next_id: AtomicU32,
    child: Option<Child>,
}

impl RemoteBackend {
    /// Wrap an established stream pair and read the server handshake.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> BackendResult<Self> {
        let mut reader: Box<dyn Read + Send> = Box::new(BufReader::new(reader));
        let info = match read_frame(&mut reader)? {
            Some(Message::Handshake(info)) => info,
            Some(msg) => match msg.to_error() {
                Some(err) => return Err(err),
                None => {
                    return Err(BackendError::Protocol(format!(
                        "expected handshake, got kind {:#04x}",
                        msg.kind()
                    )))
                }
            },
            None => return Err(BackendError::Protocol("connection closed before handshake".into())),
        };
        Ok(Self {
            info,
            conn: Mutex::new(Conn {
                reader,
                writer: Box::new(BufWriter::new(writer)),
            }),
            next_id: AtomicU32::new(1),
            child: None,
        })
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs) -> BackendResult<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::from_streams(reader, stream)
    }

    /// Launch `command` (whitespace-separated program and arguments) and
    /// speak the protocol over its standard input and output.
    pub fn spawn_stdio(command: &str) -> BackendResult<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| BackendError::InvalidRequest("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut backend = Self::from_streams(stdout, stdin)?;
        backend.child = Some(child);
        Ok(backend)
    }

    fn call(&self, build: impl FnOnce(u32) -> Message) -> BackendResult<Message> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| BackendError::Failure("connection lock poisoned".into()))?;
        write_frame(&mut conn.writer, &build(id))?;
        let reply = read_frame(&mut conn.reader)?
            .ok_or_else(|| BackendError::Protocol("connection closed mid-request".into()))?;
        if let Some(err) = reply.to_error() {
            return Err(err);
        }
        Ok(reply)
    }
}

impl Drop for RemoteBackend {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            if let Ok(mut conn) = self.conn.lock() {
                // closing stdin lets the server loop see end of stream
                conn.writer = Box::new(std::io::sink());
            }
            let _ = child.wait();
        }
    }
}

fn unexpected(msg: &Message) -> BackendError {
    BackendError::Protocol(format!("unexpected reply kind {:#04x}", msg.kind()))
}

impl Backend for RemoteBackend {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> BackendResult<Vec<u32>> {
        match self.call(|id| Message::TokenizeRequest {
            id,
            text: text.to_string(),
        })? {
            Message::TokenizeResponse { tokens, .. } => Ok(tokens),
            other => Err(unexpected(&other)),
        }
    }

    fn detokenize(&self, tokens: &[u32]) -> BackendResult<String> {
        match self.call(|id| Message::DetokenizeRequest {
            id,
            tokens: tokens.to_vec(),
        })? {
            Message::DetokenizeResponse { text, .. } => Ok(text),
            other => Err(unexpected(&other)),
        }
    }

    fn generate(&self, prompt: &[u32], max_len: usize) -> BackendResult<Generation> {
        match self.call(|id| Message::GenerateRequest {
            id,
            prompt: prompt.to_vec(),
            max_len: max_len as u32,
        })? {
            Message::GenerateResponse { generation, .. } => Ok(generation),
            other => Err(unexpected(&other)),
        }
    }

    fn score(&self, req: &ScoreRequest) -> BackendResult<ScoreResponse> {
        match self.call(|id| Message::ScoreRequest {
            id,
            request: req.clone(),
        })? {
            Message::ScoreResponse { response, .. } => {
                response.check_shape()?;
                Ok(response)
            }
            other => Err(unexpected(&other)),
        }
    }

    fn unembed(&self, tokens: &[u32]) -> BackendResult<Vec<Vec<f32>>> {
        match self.call(|id| Message::UnembedRequest {
            id,
            tokens: tokens.to_vec(),
        })? {
            Message::UnembedResponse { vectors, .. } => Ok(vectors),
            other => Err(unexpected(&other)),
        }
    }
}

fn answer<B: Backend + ?Sized>(backend: &B, msg: Message) -> Message {
    let reply = match msg {
        Message::ScoreRequest { id, request } => backend
            .score(&request)
            .map(|response| Message::ScoreResponse { id, response })
            .map_err(|e| (id, e)),
        Message::GenerateRequest { id, prompt, max_len } => backend
            .generate(&prompt, max_len as usize)
            .map(|generation| Message::GenerateResponse { id, generation })
            .map_err(|e| (id, e)),
        Message::TokenizeRequest { id, text } => backend
            .tokenize(&text)
            .map(|tokens| Message::TokenizeResponse { id, tokens })
            .map_err(|e| (id, e)),
        Message::DetokenizeRequest { id, tokens } => backend
            .detokenize(&tokens)
            .map(|text| Message::DetokenizeResponse { id, text })
            .map_err(|e| (id, e)),
        Message::UnembedRequest { id, tokens } => backend
            .unembed(&tokens)
            .map(|vectors| Message::UnembedResponse { id, vectors })
            .map_err(|e| (id, e)),
        other => Err((
            0,
            BackendError::InvalidRequest(format!("kind {:#04x} is not a request", other.kind())),
        )),
    };
    reply.unwrap_or_else(|(id, e)| Message::from_error(id, &e))
}

/// Serve `backend` on one stream pair until the peer closes it.
pub fn serve<B: Backend + ?Sized>(
    backend: &B,
    reader: impl Read,
    writer: impl Write,
) -> BackendResult<()> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    write_frame(&mut writer, &Message::Handshake(backend.info().clone()))?;
    loop {
        match read_frame(&mut reader) {
            Ok(Some(msg)) => write_frame(&mut writer, &answer(backend, msg))?,
            Ok(None) => return Ok(()),
            Err(e) => {
                let _ = write_frame(&mut writer, &Message::from_error(0, &e));
                return Err(e);
            }
        }
    }
}

/// Accept connections forever, one thread per connection.
pub fn serve_tcp<B: Backend + 'static>(backend: Arc<B>, listener: TcpListener) -> BackendResult<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = Arc::clone(&backend);
        std::thread::spawn(move || {
            let _ = stream.set_nodelay(true);
            if let Ok(reader) = stream.try_clone() {
                let _ = serve(backend.as_ref(), reader, stream);
            }
        });
    }
    Ok(())
}
