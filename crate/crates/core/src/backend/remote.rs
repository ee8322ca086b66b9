//! TCP transport: a threaded frame server and a pooling client.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use log::{info, warn};

use super::wire::{self, WireError};
use super::{resolve_device, Backend, TaskRequest, TaskResponse, TransportError};

fn describe_request(req: &TaskRequest, backend: &dyn Backend) -> String {
    let device = resolve_device(req.device, backend.accelerator_available().unwrap_or(false));
    let shapes: Vec<_> = req.tensors.iter().map(|t| t.shape().to_vec()).collect();
    format!("task={} device={device} shapes={shapes:?}", req.task)
}

/// Serves frames on one connection until the peer closes it.
///
/// An unknown task id gets a task error and the connection stays open,
/// since the frame was consumed in full. Any other malformed frame gets a
/// refusal and the connection is closed.
pub fn handle_connection(stream: TcpStream, backend: &dyn Backend) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let response = match wire::read_request(&mut reader) {
            Ok(None) => return Ok(()),
            Ok(Some(req)) => {
                info!("{}", describe_request(&req, backend));
                match backend.run_task(&req) {
                    Ok(resp) => resp,
                    Err(e) => TaskResponse::Refused(e.to_string()),
                }
            }
            Err(e @ WireError::UnknownTask(_)) => {
                warn!("{e}");
                TaskResponse::TaskError(e.to_string())
            }
            Err(WireError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => {
                warn!("peer closed mid-frame");
                return Ok(());
            }
            Err(e) => {
                warn!("refusing frame: {e}");
                let refusal = TaskResponse::Refused(e.to_string());
                write_or_io(&mut writer, &refusal)?;
                return Ok(());
            }
        };
        write_or_io(&mut writer, &response)?;
    }
}

fn write_or_io(w: &mut impl Write, resp: &TaskResponse) -> io::Result<()> {
    match wire::write_response(w, resp) {
        Ok(()) => Ok(()),
        Err(WireError::Io(e)) => Err(e),
        Err(e) => {
            // Outputs that cannot be framed become an error reply instead.
            wire::write_response(w, &TaskResponse::TaskError(e.to_string())).map_err(|e| match e {
                WireError::Io(e) => e,
                other => io::Error::other(other.to_string()),
            })
        }
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, backend: Arc<dyn Backend>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let backend = Arc::clone(&backend);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, backend.as_ref()) {
                warn!("connection {peer:?}: {e}");
            }
        });
    }
    Ok(())
}

/// Binds an ephemeral loopback port and serves in a background thread.
pub fn spawn_server(backend: Arc<dyn Backend>) -> io::Result<SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::spawn(move || serve(listener, backend));
    Ok(addr)
}

/// Client for a worker at `host:port`. Idle connections are pooled; a
/// request on a pooled connection that turns out to be dead is retried
/// once on a fresh one.
#[derive(Debug)]
pub struct TcpBackend {
    addr: String,
    pool: Mutex<Vec<TcpStream>>,
}

impl TcpBackend {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            pool: Mutex::new(Vec::new()),
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn connect(&self) -> Result<TcpStream, TransportError> {
        let stream = TcpStream::connect(&self.addr).map_err(|source| TransportError::Connect {
            addr: self.addr.clone(),
            source,
        })?;
        stream.set_nodelay(true)?;
        Ok(stream)
    }

    fn exchange(stream: &TcpStream, frame: &[u8]) -> Result<TaskResponse, TransportError> {
        let mut w = stream;
        w.write_all(frame)?;
        w.flush()?;
        Ok(wire::read_response(&mut BufReader::new(stream))?)
    }

    fn pooled(&self) -> Option<TcpStream> {
        self.pool.lock().unwrap_or_else(|e| e.into_inner()).pop()
    }

    fn release(&self, stream: TcpStream) {
        self.pool
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(stream);
    }
}

impl Backend for TcpBackend {
    fn run_task(&self, request: &TaskRequest) -> Result<TaskResponse, TransportError> {
        let frame = wire::encode_request(request)?;
        let resp = match self.pooled() {
            Some(stream) => match Self::exchange(&stream, &frame) {
                Ok(resp) => Some((stream, resp)),
                Err(TransportError::Io(_)) | Err(TransportError::Protocol(WireError::Io(_))) => {
                    None
                }
                Err(e) => return Err(e),
            },
            None => None,
        };
        let (stream, resp) = match resp {
            Some(pair) => pair,
            None => {
                let stream = self.connect()?;
                let resp = Self::exchange(&stream, &frame)?;
                (stream, resp)
            }
        };
        // The server closes the connection after a refusal.
        if !matches!(resp, TaskResponse::Refused(_)) {
            self.release(stream);
        }
        Ok(resp)
    }

    fn accelerator_available(&self) -> Option<bool> {
        None
    }

    fn describe(&self) -> String {
        format!("tcp:{}", self.addr)
    }
}
