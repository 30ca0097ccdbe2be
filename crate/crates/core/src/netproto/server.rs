use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use image::GrayImage;

use super::{complete_frame_len, decode_request, encode_response, AlignRequest, AlignResponse, PATCH_SIDE};
use crate::geometry::Pixel2;
use crate::pipeline::{AlignInput, AlignmentBackend};

const POLL: Duration = Duration::from_millis(20);

/// Where the server gets its alignment backend from.
#[derive(Clone)]
pub enum BackendSource {
    /// One backend shared by every connection.
    Shared(Arc<Mutex<Box<dyn AlignmentBackend>>>),
    /// A fresh backend per connection.
    PerConnection(Arc<dyn Fn() -> Box<dyn AlignmentBackend> + Send + Sync>),
}

impl BackendSource {
    pub fn shared(b: impl AlignmentBackend + 'static) -> Self {
        BackendSource::Shared(Arc::new(Mutex::new(Box::new(b))))
    }
}

enum ConnBackend {
    Shared(Arc<Mutex<Box<dyn AlignmentBackend>>>),
    Own(Box<dyn AlignmentBackend>),
}

impl ConnBackend {
    fn answer(&mut self, req: &AlignRequest) -> AlignResponse {
        match self {
            ConnBackend::Shared(b) => {
                let mut guard = b.lock().unwrap_or_else(|p| p.into_inner());
                answer(guard.as_mut(), req)
            }
            ConnBackend::Own(b) => answer(b.as_mut(), req),
        }
    }
}

/// Runs one request through `backend`. Backend errors become an invalid response.
pub fn answer(backend: &mut dyn AlignmentBackend, req: &AlignRequest) -> AlignResponse {
    let init: Vec<Pixel2> =
        req.init_landmarks.iter().map(|p| req.crop.to_frame(Pixel2::new(p[0] as f64, p[1] as f64))).collect();
    let patch = GrayImage::from_raw(PATCH_SIDE as u32, PATCH_SIDE as u32, req.patch.clone());
    let input = AlignInput {
        frame_id: req.frame_id,
        acquisition_time: req.acquisition_us as f64 * 1e-6,
        image: patch.as_ref(),
        crop: Some(req.crop),
        init_landmarks: &init,
    };
    match backend.align(&input) {
        Ok(a) if a.landmarks.len() == init.len() => AlignResponse {
            frame_id: req.frame_id,
            valid: a.valid,
            confidence: a.confidence.clamp(0.0, 1.0) as f32,
            landmarks: a
                .landmarks
                .iter()
                .map(|s| {
                    let p = req.crop.to_patch(*s);
                    [p.u as f32, p.v as f32]
                })
                .collect(),
        },
        _ => AlignResponse { frame_id: req.frame_id, valid: false, confidence: 0.0, landmarks: req.init_landmarks.clone() },
    }
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes open connections and waits for every thread.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks for the lifetime of the server.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Serves alignment requests on `listener` until the handle is shut down.
pub fn serve(listener: TcpListener, source: BackendSource) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let accept = std::thread::Builder::new().name("holoface-accept".into()).spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let backend = match &source {
                        BackendSource::Shared(b) => ConnBackend::Shared(b.clone()),
                        BackendSource::PerConnection(f) => ConnBackend::Own(f()),
                    };
                    let flag = flag.clone();
                    if let Ok(h) = std::thread::Builder::new()
                        .name("holoface-conn".into())
                        .spawn(move || connection(stream, backend, &flag))
                    {
                        workers.push(h);
                    }
                    workers.retain(|h| !h.is_finished());
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(_) => std::thread::sleep(POLL),
            }
        }
        for h in workers {
            let _ = h.join();
        }
    })?;
    Ok(ServerHandle { addr, stop, accept: Some(accept) })
}

fn connection(mut stream: TcpStream, mut backend: ConnBackend, stop: &AtomicBool) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let _ = stream.set_nodelay(true);
    let mut buf = Vec::new();
    let mut chunk = vec![0u8; 64 * 1024];
    while !stop.load(Ordering::SeqCst) {
        // Drain every complete request already buffered.
        loop {
            let n = match complete_frame_len(&buf) {
                Ok(Some(n)) => n,
                Ok(None) => break,
                Err(_) => return close(&stream),
            };
            let req = match decode_request(&buf[..n]) {
                Ok(r) => r,
                Err(_) => return close(&stream),
            };
            buf.drain(..n);
            let resp = backend.answer(&req);
            if stop.load(Ordering::SeqCst) {
                return close(&stream);
            }
            let Ok(bytes) = encode_response(&resp) else { return close(&stream) };
            if stream.write_all(&bytes).is_err() {
                return close(&stream);
            }
        }
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(_) => return close(&stream),
        }
    }
    close(&stream);
}

fn close(stream: &TcpStream) {
    let _ = stream.shutdown(Shutdown::Both);
}
