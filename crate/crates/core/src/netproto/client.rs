use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use image::GrayImage;

use super::{
    complete_frame_len, decode_response, encode_request, AlignRequest, AlignResponse, PATCH_BYTES, PATCH_SIDE,
};
use crate::geometry::Pixel2;
use crate::pipeline::{AlignInput, Alignment, AlignmentBackend, BackendError, CropTransform, FaceBox};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(100);

/// Crop side relative to the larger side of the landmark bounding box.
const CROP_GROWTH: f64 = 1.5;

/// The server could not produce a matching response in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unavailable(pub String);

impl std::fmt::Display for Unavailable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "remote unavailable: {}", self.0)
    }
}

impl std::error::Error for Unavailable {}

/// Stop-and-wait client. Responses for earlier frame ids are discarded.
#[derive(Debug)]
pub struct AlignClient {
    addr: SocketAddr,
    timeout: Duration,
    stream: Option<TcpStream>,
    buf: Vec<u8>,
    healthy: bool,
}

impl AlignClient {
    /// Connects eagerly; use `disconnected` to defer the first connection.
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, Unavailable> {
        let mut c = Self::disconnected(addr, timeout)?;
        c.reconnect()?;
        Ok(c)
    }

    pub fn disconnected(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, Unavailable> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| Unavailable(e.to_string()))?
            .next()
            .ok_or_else(|| Unavailable("address resolves to nothing".into()))?;
        Ok(Self { addr, timeout, stream: None, buf: Vec::new(), healthy: false })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_healthy(&self) -> bool {
        self.healthy
    }

    pub fn reconnect(&mut self) -> Result<(), Unavailable> {
        let s = TcpStream::connect_timeout(&self.addr, self.timeout.max(Duration::from_millis(1)))
            .map_err(|e| self.fail(format!("connect {}: {e}", self.addr)))?;
        let _ = s.set_nodelay(true);
        self.stream = Some(s);
        self.buf.clear();
        self.healthy = true;
        Ok(())
    }

    fn fail(&mut self, why: String) -> Unavailable {
        self.healthy = false;
        Unavailable(why)
    }

    fn drop_connection(&mut self, why: String) -> Unavailable {
        self.stream = None;
        self.buf.clear();
        self.fail(why)
    }

    /// Sends `req` and waits up to the timeout for the response with the same frame id.
    pub fn align(&mut self, req: &AlignRequest) -> Result<AlignResponse, Unavailable> {
        let deadline = Instant::now() + self.timeout;
        let bytes = encode_request(req).map_err(|e| Unavailable(format!("encode: {e}")))?;
        if self.stream.is_none() {
            self.reconnect()?;
        }
        let stream = self.stream.as_mut().expect("connected");
        let sent = stream.set_write_timeout(Some(self.timeout.max(Duration::from_millis(1)))).and_then(|_| stream.write_all(&bytes));
        if let Err(e) = sent {
            return Err(self.drop_connection(format!("send: {e}")));
        }
        let mut chunk = [0u8; 4096];
        loop {
            match complete_frame_len(&self.buf) {
                Err(e) => return Err(self.drop_connection(format!("framing: {e}"))),
                Ok(Some(n)) => {
                    let frame: Vec<u8> = self.buf.drain(..n).collect();
                    match decode_response(&frame) {
                        Ok(r) if r.frame_id == req.frame_id => {
                            self.healthy = true;
                            return Ok(r);
                        }
                        // Late answer to a request that already timed out.
                        Ok(_) => continue,
                        Err(e) => return Err(self.drop_connection(format!("decode: {e}"))),
                    }
                }
                Ok(None) => {}
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(self.fail(format!("no response within {:?}", self.timeout)));
            }
            let stream = self.stream.as_mut().expect("connected");
            if let Err(e) = stream.set_read_timeout(Some(deadline - now)) {
                return Err(self.drop_connection(e.to_string()));
            }
            match stream.read(&mut chunk) {
                Ok(0) => return Err(self.drop_connection("connection closed by server".into())),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(self.fail(format!("no response within {:?}", self.timeout)));
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(self.drop_connection(format!("receive: {e}"))),
            }
        }
    }
}

fn bilinear(img: &GrayImage, p: Pixel2) -> u8 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let raw = img.as_raw();
    let at = |x: i64, y: i64| raw[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize] as f64;
    let (x0, y0) = (p.u.floor(), p.v.floor());
    let (fx, fy) = (p.u - x0, p.v - y0);
    let (xi, yi) = (x0 as i64, y0 as i64);
    let top = at(xi, yi) * (1.0 - fx) + at(xi + 1, yi) * fx;
    let bot = at(xi, yi + 1) * (1.0 - fx) + at(xi + 1, yi + 1) * fx;
    (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8
}

/// Resamples the crop of `img` into a 112×112 patch.
pub fn extract_patch(img: &GrayImage, crop: &CropTransform) -> Vec<u8> {
    if img.width() == 0 || img.height() == 0 {
        return vec![0; PATCH_BYTES];
    }
    let mut out = Vec::with_capacity(PATCH_BYTES);
    for y in 0..PATCH_SIDE {
        for x in 0..PATCH_SIDE {
            out.push(bilinear(img, crop.to_frame(Pixel2::new(x as f64, y as f64))));
        }
    }
    out
}

/// Alignment backend that forwards requests to a remote server.
#[derive(Debug)]
pub struct RemoteBackend {
    client: AlignClient,
}

impl RemoteBackend {
    pub fn new(client: AlignClient) -> Self {
        Self { client }
    }

    pub fn client(&self) -> &AlignClient {
        &self.client
    }

    /// Request for `input`: a square crop around the initial landmarks.
    pub fn build_request(input: &AlignInput) -> Result<AlignRequest, BackendError> {
        let b = FaceBox::around(input.init_landmarks, 0.0).ok_or_else(|| BackendError::Failed("no landmarks".into()))?;
        let side = (b.width.max(b.height) * CROP_GROWTH).max(1.0);
        let crop = CropTransform::square(b.center(), side, PATCH_SIDE);
        if !crop.is_valid() {
            return Err(BackendError::Failed("landmarks produce an invalid crop".into()));
        }
        let limit = (PATCH_SIDE as f32).next_down();
        let init_landmarks = input
            .init_landmarks
            .iter()
            .map(|s| {
                let p = crop.to_patch(*s);
                [(p.u as f32).clamp(0.0, limit), (p.v as f32).clamp(0.0, limit)]
            })
            .collect();
        let patch = match input.image {
            Some(img) => extract_patch(img, &crop),
            None => vec![0; PATCH_BYTES],
        };
        Ok(AlignRequest {
            frame_id: input.frame_id,
            acquisition_us: (input.acquisition_time.max(0.0) * 1e6).round() as u64,
            crop,
            init_landmarks,
            patch,
        })
    }
}

impl AlignmentBackend for RemoteBackend {
    fn align(&mut self, input: &AlignInput) -> Result<Alignment, BackendError> {
        let req = Self::build_request(input)?;
        let resp = self.client.align(&req).map_err(|e| BackendError::Unavailable(e.0))?;
        if resp.landmarks.len() != input.init_landmarks.len() {
            return Err(BackendError::Failed(format!(
                "server returned {} landmarks for {}",
                resp.landmarks.len(),
                input.init_landmarks.len()
            )));
        }
        let landmarks = resp.landmarks.iter().map(|p| req.crop.to_frame(Pixel2::new(p[0] as f64, p[1] as f64))).collect();
        Ok(Alignment { landmarks, valid: resp.valid, confidence: resp.confidence as f64 })
    }

    fn probe(&mut self) -> bool {
        self.client.reconnect().is_ok()
    }
}
