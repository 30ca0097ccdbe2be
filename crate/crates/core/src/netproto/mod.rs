//! Remote alignment wire protocol.
//!
//! Every message starts with its total length (u32, little-endian, counting
//! the prefix itself) followed by a version byte. All integers and floats are
//! little-endian.
//!
//! Request: `len u32 | version u8 | frame_id u64 | acquisition_us u64 |
//! crop 4×f32 (scale, rotation, tx, ty) | L×(x f32, y f32) | patch 112×112 u8`.
//!
//! Response: `len u32 | version u8 | frame_id u64 | valid u8 | confidence f32 |
//! L×(x f32, y f32)`.
//!
//! The landmark count is implied by the length. Landmarks travel in patch
//! coordinates; the crop maps them into the full frame.

mod client;
mod server;

pub use client::{extract_patch, AlignClient, RemoteBackend, Unavailable, DEFAULT_TIMEOUT};
pub use server::{answer, serve, BackendSource, ServerHandle};

use std::io::Read;

use thiserror::Error;

use crate::pipeline::CropTransform;

pub const PROTOCOL_VERSION: u8 = 1;
pub const PATCH_SIDE: usize = 112;
pub const PATCH_BYTES: usize = PATCH_SIDE * PATCH_SIDE;
/// Upper bound on landmarks per message, which bounds accepted frame sizes.
pub const MAX_LANDMARKS: usize = 1024;

const REQUEST_HEADER: usize = 4 + 1 + 8 + 8 + 16;
const RESPONSE_HEADER: usize = 4 + 1 + 8 + 1 + 4;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("truncated frame: need {needed} bytes, have {got}")]
    TruncatedFrame { needed: usize, got: usize },
    #[error("protocol version {0} is not supported (expected {PROTOCOL_VERSION})")]
    VersionMismatch(u8),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignRequest {
    pub frame_id: u64,
    pub acquisition_us: u64,
    pub crop: CropTransform,
    /// Patch coordinates, each in [0, 112).
    pub init_landmarks: Vec<[f32; 2]>,
    /// Row-major 8-bit grayscale, exactly 112×112.
    pub patch: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignResponse {
    pub frame_id: u64,
    pub valid: bool,
    /// In [0, 1].
    pub confidence: f32,
    /// Patch coordinates.
    pub landmarks: Vec<[f32; 2]>,
}

pub const fn request_len(landmarks: usize) -> usize {
    REQUEST_HEADER + 8 * landmarks + PATCH_BYTES
}

pub const fn response_len(landmarks: usize) -> usize {
    RESPONSE_HEADER + 8 * landmarks
}

/// Bits per second needed to send one request per frame.
pub fn request_bitrate(landmarks: usize, fps: f64) -> f64 {
    request_len(landmarks) as f64 * 8.0 * fps
}

fn in_patch(p: &[f32; 2]) -> bool {
    p.iter().all(|c| (0.0..PATCH_SIDE as f32).contains(c))
}

pub fn encode_request(req: &AlignRequest) -> Result<Vec<u8>, ProtoError> {
    if req.patch.len() != PATCH_BYTES {
        return Err(ProtoError::SizeMismatch(format!("patch has {} bytes, expected {PATCH_BYTES}", req.patch.len())));
    }
    if req.init_landmarks.len() > MAX_LANDMARKS {
        return Err(ProtoError::InvalidMessage(format!("{} landmarks exceed {MAX_LANDMARKS}", req.init_landmarks.len())));
    }
    if !req.crop.is_valid() {
        return Err(ProtoError::InvalidMessage("crop transform must be finite with positive scale".into()));
    }
    if let Some(p) = req.init_landmarks.iter().find(|p| !in_patch(p)) {
        return Err(ProtoError::InvalidMessage(format!("landmark {p:?} outside the patch")));
    }
    let len = request_len(req.init_landmarks.len());
    let mut b = Vec::with_capacity(len);
    b.extend_from_slice(&(len as u32).to_le_bytes());
    b.push(PROTOCOL_VERSION);
    b.extend_from_slice(&req.frame_id.to_le_bytes());
    b.extend_from_slice(&req.acquisition_us.to_le_bytes());
    for v in [req.crop.scale, req.crop.rotation, req.crop.tx, req.crop.ty] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for p in &req.init_landmarks {
        b.extend_from_slice(&p[0].to_le_bytes());
        b.extend_from_slice(&p[1].to_le_bytes());
    }
    b.extend_from_slice(&req.patch);
    debug_assert_eq!(b.len(), len);
    Ok(b)
}

pub fn encode_response(resp: &AlignResponse) -> Result<Vec<u8>, ProtoError> {
    if !(0.0..=1.0).contains(&resp.confidence) {
        return Err(ProtoError::InvalidMessage(format!("confidence {} outside [0, 1]", resp.confidence)));
    }
    if resp.landmarks.len() > MAX_LANDMARKS {
        return Err(ProtoError::InvalidMessage(format!("{} landmarks exceed {MAX_LANDMARKS}", resp.landmarks.len())));
    }
    let len = response_len(resp.landmarks.len());
    let mut b = Vec::with_capacity(len);
    b.extend_from_slice(&(len as u32).to_le_bytes());
    b.push(PROTOCOL_VERSION);
    b.extend_from_slice(&resp.frame_id.to_le_bytes());
    b.push(resp.valid as u8);
    b.extend_from_slice(&resp.confidence.to_le_bytes());
    for p in &resp.landmarks {
        b.extend_from_slice(&p[0].to_le_bytes());
        b.extend_from_slice(&p[1].to_le_bytes());
    }
    Ok(b)
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn bytes<const N: usize>(&mut self) -> [u8; N] {
        let (h, t) = self.0.split_at(N);
        self.0 = t;
        h.try_into().expect("length checked")
    }
    fn u8(&mut self) -> u8 {
        self.bytes::<1>()[0]
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.bytes())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.bytes())
    }
    fn point(&mut self) -> [f32; 2] {
        [self.f32(), self.f32()]
    }
}

/// Checks the framing and version; returns the declared length.
fn check_frame(buf: &[u8], header: usize) -> Result<usize, ProtoError> {
    if buf.len() < 5 {
        return Err(ProtoError::TruncatedFrame { needed: 5, got: buf.len() });
    }
    let declared = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if buf.len() < declared {
        return Err(ProtoError::TruncatedFrame { needed: declared, got: buf.len() });
    }
    if buf.len() > declared {
        return Err(ProtoError::SizeMismatch(format!("{} bytes after a frame declaring {declared}", buf.len())));
    }
    if buf[4] != PROTOCOL_VERSION {
        return Err(ProtoError::VersionMismatch(buf[4]));
    }
    if declared < header {
        return Err(ProtoError::SizeMismatch(format!("declared length {declared} is below the {header}-byte minimum")));
    }
    Ok(declared)
}

pub fn decode_request(buf: &[u8]) -> Result<AlignRequest, ProtoError> {
    let declared = check_frame(buf, REQUEST_HEADER + PATCH_BYTES)?;
    let body = declared - REQUEST_HEADER - PATCH_BYTES;
    if body % 8 != 0 || body / 8 > MAX_LANDMARKS {
        return Err(ProtoError::SizeMismatch(format!("declared length {declared} does not fit whole landmarks and a full patch")));
    }
    let mut c = Cursor(&buf[5..]);
    let frame_id = c.u64();
    let acquisition_us = c.u64();
    let crop = CropTransform { scale: c.f32(), rotation: c.f32(), tx: c.f32(), ty: c.f32() };
    let init_landmarks: Vec<[f32; 2]> = (0..body / 8).map(|_| c.point()).collect();
    let patch = c.0.to_vec();
    if !crop.is_valid() {
        return Err(ProtoError::InvalidMessage("crop transform must be finite with positive scale".into()));
    }
    if init_landmarks.iter().any(|p| !in_patch(p)) {
        return Err(ProtoError::InvalidMessage("landmark outside the patch".into()));
    }
    Ok(AlignRequest { frame_id, acquisition_us, crop, init_landmarks, patch })
}

pub fn decode_response(buf: &[u8]) -> Result<AlignResponse, ProtoError> {
    let declared = check_frame(buf, RESPONSE_HEADER)?;
    let body = declared - RESPONSE_HEADER;
    if body % 8 != 0 || body / 8 > MAX_LANDMARKS {
        return Err(ProtoError::SizeMismatch(format!("declared length {declared} does not fit whole landmarks")));
    }
    let mut c = Cursor(&buf[5..]);
    let frame_id = c.u64();
    let valid = match c.u8() {
        0 => false,
        1 => true,
        v => return Err(ProtoError::InvalidMessage(format!("valid flag {v}"))),
    };
    let confidence = c.f32();
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ProtoError::InvalidMessage(format!("confidence {confidence} outside [0, 1]")));
    }
    let landmarks = (0..body / 8).map(|_| c.point()).collect();
    Ok(AlignResponse { frame_id, valid, confidence, landmarks })
}

/// Largest frame either side accepts.
pub const MAX_FRAME: usize = request_len(MAX_LANDMARKS);

/// Length of the first complete frame in `buf`, if there is one.
pub fn complete_frame_len(buf: &[u8]) -> Result<Option<usize>, ProtoError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let declared = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if declared < 5 || declared > MAX_FRAME {
        return Err(ProtoError::SizeMismatch(format!("declared frame length {declared}")));
    }
    Ok((buf.len() >= declared).then_some(declared))
}

/// Reads exactly one frame from a blocking reader.
pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, ProtoError> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let declared = u32::from_le_bytes(head) as usize;
    complete_frame_len(&head)?;
    let mut buf = vec![0u8; declared];
    buf[..4].copy_from_slice(&head);
    r.read_exact(&mut buf[4..])?;
    Ok(buf)
}
