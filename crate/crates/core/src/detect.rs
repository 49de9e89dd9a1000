//! Feature-part detection gateway: pluggable backends and box postprocessing.
//!
//! Remote backend wire contract: the image is POSTed as `image/png`; the
//! reply is a JSON document
//! `{"boxes": [{"label": "handle", "score": 0.9, "box": [x0, y0, x1, y1]}]}`
//! with normalized coordinates.

use std::cmp::Ordering;
use std::fmt;
use std::net::{TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageproc::{encode_png, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartLabel {
    Handle,
    Leg,
    Decoration,
    Lid,
    Body,
    Other,
}

impl PartLabel {
    pub const ALL: [PartLabel; 6] = [
        PartLabel::Handle,
        PartLabel::Leg,
        PartLabel::Decoration,
        PartLabel::Lid,
        PartLabel::Body,
        PartLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PartLabel::Handle => "handle",
            PartLabel::Leg => "leg",
            PartLabel::Decoration => "decoration",
            PartLabel::Lid => "lid",
            PartLabel::Body => "body",
            PartLabel::Other => "other",
        }
    }

    /// Maps any backend label onto the closed set; unknown names become `Other`.
    pub fn from_backend(name: &str) -> Self {
        name.parse().unwrap_or(PartLabel::Other)
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == lower)
            .ok_or_else(|| format!("unknown part label {s:?}"))
    }
}

/// Unvalidated proposal as produced by a backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawBox {
    pub label: PartLabel,
    pub score: f32,
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

/// Validated feature-part box: `0 <= x0 < x1 <= 1`, `0 <= y0 < y1 <= 1`,
/// score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub label: PartLabel,
    pub score: f32,
    #[serde(rename = "box")]
    pub coords: [f32; 4],
}

impl DetectionBox {
    pub fn x0(&self) -> f32 {
        self.coords[0]
    }
    pub fn y0(&self) -> f32 {
        self.coords[1]
    }
    pub fn x1(&self) -> f32 {
        self.coords[2]
    }
    pub fn y1(&self) -> f32 {
        self.coords[3]
    }

    pub fn is_valid(&self) -> bool {
        let [x0, y0, x1, y1] = self.coords;
        (0.0..=1.0).contains(&self.score)
            && 0.0 <= x0
            && x0 < x1
            && x1 <= 1.0
            && 0.0 <= y0
            && y0 < y1
            && y1 <= 1.0
    }

    pub fn to_raw(&self) -> RawBox {
        let [x0, y0, x1, y1] = self.coords;
        RawBox {
            label: self.label,
            score: self.score,
            x0,
            y0,
            x1,
            y1,
        }
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("detector backend protocol error: {0}")]
    BackendProtocolError(String),
}

pub trait DetectorBackend: Send + Sync {
    fn detect(&self, image: &Image) -> Result<Vec<RawBox>, DetectError>;

    fn descriptor(&self) -> String;

    /// Cheap reachability check used by health reporting.
    fn probe(&self) -> bool;
}

pub fn detect(image: &Image, backend: &dyn DetectorBackend) -> Result<Vec<RawBox>, DetectError> {
    backend.detect(image)
}

/// Deterministic backend returning one handle, one leg and one decoration box
/// snapped to the image's pixel grid.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubBackend;

impl StubBackend {
    const LAYOUT: [(PartLabel, f32, [f32; 4]); 3] = [
        (PartLabel::Handle, 0.92, [0.10, 0.05, 0.30, 0.30]),
        (PartLabel::Leg, 0.81, [0.20, 0.70, 0.35, 0.98]),
        (PartLabel::Decoration, 0.67, [0.25, 0.35, 0.75, 0.60]),
    ];
}

impl DetectorBackend for StubBackend {
    fn detect(&self, image: &Image) -> Result<Vec<RawBox>, DetectError> {
        let (w, h) = (image.width() as f32, image.height() as f32);
        let snap = |v: f32, extent: f32| (v * extent).round() / extent;
        Ok(Self::LAYOUT
            .iter()
            .map(|&(label, score, [x0, y0, x1, y1])| RawBox {
                label,
                score,
                x0: snap(x0, w),
                y0: snap(y0, h),
                x1: snap(x1, w),
                y1: snap(y1, h),
            })
            .collect())
    }

    fn descriptor(&self) -> String {
        "stub".into()
    }

    fn probe(&self) -> bool {
        true
    }
}

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn acquire(&self, deadline: Instant) -> bool {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            n = self.freed.wait_timeout(n, deadline - now).unwrap().0;
        }
        *n -= 1;
        true
    }

    fn release(&self) {
        *self.available.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct WireBox {
    label: String,
    score: f32,
    #[serde(rename = "box")]
    coords: [f32; 4],
}

#[derive(Deserialize)]
struct WireResponse {
    boxes: Vec<WireBox>,
}

/// Parses a remote backend reply body.
pub fn parse_wire_response(body: &str) -> Result<Vec<RawBox>, DetectError> {
    let parsed: WireResponse =
        serde_json::from_str(body).map_err(|e| DetectError::BackendProtocolError(e.to_string()))?;
    Ok(parsed
        .boxes
        .into_iter()
        .map(|b| RawBox {
            label: PartLabel::from_backend(&b.label),
            score: b.score,
            x0: b.coords[0],
            y0: b.coords[1],
            x1: b.coords[2],
            y1: b.coords[3],
        })
        .collect())
}

/// HTTP client for an out-of-process detector.
pub struct RemoteBackend {
    url: String,
    timeout: Duration,
    agent: ureq::Agent,
    permits: Permits,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, timeout: Duration, max_concurrent: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            timeout,
            agent,
            permits: Permits {
                available: Mutex::new(max_concurrent.max(1)),
                freed: Condvar::new(),
            },
        }
    }

    fn post(&self, body: &[u8]) -> Result<Vec<RawBox>, DetectError> {
        let unavailable = |e: ureq::Error| DetectError::BackendUnavailable(e.to_string());
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "image/png")
            .send(body)
            .map_err(unavailable)?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(DetectError::BackendUnavailable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(DetectError::BackendProtocolError(format!("HTTP {status}")));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) | ureq::Error::Io(_) => DetectError::BackendUnavailable(e.to_string()),
            other => DetectError::BackendProtocolError(other.to_string()),
        })?;
        parse_wire_response(&text)
    }
}

impl DetectorBackend for RemoteBackend {
    fn detect(&self, image: &Image) -> Result<Vec<RawBox>, DetectError> {
        let png = encode_png(image).map_err(|e| DetectError::BackendProtocolError(e.to_string()))?;
        if !self.permits.acquire(Instant::now() + self.timeout) {
            return Err(DetectError::BackendUnavailable("concurrency cap wait timed out".into()));
        }
        let result = self.post(&png);
        self.permits.release();
        result
    }

    fn descriptor(&self) -> String {
        format!("remote {}", self.url)
    }

    fn probe(&self) -> bool {
        let Ok(uri) = self.url.parse::<ureq::http::Uri>() else {
            return false;
        };
        let Some(host) = uri.host() else {
            return false;
        };
        let port = uri.port_u16().unwrap_or(80);
        let Ok(addrs) = (host, port).to_socket_addrs() else {
            return false;
        };
        addrs
            .into_iter()
            .any(|a| TcpStream::connect_timeout(&a, self.timeout).is_ok())
    }
}

fn order(a: &DetectionBox, b: &DetectionBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.label.cmp(&b.label))
        .then(a.x0().total_cmp(&b.x0()))
        .then(a.y0().total_cmp(&b.y0()))
        .then(a.x1().total_cmp(&b.x1()))
        .then(a.y1().total_cmp(&b.y1()))
}

/// Repairs, filters, sorts and truncates raw proposals.
///
/// Non-finite values are rejected, inverted corners swapped, coordinates
/// clamped to the unit square, zero-area boxes dropped, scores clamped to
/// `[0, 1]` and then thresholded. Output is sorted by score descending with
/// ties broken by `(label, x0)`.
pub fn postprocess(raw: &[RawBox], score_threshold: f32, max_boxes: usize) -> Vec<DetectionBox> {
    let mut boxes: Vec<DetectionBox> = raw
        .iter()
        .filter(|b| [b.score, b.x0, b.y0, b.x1, b.y1].iter().all(|v| v.is_finite()))
        .filter_map(|b| {
            let (x0, x1) = (b.x0.min(b.x1).clamp(0.0, 1.0), b.x0.max(b.x1).clamp(0.0, 1.0));
            let (y0, y1) = (b.y0.min(b.y1).clamp(0.0, 1.0), b.y0.max(b.y1).clamp(0.0, 1.0));
            let candidate = DetectionBox {
                label: b.label,
                score: b.score.clamp(0.0, 1.0),
                coords: [x0, y0, x1, y1],
            };
            (candidate.is_valid() && candidate.score >= score_threshold).then_some(candidate)
        })
        .collect();
    boxes.sort_by(order);
    boxes.truncate(max_boxes.max(1));
    boxes
}

/// Pixel-space rectangle for drawing a box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverlayRect {
    pub label: PartLabel,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

pub fn overlay_spec(boxes: &[DetectionBox], image_w: u32, image_h: u32) -> Vec<OverlayRect> {
    let px = |v: f32, extent: u32| (v as f64 * extent as f64).round() as u32;
    boxes
        .iter()
        .map(|b| OverlayRect {
            label: b.label,
            x0: px(b.x0(), image_w),
            y0: px(b.y0(), image_h),
            x1: px(b.x1(), image_w),
            y1: px(b.y1(), image_h),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(label: PartLabel, score: f32, c: [f32; 4]) -> RawBox {
        RawBox {
            label,
            score,
            x0: c[0],
            y0: c[1],
            x1: c[2],
            y1: c[3],
        }
    }

    #[test]
    fn labels_serialize_lowercase() {
        for l in PartLabel::ALL {
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{}\"", l.as_str()));
            assert_eq!(l.as_str().parse::<PartLabel>().unwrap(), l);
        }
        assert_eq!(PartLabel::from_backend("Tripod-Foot"), PartLabel::Other);
        assert_eq!(PartLabel::from_backend("HANDLE"), PartLabel::Handle);
    }

    #[test]
    fn stub_returns_three_parts() {
        let img = Image::from_fn_rgb(224, 224, |_, _| [9, 9, 9]).unwrap();
        let boxes = detect(&img, &StubBackend).unwrap();
        let labels: Vec<_> = boxes.iter().map(|b| b.label).collect();
        assert_eq!(labels, vec![PartLabel::Handle, PartLabel::Leg, PartLabel::Decoration]);
        assert_eq!(boxes, StubBackend.detect(&img).unwrap());
        assert_eq!(postprocess(&boxes, 0.5, 10).len(), 3);
    }

    #[test]
    fn empty_in_empty_out() {
        assert!(postprocess(&[], 0.5, 10).is_empty());
        assert!(overlay_spec(&[], 10, 10).is_empty());
    }

    #[test]
    fn clamps_overflowing_coordinates() {
        let out = postprocess(&[raw(PartLabel::Leg, 0.9, [0.2, 0.1, 1.3, 0.5])], 0.5, 10);
        assert_eq!(out[0].coords, [0.2, 0.1, 1.0, 0.5]);
    }

    #[test]
    fn swaps_inverted_and_drops_degenerate() {
        let out = postprocess(
            &[
                raw(PartLabel::Lid, 0.9, [0.8, 0.6, 0.2, 0.1]),
                raw(PartLabel::Body, 0.9, [1.2, 0.1, 1.5, 0.4]),
                raw(PartLabel::Body, f32::NAN, [0.1, 0.1, 0.4, 0.4]),
            ],
            0.0,
            10,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].coords, [0.2, 0.1, 0.8, 0.6]);
    }

    #[test]
    fn ties_break_on_label_then_x0() {
        let out = postprocess(
            &[
                raw(PartLabel::Leg, 0.7, [0.5, 0.0, 0.6, 0.1]),
                raw(PartLabel::Handle, 0.7, [0.4, 0.0, 0.6, 0.1]),
                raw(PartLabel::Handle, 0.7, [0.1, 0.0, 0.6, 0.1]),
            ],
            0.5,
            10,
        );
        let got: Vec<_> = out.iter().map(|b| (b.label, b.x0())).collect();
        assert_eq!(
            got,
            vec![(PartLabel::Handle, 0.1), (PartLabel::Handle, 0.4), (PartLabel::Leg, 0.5)]
        );
    }

    #[test]
    fn overlay_pixels() {
        let full = DetectionBox {
            label: PartLabel::Handle,
            score: 1.0,
            coords: [0.0, 0.0, 1.0, 1.0],
        };
        assert_eq!(
            overlay_spec(&[full], 224, 224),
            vec![OverlayRect {
                label: PartLabel::Handle,
                x0: 0,
                y0: 0,
                x1: 224,
                y1: 224
            }]
        );
        let mid = DetectionBox {
            label: PartLabel::Leg,
            score: 0.5,
            coords: [0.25, 0.25, 0.75, 0.75],
        };
        let r = &overlay_spec(&[mid], 100, 200)[0];
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (25, 50, 75, 150));
    }

    #[test]
    fn wire_parsing() {
        let boxes = parse_wire_response(r#"{"boxes":[{"label":"spout","score":0.4,"box":[0.1,0.2,0.3,0.4]}]}"#).unwrap();
        assert_eq!(boxes[0].label, PartLabel::Other);
        assert!(matches!(
            parse_wire_response("not json"),
            Err(DetectError::BackendProtocolError(_))
        ));
        assert!(matches!(
            parse_wire_response(r#"{"boxes":[{"label":"leg","score":0.4,"box":[0.1,0.2]}]}"#),
            Err(DetectError::BackendProtocolError(_))
        ));
    }
}
