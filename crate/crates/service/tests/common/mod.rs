#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use dingdate_core::imageproc::{encode_jpeg, encode_png, Image};
use dingdate_core::Period;
use dingdate_service::tools::{self, NewArtifact};
use dingdate_service::{router, AppState, ServiceConfig};

pub const BOUNDARY: &str = "dingdate-test-boundary";

pub const D001_SHAPE: &str = "圆腹, 三柱足, 双立耳";
pub const D001_LITERATURE: &str = "《殷周金文集成》 2708";
pub const D001_EXCAVATION: &str = "河南安阳殷墟";
pub const D001_MUSEUM: &str = "中国国家博物馆 (National Museum of China)";

/// Synthetic Ding-like photo: dark bowl, legs and handles on a pale field.
pub fn vessel(w: u32, h: u32, tint: u8) -> Image {
    Image::from_fn_rgb(w, h, |x, y| {
        let (fx, fy) = (x as f32 / w as f32, y as f32 / h as f32);
        let bowl = ((fx - 0.5) / 0.32).powi(2) + ((fy - 0.5) / 0.22).powi(2) <= 1.0;
        let leg = fy > 0.6 && fy < 0.95 && [0.3, 0.5, 0.7].iter().any(|c| (fx - c).abs() < 0.03);
        let handle = fy > 0.12 && fy < 0.3 && [0.3, 0.7].iter().any(|c| (fx - c).abs() < 0.04);
        if bowl || leg || handle {
            let pattern = ((x / 3 + y / 3) % 2) as u8 * 18;
            [60 + pattern + tint / 4, 72 + pattern, 50 + tint / 3]
        } else {
            [236, 232, 226]
        }
    })
    .unwrap()
}

pub fn photo_png() -> Vec<u8> {
    encode_png(&vessel(96, 80, 0)).unwrap()
}

pub fn photo_jpeg() -> Vec<u8> {
    encode_jpeg(&vessel(96, 80, 40), 90).unwrap()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: ServiceConfig,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Saved tiny weights, a 3-artifact catalog with embeddings, stub detector.
pub fn fixture() -> Fixture {
    fixture_with(true)
}

pub fn fixture_with(embed: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("tiny.nnxw");
    tools::init_weights(&weights, 7).unwrap();
    let catalog = dir.path().join("catalog");
    let photos = [
        ("d001.jpg", encode_jpeg(&vessel(64, 64, 10), 92).unwrap()),
        ("d002.png", encode_png(&vessel(80, 64, 90)).unwrap()),
        ("d003.jpg", encode_jpeg(&vessel(72, 90, 200), 85).unwrap()),
    ];
    for (name, bytes) in &photos {
        std::fs::write(dir.path().join(name), bytes).unwrap();
    }
    let add = |id, period, file: &str, shape, literature, excavation, museum| {
        tools::add_artifact(
            &catalog,
            NewArtifact {
                id,
                period,
                image: &dir.path().join(file),
                shape,
                literature,
                excavation,
                museum,
            },
        )
        .unwrap();
    };
    add("d001", Period::ShangLate, "d001.jpg", D001_SHAPE, D001_LITERATURE, D001_EXCAVATION, D001_MUSEUM);
    add("d002", Period::WesternZhouEarly, "d002.png", "deep belly", "Jicheng 2837", "Baoji", "Shaanxi History Museum");
    add("d003", Period::WesternZhouEarly, "d003.jpg", "shallow belly", "Jicheng 2614", "Fufeng", "Zhouyuan Museum");
    if embed {
        assert_eq!(tools::ingest(&catalog, &weights).unwrap(), 3);
    }
    let config = ServiceConfig {
        weights,
        catalog,
        ..ServiceConfig::default()
    };
    Fixture { dir, config }
}

pub fn app(config: ServiceConfig) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::new(config).unwrap());
    (state.clone(), router(state))
}

pub fn multipart_body(bytes: &[u8], filename: &str, content_type: &str) -> Vec<u8> {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"{filename}\"\r\nContent-Type: {content_type}\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn upload(bytes: &[u8], filename: &str, content_type: &str) -> Request<Body> {
    let body = multipart_body(bytes, filename, content_type);
    Request::post("/api/v1/date")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .header("content-length", body.len())
        .body(Body::from(body))
        .unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub async fn send(router: &Router, req: Request<Body>) -> (StatusCode, HeaderMap, Vec<u8>) {
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

pub fn json(body: &[u8]) -> serde_json::Value {
    serde_json::from_slice(body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(body)))
}

/// Response body with the timing block removed, re-serialized.
pub fn without_timing(body: &[u8]) -> Vec<u8> {
    let mut v = json(body);
    v.as_object_mut().unwrap().remove("timing_ms");
    serde_json::to_vec(&v).unwrap()
}

pub fn schema() -> jsonschema::Validator {
    let text = include_str!("../../schema/dating_response.schema.json");
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}
