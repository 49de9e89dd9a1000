use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use dingdate_core::detect::{postprocess, DetectError, DetectorBackend, PartLabel, RemoteBackend};
use dingdate_core::imageproc::Image;

fn image() -> Image {
    Image::from_fn_rgb(8, 8, |x, y| [x as u8 * 30, y as u8 * 30, 60]).unwrap()
}

/// Serves `count` connections, answering each with `reply` after draining
/// the request.
fn serve(reply: &'static str, count: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().take(count) {
            let mut s = stream.unwrap();
            s.set_read_timeout(Some(Duration::from_millis(500))).unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                match s.read(&mut chunk) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => buf.extend_from_slice(&chunk[..n]),
                }
                if let Some(end) = find(&buf, b"\r\n\r\n") {
                    let head = String::from_utf8_lossy(&buf[..end]).to_lowercase();
                    let len = head
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:"))
                        .and_then(|v| v.trim().parse::<usize>().ok())
                        .unwrap_or(0);
                    if buf.len() >= end + 4 + len {
                        break;
                    }
                }
            }
            let _ = s.write_all(reply.as_bytes());
        }
    });
    format!("http://{addr}/detect")
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn response(status: &str, body: &str) -> &'static str {
    Box::leak(
        format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .into_boxed_str(),
    )
}

#[test]
fn unreachable_backend_is_unavailable_within_timeout() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let backend = RemoteBackend::new(format!("http://127.0.0.1:{port}/detect"), Duration::from_millis(300), 2);
    let start = Instant::now();
    let err = backend.detect(&image()).unwrap_err();
    assert!(matches!(err, DetectError::BackendUnavailable(_)), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(2));
    assert!(!backend.probe());
}

#[test]
fn silent_backend_times_out_as_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(900));
        drop(s);
    });
    let backend = RemoteBackend::new(format!("http://{addr}/detect"), Duration::from_millis(250), 1);
    let start = Instant::now();
    assert!(matches!(backend.detect(&image()), Err(DetectError::BackendUnavailable(_))));
    assert!(start.elapsed() < Duration::from_millis(850));
    hold.join().unwrap();
}

#[test]
fn malformed_body_is_protocol_error() {
    let url = serve(response("200 OK", "{\"boxes\": [{\"label\": 3}]}"), 1);
    let backend = RemoteBackend::new(url, Duration::from_secs(2), 1);
    assert!(matches!(backend.detect(&image()), Err(DetectError::BackendProtocolError(_))));
}

#[test]
fn client_error_status_is_protocol_error() {
    let url = serve(response("400 Bad Request", "{}"), 1);
    let backend = RemoteBackend::new(url, Duration::from_secs(2), 1);
    assert!(matches!(backend.detect(&image()), Err(DetectError::BackendProtocolError(_))));
}

#[test]
fn server_error_status_is_unavailable() {
    let url = serve(response("503 Service Unavailable", "{}"), 1);
    let backend = RemoteBackend::new(url, Duration::from_secs(2), 1);
    assert!(matches!(backend.detect(&image()), Err(DetectError::BackendUnavailable(_))));
}

#[test]
fn well_formed_reply_is_parsed() {
    let body = r#"{"boxes":[{"label":"leg","score":0.7,"box":[0.6,0.5,0.2,0.9]},{"label":"spout","score":0.9,"box":[0,0,1,1]}]}"#;
    let url = serve(response("200 OK", body), 2);
    let backend = RemoteBackend::new(url, Duration::from_secs(2), 1);
    assert!(backend.probe());
    let raw = backend.detect(&image()).unwrap();
    let boxes = postprocess(&raw, 0.5, 10);
    assert_eq!(boxes.len(), 2);
    assert_eq!(boxes[0].label, PartLabel::Other);
    assert_eq!(boxes[1].label, PartLabel::Leg);
    assert_eq!(boxes[1].coords, [0.2, 0.5, 0.6, 0.9]);
}
