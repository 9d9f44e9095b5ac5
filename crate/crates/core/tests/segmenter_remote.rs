//! `segment_remote` against a tiny in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use segzero::dataprep::{decode_rle, encode_rle};
use segzero::geometry::{BBox, BinaryMask, Point};
use segzero::parser::SegPrompt;
use segzero::segmenter::{segment_remote, RemoteRequest, RemoteResponse, SegBackend, SegmentError};

#[derive(Clone, Copy)]
enum Mode {
    /// Fill the requested box.
    Echo,
    /// Echo, but report a mask one pixel wider than requested.
    WrongDims,
    BadRequest,
    BadRle,
    /// Accept and never answer.
    Silent,
}

fn read_request(stream: &mut TcpStream) -> Option<RemoteRequest> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn reply(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn serve(mode: Mode) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(req) = read_request(&mut stream) else { continue };
            let [x1, y1, x2, y2] = req.bbox;
            let mask = BinaryMask::from_fn(req.width, req.height, |x, y| {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                fx >= x1 && fx <= x2 && fy >= y1 && fy <= y2
            });
            match mode {
                Mode::Echo => reply(&mut stream, "200 OK", &serde_json::to_string(&RemoteResponse::from_mask(&mask)).unwrap()),
                Mode::WrongDims => {
                    let mut r = RemoteResponse::from_mask(&mask);
                    r.width += 1;
                    reply(&mut stream, "200 OK", &serde_json::to_string(&r).unwrap());
                }
                Mode::BadRequest => reply(&mut stream, "400 Bad Request", "{\"error\":\"bad\"}"),
                Mode::BadRle => {
                    let r = RemoteResponse {
                        mask_rle: "3 x 4".into(),
                        width: req.width,
                        height: req.height,
                    };
                    reply(&mut stream, "200 OK", &serde_json::to_string(&r).unwrap());
                }
                Mode::Silent => {
                    thread::sleep(Duration::from_secs(5));
                }
            }
        }
    });
    format!("http://{addr}/segment")
}

fn prompt() -> SegPrompt {
    SegPrompt {
        bbox: BBox::new(4.0, 6.0, 20.0, 12.0),
        p1: Point::new(8.0, 8.0),
        p2: Point::new(10.0, 9.0),
    }
}

fn backend(url: String, ms: u64) -> SegBackend {
    SegBackend::remote(url, Duration::from_millis(ms))
}

#[test]
fn echo_round_trip_gives_the_box() {
    let url = serve(Mode::Echo);
    let m = segment_remote(b"\x89PNG", 32, 24, &prompt(), &backend(url, 5000)).unwrap();
    assert_eq!((m.width(), m.height()), (32, 24));
    // pixels whose centers fall in [4,20]x[6,12]
    assert_eq!(m.bounds(), Some((4, 6, 19, 11)));
    assert_eq!(m.count(), 16 * 6);
}

#[test]
fn request_body_matches_the_wire_schema() {
    let r = RemoteRequest::new(&[1, 2, 3], 32, 24, &prompt());
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["bbox", "height", "image_png_b64", "points", "width"]);
    assert_eq!(v["image_png_b64"], "AQID");
    assert_eq!(v["points"], serde_json::json!([[8.0, 8.0], [10.0, 9.0]]));
}

#[test]
fn wrong_dimensions_are_a_protocol_error() {
    let url = serve(Mode::WrongDims);
    let e = segment_remote(b"", 32, 24, &prompt(), &backend(url, 5000)).unwrap_err();
    assert!(matches!(e, SegmentError::Protocol(_)), "{e}");
}

#[test]
fn client_errors_are_protocol_errors() {
    let url = serve(Mode::BadRequest);
    let e = segment_remote(b"", 32, 24, &prompt(), &backend(url, 5000)).unwrap_err();
    assert!(matches!(e, SegmentError::Protocol(ref m) if m.contains("400")), "{e}");
}

#[test]
fn undecodable_masks_are_decode_errors() {
    let url = serve(Mode::BadRle);
    let e = segment_remote(b"", 32, 24, &prompt(), &backend(url, 5000)).unwrap_err();
    assert!(matches!(e, SegmentError::Decode(_)), "{e}");
}

#[test]
fn unreachable_endpoint_times_out() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let e = segment_remote(b"", 8, 8, &prompt(), &backend(format!("http://127.0.0.1:{port}/"), 2000)).unwrap_err();
    assert!(matches!(e, SegmentError::Timeout { .. }), "{e}");
}

#[test]
fn silent_server_is_cut_off_at_the_timeout() {
    let url = serve(Mode::Silent);
    let t0 = Instant::now();
    let e = segment_remote(b"", 8, 8, &prompt(), &backend(url, 300)).unwrap_err();
    let took = t0.elapsed();
    assert!(matches!(e, SegmentError::Timeout { .. }), "{e}");
    assert!(took < Duration::from_millis(1500), "took {took:?}");
}

#[test]
fn concurrent_requests_are_independent() {
    let url = serve(Mode::Echo);
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let b = backend(url.clone(), 5000);
            thread::spawn(move || {
                let x = 2.0 + i as f64;
                let p = SegPrompt {
                    bbox: BBox::new(x, x, x + 4.0, x + 4.0),
                    ..prompt()
                };
                segment_remote(b"", 16, 16, &p, &b).unwrap()
            })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let m = h.join().unwrap();
        let x = 2 + i;
        assert_eq!(m.bounds(), Some((x, x, x + 3, x + 3)));
    }
}

#[test]
fn rle_helpers_agree_with_the_server_encoding() {
    let m = BinaryMask::from_fn(5, 3, |x, y| x > y);
    assert_eq!(decode_rle(&encode_rle(&m), 5, 3).unwrap(), m);
}
