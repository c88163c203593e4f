//! Frame sources end to end: MJPEG files and live MJPEG over HTTP.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use childwatch::ingest::{FrameSource, IngestError, JpegSplitter, SourceConfig};
use image::codecs::jpeg::JpegEncoder;
use image::{Rgb, RgbImage};

fn jpeg(shade: u8) -> Vec<u8> {
    let mut img = RgbImage::from_pixel(64, 64, Rgb([shade, 255 - shade, shade / 2]));
    // a stripe whose position depends on the shade keeps frames distinguishable after compression
    let x = shade as u32 % 64;
    for y in 0..64 {
        img.put_pixel(x, y, Rgb([255, 255, 255]));
    }
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, 90).encode_image(&img).unwrap();
    out
}

#[test]
fn video_file_samples_match_an_independent_decode() {
    let fps = 30.0;
    let raw: Vec<Vec<u8>> = (0..95u32).map(|i| jpeg((i * 2 + 10) as u8)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.mjpeg");
    std::fs::write(&path, raw.concat()).unwrap();

    // oracle: decode every raw frame on its own, take index round(k * fps / cadence)
    let decoded: Vec<RgbImage> = raw
        .iter()
        .map(|b| image::load_from_memory(b).unwrap().to_rgb8())
        .collect();
    let mut config = SourceConfig::video(path.display().to_string(), fps);
    config.start_time = Some("2025-03-01T10:00:00Z".parse().unwrap());
    let mut source = FrameSource::open(&config).unwrap();
    let mut k = 0u64;
    loop {
        match source.next_frame() {
            Ok(frame) => {
                let index = (k as f64 * fps / config.cadence_hz).round() as usize;
                assert_eq!(*frame.pixels, decoded[index], "frame {k} should be raw frame {index}");
                assert_eq!(frame.sequence_no, k + 1);
                assert_eq!(
                    frame.captured_at,
                    config.start_time.unwrap() + chrono::TimeDelta::seconds(k as i64)
                );
                k += 1;
            }
            Err(IngestError::EndOfStream) => break,
            Err(e) => panic!("{e}"),
        }
    }
    // indices 0, 30, 60, 90 exist in a 95-frame clip
    assert_eq!(k, 4);
}

#[test]
fn non_mjpeg_video_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.mp4");
    std::fs::write(&path, b"\x00\x00\x00\x18ftypmp42").unwrap();
    let err = FrameSource::open(&SourceConfig::video(path.display().to_string(), 30.0)).unwrap_err();
    assert!(matches!(err, IngestError::UnsupportedFormat(_)));
}

/// Serves `multipart/x-mixed-replace` JPEG parts every `interval` until stopped.
fn mjpeg_server(interval: Duration, stop: Arc<AtomicBool>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = [0u8; 1024];
        let _ = stream.read(&mut buf);
        let head = "HTTP/1.1 200 OK\r\nContent-Type: multipart/x-mixed-replace; boundary=frame\r\nConnection: close\r\n\r\n";
        if stream.write_all(head.as_bytes()).is_err() {
            return;
        }
        let mut i = 0u8;
        while !stop.load(Ordering::SeqCst) {
            let part = jpeg(i.wrapping_mul(7));
            let header = format!("--frame\r\nContent-Type: image/jpeg\r\nContent-Length: {}\r\n\r\n", part.len());
            if stream.write_all(header.as_bytes()).is_err()
                || stream.write_all(&part).is_err()
                || stream.write_all(b"\r\n").is_err()
            {
                return;
            }
            i = i.wrapping_add(1);
            std::thread::sleep(interval);
        }
    });
    format!("http://{addr}/stream.mjpg")
}

#[test]
fn live_mjpeg_stream_yields_fresh_frames_at_cadence() {
    let stop = Arc::new(AtomicBool::new(false));
    let url = mjpeg_server(Duration::from_millis(20), stop.clone());
    let mut config = SourceConfig::mjpeg_url(url);
    config.cadence_hz = 10.0;
    let mut source = FrameSource::open(&config).unwrap();
    let mut frames = Vec::new();
    for _ in 0..5 {
        frames.push(source.next_frame().unwrap());
    }
    stop.store(true, Ordering::SeqCst);
    for pair in frames.windows(2) {
        assert_eq!(pair[1].sequence_no, pair[0].sequence_no + 1);
        assert!(pair[1].captured_at > pair[0].captured_at);
        let gap = (pair[1].captured_at - pair[0].captured_at).num_milliseconds();
        assert!((60..=250).contains(&gap), "gap {gap} ms at 10 Hz");
    }
    assert_eq!(frames[0].width(), 64);
}

#[test]
fn unreachable_stream_is_source_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = FrameSource::open(&SourceConfig::mjpeg_url(format!("http://{addr}/x"))).unwrap_err();
    assert!(matches!(err, IngestError::SourceUnavailable(_)));
}

#[test]
fn splitter_handles_multipart_framing() {
    let mut body = Vec::new();
    for shade in [10u8, 80, 160] {
        body.extend_from_slice(b"--frame\r\nContent-Type: image/jpeg\r\n\r\n");
        body.extend_from_slice(&jpeg(shade));
        body.extend_from_slice(b"\r\n");
    }
    let images: Vec<Vec<u8>> = JpegSplitter::new(&body[..]).map(Result::unwrap).collect();
    assert_eq!(images, [10u8, 80, 160].map(jpeg));
}
