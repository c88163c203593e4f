use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{Frame, IngestError, JpegSplitter, PreprocessParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Directory of PNG/JPEG stills, read in lexicographic filename order.
    Directory,
    /// File of concatenated JPEG frames (MJPEG) recorded at `video_fps`.
    Video,
    /// Live MJPEG-over-HTTP stream.
    MjpegUrl,
}

/// The `[source]` section of the daemon config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub path_or_url: String,
    #[serde(default = "default_cadence")]
    pub cadence_hz: f64,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    /// Native frame rate of a `video` file.
    #[serde(default = "default_video_fps")]
    pub video_fps: f64,
    /// Pace file sources in real time instead of reading them as fast as possible.
    #[serde(default)]
    pub pace: bool,
    /// First synthetic timestamp for file sources; defaults to the open time.
    #[serde(default)]
    pub start_time: Option<DateTime<Utc>>,
    #[serde(default)]
    pub source_id: Option<String>,
}

fn default_cadence() -> f64 {
    1.0
}

fn default_video_fps() -> f64 {
    30.0
}

impl SourceConfig {
    pub fn directory(path: impl Into<String>) -> Self {
        Self {
            kind: SourceKind::Directory,
            path_or_url: path.into(),
            cadence_hz: default_cadence(),
            preprocess: PreprocessParams::default(),
            video_fps: default_video_fps(),
            pace: false,
            start_time: None,
            source_id: None,
        }
    }

    pub fn video(path: impl Into<String>, video_fps: f64) -> Self {
        Self {
            kind: SourceKind::Video,
            video_fps,
            ..Self::directory(path)
        }
    }

    pub fn mjpeg_url(url: impl Into<String>) -> Self {
        Self {
            kind: SourceKind::MjpegUrl,
            ..Self::directory(url)
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.cadence_hz.is_finite() && self.cadence_hz > 0.0) {
            return Err(IngestError::InvalidParams(format!(
                "cadence_hz must be positive, got {}",
                self.cadence_hz
            )));
        }
        if self.kind == SourceKind::Video && !(self.video_fps.is_finite() && self.video_fps > 0.0) {
            return Err(IngestError::InvalidParams(format!(
                "video_fps must be positive, got {}",
                self.video_fps
            )));
        }
        Ok(())
    }
}

enum Feed {
    Directory {
        files: Vec<PathBuf>,
        pos: usize,
    },
    Video {
        splitter: JpegSplitter<BufReader<File>>,
        next_raw_index: u64,
        fps: f64,
    },
    Live(LiveFeed),
}

/// Pull-based frame source. Not shareable across threads; one producer drives it.
pub struct FrameSource {
    feed: Feed,
    cadence_hz: f64,
    source_id: String,
    emitted: u64,
    start_time: DateTime<Utc>,
    paced: bool,
    origin: Option<Instant>,
    last_acquire: Duration,
}

impl std::fmt::Debug for FrameSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameSource")
            .field("source_id", &self.source_id)
            .field("cadence_hz", &self.cadence_hz)
            .field("emitted", &self.emitted)
            .finish()
    }
}

impl FrameSource {
    pub fn open(config: &SourceConfig) -> Result<Self, IngestError> {
        config.validate()?;
        let feed = match config.kind {
            SourceKind::Directory => open_directory(Path::new(&config.path_or_url))?,
            SourceKind::Video => open_video(Path::new(&config.path_or_url), config.video_fps)?,
            SourceKind::MjpegUrl => Feed::Live(LiveFeed::connect(&config.path_or_url)?),
        };
        let live = matches!(feed, Feed::Live(_));
        let start_time = config.start_time.unwrap_or_else(|| {
            Utc::now()
                .duration_trunc(TimeDelta::milliseconds(1))
                .expect("millisecond truncation")
        });
        Ok(Self {
            feed,
            cadence_hz: config.cadence_hz,
            source_id: config
                .source_id
                .clone()
                .unwrap_or_else(|| config.path_or_url.clone()),
            emitted: 0,
            start_time,
            paced: config.pace || live,
            origin: None,
            last_acquire: Duration::ZERO,
        })
    }

    pub fn cadence_hz(&self) -> f64 {
        self.cadence_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Next frame, with sequence numbers starting at 1.
    ///
    /// Paced sources block until the next cadence tick. File sources are
    /// stamped with synthetic timestamps exactly `1 / cadence_hz` apart; live
    /// sources are stamped with the acquisition time.
    pub fn next_frame(&mut self) -> Result<Frame, IngestError> {
        if self.paced {
            self.wait_for_tick();
        }
        let started = Instant::now();
        let k = self.emitted;
        let (pixels, stamp) = match &mut self.feed {
            Feed::Directory { files, pos } => {
                let path = files.get(*pos).ok_or(IngestError::EndOfStream)?.clone();
                *pos += 1;
                (decode_file(&path)?, None)
            }
            Feed::Video {
                splitter,
                next_raw_index,
                fps,
            } => {
                let target = (k as f64 * *fps / self.cadence_hz).round() as u64;
                loop {
                    let bytes = splitter
                        .next_image()
                        .map_err(|e| IngestError::SourceUnavailable(e.to_string()))?
                        .ok_or(IngestError::EndOfStream)?;
                    let index = *next_raw_index;
                    *next_raw_index += 1;
                    if index == target {
                        break (decode_bytes(&bytes, "video frame")?, None);
                    }
                }
            }
            Feed::Live(live) => {
                let bytes = live.take_latest()?;
                let now = Utc::now()
                    .duration_trunc(TimeDelta::milliseconds(1))
                    .expect("millisecond truncation");
                (decode_bytes(&bytes, "stream frame")?, Some(now))
            }
        };
        let captured_at = stamp.unwrap_or_else(|| self.synthetic_time(k));
        self.emitted += 1;
        self.last_acquire = started.elapsed();
        Frame::new(k + 1, captured_at, pixels, self.source_id.clone())
    }

    /// Time the last `next_frame` spent acquiring and decoding, excluding
    /// the wait for its cadence tick.
    pub fn last_acquire_time(&self) -> Duration {
        self.last_acquire
    }

    fn synthetic_time(&self, k: u64) -> DateTime<Utc> {
        let offset_ms = (k as f64 * 1000.0 / self.cadence_hz).round() as i64;
        self.start_time + TimeDelta::milliseconds(offset_ms)
    }

    fn wait_for_tick(&mut self) {
        let origin = *self.origin.get_or_insert_with(Instant::now);
        let due = origin + Duration::from_secs_f64(self.emitted as f64 / self.cadence_hz);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }
}

fn open_directory(dir: &Path) -> Result<Feed, IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::SourceUnavailable(format!(
            "{} is not a readable directory",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| IngestError::SourceUnavailable(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    files.sort();
    debug!(dir = %dir.display(), count = files.len(), "opened directory source");
    Ok(Feed::Directory { files, pos: 0 })
}

fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn open_video(path: &Path, fps: f64) -> Result<Feed, IngestError> {
    let mut file = File::open(path)
        .map_err(|e| IngestError::SourceUnavailable(format!("{}: {e}", path.display())))?;
    let mut magic = [0u8; 2];
    let n = file
        .read(&mut magic)
        .map_err(|e| IngestError::SourceUnavailable(e.to_string()))?;
    if n < 2 || magic != [0xFF, 0xD8] {
        return Err(IngestError::UnsupportedFormat(format!(
            "{} is not an MJPEG stream",
            path.display()
        )));
    }
    let file = File::open(path).map_err(|e| IngestError::SourceUnavailable(e.to_string()))?;
    Ok(Feed::Video {
        splitter: JpegSplitter::new(BufReader::new(file)),
        next_raw_index: 0,
        fps,
    })
}

fn decode_file(path: &Path) -> Result<image::RgbImage, IngestError> {
    let bytes = std::fs::read(path)
        .map_err(|e| IngestError::SourceUnavailable(format!("{}: {e}", path.display())))?;
    decode_bytes(&bytes, &path.display().to_string())
}

fn decode_bytes(bytes: &[u8], what: &str) -> Result<image::RgbImage, IngestError> {
    let format = image::guess_format(bytes)
        .map_err(|_| IngestError::UnsupportedFormat(format!("{what}: unknown image format")))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(IngestError::UnsupportedFormat(format!(
            "{what}: {format:?} is not PNG or JPEG"
        )));
    }
    image::load_from_memory_with_format(bytes, format)
        .map(|img| img.to_rgb8())
        .map_err(|e| IngestError::UnsupportedFormat(format!("{what}: {e}")))
}

#[derive(Default)]
struct LiveState {
    latest: Option<Vec<u8>>,
    version: u64,
    failure: Option<String>,
}

/// Background reader that keeps only the most recent JPEG of an MJPEG stream.
struct LiveFeed {
    shared: Arc<(Mutex<LiveState>, Condvar)>,
    taken_version: u64,
    stop: Arc<AtomicBool>,
}

const LIVE_FRAME_WAIT: Duration = Duration::from_secs(5);

impl LiveFeed {
    fn connect(url: &str) -> Result<Self, IngestError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_connect(Some(Duration::from_secs(5)))
            .build()
            .into();
        let response = agent
            .get(url)
            .call()
            .map_err(|e| IngestError::SourceUnavailable(format!("{url}: {e}")))?;
        let reader = response.into_body().into_reader();
        let shared = Arc::new((Mutex::new(LiveState::default()), Condvar::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (thread_shared, thread_stop) = (shared.clone(), stop.clone());
        let url = url.to_string();
        thread::Builder::new()
            .name("mjpeg-reader".into())
            .spawn(move || {
                let mut splitter = JpegSplitter::new(reader);
                let (lock, cvar) = &*thread_shared;
                loop {
                    if thread_stop.load(Ordering::Relaxed) {
                        return;
                    }
                    let next = splitter.next_image();
                    let mut state = lock.lock().expect("live state poisoned");
                    match next {
                        Ok(Some(img)) => {
                            state.latest = Some(img);
                            state.version += 1;
                        }
                        Ok(None) => {
                            state.failure = Some(format!("{url}: stream ended"));
                        }
                        Err(e) => {
                            state.failure = Some(format!("{url}: {e}"));
                        }
                    }
                    let done = state.failure.is_some();
                    cvar.notify_all();
                    if done {
                        warn!(url = %url, "live source dropped");
                        return;
                    }
                }
            })
            .map_err(|e| IngestError::SourceUnavailable(e.to_string()))?;
        Ok(Self {
            shared,
            taken_version: 0,
            stop,
        })
    }

    fn take_latest(&mut self) -> Result<Vec<u8>, IngestError> {
        let (lock, cvar) = &*self.shared;
        let guard = lock.lock().expect("live state poisoned");
        let (mut state, _) = cvar
            .wait_timeout_while(guard, LIVE_FRAME_WAIT, |s| {
                s.version == self.taken_version && s.failure.is_none()
            })
            .expect("live state poisoned");
        if state.version == self.taken_version {
            return Err(IngestError::SourceUnavailable(
                state
                    .failure
                    .clone()
                    .unwrap_or_else(|| "no new frame from live source".into()),
            ));
        }
        self.taken_version = state.version;
        Ok(state.latest.take().expect("version bumped with a frame"))
    }
}

impl Drop for LiveFeed {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::test_util::solid;

    fn write_png(dir: &Path, name: &str, shade: u8) {
        solid(64, 64, [shade, shade, shade]).save(dir.join(name)).unwrap();
    }

    #[test]
    fn directory_yields_files_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in (1..=10).rev() {
            write_png(dir.path(), &format!("f{i:03}.png"), i as u8 * 10);
        }
        std::fs::write(dir.path().join("notes.txt"), "skip me").unwrap();
        let mut cfg = SourceConfig::directory(dir.path().to_str().unwrap());
        cfg.preprocess = PreprocessParams::disabled();
        let mut src = FrameSource::open(&cfg).unwrap();
        let mut shades = Vec::new();
        let mut stamps = Vec::new();
        for expected_seq in 1..=10 {
            let f = src.next_frame().unwrap();
            assert_eq!(f.sequence_no, expected_seq);
            shades.push(f.pixels.get_pixel(0, 0)[0]);
            stamps.push(f.captured_at);
        }
        assert_eq!(shades, (1..=10).map(|i| i * 10).collect::<Vec<u8>>());
        for pair in stamps.windows(2) {
            assert_eq!((pair[1] - pair[0]).num_milliseconds(), 1000);
        }
        assert!(matches!(src.next_frame(), Err(IngestError::EndOfStream)));
    }

    #[test]
    fn missing_path_is_unavailable() {
        let err = FrameSource::open(&SourceConfig::directory("/nope")).unwrap_err();
        assert!(matches!(err, IngestError::SourceUnavailable(_)));
        let err = FrameSource::open(&SourceConfig::video("/nope.mjpeg", 30.0)).unwrap_err();
        assert!(matches!(err, IngestError::SourceUnavailable(_)));
    }

    #[test]
    fn undecodable_file_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"not really a png").unwrap();
        let mut src = FrameSource::open(&SourceConfig::directory(dir.path().to_str().unwrap()))
            .unwrap();
        assert!(matches!(src.next_frame(), Err(IngestError::UnsupportedFormat(_))));

        let bogus = dir.path().join("clip.mjpeg");
        std::fs::write(&bogus, b"RIFF....AVI ").unwrap();
        let err = FrameSource::open(&SourceConfig::video(bogus.to_str().unwrap(), 30.0))
            .unwrap_err();
        assert!(matches!(err, IngestError::UnsupportedFormat(_)));
    }

    #[test]
    fn bad_cadence_is_rejected() {
        let mut cfg = SourceConfig::directory("/tmp");
        cfg.cadence_hz = 0.0;
        assert!(matches!(FrameSource::open(&cfg), Err(IngestError::InvalidParams(_))));
    }

    #[test]
    fn paced_source_waits_for_ticks() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write_png(dir.path(), &format!("{i}.png"), 1);
        }
        let mut cfg = SourceConfig::directory(dir.path().to_str().unwrap());
        cfg.cadence_hz = 20.0;
        cfg.pace = true;
        let mut src = FrameSource::open(&cfg).unwrap();
        let t0 = Instant::now();
        for _ in 0..3 {
            src.next_frame().unwrap();
        }
        assert!(t0.elapsed() >= Duration::from_millis(95));
    }
}
