//! Frame acquisition, pre-processing, and analysis-batch assembly.
//!
//! A [`FrameSource`] yields timestamped [`Frame`]s at a fixed cadence from an
//! image directory, an MJPEG file, or an MJPEG-over-HTTP stream. Frames are
//! cleaned up by [`preprocess`] and grouped into tumbling [`FrameBatch`]es by a
//! [`Batcher`].

mod batch;
mod jpeg;
mod preprocess;
mod source;

use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{assemble_batch, Batcher};
pub use jpeg::JpegSplitter;
pub use preprocess::{equalize_histogram, linear_stretch, median_filter, preprocess};
pub use source::{FrameSource, SourceConfig, SourceKind};

/// Smallest accepted frame edge, in pixels.
pub const MIN_FRAME_EDGE: u32 = 64;

/// Default number of frames per analysis cycle.
pub const DEFAULT_BATCH_SIZE: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("end of stream")]
    EndOfStream,
    #[error("frame too small: {width}x{height} (minimum {min}x{min})", min = MIN_FRAME_EDGE)]
    FrameTooSmall { width: u32, height: u32 },
    #[error("invalid preprocess parameters: {0}")]
    InvalidParams(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
}

/// One decoded, timestamped camera frame. Pixels are shared, so cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub sequence_no: u64,
    pub captured_at: DateTime<Utc>,
    pub pixels: Arc<RgbImage>,
    pub source_id: String,
}

impl Frame {
    pub fn new(
        sequence_no: u64,
        captured_at: DateTime<Utc>,
        pixels: RgbImage,
        source_id: impl Into<String>,
    ) -> Result<Self, IngestError> {
        let (width, height) = pixels.dimensions();
        if width < MIN_FRAME_EDGE || height < MIN_FRAME_EDGE {
            return Err(IngestError::FrameTooSmall { width, height });
        }
        Ok(Self {
            sequence_no,
            captured_at,
            pixels: Arc::new(pixels),
            source_id: source_id.into(),
        })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// PNG encoding of the frame, used for evidence files and model payloads.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.pixels
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        out.into_inner()
    }
}

/// Monotonic analysis-cycle number assigned at batch assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatchId(pub u64);

impl fmt::Display for BatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{:06}", self.0)
    }
}

/// A fixed-size, chronologically ordered window of frames.
#[derive(Debug, Clone)]
pub struct FrameBatch {
    batch_id: BatchId,
    frames: Vec<Frame>,
}

impl FrameBatch {
    /// Frames must be strictly increasing in both sequence number and capture time.
    pub fn new(batch_id: BatchId, frames: Vec<Frame>) -> Result<Self, IngestError> {
        if frames.is_empty() {
            return Err(IngestError::InvalidBatch("empty batch".into()));
        }
        for pair in frames.windows(2) {
            if pair[1].sequence_no <= pair[0].sequence_no {
                return Err(IngestError::InvalidBatch(format!(
                    "sequence {} follows {}",
                    pair[1].sequence_no, pair[0].sequence_no
                )));
            }
            if pair[1].captured_at <= pair[0].captured_at {
                return Err(IngestError::InvalidBatch(format!(
                    "frame {} is not later than frame {}",
                    pair[1].sequence_no, pair[0].sequence_no
                )));
            }
        }
        Ok(Self { batch_id, frames })
    }

    pub fn batch_id(&self) -> BatchId {
        self.batch_id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn window_start(&self) -> DateTime<Utc> {
        self.frames[0].captured_at
    }

    pub fn window_end(&self) -> DateTime<Utc> {
        self.frames[self.frames.len() - 1].captured_at
    }

    pub fn frame(&self, sequence_no: u64) -> Option<&Frame> {
        self.frames.iter().find(|f| f.sequence_no == sequence_no)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastMethod {
    None,
    #[default]
    LinearStretch,
    HistogramEqualize,
}

/// Denoise and contrast settings. The median kernel is validated at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPreprocessParams")]
pub struct PreprocessParams {
    pub denoise_enabled: bool,
    denoise_kernel: u32,
    pub contrast_method: ContrastMethod,
}

#[derive(Deserialize)]
struct RawPreprocessParams {
    #[serde(default = "default_true")]
    denoise_enabled: bool,
    #[serde(default = "default_kernel")]
    denoise_kernel: u32,
    #[serde(default)]
    contrast_method: ContrastMethod,
}

fn default_true() -> bool {
    true
}

fn default_kernel() -> u32 {
    3
}

impl TryFrom<RawPreprocessParams> for PreprocessParams {
    type Error = IngestError;

    fn try_from(raw: RawPreprocessParams) -> Result<Self, Self::Error> {
        PreprocessParams::new(raw.denoise_enabled, raw.denoise_kernel, raw.contrast_method)
    }
}

impl PreprocessParams {
    pub fn new(
        denoise_enabled: bool,
        denoise_kernel: u32,
        contrast_method: ContrastMethod,
    ) -> Result<Self, IngestError> {
        if denoise_kernel == 0 || denoise_kernel % 2 == 0 {
            return Err(IngestError::InvalidParams(format!(
                "denoise_kernel must be odd and >= 1, got {denoise_kernel}"
            )));
        }
        Ok(Self {
            denoise_enabled,
            denoise_kernel,
            contrast_method,
        })
    }

    /// Both stages off: `preprocess` becomes the identity.
    pub fn disabled() -> Self {
        Self {
            denoise_enabled: false,
            denoise_kernel: 1,
            contrast_method: ContrastMethod::None,
        }
    }

    pub fn denoise_kernel(&self) -> u32 {
        self.denoise_kernel
    }
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            denoise_enabled: true,
            denoise_kernel: 3,
            contrast_method: ContrastMethod::LinearStretch,
        }
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use chrono::TimeZone;

    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(width, height, image::Rgb(rgb))
    }

    pub fn frame_at(seq: u64, secs: i64) -> Frame {
        let t = Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap();
        Frame::new(seq, t, solid(64, 64, [seq as u8, 0, 0]), "test").unwrap()
    }
}
