#![allow(dead_code)]

pub mod backpressure;
pub mod strategies;
pub mod stub;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use childwatch::gateway::BackendConfig;
use childwatch::ingest::{PreprocessParams, SourceConfig};
use childwatch::pipeline::PipelineConfig;
use image::{Rgb, RgbImage};
use serde_json::json;

/// Writes `n` distinct 64×64 PNG frames named 0001.png, 0002.png, ...
pub fn write_frames(dir: &Path, n: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for k in 1..=n {
        let shade = (k * 13 % 200) as u8 + 20;
        let img = RgbImage::from_pixel(64, 64, Rgb([shade, 90, 255 - shade]));
        img.save(dir.join(format!("{k:04}.png"))).unwrap();
    }
}

pub fn assessment(label: &str, confidence: f64, cues: &[&str]) -> String {
    json!({
        "label": label,
        "confidence": confidence,
        "rationale": format!("scripted {label} assessment"),
        "cues": cues,
    })
    .to_string()
}

/// Caption for every frame plus a benign situation answer.
pub fn benign_script(frames: u64) -> BTreeMap<String, String> {
    let mut script: BTreeMap<String, String> = (1..=frames)
        .map(|k| (k.to_string(), format!("Two children play near the swings in frame {k}.")))
        .collect();
    script.insert("situation".into(), assessment("normal", 0.1, &[]));
    script
}

pub fn write_script(path: &Path, script: &BTreeMap<String, String>) {
    std::fs::write(path, serde_json::to_string_pretty(script).unwrap()).unwrap();
}

/// A pipeline over a directory of `frames` stills with one scripted backend.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PipelineConfig,
}

impl Fixture {
    pub fn new(frames: u64, script: &BTreeMap<String, String>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_frames(&dir.path().join("frames"), frames);
        let script_path = dir.path().join("script.json");
        write_script(&script_path, script);
        let mut source = SourceConfig::directory(dir.path().join("frames").display().to_string());
        source.preprocess = PreprocessParams::disabled();
        source.start_time = Some("2025-03-01T10:00:00Z".parse().unwrap());
        let mut config = PipelineConfig::new(
            source,
            BackendConfig::scripted(script_path),
            dir.path().join("store"),
        );
        config.dispatch.backoff_base_ms = 1;
        Self { dir, config }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn with_file_channel(mut self, name: &str) -> Self {
        let dest = self.path(&format!("{name}.jsonl"));
        self.config.channels.insert(
            name.into(),
            childwatch::alerting::ChannelConfig::new(
                name,
                childwatch::alerting::ChannelKind::File,
                dest.display().to_string(),
            ),
        );
        self
    }
}
