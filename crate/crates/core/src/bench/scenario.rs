use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::parse_assessment;
use crate::gateway::ScriptDelays;
use crate::ingest::{DEFAULT_BATCH_SIZE, MIN_FRAME_EDGE};

use super::BenchError;

pub const SCENARIO_SCHEMA: &str = "scenario/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioCategory {
    Normal,
    Abduction,
    EdgeCase,
}

impl ScenarioCategory {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(Self::Normal),
            "abduction" => Some(Self::Abduction),
            "edge_case" => Some(Self::EdgeCase),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub alert_expected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSpec {
    /// Image file, relative to the scenario file.
    Image(PathBuf),
    /// Generated solid-color frame.
    Placeholder([u8; 3]),
}

/// Extra per-stage latency for the replay, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectedDelays {
    pub capture: u64,
    /// Per caption request, so a 5-frame cycle spends five times this.
    pub caption: u64,
    pub situation: u64,
    /// Per debate round.
    pub debate_round: u64,
    pub decision: u64,
}

impl InjectedDelays {
    pub fn script_delays(&self) -> ScriptDelays {
        ScriptDelays {
            caption_ms: self.caption,
            situation_ms: self.situation,
            debate_round_ms: self.debate_round,
            decision_ms: self.decision,
        }
    }
}

/// A validated scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScript {
    pub name: String,
    pub category: ScenarioCategory,
    pub notes: String,
    pub ground_truth: GroundTruth,
    pub batch_size: usize,
    pub start_time: DateTime<Utc>,
    pub frames: Vec<FrameSpec>,
    /// Flattened scripted-backend map: every value is the exact reply text.
    pub script: BTreeMap<String, String>,
    pub injected_delays_ms: InjectedDelays,
    pub path: PathBuf,
}

impl ScenarioScript {
    pub fn batches(&self) -> usize {
        self.frames.len() / self.batch_size
    }
}

fn violation(path: impl Into<String>, reason: impl Into<String>) -> BenchError {
    BenchError::SchemaViolation {
        path: path.into(),
        reason: reason.into(),
    }
}

fn parse_color(s: &str) -> Option<[u8; 3]> {
    let hex = s.strip_prefix('#')?;
    if hex.len() != 6 {
        return None;
    }
    let v = u32::from_str_radix(hex, 16).ok()?;
    Some([(v >> 16) as u8, (v >> 8) as u8, v as u8])
}

fn default_start() -> DateTime<Utc> {
    "2025-01-01T09:00:00Z".parse().expect("valid constant")
}

/// Reads and validates a scenario file. Errors name the offending field as
/// a dotted path, e.g. `script.3` or `frames.2.placeholder`.
pub fn load_scenario(path: &Path) -> Result<ScenarioScript, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| violation("", format!("invalid JSON: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&value, base, path)
}

pub fn parse_scenario(v: &Value, base: &Path, path: &Path) -> Result<ScenarioScript, BenchError> {
    let obj = v.as_object().ok_or_else(|| violation("", "scenario must be a JSON object"))?;
    let str_field = |key: &str| obj.get(key).and_then(Value::as_str);

    match str_field("schema") {
        Some(SCENARIO_SCHEMA) => {}
        Some(other) => return Err(violation("schema", format!("expected `{SCENARIO_SCHEMA}`, got `{other}`"))),
        None => return Err(violation("schema", "missing")),
    }
    let name = str_field("name")
        .filter(|n| !n.trim().is_empty())
        .ok_or_else(|| violation("name", "missing or empty"))?
        .to_string();
    let category = str_field("category")
        .and_then(ScenarioCategory::parse)
        .ok_or_else(|| violation("category", "must be one of normal, abduction, edge_case"))?;
    let notes = str_field("notes").unwrap_or_default().to_string();
    let alert_expected = obj
        .get("ground_truth")
        .and_then(|g| g.get("alert_expected"))
        .and_then(Value::as_bool)
        .ok_or_else(|| violation("ground_truth.alert_expected", "missing boolean"))?;
    match (category, alert_expected) {
        (ScenarioCategory::Abduction, false) => {
            return Err(violation("ground_truth.alert_expected", "abduction scenarios expect an alert"))
        }
        (ScenarioCategory::Normal, true) => {
            return Err(violation("ground_truth.alert_expected", "normal scenarios expect no alert"))
        }
        _ => {}
    }
    let batch_size = match obj.get("batch_size") {
        None => DEFAULT_BATCH_SIZE,
        Some(b) => b
            .as_u64()
            .filter(|b| *b >= 1)
            .ok_or_else(|| violation("batch_size", "must be a positive integer"))? as usize,
    };
    let start_time = match obj.get("start_time") {
        None => default_start(),
        Some(t) => t
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| violation("start_time", "must be an RFC 3339 timestamp"))?,
    };

    let raw_frames = obj
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| violation("frames", "missing list"))?;
    if raw_frames.is_empty() || raw_frames.len() % batch_size != 0 {
        return Err(violation(
            "frames",
            format!("{} frames is not a positive multiple of batch_size {batch_size}", raw_frames.len()),
        ));
    }
    let mut frames = Vec::with_capacity(raw_frames.len());
    for (i, f) in raw_frames.iter().enumerate() {
        let at = format!("frames.{i}");
        if let Some(c) = f.get("placeholder") {
            let color = c
                .as_str()
                .and_then(parse_color)
                .ok_or_else(|| violation(format!("{at}.placeholder"), "expected a #rrggbb color"))?;
            frames.push(FrameSpec::Placeholder(color));
        } else if let Some(p) = f.get("image") {
            let rel = p
                .as_str()
                .ok_or_else(|| violation(format!("{at}.image"), "expected a path"))?;
            let full = base.join(rel);
            if !full.is_file() {
                return Err(violation(format!("{at}.image"), format!("{} not found", full.display())));
            }
            frames.push(FrameSpec::Image(full));
        } else {
            return Err(violation(at, "needs `image` or `placeholder`"));
        }
    }

    let raw_script = obj
        .get("script")
        .and_then(Value::as_object)
        .ok_or_else(|| violation("script", "missing object"))?;
    let mut script = BTreeMap::new();
    for (key, value) in raw_script {
        let text = match value {
            Value::String(s) => s.clone(),
            Value::Object(_) => value.to_string(),
            _ => return Err(violation(format!("script.{key}"), "expected a string or object")),
        };
        let base_key = key.split('@').next().unwrap_or(key);
        let structured = base_key == "situation"
            || base_key == "decision"
            || (base_key.starts_with("debate:") && base_key.matches(':').count() == 1);
        if structured {
            parse_assessment(&text).map_err(|e| violation(format!("script.{key}"), e))?;
        }
        script.insert(key.clone(), text);
    }
    for seq in 1..=frames.len() {
        let key = seq.to_string();
        if script.get(&key).is_none_or(|t| t.trim().is_empty()) {
            return Err(violation(format!("script.{key}"), "no caption for this frame"));
        }
    }
    for batch in 1..=frames.len() / batch_size {
        if !script.contains_key("situation") && !script.contains_key(&format!("situation@{batch}")) {
            return Err(violation("script.situation", format!("no situation response for batch {batch}")));
        }
    }

    let injected_delays_ms = match obj.get("injected_delays_ms") {
        None => InjectedDelays::default(),
        Some(d) => {
            let map = d
                .as_object()
                .ok_or_else(|| violation("injected_delays_ms", "expected an object"))?;
            for (k, v) in map {
                if !matches!(k.as_str(), "capture" | "caption" | "situation" | "debate_round" | "decision") {
                    return Err(violation(format!("injected_delays_ms.{k}"), "unknown stage"));
                }
                if v.as_u64().is_none() {
                    return Err(violation(format!("injected_delays_ms.{k}"), "expected milliseconds"));
                }
            }
            serde_json::from_value(d.clone()).map_err(|e| violation("injected_delays_ms", e.to_string()))?
        }
    };

    Ok(ScenarioScript {
        name,
        category,
        notes,
        ground_truth: GroundTruth { alert_expected },
        batch_size,
        start_time,
        frames,
        script,
        injected_delays_ms,
        path: path.to_path_buf(),
    })
}

/// A solid frame with `seq` written as 16 black/white pixels along the top
/// row, so every placeholder is distinct and identifiable.
pub fn placeholder_frame(color: [u8; 3], seq: u64) -> RgbImage {
    let mut img = RgbImage::from_pixel(MIN_FRAME_EDGE, MIN_FRAME_EDGE, Rgb(color));
    for bit in 0..16u32 {
        let on = (seq >> bit) & 1 == 1;
        img.put_pixel(bit, 0, Rgb(if on { [255, 255, 255] } else { [0, 0, 0] }));
    }
    img
}

/// Reads back the sequence tag written by [`placeholder_frame`].
pub fn placeholder_tag(img: &RgbImage) -> u64 {
    (0..16u32)
        .filter(|bit| img.get_pixel(*bit, 0)[0] > 127)
        .map(|bit| 1u64 << bit)
        .sum()
}

/// Writes the scenario's frames as `000001.png`, ... into `dir`.
pub fn materialize_frames(scenario: &ScenarioScript, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::Io(e.to_string()))?;
    for (i, spec) in scenario.frames.iter().enumerate() {
        let seq = i as u64 + 1;
        match spec {
            FrameSpec::Placeholder(color) => placeholder_frame(*color, seq)
                .save(dir.join(format!("{seq:06}.png")))
                .map_err(|e| BenchError::Io(e.to_string()))?,
            FrameSpec::Image(src) => {
                let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("png");
                std::fs::copy(src, dir.join(format!("{seq:06}.{ext}")))
                    .map_err(|e| BenchError::Io(format!("{}: {e}", src.display())))?;
            }
        }
    }
    Ok(())
}

/// Every `*.json` scenario in `dir`, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<ScenarioScript>, BenchError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            load_scenario(p).map_err(|e| match e {
                BenchError::SchemaViolation { path, reason } => BenchError::SchemaViolation {
                    path,
                    reason: format!("{reason} (in {})", p.display()),
                },
                other => other,
            })
        })
        .collect()
}
