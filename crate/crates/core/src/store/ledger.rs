use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{error, info, warn};

use crate::alerting::{DeliveryLedger, DeliveryOutcome, DeliveryReport};
use crate::ingest::FrameBatch;

use super::threshold::{adapt_threshold, ThresholdChange, ThresholdState};
use super::{
    EvidenceRef, Incident, IncidentSummary, OperatorFeedback, QueryFilter, StoreError,
    EVIDENCE_DIR, INCIDENT_SCHEMA, LEDGER_FILE, QUARANTINE_FILE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Cycle {
        incident: Box<Incident>,
    },
    Delivery {
        incident_id: String,
        report: DeliveryReport,
    },
    Delivered {
        alert_id: String,
        channel: String,
        #[serde(default)]
        provider_message_id: Option<String>,
        at: DateTime<Utc>,
    },
    Feedback {
        incident_id: String,
        feedback: OperatorFeedback,
    },
    Threshold {
        change: ThresholdChange,
    },
    Ack {
        incident_id: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Line {
    schema: String,
    #[serde(flatten)]
    record: Record,
}

#[derive(Debug, Clone, Default)]
pub struct StoreOptions {
    /// Threshold used until the ledger records an adaptation.
    pub initial_threshold: f64,
    /// Evidence is pruned oldest-incident-first past this many bytes.
    pub evidence_quota_bytes: Option<u64>,
}

impl StoreOptions {
    pub fn new(initial_threshold: f64) -> Self {
        Self {
            initial_threshold,
            evidence_quota_bytes: None,
        }
    }
}

/// What crash recovery did at open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    /// 1-based line number of the quarantined record.
    pub line: usize,
    pub quarantined_bytes: usize,
}

struct State {
    incidents: Vec<Incident>,
    index: HashMap<String, usize>,
    threshold: ThresholdState,
    delivered: HashSet<(String, String)>,
}

impl State {
    fn apply(&mut self, record: Record) {
        match record {
            Record::Cycle { incident } => {
                self.index
                    .insert(incident.incident_id.clone(), self.incidents.len());
                self.incidents.push(*incident);
            }
            Record::Delivery {
                incident_id,
                report,
            } => {
                if let Some(i) = self.index.get(&incident_id) {
                    merge_delivery(&mut self.incidents[*i].delivery, report);
                }
            }
            Record::Delivered {
                alert_id, channel, ..
            } => {
                self.delivered.insert((alert_id, channel));
            }
            Record::Feedback {
                incident_id,
                feedback,
            } => {
                if let Some(i) = self.index.get(&incident_id) {
                    let incident = &mut self.incidents[*i];
                    if let Some(prior) = incident.feedback.replace(feedback) {
                        incident.feedback_history.push(prior);
                    }
                }
            }
            Record::Threshold { change } => {
                self.threshold.alert_threshold = change.new;
                self.threshold.history.push(change);
            }
            Record::Ack { incident_id, at } => {
                if let Some(i) = self.index.get(&incident_id) {
                    self.incidents[*i].acked_at.get_or_insert(at);
                }
            }
        }
    }
}

/// Later dispatches replace a channel's entry unless they only report a duplicate skip.
fn merge_delivery(slot: &mut Option<DeliveryReport>, report: DeliveryReport) {
    let Some(existing) = slot else {
        *slot = Some(report);
        return;
    };
    for entry in report.entries {
        match existing.entries.iter_mut().find(|e| e.channel == entry.channel) {
            Some(_) if entry.outcome == DeliveryOutcome::SkippedDuplicate => {}
            Some(old) => *old = entry,
            None => existing.entries.push(entry),
        }
    }
}

struct Writer {
    file: File,
    len: u64,
}

/// The incident ledger. Appends go through a single writer; reads take a
/// short shared lock on the in-memory view.
pub struct Store {
    root: PathBuf,
    options: StoreOptions,
    writer: Mutex<Writer>,
    state: RwLock<State>,
    in_flight: Mutex<HashSet<(String, String)>>,
    recovery: Option<Recovery>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

fn map_io(e: io::Error) -> StoreError {
    if e.kind() == io::ErrorKind::StorageFull {
        StoreError::StorageFull(e.to_string())
    } else {
        StoreError::Io(e)
    }
}

impl Store {
    /// Opens or creates a store. A torn or unparsable final record is moved
    /// to the quarantine file; damage earlier in the ledger is an error.
    pub fn open(root: impl Into<PathBuf>, options: StoreOptions) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(EVIDENCE_DIR))?;
        let path = root.join(LEDGER_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut state = State {
            incidents: Vec::new(),
            index: HashMap::new(),
            threshold: ThresholdState::new(options.initial_threshold),
            delivered: HashSet::new(),
        };
        let mut good_len = 0usize;
        let mut recovery = None;
        let mut pos = 0usize;
        let mut line_no = 0usize;
        while pos < bytes.len() {
            line_no += 1;
            let (end, terminated) = match bytes[pos..].iter().position(|b| *b == b'\n') {
                Some(i) => (pos + i, true),
                None => (bytes.len(), false),
            };
            let raw = &bytes[pos..end];
            let next = if terminated { end + 1 } else { end };
            let is_last = next >= bytes.len();
            if raw.iter().all(u8::is_ascii_whitespace) {
                pos = next;
                good_len = next;
                continue;
            }
            match serde_json::from_slice::<Line>(raw) {
                Ok(line) if terminated => {
                    state.apply(line.record);
                    good_len = next;
                }
                Ok(_) | Err(_) if is_last => {
                    recovery = Some(Recovery {
                        line: line_no,
                        quarantined_bytes: bytes.len() - pos,
                    });
                }
                Ok(_) => unreachable!("an unterminated line is always last"),
                Err(e) => {
                    return Err(StoreError::CorruptRecord {
                        line: line_no,
                        reason: e.to_string(),
                    })
                }
            }
            pos = next;
        }

        if let Some(r) = &recovery {
            let mut q = OpenOptions::new()
                .create(true)
                .append(true)
                .open(root.join(QUARANTINE_FILE))?;
            q.write_all(&bytes[good_len..])?;
            q.write_all(b"\n")?;
            q.sync_all()?;
            file.set_len(good_len as u64)?;
            file.sync_all()?;
            warn!(line = r.line, bytes = r.quarantined_bytes, "quarantined torn ledger record");
        }
        info!(root = %root.display(), incidents = state.incidents.len(), "store opened");

        Ok(Self {
            root,
            options,
            writer: Mutex::new(Writer {
                file,
                len: good_len as u64,
            }),
            state: RwLock::new(state),
            in_flight: Mutex::new(HashSet::new()),
            recovery,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join(LEDGER_FILE)
    }

    pub fn recovery(&self) -> Option<&Recovery> {
        self.recovery.as_ref()
    }

    /// Appends one record durably and verifies it reads back identically.
    fn append(&self, record: Record) -> Result<(), StoreError> {
        let line = Line {
            schema: INCIDENT_SCHEMA.into(),
            record,
        };
        let mut text = serde_json::to_string(&line).map_err(|e| StoreError::CorruptRecord {
            line: 0,
            reason: e.to_string(),
        })?;
        text.push('\n');

        let mut writer = self.writer.lock().expect("store writer poisoned");
        let offset = writer.len;
        let written = writer
            .file
            .write_all(text.as_bytes())
            .and_then(|_| writer.file.sync_data());
        if let Err(e) = written {
            // leave no partial line behind
            let _ = writer.file.set_len(offset);
            return Err(map_io(e));
        }
        writer.len += text.len() as u64;

        let mut check = File::open(self.ledger_path())?;
        check.seek(SeekFrom::Start(offset))?;
        let mut back = vec![0u8; text.len()];
        check.read_exact(&mut back)?;
        let reread: Line =
            serde_json::from_slice(&back).map_err(|e| StoreError::CorruptRecord {
                line: 0,
                reason: format!("read-back failed: {e}"),
            })?;
        if reread != line {
            return Err(StoreError::CorruptRecord {
                line: 0,
                reason: "read-back differs from written record".into(),
            });
        }
        self.state
            .write()
            .expect("store state poisoned")
            .apply(line.record);
        Ok(())
    }

    fn write_evidence(&self, incident_id: &str, batch: &FrameBatch) -> Result<Vec<EvidenceRef>, StoreError> {
        let dir = self.root.join(EVIDENCE_DIR).join(incident_id);
        fs::create_dir_all(&dir).map_err(map_io)?;
        let mut refs = Vec::with_capacity(batch.len());
        for frame in batch.frames() {
            let png = frame.to_png();
            let name = format!("{}.png", frame.sequence_no);
            let tmp = dir.join(format!(".{name}.tmp"));
            let mut f = File::create(&tmp).map_err(map_io)?;
            f.write_all(&png).and_then(|_| f.sync_data()).map_err(map_io)?;
            fs::rename(&tmp, dir.join(&name))?;
            refs.push(EvidenceRef {
                frame_seq: frame.sequence_no,
                path: format!("{EVIDENCE_DIR}/{incident_id}/{name}"),
                sha256: hex::encode(Sha256::digest(&png)),
                captured_at: frame.captured_at,
            });
        }
        Ok(refs)
    }

    /// Persists a cycle: writes the batch frames as evidence, assigns an id
    /// when the incident has none, and appends the record. Returns the
    /// incident as stored.
    pub fn record_cycle(&self, mut incident: Incident, batch: Option<&FrameBatch>) -> Result<Incident, StoreError> {
        if incident.decision.is_none() && incident.error.is_none() {
            return Err(StoreError::MissingDecision);
        }
        {
            let state = self.state.read().expect("store state poisoned");
            if incident.incident_id.is_empty() {
                let mut n = state.incidents.len() + 1;
                while state.index.contains_key(&format!("I-{n:06}")) {
                    n += 1;
                }
                incident.incident_id = format!("I-{n:06}");
            } else if state.index.contains_key(&incident.incident_id) {
                return Err(StoreError::DuplicateIncident(incident.incident_id));
            }
        }
        if let Some(batch) = batch {
            incident.frames = self.write_evidence(&incident.incident_id, batch)?;
        }
        incident.delivery = None;
        incident.feedback = None;
        incident.feedback_history.clear();
        incident.acked_at = None;
        self.append(Record::Cycle {
            incident: Box::new(incident.clone()),
        })?;
        if let Some(quota) = self.options.evidence_quota_bytes {
            if let Err(e) = self.prune_evidence(quota) {
                warn!(error = %e, "evidence pruning failed");
            }
        }
        Ok(incident)
    }

    pub fn record_delivery(&self, incident_id: &str, report: DeliveryReport) -> Result<(), StoreError> {
        self.require(incident_id)?;
        self.append(Record::Delivery {
            incident_id: incident_id.into(),
            report,
        })
    }

    /// Records operator acknowledgment. Only the first ack counts.
    pub fn record_ack(&self, incident_id: &str, at: DateTime<Utc>) -> Result<Incident, StoreError> {
        let incident = self.require(incident_id)?;
        if incident.acked_at.is_none() {
            self.append(Record::Ack {
                incident_id: incident_id.into(),
                at,
            })?;
        }
        self.require(incident_id)
    }

    /// Stores operator feedback on an alert and adapts the threshold.
    pub fn append_feedback(&self, incident_id: &str, feedback: OperatorFeedback) -> Result<ThresholdState, StoreError> {
        let incident = self.require(incident_id)?;
        if !incident.is_alert() {
            return Err(StoreError::FeedbackOnNonAlert(incident_id.into()));
        }
        let old = self.threshold().alert_threshold;
        let new = adapt_threshold(old, feedback.verdict);
        let at = feedback.submitted_at;
        self.append(Record::Feedback {
            incident_id: incident_id.into(),
            feedback,
        })?;
        self.append(Record::Threshold {
            change: ThresholdChange {
                at,
                old,
                new,
                cause: incident_id.into(),
            },
        })?;
        Ok(self.threshold())
    }

    fn require(&self, incident_id: &str) -> Result<Incident, StoreError> {
        self.get(incident_id)
            .ok_or_else(|| StoreError::UnknownIncident(incident_id.into()))
    }

    pub fn get(&self, incident_id: &str) -> Option<Incident> {
        let state = self.state.read().expect("store state poisoned");
        state
            .index
            .get(incident_id)
            .map(|i| state.incidents[*i].clone())
    }

    /// Every incident in insertion order.
    pub fn incidents(&self) -> Vec<Incident> {
        self.state
            .read()
            .expect("store state poisoned")
            .incidents
            .clone()
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("store state poisoned").incidents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn threshold(&self) -> ThresholdState {
        self.state
            .read()
            .expect("store state poisoned")
            .threshold
            .clone()
    }

    /// Newest first (by `created_at`, then insertion), filtered and paginated.
    pub fn query(&self, filter: &QueryFilter) -> Vec<IncidentSummary> {
        let state = self.state.read().expect("store state poisoned");
        let mut hits: Vec<(usize, &Incident)> = state
            .incidents
            .iter()
            .enumerate()
            .filter(|(_, i)| filter.matches(i))
            .collect();
        hits.sort_by(|a, b| b.1.created_at.cmp(&a.1.created_at).then(b.0.cmp(&a.0)));
        hits.into_iter()
            .skip(filter.offset)
            .take(filter.limit.unwrap_or(usize::MAX))
            .map(|(_, i)| i.summary())
            .collect()
    }

    /// Absolute path of a stored frame, if the incident and file exist.
    pub fn evidence_file(&self, incident_id: &str, frame_seq: u64) -> Option<PathBuf> {
        let incident = self.get(incident_id)?;
        let e = incident.frames.iter().find(|f| f.frame_seq == frame_seq)?;
        let path = self.root.join(&e.path);
        path.is_file().then_some(path)
    }

    /// Deletes evidence of the oldest incidents until the total is within
    /// `quota_bytes`. The ledger is never pruned. Returns the number of
    /// incidents whose evidence was removed.
    pub fn prune_evidence(&self, quota_bytes: u64) -> Result<usize, StoreError> {
        let ids: Vec<String> = self
            .incidents()
            .into_iter()
            .map(|i| i.incident_id)
            .collect();
        let sizes: Vec<u64> = ids.iter().map(|id| self.evidence_size(id)).collect();
        let mut total: u64 = sizes.iter().sum();
        let mut pruned = 0;
        for (id, size) in ids.iter().zip(sizes) {
            if total <= quota_bytes {
                break;
            }
            if size == 0 {
                continue;
            }
            fs::remove_dir_all(self.root.join(EVIDENCE_DIR).join(id))?;
            total -= size;
            pruned += 1;
            info!(incident = %id, bytes = size, "pruned evidence");
        }
        Ok(pruned)
    }

    fn evidence_size(&self, incident_id: &str) -> u64 {
        fs::read_dir(self.root.join(EVIDENCE_DIR).join(incident_id))
            .map(|entries| {
                entries
                    .filter_map(Result::ok)
                    .filter_map(|e| e.metadata().ok())
                    .map(|m| m.len())
                    .sum()
            })
            .unwrap_or(0)
    }
}

impl DeliveryLedger for Store {
    fn try_claim(&self, alert_id: &str, channel: &str) -> bool {
        let key = (alert_id.to_string(), channel.to_string());
        let mut in_flight = self.in_flight.lock().expect("claim set poisoned");
        if in_flight.contains(&key)
            || self
                .state
                .read()
                .expect("store state poisoned")
                .delivered
                .contains(&key)
        {
            return false;
        }
        in_flight.insert(key);
        true
    }

    fn release(&self, alert_id: &str, channel: &str, delivered: bool, provider_id: Option<&str>) {
        if delivered {
            let record = Record::Delivered {
                alert_id: alert_id.into(),
                channel: channel.into(),
                provider_message_id: provider_id.map(String::from),
                at: Utc::now(),
            };
            if let Err(e) = self.append(record) {
                error!(alert = alert_id, channel, error = %e, "could not persist delivery mark");
                self.state
                    .write()
                    .expect("store state poisoned")
                    .delivered
                    .insert((alert_id.into(), channel.into()));
            }
        }
        self.in_flight
            .lock()
            .expect("claim set poisoned")
            .remove(&(alert_id.to_string(), channel.to_string()));
    }

    fn is_delivered(&self, alert_id: &str, channel: &str) -> bool {
        self.state
            .read()
            .expect("store state poisoned")
            .delivered
            .contains(&(alert_id.to_string(), channel.to_string()))
    }
}
