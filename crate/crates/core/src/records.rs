//! Line-delimited persistence: gust-test records, reward curves, and plant
//! traces. The record store is append-only and idempotent by record key so
//! interrupted campaigns resume without duplicates.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::FlightCondition;
use crate::error::{Error, Result};

/// One evaluation episode's summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GustTestRecord {
    /// Unique cell key: controller id, deflection, repetition.
    pub key: String,
    pub controller_id: String,
    pub condition: FlightCondition,
    pub tap_count: usize,
    /// Signed test deflection, degrees.
    pub deflection: f64,
    pub repetition: u32,
    pub seed: u64,
    /// Settled GRP, percent.
    pub settled_grp: f64,
    /// Rise time in seconds; `None` when unmeasurable.
    pub rise_time: Option<f64>,
    /// Eq. 1 denominator: |mean baseline lift change| over the gust, newtons.
    pub baseline_mean_delta: f64,
    /// Hash of the resolved configuration this test ran under.
    pub config_hash: String,
    /// Sidecar lift-trace file (relative path), when traces are kept.
    pub trace_file: Option<String>,
}

impl GustTestRecord {
    pub fn make_key(controller_id: &str, deflection: f64, repetition: u32) -> String {
        format!("{controller_id}|{deflection}|{repetition}")
    }
}

/// Append-only JSONL store of test records keyed for idempotent resume.
pub struct RecordStore {
    path: PathBuf,
    keys: BTreeSet<String>,
    file: File,
}

impl RecordStore {
    pub fn open(path: &Path) -> Result<RecordStore> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        let mut keys = BTreeSet::new();
        if path.exists() {
            for record in load_records(path)? {
                keys.insert(record.key);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(RecordStore {
            path: path.to_path_buf(),
            keys,
            file,
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Append a record unless its key is already present. Returns whether it
    /// was written.
    pub fn append(&mut self, record: &GustTestRecord) -> Result<bool> {
        if self.keys.contains(&record.key) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(self.path.display().to_string(), e))?;
        self.keys.insert(record.key.clone());
        Ok(true)
    }
}

pub fn load_records(path: &Path) -> Result<Vec<GustTestRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Per-episode training statistics; one line per episode in the curve file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub episode: usize,
    pub total_reward: f64,
    /// Mean total reward over the most recent (up to) 100 episodes.
    pub running_avg: f64,
}

pub fn save_reward_curve(path: &Path, stats: &[EpisodeStat]) -> Result<()> {
    let mut buf = String::new();
    for s in stats {
        buf.push_str(&serde_json::to_string(s)?);
        buf.push('\n');
    }
    crate::manifest::write_atomic(path, buf.as_bytes())
}

pub fn load_reward_curve(path: &Path) -> Result<Vec<EpisodeStat>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Header line of a plant trace file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config_hash: String,
    pub seed: u64,
    pub condition: FlightCondition,
    pub deflection: f64,
}

/// One timestep of a plant trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceStep {
    pub time: f64,
    pub generator_deflection: f64,
    pub wake_deflection: f64,
    pub tap_signals: [f64; 6],
    pub mfc_signal: f64,
    pub camber: f64,
    pub lift: f64,
}

pub fn save_trace(path: &Path, header: &TraceHeader, steps: &[TraceStep]) -> Result<()> {
    let mut buf = serde_json::to_string(header)?;
    buf.push('\n');
    for s in steps {
        buf.push_str(&serde_json::to_string(s)?);
        buf.push('\n');
    }
    crate::manifest::write_atomic(path, buf.as_bytes())
}
