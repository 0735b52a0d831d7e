//! Episode logs and their line-delimited JSON encoding.
//!
//! A log is one header line, one line per decision timestep and one footer
//! line. Each line is a single-key JSON object (`header`, `step`, `footer`).
//! Unknown fields and other versions are rejected.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::game::{AgentState, JointAction, Role, Status};
use crate::map::Cell;
use crate::training::scenario::Scenario;
use crate::visibility::{Detection, FovConfig, Observation};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub map_hash: String,
    pub pursuers: String,
    pub evader: String,
    pub scenario: Scenario,
    pub horizon: u32,
    pub fov: FovConfig,
}

/// Compact form of an [`Observation`]: a digest of the visible cells plus
/// the detections. Full cell sets can be recomputed from the agent states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationDigest {
    pub observer: Role,
    pub visible_count: usize,
    pub visible_digest: String,
    pub detections: Vec<Detection>,
}

pub fn visible_digest(cells: &[Cell]) -> String {
    let mut h = Sha256::new();
    for c in cells {
        h.update(c.col.to_le_bytes());
        h.update(c.row.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

impl From<&Observation> for ObservationDigest {
    fn from(o: &Observation) -> Self {
        Self {
            observer: o.observer,
            visible_count: o.visible_cells.len(),
            visible_digest: visible_digest(&o.visible_cells),
            detections: o.detections.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rewards {
    pub pursuer: f64,
    pub evader: f64,
}

/// Per-step trace of the online controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineStep {
    pub probs: Vec<f64>,
    pub deployed_level: u32,
    pub switched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: u32,
    pub hlp: AgentState,
    pub llp: AgentState,
    pub evader: AgentState,
    pub actions: JointAction,
    /// HLP, LLP, evader.
    pub observations: Vec<ObservationDigest>,
    pub rewards: Rewards,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineStep>,
}

impl StepRecord {
    pub fn team_sees_evader(&self) -> bool {
        team_sees_evader(&self.observations)
    }
}

fn team_sees_evader(obs: &[ObservationDigest]) -> bool {
    obs.iter()
        .filter(|o| o.observer != Role::Evader)
        .any(|o| o.detections.iter().any(|d| d.role == Role::Evader))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogFooter {
    pub status: Status,
    pub final_t: u32,
    pub hlp: AgentState,
    pub llp: AgentState,
    pub evader: AgentState,
    pub observations: Vec<ObservationDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub footer: LogFooter,
}

impl EpisodeLog {
    /// Team detection flags at the timesteps used for metrics: every decision
    /// step, or the terminal observation alone when the episode ended at t=0.
    pub fn team_detection_flags(&self) -> Vec<bool> {
        if self.steps.is_empty() {
            vec![team_sees_evader(&self.footer.observations)]
        } else {
            self.steps.iter().map(StepRecord::team_sees_evader).collect()
        }
    }

    /// Copy without online annotations.
    pub fn without_online(&self) -> EpisodeLog {
        let mut out = self.clone();
        for s in &mut out.steps {
            s.online = None;
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        serialize_log(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Header(LogHeader),
    Step(StepRecord),
    Footer(LogFooter),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn serialize_log(log: &EpisodeLog, mut out: impl Write) -> std::io::Result<()> {
    let write_line = |out: &mut dyn Write, line: &Line| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, line)?;
        out.write_all(b"\n")
    };
    write_line(&mut out, &Line::Header(log.header.clone()))?;
    for s in &log.steps {
        write_line(&mut out, &Line::Step(s.clone()))?;
    }
    write_line(&mut out, &Line::Footer(log.footer.clone()))
}

pub fn deserialize_log(input: impl BufRead) -> Result<EpisodeLog, LogError> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut footer = None;
    let mut line_no = 0;
    for line in input.lines() {
        line_no += 1;
        let line = line?;
        let corrupt = |reason: String| LogError::CorruptRecord { line: line_no, reason };
        if footer.is_some() {
            return Err(corrupt("record after footer".into()));
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if line_no == 1 {
            // Check the version before the strict parse so that a newer
            // header reports a version problem rather than a field problem.
            let version = value.get("header").and_then(|h| h.get("version")).and_then(|v| v.as_u64());
            match version {
                Some(v) if v != LOG_VERSION as u64 => {
                    return Err(LogError::VersionMismatch { found: v as u32, expected: LOG_VERSION })
                }
                None => return Err(corrupt("first record must be a versioned header".into())),
                _ => {}
            }
        }
        match serde_json::from_value::<Line>(value).map_err(|e| corrupt(e.to_string()))? {
            Line::Header(h) if line_no == 1 => header = Some(h),
            Line::Header(_) => return Err(corrupt("duplicate header".into())),
            Line::Step(s) => {
                let expected = steps.len() as u32;
                if s.t != expected {
                    return Err(corrupt(format!("expected step t={expected}, got {}", s.t)));
                }
                steps.push(s)
            }
            Line::Footer(f) => {
                if f.final_t != steps.len() as u32 {
                    return Err(corrupt(format!("footer final_t {} does not match {} steps", f.final_t, steps.len())));
                }
                footer = Some(f)
            }
        }
    }
    let header = header.ok_or(LogError::CorruptRecord { line: 1, reason: "missing header".into() })?;
    let footer = footer.ok_or(LogError::CorruptRecord { line: line_no.max(1), reason: "missing footer".into() })?;
    Ok(EpisodeLog { header, steps, footer })
}
