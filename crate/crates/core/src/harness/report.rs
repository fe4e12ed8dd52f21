//! JSON experiment report.

use serde::{Deserialize, Serialize};

use crate::harness::config::ExperimentConfig;
use crate::metrics::{ContinualMetrics, MetricValue};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounts {
    pub unchanged: usize,
    pub changed: usize,
    pub added_new: usize,
}

impl std::ops::AddAssign for DecisionCounts {
    fn add_assign(&mut self, o: Self) {
        self.unchanged += o.unchanged;
        self.changed += o.changed;
        self.added_new += o.added_new;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub docs: usize,
    pub bank: usize,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionBlock {
    pub session: u32,
    pub new_docs: usize,
    /// Per-group, per-document centroid update decisions.
    pub decisions: DecisionCounts,
    pub centroids_per_group: Vec<usize>,
    /// Previously indexed documents whose code changed (only under re-clustering).
    pub reassigned_old_docs: usize,
    pub bank_entries: usize,
    pub bank_unique_docs: usize,
    pub pairs: PairCounts,
    pub loss_start: f64,
    pub loss_end: f64,
    pub train_steps: usize,
    pub vert: MetricValue,
    /// `R[t][0..=t]`.
    pub row: Vec<f64>,
    /// Codebook, decoder and projector parameters after the session.
    pub model_floats: usize,
    pub model_floats_added: usize,
    pub state_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub variant: Option<String>,
    pub config: ExperimentConfig,
    pub num_docs: usize,
    pub session_sizes: Vec<usize>,
    pub sessions: Vec<SessionBlock>,
    pub matrix: Vec<Vec<f64>>,
    pub continual: ContinualMetrics,
    pub final_vert: f64,
    pub decision_totals: DecisionCounts,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::invalid(format!("report: {e}")))
    }
}
