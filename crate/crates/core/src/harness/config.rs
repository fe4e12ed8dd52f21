use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipq::ThresholdMode;
use crate::metrics::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    /// One test query set; each session is scored on queries whose
    /// relevant document has arrived.
    #[default]
    Single,
    /// A dedicated test query set per session.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantFlags {
    pub enable_memory_bank: bool,
    pub enable_pseudo_queries: bool,
    pub enable_ewc: bool,
    pub threshold_mode: ThresholdMode,
    pub recluster_each_session: bool,
    pub random_bank: bool,
    /// Train the projector with the two-step process (needs token input).
    pub discriminative: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        Variant::Full.flags()
    }
}

/// Named model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    Base,
    Pq,
    PqRe,
    PqDis,
    PqDisAd,
    PqDisMd,
    NoEwc,
    NoMleDneg,
    NoMleQ,
    RandomBank,
}

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::Full,
        Variant::Base,
        Variant::Pq,
        Variant::PqRe,
        Variant::PqDis,
        Variant::PqDisAd,
        Variant::PqDisMd,
        Variant::NoEwc,
        Variant::NoMleDneg,
        Variant::NoMleQ,
        Variant::RandomBank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Base => "base",
            Variant::Pq => "pq",
            Variant::PqRe => "pq-re",
            Variant::PqDis => "pq-dis",
            Variant::PqDisAd => "pq-dis-ad",
            Variant::PqDisMd => "pq-dis-md",
            Variant::NoEwc => "no-ewc",
            Variant::NoMleDneg => "no-mle-dneg",
            Variant::NoMleQ => "no-mle-q",
            Variant::RandomBank => "random-bank",
        }
    }

    pub fn flags(self) -> VariantFlags {
        let full = VariantFlags {
            enable_memory_bank: true,
            enable_pseudo_queries: true,
            enable_ewc: true,
            threshold_mode: ThresholdMode::Both,
            recluster_each_session: false,
            random_bank: false,
            discriminative: true,
        };
        match self {
            Variant::Full => full,
            Variant::Base => VariantFlags {
                enable_memory_bank: false,
                enable_pseudo_queries: false,
                enable_ewc: false,
                ..full
            },
            Variant::Pq => VariantFlags {
                discriminative: false,
                threshold_mode: ThresholdMode::None,
                ..full
            },
            Variant::PqRe => VariantFlags {
                discriminative: false,
                threshold_mode: ThresholdMode::None,
                recluster_each_session: true,
                ..full
            },
            Variant::PqDis => VariantFlags {
                threshold_mode: ThresholdMode::None,
                ..full
            },
            Variant::PqDisAd => VariantFlags {
                threshold_mode: ThresholdMode::AdOnly,
                ..full
            },
            Variant::PqDisMd => VariantFlags {
                threshold_mode: ThresholdMode::MdOnly,
                ..full
            },
            Variant::NoEwc => VariantFlags {
                enable_ewc: false,
                ..full
            },
            Variant::NoMleDneg => VariantFlags {
                enable_memory_bank: false,
                ..full
            },
            Variant::NoMleQ => VariantFlags {
                enable_pseudo_queries: false,
                ..full
            },
            Variant::RandomBank => VariantFlags {
                random_bank: true,
                ..full
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Embedding dimension `D`.
    pub dim: usize,
    /// Code length `M`.
    pub groups: usize,
    /// Centroids per group in the base codebook `K`.
    pub centroids: usize,
    /// Projector hidden width; 0 means "same as `dim`".
    pub hidden_dim: usize,
    /// Two-step training epochs `v`.
    pub repr_epochs: usize,
    pub tau: f64,
    /// Spans per granularity `G`.
    pub spans_per_level: usize,
    pub span_alpha: f64,
    pub span_beta: f64,
    pub repr_step: f64,
    pub repr_inner_iters: usize,
    pub repr_batch: usize,
    pub kmeans_iters: usize,
    /// Perturbation repeats per level `c`.
    pub bank_repeats: usize,
    pub pseudo_sigma: f64,
    pub pseudo_per_doc: usize,
    pub lambda: f64,
    pub beam: usize,
    pub top_n: usize,
    pub metric: Metric,
    pub decoder_step: f64,
    pub decoder_steps: usize,
    pub base_decoder_steps: usize,
    pub seed: u64,
    pub session_fractions: Vec<f64>,
    pub setting: EvalSetting,
    /// Name recorded in the report; flags below are what the run uses.
    pub variant: Option<Variant>,
    pub flags: VariantFlags,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 768,
            groups: 24,
            centroids: 256,
            hidden_dim: 0,
            repr_epochs: 2,
            tau: 1.0,
            spans_per_level: 5,
            span_alpha: 4.0,
            span_beta: 2.0,
            repr_step: 1e-2,
            repr_inner_iters: 20,
            repr_batch: 32,
            kmeans_iters: crate::vector::DEFAULT_KMEANS_ITERS,
            bank_repeats: 10,
            pseudo_sigma: 0.1,
            pseudo_per_doc: 3,
            lambda: 0.5,
            beam: 15,
            top_n: 10,
            metric: Metric::Mrr(10),
            decoder_step: 5e-2,
            decoder_steps: 200,
            base_decoder_steps: 200,
            seed: 0,
            session_fractions: vec![0.6, 0.1, 0.1, 0.1, 0.1],
            setting: EvalSetting::Single,
            variant: Some(Variant::Full),
            flags: Variant::Full.flags(),
        }
    }
}

impl ExperimentConfig {
    /// Small setting used by the synthetic benchmark: D=16, M=4, K=8.
    pub fn desk() -> Self {
        Self {
            dim: 16,
            groups: 4,
            centroids: 8,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = Some(v);
        self.flags = v.flags();
        self
    }

    pub fn hidden(&self) -> usize {
        if self.hidden_dim == 0 {
            self.dim
        } else {
            self.hidden_dim
        }
    }

    pub fn num_sessions(&self) -> usize {
        self.session_fractions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.groups) {
            return Err(Error::invalid(format!(
                "dim {} must be a positive multiple of groups {}",
                self.dim, self.groups
            )));
        }
        if self.centroids == 0 {
            return Err(Error::invalid("centroids must be at least 1"));
        }
        check_fractions(&self.session_fractions)?;
        if self.beam == 0 || self.top_n == 0 {
            return Err(Error::invalid("beam and top_n must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.lambda >= 0.0) || !(self.pseudo_sigma >= 0.0) {
            return Err(Error::invalid("lambda and pseudo_sigma must be non-negative"));
        }
        if self.bank_repeats == 0 || self.pseudo_per_doc == 0 || self.spans_per_level == 0 {
            return Err(Error::invalid(
                "bank_repeats, pseudo_per_doc and spans_per_level must be >= 1",
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Stable fingerprint used to refuse resuming with a different config.
    pub fn digest(&self) -> u32 {
        crc32fast::hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
        return Err(Error::invalid("session fractions must be non-empty and non-negative"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("session fractions sum to {sum}, expected 1")));
    }
    Ok(())
}
