//! Incremental codebook update for a newly arrived session.
//!
//! Each new sub-vector is compared with its nearest centroid. Two adaptive
//! thresholds derived from that cluster's current members decide whether
//! the centroid is left alone, moved by a streaming-mean step, or whether
//! a new centroid is appended. Centroid indices are never reassigned or
//! removed, so codes issued in earlier sessions stay valid and unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pq::{Cluster, Codebook, DocId, PqCode};
use crate::vector::{ensure_finite, squared_dist, RandomSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Mean member distance to the centroid.
    pub ad: f64,
    /// Max member distance plus a uniform slack in `[0, ad)`.
    pub md: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateKind {
    Unchanged,
    Changed,
    AddedNew,
}

impl UpdateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateKind::Unchanged => "unchanged",
            UpdateKind::Changed => "changed",
            UpdateKind::AddedNew => "added",
        }
    }
}

/// Which update branches are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Fixed codebook: every new sub-vector is routed to its nearest centroid.
    None,
    /// Unchanged and Changed only.
    AdOnly,
    /// Changed and AddedNew only.
    MdOnly,
    #[default]
    Both,
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdMode::None => "none",
            ThresholdMode::AdOnly => "ad_only",
            ThresholdMode::MdOnly => "md_only",
            ThresholdMode::Both => "both",
        })
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ThresholdMode::None),
            "ad_only" => Ok(ThresholdMode::AdOnly),
            "md_only" => Ok(ThresholdMode::MdOnly),
            "both" => Ok(ThresholdMode::Both),
            other => Err(Error::invalid(format!("unknown threshold mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDecision {
    pub session: u32,
    pub doc_id: DocId,
    pub group: usize,
    /// Cluster the sub-vector was routed to; for `AddedNew` the appended index.
    pub cluster: usize,
    pub kind: UpdateKind,
    pub distance: f64,
    pub ad: f64,
    pub md: f64,
}

impl UpdateDecision {
    /// Tab-separated record: session, doc id, group, cluster, kind, distance, ad, md.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.session,
            self.doc_id,
            self.group,
            self.cluster,
            self.kind.as_str(),
            self.distance,
            self.ad,
            self.md
        )
    }
}

/// Thresholds for one cluster. The slack is drawn fresh on every call.
pub fn compute_thresholds(cluster: &mut Cluster, rng: &mut RandomSource) -> Result<Thresholds> {
    if cluster.is_empty() {
        return Err(Error::state("cannot compute thresholds of an empty cluster"));
    }
    let dists = cluster.member_distances();
    let ad = dists.iter().sum::<f64>() / dists.len() as f64;
    let max = dists.iter().copied().fold(0.0, f64::max);
    let slack = rng.uniform_range(0.0, ad);
    Ok(Thresholds { ad, md: max + slack })
}

/// Three-branch rule: `< ad` unchanged, `[ad, md]` changed, `> md` added.
pub fn classify(dist: f64, th: Thresholds) -> Result<UpdateKind> {
    if !(dist >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {dist}")));
    }
    Ok(if dist < th.ad {
        UpdateKind::Unchanged
    } else if dist <= th.md {
        UpdateKind::Changed
    } else {
        UpdateKind::AddedNew
    })
}

/// [`classify`] restricted to the branches a mode enables.
pub fn classify_with_mode(dist: f64, th: Thresholds, mode: ThresholdMode) -> Result<UpdateKind> {
    let full = classify(dist, th)?;
    Ok(match mode {
        ThresholdMode::Both => full,
        ThresholdMode::None => UpdateKind::Unchanged,
        ThresholdMode::AdOnly => match full {
            UpdateKind::Unchanged => UpdateKind::Unchanged,
            _ => UpdateKind::Changed,
        },
        ThresholdMode::MdOnly => match full {
            UpdateKind::AddedNew => UpdateKind::AddedNew,
            _ => UpdateKind::Changed,
        },
    })
}

#[derive(Debug, Clone, Default)]
pub struct SessionUpdate {
    /// Codes of the new documents, in arrival order.
    pub codes: Vec<(DocId, PqCode)>,
    pub log: Vec<UpdateDecision>,
}

impl SessionUpdate {
    pub fn count(&self, kind: UpdateKind) -> usize {
        self.log.iter().filter(|d| d.kind == kind).count()
    }
}

/// Update `cb` in place with the documents of `session`, in arrival order.
///
/// The codebook stays live during the session: a centroid added for one
/// document can be the nearest centroid of a later one.
pub fn ingest_session<V: AsRef<[f64]>>(
    cb: &mut Codebook,
    session: u32,
    docs: &[(DocId, V)],
    mode: ThresholdMode,
    rng: &mut RandomSource,
) -> Result<SessionUpdate> {
    if cb.session >= session {
        return Err(Error::state(format!(
            "codebook is at session {} but session {session} was requested",
            cb.session
        )));
    }
    for (id, x) in docs {
        let x = x.as_ref();
        if x.len() != cb.dim {
            return Err(Error::invalid(format!(
                "document {id} has dimension {}, codebook expects {}",
                x.len(),
                cb.dim
            )));
        }
        ensure_finite(x, "document embedding")?;
    }

    let sd = cb.sub_dim();
    let mut out = SessionUpdate::default();
    for (id, x) in docs {
        let x = x.as_ref();
        let mut code = Vec::with_capacity(cb.num_groups());
        for (g, sub_cb) in cb.groups.iter_mut().enumerate() {
            let sub = &x[g * sd..(g + 1) * sd];
            let (k, d2) = sub_cb.nearest(sub);
            let dist = d2.sqrt();
            let cluster = &mut sub_cb.clusters[k];
            let (kind, th) = if cluster.is_empty() {
                (UpdateKind::Changed, Thresholds { ad: 0.0, md: 0.0 })
            } else {
                let th = compute_thresholds(cluster, rng)?;
                (classify_with_mode(dist, th, mode)?, th)
            };
            let assigned = match kind {
                UpdateKind::Unchanged => k,
                UpdateKind::Changed => {
                    cluster.push_member(*id, sub);
                    let n = cluster.len() as f64;
                    let moved: Vec<f64> = cluster
                        .centroid()
                        .iter()
                        .zip(sub)
                        .map(|(z, v)| z + (v - z) / n)
                        .collect();
                    cluster.set_centroid(moved);
                    k
                }
                UpdateKind::AddedNew => {
                    let mut fresh = Cluster::new(sub.to_vec());
                    fresh.push_member(*id, sub);
                    sub_cb.clusters.push(fresh);
                    sub_cb.clusters.len() - 1
                }
            };
            debug_assert!(kind != UpdateKind::AddedNew || squared_dist(sub, sub_cb.centroid(assigned)) == 0.0);
            code.push(assigned as u32);
            out.log.push(UpdateDecision {
                session,
                doc_id: *id,
                group: g,
                cluster: assigned,
                kind,
                distance: dist,
                ad: th.ad,
                md: th.md,
            });
        }
        out.codes.push((*id, PqCode(code)));
    }
    cb.session = session;
    Ok(out)
}
