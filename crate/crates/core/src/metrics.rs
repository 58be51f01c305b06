//! The five saliency metrics: NSS, CC, SIM, AUC-Judd and shuffled AUC.
//!
//! Saliency and density maps are `(H, W)` tensors. Fixations are `(row, col)`
//! pixel coordinates. AUC-Judd counts every pixel (fixated or not) as a
//! negative, so it equals the pairwise statistic
//! `P(pos > neg) + 0.5 * P(pos == neg)` over all (fixation, pixel) pairs.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{default_sigma, density_from_fixations};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Ground truth for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FixationRecord {
    /// `(H, W)`.
    pub size: [usize; 2],
    pub points: Vec<(usize, usize)>,
    /// Continuous ground truth, `(H, W)`.
    pub density: Option<Tensor>,
}

impl FixationRecord {
    pub fn new(size: [usize; 2], points: Vec<(usize, usize)>) -> Self {
        Self {
            size,
            points,
            density: None,
        }
    }

    pub fn with_density(mut self, density: Tensor) -> Self {
        self.density = Some(density);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.size;
        if let Some(&(r, c)) = self.points.iter().find(|&&(r, c)| r >= h || c >= w) {
            return Err(Error::InvalidArgument(format!(
                "fixation ({r}, {c}) outside frame {:?}",
                self.size
            )));
        }
        if let Some(d) = &self.density {
            if d.shape() != self.size {
                return Err(Error::ShapeMismatch {
                    op: "fixation density",
                    left: d.shape().to_vec(),
                    right: self.size.to_vec(),
                });
            }
            if !(d.sum() > 0.0) {
                return Err(Error::InvalidArgument("density map must have positive sum".into()));
            }
        }
        Ok(())
    }

    fn flat(&self) -> impl Iterator<Item = usize> + '_ {
        let w = self.size[1];
        self.points.iter().map(move |&(r, c)| r * w + c)
    }
}

fn check_map(op: &'static str, s: &Tensor, fix: &FixationRecord) -> Result<()> {
    if s.shape() != fix.size {
        return Err(Error::ShapeMismatch {
            op,
            left: s.shape().to_vec(),
            right: fix.size.to_vec(),
        });
    }
    if fix.points.is_empty() {
        return Err(Error::InvalidArgument(format!("{op} needs at least one fixation")));
    }
    fix.validate()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True when every value equals the first one.
pub fn is_constant(s: &Tensor) -> bool {
    let d = s.data();
    d.iter().all(|&v| v == d[0])
}

/// Normalized scanpath saliency; a constant map scores 0.
pub fn nss(s: &Tensor, fix: &FixationRecord) -> Result<f64> {
    check_map("nss", s, fix)?;
    let (mean, std) = mean_std(s.data());
    if std == 0.0 || is_constant(s) {
        return Ok(0.0);
    }
    let total: f64 = fix.flat().map(|i| (s.data()[i] - mean) / std).sum();
    Ok(total / fix.points.len() as f64)
}

/// Pearson correlation over pixels; 0 when either map is constant.
pub fn cc(s: &Tensor, g: &Tensor) -> Result<f64> {
    s.check_same_shape("cc", g)?;
    if is_constant(s) || is_constant(g) {
        return Ok(0.0);
    }
    let (ms, _) = mean_std(s.data());
    let (mg, _) = mean_std(g.data());
    let (mut sg, mut ss, mut gg) = (0.0, 0.0, 0.0);
    for (a, b) in s.data().iter().zip(g.data()) {
        let (da, db) = (a - ms, b - mg);
        sg += da * db;
        ss += da * da;
        gg += db * db;
    }
    Ok(sg / (ss.sqrt() * gg.sqrt()))
}

/// Histogram intersection of the two maps normalized to unit sum.
pub fn sim(s: &Tensor, g: &Tensor) -> Result<f64> {
    s.check_same_shape("sim", g)?;
    for (name, m) in [("prediction", s), ("ground truth", g)] {
        if m.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!("sim: {name} map has negative values")));
        }
        if !(m.sum() > 0.0) {
            return Err(Error::InvalidArgument(format!("sim: {name} map sums to zero")));
        }
    }
    let (ts, tg) = (s.sum(), g.sum());
    Ok(s.data().iter().zip(g.data()).map(|(a, b)| (a / ts).min(b / tg)).sum())
}

/// Pairwise ROC statistic: `P(pos > neg) + 0.5 * P(pos == neg)`.
pub fn pairwise_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut score = 0.0;
    for &p in positives {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        score += below as f64 + 0.5 * (not_above - below) as f64;
    }
    score / (positives.len() as f64 * neg.len() as f64)
}

/// Brute-force O(P·N) version of [`pairwise_auc`], used as an oracle.
pub fn pairwise_auc_bruteforce(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut score = 0.0;
    for &p in positives {
        for &n in negatives {
            score += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    score / (positives.len() * negatives.len()) as f64
}

/// AUC-Judd by a threshold sweep over every distinct map value, with the
/// false-positive base being all pixels, integrated with the trapezoid rule.
pub fn auc_judd(s: &Tensor, fix: &FixationRecord) -> Result<f64> {
    check_map("auc_judd", s, fix)?;
    if fix.points.len() >= s.len() {
        return Err(Error::InvalidArgument(format!(
            "auc_judd needs fewer fixations ({}) than pixels ({})",
            fix.points.len(),
            s.len()
        )));
    }
    let mut pos: Vec<f64> = fix.flat().map(|i| s.data()[i]).collect();
    let mut all = s.data().to_vec();
    pos.sort_by(|a, b| b.total_cmp(a));
    all.sort_by(|a, b| b.total_cmp(a));
    let (np, na) = (pos.len() as f64, all.len() as f64);
    // descending sweep; at each distinct value count everything >= it
    let (mut ip, mut ia) = (0, 0);
    let (mut tp_prev, mut fp_prev, mut area) = (0.0, 0.0, 0.0);
    while ia < all.len() {
        let thr = all[ia];
        while ia < all.len() && all[ia] >= thr {
            ia += 1;
        }
        while ip < pos.len() && pos[ip] >= thr {
            ip += 1;
        }
        let (tp, fp) = (ip as f64 / np, ia as f64 / na);
        area += (fp - fp_prev) * (tp + tp_prev) / 2.0;
        tp_prev = tp;
        fp_prev = fp;
    }
    Ok(area)
}

/// Shuffled AUC: negatives are drawn from `pool` (fixations of other frames
/// or videos) minus the current fixations, `n_splits` times.
pub fn shuffled_auc<R: Rng + ?Sized>(
    s: &Tensor,
    fix: &FixationRecord,
    pool: &[(usize, usize)],
    n_splits: usize,
    rng: &mut R,
) -> Result<f64> {
    check_map("shuffled_auc", s, fix)?;
    if n_splits == 0 {
        return Err(Error::InvalidArgument("shuffled_auc needs n_splits >= 1".into()));
    }
    let [h, w] = fix.size;
    let own: HashSet<(usize, usize)> = fix.points.iter().copied().collect();
    let candidates: Vec<usize> = pool
        .iter()
        .filter(|p| !own.contains(p))
        .map(|&(r, c)| {
            if r >= h || c >= w {
                Err(Error::InvalidArgument(format!("pool fixation ({r}, {c}) outside frame {:?}", fix.size)))
            } else {
                Ok(r * w + c)
            }
        })
        .collect::<Result<_>>()?;
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "shuffled_auc: negative pool is empty after excluding the frame's own fixations".into(),
        ));
    }
    let positives: Vec<f64> = fix.flat().map(|i| s.data()[i]).collect();
    let k = positives.len();
    let mut total = 0.0;
    for _ in 0..n_splits {
        let picks: Vec<usize> = if candidates.len() >= k {
            index::sample(rng, candidates.len(), k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..candidates.len())).collect()
        };
        let negatives: Vec<f64> = picks.iter().map(|&j| s.data()[candidates[j]]).collect();
        total += pairwise_auc(&positives, &negatives);
    }
    Ok(total / n_splits as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nss,
    Cc,
    Sim,
    Aucj,
    Sauc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Nss, Metric::Cc, Metric::Sim, Metric::Aucj, Metric::Sauc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Nss => "nss",
            Metric::Cc => "cc",
            Metric::Sim => "sim",
            Metric::Aucj => "aucj",
            Metric::Sauc => "sauc",
        }
    }
}

/// Where shuffled-AUC negatives come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolScope {
    /// Fixations of every other video in the evaluation set.
    #[default]
    Global,
    /// Fixations of the other frames of the same video.
    PerVideo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default)]
    pub pool: PoolScope,
    #[serde(default)]
    pub seed: u64,
}

fn all_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}
fn default_splits() -> usize {
    100
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: all_metrics(),
            n_splits: default_splits(),
            pool: PoolScope::Global,
            seed: 0,
        }
    }
}

/// Scores of one frame; `None` for metrics not requested.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub nss: Option<f64>,
    pub cc: Option<f64>,
    pub sim: Option<f64>,
    pub aucj: Option<f64>,
    pub sauc: Option<f64>,
    /// NSS fell back to 0 because the prediction is constant.
    pub nss_degenerate: bool,
    /// CC fell back to 0 because one side is constant.
    pub cc_degenerate: bool,
}

impl FrameScores {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Nss => self.nss,
            Metric::Cc => self.cc,
            Metric::Sim => self.sim,
            Metric::Aucj => self.aucj,
            Metric::Sauc => self.sauc,
        }
    }

    fn slot(&mut self, m: Metric) -> &mut Option<f64> {
        match m {
            Metric::Nss => &mut self.nss,
            Metric::Cc => &mut self.cc,
            Metric::Sim => &mut self.sim,
            Metric::Aucj => &mut self.aucj,
            Metric::Sauc => &mut self.sauc,
        }
    }
}

/// Scores one frame. `pool` is only used for shuffled AUC.
pub fn evaluate_frame<R: Rng + ?Sized>(
    s: &Tensor,
    fix: &FixationRecord,
    pool: &[(usize, usize)],
    config: &EvalConfig,
    rng: &mut R,
) -> Result<FrameScores> {
    let mut out = FrameScores::default();
    let needs_density = config.metrics.iter().any(|m| matches!(m, Metric::Cc | Metric::Sim));
    let density = match (&fix.density, needs_density) {
        (Some(d), _) => Some(d.clone()),
        (None, true) => Some(density_from_fixations(fix, default_sigma(fix.size))?),
        (None, false) => None,
    };
    for &m in &config.metrics {
        let value = match m {
            Metric::Nss => {
                out.nss_degenerate = is_constant(s);
                nss(s, fix)?
            }
            Metric::Cc => {
                let g = density.as_ref().expect("density computed above");
                out.cc_degenerate = is_constant(s) || is_constant(g);
                cc(s, g)?
            }
            Metric::Sim => sim(s, density.as_ref().expect("density computed above"))?,
            Metric::Aucj => auc_judd(s, fix)?,
            Metric::Sauc => shuffled_auc(s, fix, pool, config.n_splits, rng)?,
        };
        *out.slot(m) = Some(value);
    }
    Ok(out)
}

/// Per-metric means plus degenerate-frame counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub nss: Option<f64>,
    pub cc: Option<f64>,
    pub sim: Option<f64>,
    pub aucj: Option<f64>,
    pub sauc: Option<f64>,
    pub frames: usize,
    pub nss_degenerate_frames: usize,
    pub cc_degenerate_frames: usize,
}

impl MeanScores {
    fn of<'a>(rows: impl Iterator<Item = &'a FrameScores> + Clone, frames: usize) -> Self {
        let mean = |m: Metric| {
            let vals: Vec<f64> = rows.clone().filter_map(|r| r.get(m)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Self {
            nss: mean(Metric::Nss),
            cc: mean(Metric::Cc),
            sim: mean(Metric::Sim),
            aucj: mean(Metric::Aucj),
            sauc: mean(Metric::Sauc),
            frames,
            nss_degenerate_frames: rows.clone().filter(|r| r.nss_degenerate).count(),
            cc_degenerate_frames: rows.clone().filter(|r| r.cc_degenerate).count(),
        }
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Nss => self.nss,
            Metric::Cc => self.cc,
            Metric::Sim => self.sim,
            Metric::Aucj => self.aucj,
            Metric::Sauc => self.sauc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video: String,
    pub frames: Vec<FrameScores>,
    pub mean: MeanScores,
}

/// Dataset-level report. The aggregate is the mean over videos of the
/// per-video means; degenerate counts are summed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub videos: Vec<VideoReport>,
    pub aggregate: MeanScores,
}

/// Input to [`evaluate`]: one video's predictions and ground truth.
pub struct VideoEval<'a> {
    pub id: &'a str,
    pub preds: &'a [Tensor],
    pub records: &'a [FixationRecord],
}

/// Scores a single video against its own records. Shuffled-AUC negatives
/// come from `pool`.
pub fn evaluate_video(
    preds: &[Tensor],
    records: &[FixationRecord],
    pool: &[(usize, usize)],
    config: &EvalConfig,
    stream: u64,
) -> Result<Vec<FrameScores>> {
    if preds.len() != records.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            records.len()
        )));
    }
    preds
        .par_iter()
        .zip(records)
        .enumerate()
        .map(|(f, (s, fix))| {
            let mut r = rng::child(config.seed, (stream << 32) | f as u64);
            evaluate_frame(s, fix, pool, config, &mut r)
        })
        .collect()
}

/// Scores every video. Frames are evaluated in parallel with per-frame
/// child generators, so results do not depend on the thread count.
pub fn evaluate(videos: &[VideoEval<'_>], config: &EvalConfig) -> Result<Report> {
    let wants_sauc = config.metrics.contains(&Metric::Sauc);
    if wants_sauc && config.pool == PoolScope::Global && videos.len() < 2 {
        return Err(Error::InvalidArgument(
            "the global s-AUC pool draws from other videos and needs at least two; use the per-video pool".into(),
        ));
    }
    let mut reports = Vec::with_capacity(videos.len());
    for (v, video) in videos.iter().enumerate() {
        let pool: Vec<(usize, usize)> = match (wants_sauc, config.pool) {
            (false, _) => Vec::new(),
            (true, PoolScope::Global) => videos
                .iter()
                .enumerate()
                .filter(|&(o, _)| o != v)
                .flat_map(|(_, o)| o.records.iter().flat_map(|r| r.points.iter().copied()))
                .collect(),
            (true, PoolScope::PerVideo) => video.records.iter().flat_map(|r| r.points.iter().copied()).collect(),
        };
        let frames = evaluate_video(video.preds, video.records, &pool, config, v as u64)
            .map_err(|e| Error::InvalidArgument(format!("video {}: {e}", video.id)))?;
        let mean = MeanScores::of(frames.iter(), frames.len());
        reports.push(VideoReport {
            video: video.id.to_string(),
            frames,
            mean,
        });
    }
    let means: Vec<FrameScores> = reports
        .iter()
        .map(|r| FrameScores {
            nss: r.mean.nss,
            cc: r.mean.cc,
            sim: r.mean.sim,
            aucj: r.mean.aucj,
            sauc: r.mean.sauc,
            ..FrameScores::default()
        })
        .collect();
    let mut aggregate = MeanScores::of(means.iter(), reports.iter().map(|r| r.frames.len()).sum());
    aggregate.nss_degenerate_frames = reports.iter().map(|r| r.mean.nss_degenerate_frames).sum();
    aggregate.cc_degenerate_frames = reports.iter().map(|r| r.mean.cc_degenerate_frames).sum();
    Ok(Report {
        videos: reports,
        aggregate,
    })
}

impl Report {
    /// `video,frame,nss,cc,sim,aucj,sauc`, 1-based frames, empty cells for
    /// metrics that were not computed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video,frame,nss,cc,sim,aucj,sauc\n");
        for v in &self.videos {
            for (i, f) in v.frames.iter().enumerate() {
                write!(out, "{},{}", v.video, i + 1).expect("write to string");
                for m in Metric::ALL {
                    match f.get(m) {
                        Some(x) => write!(out, ",{x}"),
                        None => write!(out, ","),
                    }
                    .expect("write to string");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Aggregate block plus per-video means.
    pub fn aggregate_json(&self) -> serde_json::Value {
        serde_json::json!({
            "aggregate": self.aggregate,
            "videos": self.videos.iter().map(|v| serde_json::json!({"video": v.video, "mean": v.mean})).collect::<Vec<_>>(),
        })
    }
}
