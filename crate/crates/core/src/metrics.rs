//! Pose evaluation protocols: MPJPE (protocol #1), Procrustes-aligned
//! P-MPJPE (protocol #2), PCK within a distance threshold, and AUC over a
//! threshold sweep.
//!
//! All functions are pure and operate on flat `f64` slices of shape
//! `[samples, joints, 3]` in millimeters, root-relative.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: pred has {pred} values, gt has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("pose length {len} is not a multiple of 3 x {joints} joints")]
    BadPoseLength { len: usize, joints: usize },
    #[error("procrustes alignment needs at least 3 joints, got {0}")]
    TooFewJoints(usize),
    #[error("degenerate ground truth: all points coincident")]
    DegenerateTarget,
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("action labels: {labels} labels for {samples} samples")]
    LabelCount { labels: usize, samples: usize },
}

fn check_pair(pred: &[f64], gt: &[f64], joints: usize) -> Result<usize, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if joints == 0 || pred.len() % (3 * joints) != 0 {
        return Err(MetricError::BadPoseLength {
            len: pred.len(),
            joints,
        });
    }
    Ok(pred.len() / (3 * joints))
}

/// Protocol #1: mean Euclidean distance over all (sample, joint) pairs,
/// without any transformation.
pub fn mpjpe(pred: &[f64], gt: &[f64], joints: usize) -> Result<f64, MetricError> {
    let samples = check_pair(pred, gt, joints)?;
    if samples == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for j in 0..samples * joints {
        let mut d2 = 0.0;
        for k in 0..3 {
            let d = pred[j * 3 + k] - gt[j * 3 + k];
            d2 += d * d;
        }
        total += d2.sqrt();
    }
    Ok(total / (samples * joints) as f64)
}

/// Options for the similarity alignment of protocol #2.
#[derive(Copy, Clone, Debug)]
pub struct AlignOptions {
    /// Include the uniform scale (full similarity transform). Switch off
    /// for a rigid-only alignment.
    pub with_scale: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { with_scale: true }
    }
}

/// Aligns one predicted pose (`[N, 3]` flat) to the ground truth with the
/// closed-form least-squares similarity transform: rotation (det +1
/// enforced by flipping the smallest singular direction), uniform scale,
/// and translation.
pub fn procrustes_align(
    pred: &[f64],
    gt: &[f64],
    opts: AlignOptions,
) -> Result<Vec<f64>, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let n = pred.len() / 3;
    if n < 3 {
        return Err(MetricError::TooFewJoints(n));
    }
    let p = |i: usize| Vector3::new(pred[i * 3], pred[i * 3 + 1], pred[i * 3 + 2]);
    let g = |i: usize| Vector3::new(gt[i * 3], gt[i * 3 + 1], gt[i * 3 + 2]);
    let inv_n = 1.0 / n as f64;
    let mut mu_p = Vector3::zeros();
    let mut mu_g = Vector3::zeros();
    for i in 0..n {
        mu_p += p(i);
        mu_g += g(i);
    }
    mu_p *= inv_n;
    mu_g *= inv_n;

    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for i in 0..n {
        let pc = p(i) - mu_p;
        let gc = g(i) - mu_g;
        cov += gc * pc.transpose();
        var_p += pc.norm_squared();
        var_g += gc.norm_squared();
    }
    cov *= inv_n;
    var_p *= inv_n;
    var_g *= inv_n;
    if var_g == 0.0 {
        return Err(MetricError::DegenerateTarget);
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd computed");
    let v_t = svd.v_t.expect("svd computed");
    let det_sign = (u * v_t).determinant().signum();
    let correction = Vector3::new(1.0, 1.0, det_sign);
    let rotation = u * Matrix3::from_diagonal(&correction) * v_t;
    let scale = if opts.with_scale && var_p > 0.0 {
        svd.singular_values.dot(&correction) / var_p
    } else {
        1.0
    };

    let mut out = vec![0.0; pred.len()];
    for i in 0..n {
        let aligned = rotation * (p(i) - mu_p) * scale + mu_g;
        out[i * 3] = aligned.x;
        out[i * 3 + 1] = aligned.y;
        out[i * 3 + 2] = aligned.z;
    }
    Ok(out)
}

/// Protocol #2: per-sample Procrustes alignment, then MPJPE.
pub fn p_mpjpe(pred: &[f64], gt: &[f64], joints: usize) -> Result<f64, MetricError> {
    p_mpjpe_with(pred, gt, joints, AlignOptions::default())
}

pub fn p_mpjpe_with(
    pred: &[f64],
    gt: &[f64],
    joints: usize,
    opts: AlignOptions,
) -> Result<f64, MetricError> {
    let samples = check_pair(pred, gt, joints)?;
    if samples == 0 {
        return Ok(0.0);
    }
    let span = joints * 3;
    let mut aligned = vec![0.0; pred.len()];
    for s in 0..samples {
        let a = procrustes_align(&pred[s * span..(s + 1) * span], &gt[s * span..(s + 1) * span], opts)?;
        aligned[s * span..(s + 1) * span].copy_from_slice(&a);
    }
    mpjpe(&aligned, gt, joints)
}

/// Percentage of (sample, joint) pairs with error within the threshold
/// (inclusive).
pub fn pck(pred: &[f64], gt: &[f64], joints: usize, threshold_mm: f64) -> Result<f64, MetricError> {
    if threshold_mm <= 0.0 {
        return Err(MetricError::BadThreshold(threshold_mm));
    }
    let samples = check_pair(pred, gt, joints)?;
    if samples == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for j in 0..samples * joints {
        let mut d2 = 0.0;
        for k in 0..3 {
            let d = pred[j * 3 + k] - gt[j * 3 + k];
            d2 += d * d;
        }
        if d2.sqrt() <= threshold_mm {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / (samples * joints) as f64)
}

/// Default AUC grid: 5mm steps from 5 to 150 (30 thresholds).
pub fn default_auc_grid() -> Vec<f64> {
    (1..=30).map(|i| 5.0 * i as f64).collect()
}

/// Mean PCK over a threshold grid.
pub fn auc(pred: &[f64], gt: &[f64], joints: usize) -> Result<f64, MetricError> {
    auc_over(pred, gt, joints, &default_auc_grid())
}

pub fn auc_over(
    pred: &[f64],
    gt: &[f64],
    joints: usize,
    grid: &[f64],
) -> Result<f64, MetricError> {
    let mut total = 0.0;
    for &t in grid {
        total += pck(pred, gt, joints, t)?;
    }
    Ok(total / grid.len() as f64)
}

/// Per-protocol figures for one evaluation slice.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct MetricValues {
    pub mpjpe_mm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_mpjpe_mm: Option<f64>,
    pub pck_percent: f64,
    pub auc_percent: f64,
}

/// Full evaluation report, with a per-action breakdown when labels exist.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub sample_count: usize,
    #[serde(flatten)]
    pub overall: MetricValues,
    pub per_action: BTreeMap<String, MetricValues>,
}

/// Which protocols an evaluation computes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Protocol {
    One,
    Two,
    All,
}

impl Protocol {
    pub fn wants_alignment(self) -> bool {
        matches!(self, Protocol::Two | Protocol::All)
    }
}

fn slice_values(
    pred: &[f64],
    gt: &[f64],
    joints: usize,
    protocol: Protocol,
) -> Result<MetricValues, MetricError> {
    Ok(MetricValues {
        mpjpe_mm: mpjpe(pred, gt, joints)?,
        p_mpjpe_mm: if protocol.wants_alignment() {
            Some(p_mpjpe(pred, gt, joints)?)
        } else {
            None
        },
        pck_percent: pck(pred, gt, joints, 150.0)?,
        auc_percent: auc(pred, gt, joints)?,
    })
}

/// Evaluates a prediction set against ground truth, with an optional
/// per-action breakdown. Aggregation is order-independent (sums of
/// per-sample statistics).
pub fn evaluate(
    pred: &[f64],
    gt: &[f64],
    joints: usize,
    actions: Option<&[String]>,
    protocol: Protocol,
) -> Result<MetricReport, MetricError> {
    let samples = check_pair(pred, gt, joints)?;
    if let Some(labels) = actions {
        if labels.len() != samples {
            return Err(MetricError::LabelCount {
                labels: labels.len(),
                samples,
            });
        }
    }
    let overall = slice_values(pred, gt, joints, protocol)?;
    let mut per_action = BTreeMap::new();
    if let Some(labels) = actions {
        let span = joints * 3;
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (s, label) in labels.iter().enumerate() {
            groups.entry(label.as_str()).or_default().push(s);
        }
        for (label, idxs) in groups {
            let mut p = Vec::with_capacity(idxs.len() * span);
            let mut g = Vec::with_capacity(idxs.len() * span);
            for &s in &idxs {
                p.extend_from_slice(&pred[s * span..(s + 1) * span]);
                g.extend_from_slice(&gt[s * span..(s + 1) * span]);
            }
            per_action.insert(label.to_string(), slice_values(&p, &g, joints, protocol)?);
        }
    }
    Ok(MetricReport {
        sample_count: samples,
        overall,
        per_action,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table: one row per action plus the average.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>12} {:>8} {:>8} {:>8}",
            "action", "mpjpe(mm)", "p-mpjpe(mm)", "pck(%)", "auc(%)", "samples"
        );
        let row = |out: &mut String, name: &str, v: &MetricValues, count: Option<usize>| {
            let pm = v
                .p_mpjpe_mm
                .map(|x| format!("{x:.2}"))
                .unwrap_or_else(|| "-".into());
            let cnt = count.map(|c| c.to_string()).unwrap_or_else(|| "".into());
            let _ = writeln!(
                out,
                "{:<16} {:>10.2} {:>12} {:>8.2} {:>8.2} {:>8}",
                name, v.mpjpe_mm, pm, v.pck_percent, v.auc_percent, cnt
            );
        };
        for (name, v) in &self.per_action {
            row(&mut out, name, v, None);
        }
        row(&mut out, "Avg", &self.overall, Some(self.sample_count));
        out
    }
}
