//! Supervision terms: semantic cross-entropy, SILog depth, distortion and
//! total variation, plus their weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Ray;
use crate::renderer::{RenderOutput, SampleSet};
use crate::sdf::SemanticDensityField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_seg: f64,
    pub w_depth: f64,
    pub w_dist: f64,
    pub w_tv: f64,
    /// Variance weight of the SILog loss.
    pub lambda_var: f64,
    /// Rays rendered with lower opacity are left out of the depth term.
    pub opacity_min: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_seg: 1.0,
            w_depth: 1.0,
            w_dist: 0.01,
            w_tv: 0.01,
            lambda_var: 0.85,
            opacity_min: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_seg,
            self.w_depth,
            self.w_dist,
            self.w_tv,
            self.opacity_min,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid(
                "loss weights and opacity_min must be nonnegative",
            ));
        }
        if !self.lambda_var.is_finite() {
            return Err(Error::invalid("lambda_var must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCounts {
    pub seg: usize,
    pub depth: usize,
    pub dist: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_seg: f64,
    pub l_depth: f64,
    pub l_dist: f64,
    pub l_tv: f64,
    pub total: f64,
    pub counts: LossCounts,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `−log softmax(sem_pix)[label]`.
pub fn seg_loss(sem_pix: &[f64], label: usize) -> f64 {
    log_sum_exp(sem_pix) - sem_pix[label]
}

/// Gradient of [`seg_loss`] w.r.t. `sem_pix`, scaled by `scale`.
pub fn seg_loss_grad(sem_pix: &[f64], label: usize, scale: f64, out: &mut [f64]) {
    let lse = log_sum_exp(sem_pix);
    for (i, (o, &x)) in out.iter_mut().zip(sem_pix).enumerate() {
        let p = (x - lse).exp();
        *o = scale * (p - if i == label { 1.0 } else { 0.0 });
    }
}

/// Scale-invariant log depth loss
/// `(1/n)Σd² − λ((1/n)Σd)²` with `d = ln pred − ln gt`.
pub fn depth_loss(pred: &[f64], gt: &[f64], lambda_var: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::invalid(
            "depth lists must be non-empty and equally long",
        ));
    }
    if pred.iter().chain(gt).any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("depths must be positive"));
    }
    let n = pred.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        let d = p.ln() - g.ln();
        s1 += d;
        s2 += d * d;
    }
    let mean = s1 / n;
    Ok(s2 / n - lambda_var * mean * mean)
}

/// `Σ_i Σ_j w_i w_j |m_i − m_j| + ⅓ Σ_i w_i² β_i` over the bins of `samples`.
pub fn distortion_loss(samples: &SampleSet, weights: &[f64]) -> f64 {
    distortion_with(samples, |k| weights[k])
}

pub(crate) fn distortion_with(samples: &SampleSet, weight: impl Fn(usize) -> f64) -> f64 {
    let mut below_w = 0.0;
    let mut below_wm = 0.0;
    let mut cross = 0.0;
    let mut own = 0.0;
    for k in 0..samples.len() {
        let w = weight(k);
        let m = samples.mid(k);
        cross += w * (m * below_w - below_wm);
        own += w * w * samples.delta(k);
        below_w += w;
        below_wm += w * m;
    }
    2.0 * cross + own / 3.0
}

/// `∂ distortion / ∂w_k`, scaled by `scale`, written to `out`.
pub fn distortion_grad(samples: &SampleSet, weights: &[f64], scale: f64, out: &mut [f64]) {
    distortion_grad_with(samples, |k| weights[k], scale, out)
}

pub(crate) fn distortion_grad_with(
    samples: &SampleSet,
    weight: impl Fn(usize) -> f64,
    scale: f64,
    out: &mut [f64],
) {
    let n = samples.len();
    let total_w: f64 = (0..n).map(&weight).sum();
    let total_wm: f64 = (0..n).map(|k| weight(k) * samples.mid(k)).sum();
    let mut below_w = 0.0;
    let mut below_wm = 0.0;
    for k in 0..n {
        let w = weight(k);
        let m = samples.mid(k);
        let above_w = total_w - below_w - w;
        let above_wm = total_wm - below_wm - w * m;
        let spread = m * below_w - below_wm + above_wm - m * above_w;
        out[k] = scale * (2.0 * spread + 2.0 / 3.0 * w * samples.delta(k));
        below_w += w;
        below_wm += w * m;
    }
}

fn tv_pair_count(dims: [usize; 3]) -> usize {
    let [h, w, d] = dims;
    (h - 1) * w * d + h * (w - 1) * d + h * w * (d - 1)
}

/// Visits every axis-adjacent voxel pair.
fn for_each_tv_pair(dims: [usize; 3], mut f: impl FnMut(usize, usize)) {
    let [h, w, d] = dims;
    let idx = |x: usize, y: usize, z: usize| (x * w + y) * d + z;
    for x in 0..h {
        for y in 0..w {
            for z in 0..d {
                let i = idx(x, y, z);
                if x + 1 < h {
                    f(i, idx(x + 1, y, z));
                }
                if y + 1 < w {
                    f(i, idx(x, y + 1, z));
                }
                if z + 1 < d {
                    f(i, i + 1);
                }
            }
        }
    }
}

/// Mean squared difference of pre-activation density over adjacent pairs.
pub fn tv_loss(field: &SemanticDensityField) -> f64 {
    let pairs = tv_pair_count(field.dims());
    if pairs == 0 {
        return 0.0;
    }
    let p = field.density_params();
    let mut sum = 0.0;
    for_each_tv_pair(field.dims(), |a, b| {
        let d = p[a] - p[b];
        sum += d * d;
    });
    sum / pairs as f64
}

/// Adds `scale · ∂tv/∂density` into `out`.
pub fn tv_grad(field: &SemanticDensityField, scale: f64, out: &mut [f64]) {
    let pairs = tv_pair_count(field.dims());
    if pairs == 0 || scale == 0.0 {
        return;
    }
    let p = field.density_params();
    let c = 2.0 * scale / pairs as f64;
    for_each_tv_pair(field.dims(), |a, b| {
        let g = c * (p[a] - p[b]);
        out[a] += g;
        out[b] -= g;
    });
}

/// Batch-level quantities shared by the loss and its gradient.
#[derive(Clone, Debug)]
pub(crate) struct BatchTerms {
    pub report: LossReport,
    /// Per ray: `Some(ln pred − ln gt)` when the ray enters the depth term.
    pub depth_residual: Vec<Option<f64>>,
    pub depth_mean: f64,
}

pub(crate) fn batch_terms(
    renders: &[RenderOutput],
    rays: &[Ray],
    field: &SemanticDensityField,
    cfg: &LossConfig,
) -> Result<BatchTerms> {
    if renders.is_empty() {
        return Err(Error::invalid("cannot compute a loss over an empty batch"));
    }
    if renders.len() != rays.len() {
        return Err(Error::invalid(format!(
            "{} renders but {} rays",
            renders.len(),
            rays.len()
        )));
    }
    let l = field.num_classes();
    let n = renders.len();
    let mut seg = 0.0;
    let mut dist = 0.0;
    let mut depth_residual = Vec::with_capacity(n);
    let (mut d_sum, mut d_sq, mut d_count) = (0.0, 0.0, 0usize);
    for (i, (r, ray)) in renders.iter().zip(rays).enumerate() {
        let label = ray.sem_label as usize;
        if label >= l || r.sem_pix.len() != l {
            return Err(Error::Ray {
                index: i,
                source: Box::new(Error::invalid(format!(
                    "label {label} or logit count {} incompatible with {l} classes",
                    r.sem_pix.len()
                ))),
            });
        }
        seg += seg_loss(&r.sem_pix, label);
        dist += distortion_with(&r.samples, |k| r.records[k].weight);
        let residual = match ray.depth_label {
            Some(gt) if gt > 0.0 && r.opacity >= cfg.opacity_min && r.depth_pix > 0.0 => {
                let d = r.depth_pix.ln() - gt.ln();
                d_sum += d;
                d_sq += d * d;
                d_count += 1;
                Some(d)
            }
            _ => None,
        };
        depth_residual.push(residual);
    }
    let nf = n as f64;
    let (l_depth, depth_mean) = if d_count > 0 {
        let m = d_sum / d_count as f64;
        (d_sq / d_count as f64 - cfg.lambda_var * m * m, m)
    } else {
        (0.0, 0.0)
    };
    let l_seg = seg / nf;
    let l_dist = dist / nf;
    let l_tv = if cfg.w_tv != 0.0 { tv_loss(field) } else { 0.0 };
    let total = cfg.w_seg * l_seg + cfg.w_depth * l_depth + cfg.w_dist * l_dist + cfg.w_tv * l_tv;
    Ok(BatchTerms {
        report: LossReport {
            l_seg,
            l_depth,
            l_dist,
            l_tv,
            total,
            counts: LossCounts {
                seg: n,
                depth: d_count,
                dist: n,
            },
        },
        depth_residual,
        depth_mean,
    })
}

/// Weighted total over a rendered batch. Semantic and distortion terms are
/// means over all rays; the depth term covers rays with a valid depth label
/// and opacity ≥ `opacity_min`.
pub fn total_loss(
    renders: &[RenderOutput],
    rays: &[Ray],
    field: &SemanticDensityField,
    cfg: &LossConfig,
) -> Result<LossReport> {
    batch_terms(renders, rays, field, cfg).map(|t| t.report)
}
