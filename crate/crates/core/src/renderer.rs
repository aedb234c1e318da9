//! Point sampling along rays and volume rendering of semantics and depth.
//!
//! A [`SampleSet`] partitions the clipped interval `[t_near, t_far]` into
//! bins; sample `k` sits inside bin `k` and `β_k` is that bin's width, so the
//! widths always sum to the interval length. Each sample contributes with
//! weight `w_k = T_k·α_k`, where `α_k = 1 − exp(−σ_k β_k)` and
//! `T_k = exp(−Σ_{j<k} σ_j β_j)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grid_intersect, Ray};
use crate::parallel::Workers;
use crate::rng::stream_rng;
use crate::sdf::{softplus, Corners, QueryMode, SemanticDensityField};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Unified,
    Hierarchical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub sampler: Sampler,
    /// Unified step as a multiple of the voxel size.
    pub step_scale: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Jitter samples within their bins (training only).
    pub jitter: bool,
    pub query_mode: QueryMode,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            sampler: Sampler::Unified,
            step_scale: 0.5,
            n_coarse: 64,
            n_fine: 128,
            jitter: true,
            query_mode: QueryMode::Trilinear,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::invalid("step_scale must be positive"));
        }
        if self.sampler == Sampler::Hierarchical && (self.n_coarse == 0 || self.n_fine == 0) {
            return Err(Error::invalid(
                "hierarchical sampling needs n_coarse, n_fine ≥ 1",
            ));
        }
        Ok(())
    }

    /// Upper bound on samples per ray for a field with the given box diagonal.
    pub fn max_samples(&self, voxel_size: f64, diagonal: f64) -> usize {
        match self.sampler {
            Sampler::Unified => (diagonal / (self.step_scale * voxel_size)).ceil() as usize + 1,
            Sampler::Hierarchical => self.n_coarse + self.n_fine,
        }
    }

    pub fn evaluation(&self) -> RenderConfig {
        RenderConfig {
            jitter: false,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    t: Vec<f64>,
    edges: Vec<f64>,
    strategy: Sampler,
}

impl SampleSet {
    /// Builds a set from explicit bin edges and one sample per bin.
    pub fn from_bins(edges: Vec<f64>, t: Vec<f64>, strategy: Sampler) -> Result<Self> {
        if edges.len() != t.len() + 1 && !(t.is_empty() && edges.is_empty()) {
            return Err(Error::invalid("need exactly one sample per bin"));
        }
        for (k, &tk) in t.iter().enumerate() {
            if !(edges[k] < edges[k + 1] && tk >= edges[k] && tk <= edges[k + 1]) {
                return Err(Error::invalid(format!("sample {k} is not inside its bin")));
            }
        }
        Ok(SampleSet { t, edges, strategy })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn strategy(&self) -> Sampler {
        self.strategy
    }

    pub fn t_values(&self) -> &[f64] {
        &self.t
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    #[inline]
    pub fn delta(&self, k: usize) -> f64 {
        self.edges[k + 1] - self.edges[k]
    }

    /// Midpoint of bin `k`.
    #[inline]
    pub fn mid(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| w[1] - w[0])
    }

    fn clear(&mut self) {
        self.t.clear();
        self.edges.clear();
    }
}

/// `⌈(t_far − t_near)/step⌉` equal bins over the interval, one sample per bin
/// (the bin center, or a uniform draw inside the bin when jittering).
pub fn sample_unified<R: Rng + ?Sized>(
    t_near: f64,
    t_far: f64,
    step: f64,
    jitter: bool,
    rng: &mut R,
) -> Result<SampleSet> {
    let mut out = SampleSet::default();
    sample_unified_into(&mut out, t_near, t_far, step, jitter, rng)?;
    Ok(out)
}

pub fn sample_unified_into<R: Rng + ?Sized>(
    out: &mut SampleSet,
    t_near: f64,
    t_far: f64,
    step: f64,
    jitter: bool,
    rng: &mut R,
) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "sampling step must be positive, got {step}"
        )));
    }
    let len = t_far - t_near;
    let count = if len > 0.0 {
        (len / step).ceil().max(1.0) as usize
    } else {
        0
    };
    fill_bins(out, t_near, t_far, count, jitter, rng);
    out.strategy = Sampler::Unified;
    Ok(())
}

fn fill_bins<R: Rng + ?Sized>(
    out: &mut SampleSet,
    t_near: f64,
    t_far: f64,
    count: usize,
    jitter: bool,
    rng: &mut R,
) {
    out.clear();
    if count == 0 || !(t_far > t_near) {
        return;
    }
    let width = (t_far - t_near) / count as f64;
    for k in 0..count {
        out.edges.push(t_near + k as f64 * width);
    }
    out.edges.push(t_far);
    for k in 0..count {
        let (lo, hi) = (out.edges[k], out.edges[k + 1]);
        let u = if jitter { rng.gen::<f64>() } else { 0.5 };
        out.t.push(lo + u * (hi - lo));
    }
}

/// Inverse-CDF draws from the piecewise-constant density over the coarse
/// bins with mass proportional to `coarse_weights`.
pub fn draw_fine<R: Rng + ?Sized>(
    coarse: &SampleSet,
    coarse_weights: &[f64],
    n_fine: usize,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    out.clear();
    let bins = coarse.len();
    if bins == 0 {
        return;
    }
    let total: f64 = coarse_weights.iter().map(|w| w.max(0.0)).sum();
    // cdf[k] = mass of bins < k; all-zero weights fall back to bin widths
    let mass = |k: usize| {
        if total > 0.0 {
            coarse_weights[k].max(0.0) / total
        } else {
            coarse.delta(k) / (coarse.edges[bins] - coarse.edges[0])
        }
    };
    let mut cdf = Vec::with_capacity(bins + 1);
    cdf.push(0.0);
    for k in 0..bins {
        let next = cdf[k] + mass(k);
        cdf.push(next);
    }
    let norm = cdf[bins];
    for _ in 0..n_fine {
        let u = rng.gen::<f64>() * norm;
        let k = (cdf.partition_point(|&c| c <= u).max(1) - 1).min(bins - 1);
        let span = cdf[k + 1] - cdf[k];
        let frac = if span > 0.0 {
            ((u - cdf[k]) / span).clamp(0.0, 1.0)
        } else {
            0.5
        };
        out.push(coarse.edges[k] + frac * coarse.delta(k));
    }
}

/// Coarse samples merged with `n_fine` importance draws. The merged set's bin
/// edges are the midpoints between consecutive samples.
pub fn sample_hierarchical<R: Rng + ?Sized>(
    coarse: &SampleSet,
    coarse_weights: &[f64],
    n_fine: usize,
    rng: &mut R,
) -> SampleSet {
    let mut fine = Vec::with_capacity(n_fine);
    draw_fine(coarse, coarse_weights, n_fine, rng, &mut fine);
    let mut out = SampleSet::default();
    merge_samples(coarse, &fine, &mut out);
    out
}

fn merge_samples(coarse: &SampleSet, fine: &[f64], out: &mut SampleSet) {
    out.clear();
    out.strategy = Sampler::Hierarchical;
    if coarse.is_empty() {
        return;
    }
    let (t_near, t_far) = (coarse.edges[0], coarse.edges[coarse.len()]);
    out.t.extend_from_slice(&coarse.t);
    out.t.extend_from_slice(fine);
    out.t.sort_by(f64::total_cmp);
    out.t.dedup();
    // bins need positive width, so samples sitting on the interval ends go
    out.t.retain(|&t| t > t_near && t < t_far);
    if out.t.is_empty() {
        out.t.push(0.5 * (t_near + t_far));
    }
    out.edges.push(t_near);
    for w in out.t.windows(2) {
        out.edges.push(0.5 * (w[0] + w[1]));
    }
    out.edges.push(t_far);
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub density_pre: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub trans: f64,
    pub weight: f64,
    pub corners: Corners,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderOutput {
    /// Accumulated semantic logits.
    pub sem_pix: Vec<f64>,
    pub depth_pix: f64,
    pub opacity: f64,
    pub samples: SampleSet,
    pub records: Vec<SampleRecord>,
    /// Per-sample logits, `samples.len() × num_classes`.
    pub sample_logits: Vec<f64>,
    scratch: Vec<f64>,
    scratch_weights: Vec<f64>,
    scratch_set: SampleSet,
}

impl RenderOutput {
    /// Preallocates buffers so rendering up to `max_samples` samples never
    /// reallocates.
    pub fn with_capacity(max_samples: usize, num_classes: usize) -> Self {
        RenderOutput {
            sem_pix: Vec::with_capacity(num_classes),
            depth_pix: 0.0,
            opacity: 0.0,
            samples: SampleSet {
                t: Vec::with_capacity(max_samples),
                edges: Vec::with_capacity(max_samples + 1),
                strategy: Sampler::Unified,
            },
            records: Vec::with_capacity(max_samples),
            sample_logits: Vec::with_capacity(max_samples * num_classes),
            scratch: Vec::with_capacity(max_samples),
            scratch_weights: Vec::with_capacity(max_samples),
            scratch_set: SampleSet {
                t: Vec::with_capacity(max_samples),
                edges: Vec::with_capacity(max_samples + 1),
                strategy: Sampler::Unified,
            },
        }
    }

    /// Rendering weights `w_k` in sample order.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.weight)
    }

    pub fn logits(&self, k: usize) -> &[f64] {
        let l = self.sem_pix.len();
        &self.sample_logits[k * l..(k + 1) * l]
    }

    pub fn has_intermediates(&self) -> bool {
        self.records.len() == self.samples.len()
            && self.sample_logits.len() == self.samples.len() * self.sem_pix.len()
    }
}

/// Renders `ray` through `field` at the given sample positions.
pub fn render_ray(
    field: &SemanticDensityField,
    ray: &Ray,
    samples: &SampleSet,
) -> Result<RenderOutput> {
    render_ray_with(field, ray, samples, QueryMode::Trilinear)
}

pub fn render_ray_with(
    field: &SemanticDensityField,
    ray: &Ray,
    samples: &SampleSet,
    mode: QueryMode,
) -> Result<RenderOutput> {
    let mut out = RenderOutput::default();
    out.samples.clone_from(samples);
    shade(field, ray, mode, &mut out)?;
    Ok(out)
}

/// Forward pass over `out.samples`, filling every other field of `out`.
fn shade(
    field: &SemanticDensityField,
    ray: &Ray,
    mode: QueryMode,
    out: &mut RenderOutput,
) -> Result<()> {
    let l = field.num_classes();
    let k = out.samples.len();
    out.records.clear();
    out.sample_logits.clear();
    out.sample_logits.resize(k * l, 0.0);
    out.sem_pix.clear();
    out.sem_pix.resize(l, 0.0);
    let mut optical_depth = 0.0_f64;
    let mut depth = 0.0;
    let mut opacity = 0.0;
    for i in 0..k {
        let t = out.samples.t[i];
        let corners = field.corners(&ray.at(t), mode)?;
        let density_pre = field.interp_density(&corners);
        let sigma = softplus(density_pre);
        let tau = sigma * out.samples.delta(i);
        let trans = (-optical_depth).exp();
        let alpha = -(-tau).exp_m1();
        let weight = trans * alpha;
        optical_depth += tau;
        let logits = &mut out.sample_logits[i * l..(i + 1) * l];
        field.interp_logits(&corners, logits);
        for (s, &x) in out.sem_pix.iter_mut().zip(logits.iter()) {
            *s += weight * x;
        }
        depth += weight * t;
        opacity += weight;
        out.records.push(SampleRecord {
            density_pre,
            sigma,
            alpha,
            trans,
            weight,
            corners,
        });
    }
    out.depth_pix = depth;
    out.opacity = opacity;
    Ok(())
}

/// Rendering weights only (no logits, no records); used by the coarse pass.
fn coarse_weights(
    field: &SemanticDensityField,
    ray: &Ray,
    samples: &SampleSet,
    mode: QueryMode,
    weights: &mut Vec<f64>,
) -> Result<()> {
    weights.clear();
    let mut optical_depth = 0.0_f64;
    for i in 0..samples.len() {
        let c = field.corners(&ray.at(samples.t[i]), mode)?;
        let tau = softplus(field.interp_density(&c)) * samples.delta(i);
        weights.push((-optical_depth).exp() * -(-tau).exp_m1());
        optical_depth += tau;
    }
    Ok(())
}

/// Clips, samples and renders one ray into a reusable output.
pub fn render_ray_sampled(
    field: &SemanticDensityField,
    ray: &Ray,
    cfg: &RenderConfig,
    rng: &mut impl Rng,
    out: &mut RenderOutput,
) -> Result<()> {
    let Some((t0, t1)) = grid_intersect(ray, &field.bounds()) else {
        out.samples.clear();
        return shade(field, ray, cfg.query_mode, out);
    };
    match cfg.sampler {
        Sampler::Unified => {
            let step = cfg.step_scale * field.voxel_size();
            sample_unified_into(&mut out.samples, t0, t1, step, cfg.jitter, rng)?;
        }
        Sampler::Hierarchical => {
            let mut coarse = std::mem::take(&mut out.scratch_set);
            let mut weights = std::mem::take(&mut out.scratch_weights);
            let mut fine = std::mem::take(&mut out.scratch);
            fill_bins(&mut coarse, t0, t1, cfg.n_coarse, cfg.jitter, rng);
            let res = coarse_weights(field, ray, &coarse, cfg.query_mode, &mut weights);
            if res.is_ok() {
                draw_fine(&coarse, &weights, cfg.n_fine, rng, &mut fine);
                merge_samples(&coarse, &fine, &mut out.samples);
            }
            out.scratch = fine;
            out.scratch_weights = weights;
            out.scratch_set = coarse;
            res?;
        }
    }
    shade(field, ray, cfg.query_mode, out)
}

/// Deterministic per-ray random stream: depends only on `seed` and the ray's
/// position in the batch.
pub fn ray_rng(seed: u64, index: usize) -> crate::rng::StreamRng {
    stream_rng(seed, index as u64)
}

/// Renders every ray; element `i` equals a standalone render of ray `i` with
/// the stream `ray_rng(seed, i)`, whatever the worker count.
pub fn render_batch(
    field: &SemanticDensityField,
    rays: &[Ray],
    cfg: &RenderConfig,
    seed: u64,
    workers: &Workers,
) -> Result<Vec<RenderOutput>> {
    let mut outputs = Vec::new();
    render_batch_into(field, rays, cfg, seed, workers, &mut outputs)?;
    Ok(outputs)
}

/// Like [`render_batch`] but reuses the buffers already held by `outputs`.
pub fn render_batch_into(
    field: &SemanticDensityField,
    rays: &[Ray],
    cfg: &RenderConfig,
    seed: u64,
    workers: &Workers,
    outputs: &mut Vec<RenderOutput>,
) -> Result<()> {
    cfg.validate()?;
    outputs.resize_with(rays.len(), RenderOutput::default);
    let mut slots: Vec<(&mut RenderOutput, Option<Error>)> =
        outputs.iter_mut().map(|o| (o, None)).collect();
    workers.for_each_mut(&mut slots, |i, (out, err)| {
        let mut rng = ray_rng(seed, i);
        if let Err(e) = render_ray_sampled(field, &rays[i], cfg, &mut rng, out) {
            *err = Some(e);
        }
    });
    for (index, (_, err)) in slots.into_iter().enumerate() {
        if let Some(e) = err {
            return Err(Error::Ray {
                index,
                source: Box::new(e),
            });
        }
    }
    Ok(())
}
