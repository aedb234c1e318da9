//! Reverse-mode gradients of the batch loss with respect to every field
//! parameter, and a central finite-difference verifier.
//!
//! With `G_k = ∂L/∂w_k` (semantic, depth and distortion terms) and
//! `τ_j = σ_j β_j`, the weights `w_k = T_k α_k` give
//! `∂L/∂τ_j = G_j T_{j+1} − Σ_{k>j} G_k w_k`, which is then pushed through
//! softplus and the trilinear corner weights.

use rand::Rng;
use serde::Serialize;

use crate::config::GradCheckConfig;
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::losses::{
    batch_terms, distortion_grad_with, seg_loss_grad, total_loss, tv_grad, LossConfig, LossReport,
};
use crate::parallel::Workers;
use crate::renderer::{
    ray_rng, render_ray_sampled, render_ray_with, RenderConfig, RenderOutput, SampleSet,
};
use crate::rng::{stream_rng, StreamRng};
use crate::sdf::{init_field, sigmoid, SemanticDensityField};

/// Rays are split into this many contiguous ranges, each accumulated into
/// its own buffer and merged in range order. The count is fixed so results
/// do not depend on the number of workers.
pub const GRAD_PARTITIONS: usize = 8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradBuffer {
    pub d_density: Vec<f64>,
    /// Class index fastest, like the field's semantic parameters.
    pub d_semantic: Vec<f64>,
    pub contributing_ray_count: usize,
}

impl GradBuffer {
    pub fn zeros_like(field: &SemanticDensityField) -> Self {
        GradBuffer {
            d_density: vec![0.0; field.voxel_count()],
            d_semantic: vec![0.0; field.voxel_count() * field.num_classes()],
            contributing_ray_count: 0,
        }
    }

    fn reset(&mut self, field: &SemanticDensityField) {
        for (buf, len) in [
            (&mut self.d_density, field.voxel_count()),
            (
                &mut self.d_semantic,
                field.voxel_count() * field.num_classes(),
            ),
        ] {
            buf.clear();
            buf.resize(len, 0.0);
        }
        self.contributing_ray_count = 0;
    }

    fn add(&mut self, other: &GradBuffer) {
        for (a, b) in self.d_density.iter_mut().zip(&other.d_density) {
            *a += b;
        }
        for (a, b) in self.d_semantic.iter_mut().zip(&other.d_semantic) {
            *a += b;
        }
        self.contributing_ray_count += other.contributing_ray_count;
    }

    pub fn norm(&self) -> f64 {
        self.d_density
            .iter()
            .chain(&self.d_semantic)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.d_density
            .iter()
            .chain(&self.d_semantic)
            .all(|g| g.is_finite())
    }

    pub fn matches(&self, field: &SemanticDensityField) -> bool {
        self.d_density.len() == field.voxel_count()
            && self.d_semantic.len() == field.voxel_count() * field.num_classes()
    }
}

#[derive(Debug, Default)]
struct Partition {
    grads: GradBuffer,
    g_sem: Vec<f64>,
    g_w: Vec<f64>,
    g_dist: Vec<f64>,
}

/// Reusable per-partition buffers for [`backward_with`].
#[derive(Debug, Default)]
pub struct BackwardWorkspace {
    partitions: Vec<Partition>,
}

impl BackwardWorkspace {
    /// Buffers sized for rays of up to `max_samples` samples.
    pub fn new(field: &SemanticDensityField, max_samples: usize) -> Self {
        let l = field.num_classes();
        BackwardWorkspace {
            partitions: (0..GRAD_PARTITIONS)
                .map(|_| Partition {
                    grads: GradBuffer::zeros_like(field),
                    g_sem: Vec::with_capacity(l),
                    g_w: Vec::with_capacity(max_samples),
                    g_dist: Vec::with_capacity(max_samples),
                })
                .collect(),
        }
    }
}

/// Gradient of [`total_loss`] over a rendered batch, accumulated
/// sequentially.
pub fn backward(
    renders: &[RenderOutput],
    rays: &[Ray],
    field: &SemanticDensityField,
    cfg: &LossConfig,
) -> Result<(GradBuffer, LossReport)> {
    let max_samples = renders.iter().map(|r| r.samples.len()).max().unwrap_or(0);
    let mut ws = BackwardWorkspace::new(field, max_samples);
    let mut grads = GradBuffer::zeros_like(field);
    let report = backward_with(
        renders,
        rays,
        field,
        cfg,
        &Workers::sequential(),
        &mut ws,
        &mut grads,
    )?;
    Ok((grads, report))
}

/// Computes the loss report and writes its gradient into `out`. The result
/// is bit-identical for every worker count.
pub fn backward_with(
    renders: &[RenderOutput],
    rays: &[Ray],
    field: &SemanticDensityField,
    cfg: &LossConfig,
    workers: &Workers,
    ws: &mut BackwardWorkspace,
    out: &mut GradBuffer,
) -> Result<LossReport> {
    if let Some(i) = renders.iter().position(|r| !r.has_intermediates()) {
        return Err(Error::Ray {
            index: i,
            source: Box::new(Error::MissingIntermediates),
        });
    }
    let terms = batch_terms(renders, rays, field, cfg)?;
    let n = renders.len();
    let seg_scale = cfg.w_seg / n as f64;
    let dist_scale = cfg.w_dist / n as f64;
    let depth_scale = if terms.report.counts.depth > 0 {
        cfg.w_depth * 2.0 / terms.report.counts.depth as f64
    } else {
        0.0
    };
    let chunk = n.div_ceil(GRAD_PARTITIONS);
    ws.partitions
        .resize_with(GRAD_PARTITIONS, Partition::default);
    workers.for_each_mut(&mut ws.partitions, |p, part| {
        part.grads.reset(field);
        let lo = (p * chunk).min(n);
        let hi = ((p + 1) * chunk).min(n);
        for i in lo..hi {
            let depth_grad = match terms.depth_residual[i] {
                Some(d) => {
                    depth_scale * (d - cfg.lambda_var * terms.depth_mean) / renders[i].depth_pix
                }
                None => 0.0,
            };
            ray_backward(
                field,
                &renders[i],
                &rays[i],
                seg_scale,
                depth_grad,
                dist_scale,
                part,
            );
        }
    });
    out.reset(field);
    for part in &ws.partitions {
        out.add(&part.grads);
    }
    tv_grad(field, cfg.w_tv, &mut out.d_density);
    Ok(terms.report)
}

fn ray_backward(
    field: &SemanticDensityField,
    r: &RenderOutput,
    ray: &Ray,
    seg_scale: f64,
    depth_grad: f64,
    dist_scale: f64,
    part: &mut Partition,
) {
    let k = r.samples.len();
    if k == 0 {
        return;
    }
    let l = field.num_classes();
    part.grads.contributing_ray_count += 1;
    part.g_sem.resize(l, 0.0);
    seg_loss_grad(
        &r.sem_pix,
        ray.sem_label as usize,
        seg_scale,
        &mut part.g_sem,
    );
    part.g_dist.resize(k, 0.0);
    if dist_scale != 0.0 {
        distortion_grad_with(
            &r.samples,
            |j| r.records[j].weight,
            dist_scale,
            &mut part.g_dist,
        );
    } else {
        part.g_dist.fill(0.0);
    }
    let t = r.samples.t_values();
    part.g_w.clear();
    for j in 0..k {
        let sem: f64 = part.g_sem.iter().zip(r.logits(j)).map(|(g, s)| g * s).sum();
        part.g_w.push(sem + depth_grad * t[j] + part.g_dist[j]);
    }
    let mut later = 0.0;
    for j in (0..k).rev() {
        let rec = &r.records[j];
        let beta = r.samples.delta(j);
        let trans_next = rec.trans * (-rec.sigma * beta).exp();
        let d_tau = part.g_w[j] * trans_next - later;
        later += part.g_w[j] * rec.weight;
        let d_pre = d_tau * beta * sigmoid(rec.density_pre);
        for c in 0..8 {
            let omega = rec.corners.weight[c];
            if omega == 0.0 {
                continue;
            }
            let v = rec.corners.index[c] as usize;
            part.grads.d_density[v] += omega * d_pre;
            let scale = omega * rec.weight;
            let row = &mut part.grads.d_semantic[v * l..(v + 1) * l];
            for (d, g) in row.iter_mut().zip(&part.g_sem) {
                *d += scale * g;
            }
        }
    }
}

/// One mismatch between analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdEntry {
    /// `"density"` or `"semantic"`.
    pub kind: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub h: f64,
    pub checked: usize,
    /// Largest `|a − n| / max(|a|, |n|)` among entries where either side
    /// is at least `small`.
    pub max_rel_error: f64,
    /// Largest `|a − n|` among entries where both sides are below `small`.
    pub max_abs_error_small: f64,
    /// Largest `|a − n|` over all entries.
    pub max_abs_error: f64,
    pub small: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub offending: Vec<FdEntry>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.offending.is_empty()
    }
}

/// Tolerances used by [`fd_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdTolerance {
    pub rel: f64,
    pub abs: f64,
    pub small: f64,
}

impl Default for FdTolerance {
    fn default() -> Self {
        FdTolerance {
            rel: 1e-4,
            abs: 1e-7,
            small: 1e-6,
        }
    }
}

/// Renders `rays` without jitter and keeps each ray's sample positions so
/// perturbed evaluations reuse them.
fn frozen_samples(
    field: &SemanticDensityField,
    rays: &[Ray],
    render_cfg: &RenderConfig,
    seed: u64,
) -> Result<(Vec<SampleSet>, Vec<RenderOutput>)> {
    let cfg = render_cfg.evaluation();
    let mut renders = Vec::with_capacity(rays.len());
    for (i, ray) in rays.iter().enumerate() {
        let mut out = RenderOutput::default();
        render_ray_sampled(field, ray, &cfg, &mut ray_rng(seed, i), &mut out).map_err(|e| {
            Error::Ray {
                index: i,
                source: Box::new(e),
            }
        })?;
        renders.push(out);
    }
    Ok((renders.iter().map(|r| r.samples.clone()).collect(), renders))
}

fn loss_at(
    field: &SemanticDensityField,
    rays: &[Ray],
    samples: &[SampleSet],
    render_cfg: &RenderConfig,
    cfg: &LossConfig,
) -> Result<f64> {
    let renders = rays
        .iter()
        .zip(samples)
        .map(|(ray, s)| render_ray_with(field, ray, s, render_cfg.query_mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(total_loss(&renders, rays, field, cfg)?.total)
}

fn param_mut<'a>(f: &'a mut SemanticDensityField, kind: &str, index: usize) -> &'a mut f64 {
    if kind == "density" {
        &mut f.density_params_mut()[index]
    } else {
        &mut f.semantic_params_mut()[index]
    }
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` for every parameter, compared
/// against [`backward`]. Sample positions are frozen at the unperturbed field.
pub fn fd_check(
    field: &SemanticDensityField,
    rays: &[Ray],
    render_cfg: &RenderConfig,
    cfg: &LossConfig,
    h: f64,
) -> Result<FdReport> {
    let (_, renders) = frozen_samples(field, rays, render_cfg, 0)?;
    let (grads, _) = backward(&renders, rays, field, cfg)?;
    fd_compare(
        field,
        rays,
        render_cfg,
        cfg,
        h,
        &grads,
        FdTolerance::default(),
    )
}

/// Compares a given gradient against central differences.
pub fn fd_compare(
    field: &SemanticDensityField,
    rays: &[Ray],
    render_cfg: &RenderConfig,
    cfg: &LossConfig,
    h: f64,
    analytic: &GradBuffer,
    tol: FdTolerance,
) -> Result<FdReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if !analytic.matches(field) {
        return Err(Error::invalid("gradient buffer does not match the field"));
    }
    let (samples, _) = frozen_samples(field, rays, render_cfg, 0)?;
    let mut work = field.clone();
    let mut report = FdReport {
        h,
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error_small: 0.0,
        max_abs_error: 0.0,
        small: tol.small,
        rel_tol: tol.rel,
        abs_tol: tol.abs,
        offending: Vec::new(),
    };
    for kind in ["density", "semantic"] {
        let count = if kind == "density" {
            field.voxel_count()
        } else {
            field.voxel_count() * field.num_classes()
        };
        for index in 0..count {
            let base = *param_mut(&mut work, kind, index);
            *param_mut(&mut work, kind, index) = base + h;
            let plus = loss_at(&work, rays, &samples, render_cfg, cfg)?;
            *param_mut(&mut work, kind, index) = base - h;
            let minus = loss_at(&work, rays, &samples, render_cfg, cfg)?;
            *param_mut(&mut work, kind, index) = base;
            let numeric = (plus - minus) / (2.0 * h);
            let a = if kind == "density" {
                analytic.d_density[index]
            } else {
                analytic.d_semantic[index]
            };
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            report.max_abs_error = report.max_abs_error.max(diff);
            let bad = if scale < tol.small {
                report.max_abs_error_small = report.max_abs_error_small.max(diff);
                diff >= tol.abs
            } else {
                let rel = diff / scale;
                report.max_rel_error = report.max_rel_error.max(rel);
                rel >= tol.rel
            };
            if bad {
                report.offending.push(FdEntry {
                    kind,
                    index,
                    analytic: a,
                    numeric,
                });
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Random field and labelled rays for a gradient check. Voxels are 0.5 wide
/// with the grid at the origin; rays cross the grid along +x and the last
/// class is the free class (no depth label).
pub fn grad_check_problem(cfg: &GradCheckConfig) -> Result<(SemanticDensityField, Vec<Ray>)> {
    if cfg.num_classes < 2 {
        return Err(Error::invalid(
            "a gradient check needs at least two classes",
        ));
    }
    let vs = 0.5;
    let mut field = init_field(cfg.dims, cfg.num_classes, Vec3::zeros(), vs, 0.0, 0.0)?;
    let mut rng = stream_rng(cfg.seed, 0x4644);
    for p in field.density_params_mut() {
        *p = rng.gen_range(-3.0..2.0);
    }
    for p in field.semantic_params_mut() {
        *p = rng.gen_range(-2.0..2.0);
    }
    let ext = cfg.dims.map(|d| d as f64 * vs);
    let free = cfg.num_classes - 1;
    let rays = (0..cfg.rays)
        .map(|_| {
            let inner = |rng: &mut StreamRng, e: f64| rng.gen_range(0.05 * e..0.95 * e);
            let origin = Vec3::new(-1.0, inner(&mut rng, ext[1]), inner(&mut rng, ext[2]));
            let target = Vec3::new(
                ext[0] + 1.0,
                inner(&mut rng, ext[1]),
                inner(&mut rng, ext[2]),
            );
            let mut ray = Ray::new(origin, target - origin)?;
            let label = rng.gen_range(0..cfg.num_classes);
            ray.sem_label = label as u16;
            ray.depth_label = (label != free).then(|| rng.gen_range(1.2..1.0 + ext[0]));
            Ok(ray)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((field, rays))
}
