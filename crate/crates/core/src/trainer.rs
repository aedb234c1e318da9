//! The optimization loop: weighted batch sampling, rendering, loss, backward
//! pass and an Adam update, with checkpoints and periodic evaluation.

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalio::{voxel_miou, EvalReport};
use crate::geometry::Ray;
use crate::gradients::{backward_with, BackwardWorkspace, GradBuffer};
use crate::losses::{seg_loss, LossReport};
use crate::parallel::Workers;
use crate::raypool::{build_pool, RayPool};
use crate::renderer::{render_batch_into, RenderOutput};
use crate::rng::{derive_seed, stream_rng};
use crate::sdf::{extract_occupancy, init_field, SemanticDensityField};
use crate::synthworld::Dataset;

const BATCH_STREAM: u64 = 1;
const RENDER_TAG: u64 = 0x52454E44;

/// Bias-corrected Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    /// Update number `t` (1-based).
    pub fn step(&self, t: u64, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        let c1 = 1.0 - self.beta1.powf(t as f64);
        let c2 = 1.0 - self.beta2.powf(t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Optimizer state. Parameters and moments are kept at f32 precision so a
/// checkpoint restores them exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub field: SemanticDensityField,
    /// First moments, density parameters then semantic parameters.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub iteration: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(field: SemanticDensityField, seed: u64) -> Self {
        let n = field.param_count();
        let mut state = TrainState {
            field,
            m: vec![0.0; n],
            v: vec![0.0; n],
            iteration: 0,
            seed,
        };
        round_f32(state.field.density_params_mut());
        round_f32(state.field.semantic_params_mut());
        state
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.field.param_count();
        if self.m.len() != n || self.v.len() != n {
            return Err(Error::invalid("moment buffers do not match the field"));
        }
        Ok(())
    }
}

fn round_f32(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

/// Field initialized per the run configuration over the dataset's grid.
pub fn initial_field(data: &Dataset, cfg: &RunConfig) -> Result<SemanticDensityField> {
    init_field(
        data.grid.dims,
        data.num_classes(),
        data.grid.origin(),
        data.grid.voxel_size,
        cfg.field.density_init,
        cfg.field.logit_init,
    )
}

/// Buffers reused by every step; their sizes depend only on the
/// configuration, not on which rays are drawn.
pub struct StepWorkspace {
    indices: Vec<usize>,
    batch: Vec<Ray>,
    renders: Vec<RenderOutput>,
    backward: BackwardWorkspace,
    grads: GradBuffer,
}

impl StepWorkspace {
    pub fn new(field: &SemanticDensityField, cfg: &RunConfig) -> Self {
        let n = cfg.raypool.rays_per_batch;
        let max_samples = cfg
            .render
            .max_samples(field.voxel_size(), field.bounds().diagonal());
        let l = field.num_classes();
        StepWorkspace {
            indices: Vec::with_capacity(n),
            batch: Vec::with_capacity(n),
            renders: (0..n)
                .map(|_| RenderOutput::with_capacity(max_samples, l))
                .collect(),
            backward: BackwardWorkspace::new(field, max_samples),
            grads: GradBuffer::zeros_like(field),
        }
    }

    /// Pool indices of the most recent batch.
    pub fn batch_indices(&self) -> &[usize] {
        &self.indices
    }
}

/// One Adam step on a batch drawn from `pool`. The batch and the sampling
/// jitter depend only on `(state.seed, state.iteration)`.
pub fn train_step(
    state: &mut TrainState,
    pool: &RayPool,
    cfg: &RunConfig,
    workers: &Workers,
    ws: &mut StepWorkspace,
) -> Result<LossReport> {
    let it_seed = derive_seed(state.seed, state.iteration);
    let mut rng = stream_rng(it_seed, BATCH_STREAM);
    pool.sample_indices(cfg.raypool.rays_per_batch, &mut rng, &mut ws.indices)?;
    ws.batch.clear();
    ws.batch.extend(ws.indices.iter().map(|&i| pool.rays()[i]));
    let render_seed = derive_seed(it_seed, RENDER_TAG);
    render_batch_into(
        &state.field,
        &ws.batch,
        &cfg.render,
        render_seed,
        workers,
        &mut ws.renders,
    )?;
    let report = backward_with(
        &ws.renders,
        &ws.batch,
        &state.field,
        &cfg.loss,
        workers,
        &mut ws.backward,
        &mut ws.grads,
    )?;
    if !report.total.is_finite() || !ws.grads.is_finite() {
        return Err(non_finite(state.iteration, ws));
    }
    let adam = Adam {
        lr: cfg.trainer.learning_rate,
        beta1: cfg.trainer.beta1,
        beta2: cfg.trainer.beta2,
        eps: cfg.trainer.eps,
    };
    let t = state.iteration + 1;
    let nd = state.field.voxel_count();
    let (m_d, m_s) = state.m.split_at_mut(nd);
    let (v_d, v_s) = state.v.split_at_mut(nd);
    let (density, semantic) = state.field.params_mut();
    adam.step(t, density, &ws.grads.d_density, m_d, v_d);
    adam.step(t, semantic, &ws.grads.d_semantic, m_s, v_s);
    for buf in [&mut state.m[..], &mut state.v[..], density, semantic] {
        round_f32(buf);
    }
    if !density.iter().chain(semantic.iter()).all(|p| p.is_finite()) {
        return Err(non_finite(state.iteration, ws));
    }
    state.iteration = t;
    Ok(report)
}

fn non_finite(iteration: u64, ws: &StepWorkspace) -> Error {
    let mut rays: Vec<usize> = ws
        .renders
        .iter()
        .zip(&ws.batch)
        .zip(&ws.indices)
        .filter(|((r, ray), _)| {
            !r.depth_pix.is_finite()
                || !r.sem_pix.iter().all(|s| s.is_finite())
                || !seg_loss(&r.sem_pix, ray.sem_label as usize).is_finite()
        })
        .map(|(_, &i)| i)
        .collect();
    rays.sort_unstable();
    rays.dedup();
    Error::NonFinite { iteration, rays }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub loss: LossReport,
    #[serde(flatten)]
    pub eval: Option<EvalReport>,
}

/// Voxel metrics of the field's extracted occupancy against the dataset's
/// ground truth; the free class counts as empty.
pub fn evaluate(
    field: &SemanticDensityField,
    data: &Dataset,
    tau: f64,
) -> Result<Option<EvalReport>> {
    let Some(gt) = &data.gt else {
        return Ok(None);
    };
    let pred = extract_occupancy(field, tau).with_class_as_empty(data.free_class());
    voxel_miou(&pred, gt).map(Some)
}

/// Hooks called by [`fit_from`].
pub trait FitObserver {
    fn on_step(&mut self, _state: &TrainState, _report: &LossReport) -> Result<()> {
        Ok(())
    }
    fn on_eval(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl FitObserver for () {}

pub struct FitOutput {
    pub state: TrainState,
    pub losses: Vec<LossReport>,
    pub history: Vec<MetricsRecord>,
}

pub fn build_dataset_pool(data: &Dataset, cfg: &RunConfig) -> Result<RayPool> {
    let dynamic = cfg
        .raypool
        .dynamic_classes
        .clone()
        .unwrap_or_else(|| data.dynamic_classes());
    build_pool(
        &data.frames,
        data.current,
        &data.cameras,
        &data.grid.bounds(),
        data.num_classes(),
        &dynamic,
        &cfg.raypool,
    )
}

/// Trains a fresh field.
pub fn fit(
    data: &Dataset,
    cfg: &RunConfig,
    workers: &Workers,
    observer: &mut dyn FitObserver,
) -> Result<FitOutput> {
    let state = TrainState::new(initial_field(data, cfg)?, cfg.trainer.seed);
    fit_from(state, data, cfg, workers, observer)
}

/// Continues training from `state` until `cfg.trainer.iterations`.
pub fn fit_from(
    mut state: TrainState,
    data: &Dataset,
    cfg: &RunConfig,
    workers: &Workers,
    observer: &mut dyn FitObserver,
) -> Result<FitOutput> {
    cfg.validate()?;
    state.validate()?;
    if state.field.dims() != data.grid.dims || state.field.num_classes() != data.num_classes() {
        return Err(Error::invalid(
            "field does not match the dataset grid or classes",
        ));
    }
    let mut losses = Vec::new();
    let mut history = Vec::new();
    if state.iteration >= cfg.trainer.iterations {
        return Ok(FitOutput {
            state,
            losses,
            history,
        });
    }
    let pool = build_dataset_pool(data, cfg)?;
    let mut ws = StepWorkspace::new(&state.field, cfg);
    let tc = &cfg.trainer;
    let mut last = LossReport::default();
    while state.iteration < tc.iterations {
        last = train_step(&mut state, &pool, cfg, workers, &mut ws)?;
        losses.push(last);
        observer.on_step(&state, &last)?;
        let it = state.iteration;
        if tc.eval_every > 0 && it.is_multiple_of(tc.eval_every) && it < tc.iterations {
            let record = MetricsRecord {
                iteration: it,
                loss: last,
                eval: evaluate(&state.field, data, cfg.field.tau)?,
            };
            observer.on_eval(&record)?;
            history.push(record);
        }
        if tc.checkpoint_every > 0 && it.is_multiple_of(tc.checkpoint_every) {
            observer.on_checkpoint(&state)?;
        }
    }
    let record = MetricsRecord {
        iteration: state.iteration,
        loss: last,
        eval: evaluate(&state.field, data, cfg.field.tau)?,
    };
    observer.on_eval(&record)?;
    history.push(record);
    Ok(FitOutput {
        state,
        losses,
        history,
    })
}
