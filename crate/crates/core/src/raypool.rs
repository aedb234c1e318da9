//! Multi-frame ray ground truth: current-frame rays plus auxiliary rays from
//! adjacent frames, per-ray sampling weights, and weighted batch draws.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grid_intersect, pixel_ray, transform_ray, Aabb, Ray};
use crate::synthworld::{Camera, FrameData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Adjacent frames used for auxiliary rays, half before and half after.
    pub m_aux: usize,
    pub rays_per_batch: usize,
    pub lambda_s: f64,
    pub lambda_dyn: f64,
    pub lambda_adj: f64,
    pub w_max: f64,
    /// Dynamic class ids; `None` takes them from the dataset's class table.
    pub dynamic_classes: Option<Vec<u16>>,
    pub with_replacement: bool,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            m_aux: 6,
            rays_per_batch: 4096,
            lambda_s: 0.5,
            lambda_dyn: 0.1,
            lambda_adj: 0.7,
            w_max: 100.0,
            dynamic_classes: None,
            with_replacement: true,
        }
    }
}

impl PoolConfig {
    /// Same rays, all weights 1.
    pub fn uniform(&self) -> PoolConfig {
        PoolConfig {
            lambda_s: 0.0,
            lambda_dyn: 1.0,
            lambda_adj: 1.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.m_aux.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "m_aux must be even, got {}",
                self.m_aux
            )));
        }
        if self.rays_per_batch == 0 {
            return Err(Error::invalid("rays_per_batch must be at least 1"));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return Err(Error::invalid("lambda_s must be nonnegative"));
        }
        if !(0.0 < self.lambda_dyn && self.lambda_dyn <= self.lambda_adj && self.lambda_adj <= 1.0)
        {
            return Err(Error::invalid("need 0 < lambda_dyn ≤ lambda_adj ≤ 1"));
        }
        if !(self.w_max >= 1.0) {
            return Err(Error::invalid("w_max must be at least 1"));
        }
        Ok(())
    }
}

/// Frame offsets visited when building a pool: the current frame first, then
/// `−m/2 … −1, 1 … m/2`.
pub fn frame_offsets(m_aux: usize) -> Vec<i32> {
    let half = (m_aux / 2) as i32;
    std::iter::once(0)
        .chain((-half..0).chain(1..=half))
        .collect()
}

#[derive(Clone, Debug)]
pub struct RayPool {
    rays: Vec<Ray>,
    class_counts: Vec<usize>,
    weights: Vec<f64>,
    dynamic: Vec<bool>,
    config: PoolConfig,
    sampler: Option<WeightedIndex<f64>>,
}

/// Generates current-frame and auxiliary rays. Auxiliary rays are built in
/// their own frame and mapped into the current frame; every ray is clipped to
/// `bounds` and misses are dropped.
pub fn build_pool(
    frames: &[FrameData],
    current: usize,
    cameras: &[Camera],
    bounds: &Aabb,
    num_classes: usize,
    dynamic_classes: &[u16],
    cfg: &PoolConfig,
) -> Result<RayPool> {
    cfg.validate()?;
    let cur = frames
        .get(current)
        .ok_or(Error::MissingFrame(current as i64))?;
    let mut rays = Vec::new();
    for offset in frame_offsets(cfg.m_aux) {
        let index = current as i64 + offset as i64;
        let frame = usize::try_from(index)
            .ok()
            .and_then(|i| frames.get(i))
            .ok_or(Error::MissingFrame(index))?;
        if frame.labels.len() != cameras.len() {
            return Err(Error::invalid(format!(
                "frame {index} has {} label images for {} cameras",
                frame.labels.len(),
                cameras.len()
            )));
        }
        for (cam, labels) in cameras.iter().zip(&frame.labels) {
            let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
            if labels.width != w || labels.height != h {
                return Err(Error::invalid(format!(
                    "frame {index}: label image is {}x{}, camera is {w}x{h}",
                    labels.width, labels.height
                )));
            }
            for v in 0..h {
                for u in 0..w {
                    let p = (v * w + u) as usize;
                    let local = pixel_ray(&cam.intrinsics, &cam.mount, u, v)?;
                    let mut ray = transform_ray(&local, &frame.ego, &cur.ego);
                    let Some((t0, t1)) = grid_intersect(&ray, bounds) else {
                        continue;
                    };
                    let label = labels.sem[p] as usize;
                    if label >= num_classes {
                        return Err(Error::invalid(format!(
                            "frame {index}: pixel {p} has label {label} ≥ {num_classes}"
                        )));
                    }
                    ray.t_near = t0;
                    ray.t_far = t1;
                    ray.frame_offset = offset;
                    ray.sem_label = label as u16;
                    ray.depth_label = labels.depth[p];
                    rays.push(ray);
                }
            }
        }
    }
    RayPool::new(rays, num_classes, dynamic_classes, cfg.clone())
}

impl RayPool {
    /// Wraps labelled rays, counting classes and computing `W = W_b·W_t`.
    pub fn new(
        rays: Vec<Ray>,
        num_classes: usize,
        dynamic_classes: &[u16],
        config: PoolConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut class_counts = vec![0usize; num_classes];
        for (i, r) in rays.iter().enumerate() {
            let c = class_counts.get_mut(r.sem_label as usize).ok_or_else(|| {
                Error::invalid(format!("ray {i} has label {} ≥ {num_classes}", r.sem_label))
            })?;
            *c += 1;
        }
        let mut dynamic = vec![false; num_classes];
        for &c in dynamic_classes {
            if let Some(d) = dynamic.get_mut(c as usize) {
                *d = true;
            }
        }
        let mut pool = RayPool {
            rays,
            class_counts,
            weights: Vec::new(),
            dynamic,
            config,
            sampler: None,
        };
        pool.weights = pool
            .rays
            .iter()
            .map(|r| pool.balance_weight(r) * pool.temporal_weight(r))
            .collect();
        for (r, &w) in pool.rays.iter_mut().zip(&pool.weights) {
            r.weight = w;
        }
        pool.rebuild_sampler();
        Ok(pool)
    }

    fn rebuild_sampler(&mut self) {
        self.sampler = WeightedIndex::new(&self.weights).ok();
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn rays(&self) -> &[Ray] {
        &self.rays
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    /// `exp(λ_s·(max(M)/M_c − 1))` clamped to `[1, w_max]`.
    pub fn balance_weight(&self, ray: &Ray) -> f64 {
        let max = self.class_counts.iter().copied().max().unwrap_or(0) as f64;
        let n = self.class_counts[ray.sem_label as usize].max(1) as f64;
        (self.config.lambda_s * (max / n - 1.0))
            .exp()
            .clamp(1.0, self.config.w_max)
    }

    /// 1 for current-frame rays; `λ_dyn` or `λ_adj` for auxiliary rays of
    /// dynamic or static classes.
    pub fn temporal_weight(&self, ray: &Ray) -> f64 {
        temporal_weight(ray, self.dynamic[ray.sem_label as usize], &self.config)
    }

    /// Overrides one ray's weight (zero excludes it from sampling).
    pub fn set_weight(&mut self, index: usize, weight: f64) -> Result<()> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid("ray weights must be finite and nonnegative"));
        }
        let slot = self
            .weights
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("no ray {index}")))?;
        *slot = weight;
        self.rays[index].weight = weight;
        self.rebuild_sampler();
        Ok(())
    }

    /// Draws `n` ray indices with probability proportional to the weights.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        out.clear();
        let Some(sampler) = &self.sampler else {
            return Err(Error::invalid("ray pool has no ray with positive weight"));
        };
        if self.config.with_replacement {
            out.extend((0..n).map(|_| sampler.sample(rng)));
        } else {
            let positive = self.weights.iter().filter(|&&w| w > 0.0).count();
            if n > positive {
                return Err(Error::invalid(format!(
                    "cannot draw {n} distinct rays from {positive} with positive weight"
                )));
            }
            let picked = rand::seq::index::sample_weighted(rng, self.len(), |i| self.weights[i], n)
                .map_err(|e| Error::invalid(format!("weighted sampling failed: {e}")))?;
            out.extend(picked.iter());
        }
        Ok(())
    }

    /// Draws a batch of `n` rays.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Ray>> {
        let mut idx = Vec::with_capacity(n);
        self.sample_indices(n, rng, &mut idx)?;
        Ok(idx.into_iter().map(|i| self.rays[i]).collect())
    }
}

pub fn temporal_weight(ray: &Ray, dynamic: bool, cfg: &PoolConfig) -> f64 {
    if ray.frame_offset == 0 {
        1.0
    } else if dynamic {
        cfg.lambda_dyn
    } else {
        cfg.lambda_adj
    }
}
