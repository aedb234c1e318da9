//! Explicit semantic density field: per-voxel density and class logits on a
//! dense grid, differentiable point queries, and occupancy extraction.
//!
//! Voxel `(x, y, z)` is stored at `(x·W + y)·D + z`; semantic logits are
//! stored class-fastest. Voxel centers sit at `origin + (i + ½)·voxel_size`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

/// Grid resolution `(H, W, D)` along x, y and z.
pub type Dims = [usize; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    Trilinear,
    /// Nearest voxel, mainly for debugging.
    Nearest,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The eight voxels supporting a query point and their interpolation weights.
/// Corner `c` offsets x by bit 0, y by bit 1 and z by bit 2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corners {
    pub index: [u32; 8],
    pub weight: [f64; 8],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldQuery {
    pub sigma: f64,
    /// Interpolated pre-activation density.
    pub density_pre: f64,
    pub sem_logits: Vec<f64>,
    pub interpolation: Corners,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticDensityField {
    dims: Dims,
    num_classes: usize,
    origin: Vec3,
    voxel_size: f64,
    density: Vec<f64>,
    semantic: Vec<f64>,
}

pub fn init_field(
    dims: Dims,
    num_classes: usize,
    origin: Vec3,
    voxel_size: f64,
    density_init: f64,
    logit_init: f64,
) -> Result<SemanticDensityField> {
    let n = voxel_count(dims)?;
    SemanticDensityField::from_params(
        dims,
        num_classes,
        origin,
        voxel_size,
        vec![density_init; n],
        vec![logit_init; n * num_classes],
    )
}

fn voxel_count(dims: Dims) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::invalid(format!(
            "grid dims must be ≥ 1, got {dims:?}"
        )));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= u32::MAX as usize)
        .ok_or_else(|| Error::invalid(format!("grid dims {dims:?} overflow")))
}

impl SemanticDensityField {
    pub fn from_params(
        dims: Dims,
        num_classes: usize,
        origin: Vec3,
        voxel_size: f64,
        density: Vec<f64>,
        semantic: Vec<f64>,
    ) -> Result<Self> {
        let n = voxel_count(dims)?;
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid(format!(
                "voxel_size must be positive, got {voxel_size}"
            )));
        }
        if !(2..=255).contains(&num_classes) {
            return Err(Error::invalid(format!(
                "num_classes must lie in [2, 255], got {num_classes}"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("field origin must be finite"));
        }
        if density.len() != n || semantic.len() != n * num_classes {
            return Err(Error::invalid(
                "parameter buffer sizes do not match the grid",
            ));
        }
        Ok(SemanticDensityField {
            dims,
            num_classes,
            origin,
            voxel_size,
            density,
            semantic,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn voxel_count(&self) -> usize {
        self.density.len()
    }

    pub fn param_count(&self) -> usize {
        self.density.len() + self.semantic.len()
    }

    pub fn density_params(&self) -> &[f64] {
        &self.density
    }

    pub fn density_params_mut(&mut self) -> &mut [f64] {
        &mut self.density
    }

    pub fn semantic_params(&self) -> &[f64] {
        &self.semantic
    }

    pub fn semantic_params_mut(&mut self) -> &mut [f64] {
        &mut self.semantic
    }

    /// Both parameter arrays mutably at once.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.density, &mut self.semantic)
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.voxel_size;
        Aabb {
            min: self.origin,
            max: self.origin + ext,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let z = index % self.dims[2];
        let y = (index / self.dims[2]) % self.dims[1];
        let x = index / (self.dims[2] * self.dims[1]);
        [x, y, z]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.voxel_size
    }

    pub fn sigma_at_voxel(&self, index: usize) -> f64 {
        softplus(self.density[index])
    }

    pub fn logits_at_voxel(&self, index: usize) -> &[f64] {
        &self.semantic[index * self.num_classes..(index + 1) * self.num_classes]
    }

    /// Interpolation support for `p`. Points outside the box are rejected.
    pub fn corners(&self, p: &Vec3, mode: QueryMode) -> Result<Corners> {
        let tol = 1e-9 * (1.0 + p.abs().max());
        if !self.bounds().contains(p, tol) {
            return Err(Error::OutOfBounds {
                x: p.x,
                y: p.y,
                z: p.z,
            });
        }
        let local = (p - self.origin) / self.voxel_size;
        match mode {
            QueryMode::Nearest => {
                let v: [usize; 3] = std::array::from_fn(|a| {
                    (local[a].floor().max(0.0) as usize).min(self.dims[a] - 1)
                });
                let i = self.index(v[0], v[1], v[2]) as u32;
                let mut weight = [0.0; 8];
                weight[0] = 1.0;
                Ok(Corners {
                    index: [i; 8],
                    weight,
                })
            }
            QueryMode::Trilinear => {
                let mut lo = [0usize; 3];
                let mut hi = [0usize; 3];
                let mut frac = [0.0f64; 3];
                for a in 0..3 {
                    let n = self.dims[a];
                    let u = (local[a] - 0.5).clamp(0.0, (n - 1) as f64);
                    let i0 = (u.floor() as usize).min(n.saturating_sub(2));
                    lo[a] = i0;
                    hi[a] = (i0 + 1).min(n - 1);
                    frac[a] = if hi[a] == i0 { 0.0 } else { u - i0 as f64 };
                }
                let mut index = [0u32; 8];
                let mut weight = [0.0; 8];
                for c in 0..8 {
                    let pick = |a: usize| {
                        if c >> a & 1 == 1 {
                            (hi[a], frac[a])
                        } else {
                            (lo[a], 1.0 - frac[a])
                        }
                    };
                    let (x, wx) = pick(0);
                    let (y, wy) = pick(1);
                    let (z, wz) = pick(2);
                    index[c] = self.index(x, y, z) as u32;
                    weight[c] = wx * wy * wz;
                }
                Ok(Corners { index, weight })
            }
        }
    }

    #[inline]
    pub fn interp_density(&self, c: &Corners) -> f64 {
        let mut a = 0.0;
        for k in 0..8 {
            a += c.weight[k] * self.density[c.index[k] as usize];
        }
        a
    }

    /// Writes the interpolated logits into `out` (length `num_classes`).
    #[inline]
    pub fn interp_logits(&self, c: &Corners, out: &mut [f64]) {
        let l = self.num_classes;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..8 {
            let w = c.weight[k];
            if w == 0.0 {
                continue;
            }
            let base = c.index[k] as usize * l;
            for (o, s) in out.iter_mut().zip(&self.semantic[base..base + l]) {
                *o += w * s;
            }
        }
    }

    pub fn query(&self, p: &Vec3) -> Result<FieldQuery> {
        self.query_with(p, QueryMode::Trilinear)
    }

    pub fn query_with(&self, p: &Vec3, mode: QueryMode) -> Result<FieldQuery> {
        let interpolation = self.corners(p, mode)?;
        let density_pre = self.interp_density(&interpolation);
        let mut sem_logits = vec![0.0; self.num_classes];
        self.interp_logits(&interpolation, &mut sem_logits);
        Ok(FieldQuery {
            sigma: softplus(density_pre),
            density_pre,
            sem_logits,
            interpolation,
        })
    }
}

/// Discrete label volume; label `num_classes` marks an empty voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyGrid {
    dims: Dims,
    num_classes: usize,
    labels: Vec<u8>,
}

impl OccupancyGrid {
    pub fn new(dims: Dims, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        let n = voxel_count(dims)?;
        if num_classes > 255 {
            return Err(Error::invalid("at most 255 classes fit an 8-bit label"));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} labels, got {}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} exceeds the empty label {num_classes}"
            )));
        }
        Ok(OccupancyGrid {
            dims,
            num_classes,
            labels,
        })
    }

    pub fn empty(dims: Dims, num_classes: usize) -> Result<Self> {
        let n = voxel_count(dims)?;
        Self::new(dims, num_classes, vec![num_classes as u8; n])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn empty_label(&self) -> u8 {
        self.num_classes as u8
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.index(x, y, z)]
    }

    pub fn is_occupied(&self, index: usize) -> bool {
        self.labels[index] != self.empty_label()
    }

    pub fn occupied_count(&self) -> usize {
        let e = self.empty_label();
        self.labels.iter().filter(|&&l| l != e).count()
    }

    /// Relabels every voxel of `class` as empty (used to drop the free-space
    /// class from a prediction before scoring it).
    pub fn with_class_as_empty(mut self, class: u8) -> Self {
        let e = self.empty_label();
        for l in &mut self.labels {
            if *l == class {
                *l = e;
            }
        }
        self
    }
}

/// Thresholds density at voxel centers and labels occupied voxels by argmax.
pub fn extract_occupancy(field: &SemanticDensityField, tau: f64) -> OccupancyGrid {
    let empty = field.num_classes() as u8;
    let labels = (0..field.voxel_count())
        .map(|i| {
            if field.sigma_at_voxel(i) >= tau {
                argmax(field.logits_at_voxel(i)) as u8
            } else {
                empty
            }
        })
        .collect();
    OccupancyGrid {
        dims: field.dims(),
        num_classes: field.num_classes(),
        labels,
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_1d(params: &[f64]) -> SemanticDensityField {
        let mut f = init_field([params.len(), 1, 1], 2, Vec3::zeros(), 1.0, 0.0, 0.0).unwrap();
        f.density_params_mut().copy_from_slice(params);
        f
    }

    #[test]
    fn softplus_reference_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(1.0) - 1.313_261_687_518_222_8).abs() < 1e-15);
        assert!((softplus(-5.0) - 0.006_715_348_489_118_068).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn voxel_center_query_is_exact() {
        let f = field_1d(&[0.0, 2.0, -1.0]);
        let q = f.query(&Vec3::new(0.5, 0.5, 0.5)).unwrap();
        assert!((q.sigma - std::f64::consts::LN_2).abs() < 1e-15);
        let q = f.query(&Vec3::new(2.5, 0.5, 0.5)).unwrap();
        assert_eq!(q.density_pre, -1.0);
    }

    #[test]
    fn midpoint_between_centers_interpolates() {
        let f = field_1d(&[0.0, 2.0]);
        let q = f.query(&Vec3::new(1.0, 0.5, 0.5)).unwrap();
        assert!((q.density_pre - 1.0).abs() < 1e-15);
        assert!((q.sigma - 1.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn constant_field_queries_constant() {
        let f = init_field([3, 4, 2], 3, Vec3::new(-1.0, 0.0, 2.0), 0.5, 1.7, 0.0).unwrap();
        for p in [
            Vec3::new(-0.9, 0.1, 2.1),
            Vec3::new(0.3, 1.2, 2.6),
            Vec3::new(0.5, 2.0, 3.0),
        ] {
            let q = f.query(&p).unwrap();
            assert!((q.sigma - softplus(1.7)).abs() < 1e-12);
            let s: f64 = q.interpolation.weight.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_query_rejected() {
        let f = field_1d(&[0.0, 0.0]);
        assert!(matches!(
            f.query(&Vec3::new(2.5, 0.5, 0.5)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(f.query(&Vec3::new(2.0, 1.0, 1.0)).is_ok());
    }

    #[test]
    fn nearest_mode_is_one_hot() {
        let f = field_1d(&[0.0, 4.0]);
        let q = f
            .query_with(&Vec3::new(1.2, 0.5, 0.5), QueryMode::Nearest)
            .unwrap();
        assert_eq!(q.density_pre, 4.0);
    }

    #[test]
    fn init_counts_and_validation() {
        let f = init_field([2, 2, 2], 3, Vec3::zeros(), 1.0, -5.0, 0.0).unwrap();
        assert_eq!(f.density_params().len(), 8);
        assert_eq!(f.semantic_params().len(), 24);
        assert!((f.sigma_at_voxel(0) - 0.0067153).abs() < 1e-6);
        assert!(init_field([2, 2, 2], 3, Vec3::zeros(), 0.0, 0.0, 0.0).is_err());
        assert!(init_field([2, 0, 2], 3, Vec3::zeros(), 1.0, 0.0, 0.0).is_err());
        assert!(init_field([2, 2, 2], 1, Vec3::zeros(), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn threshold_and_argmax() {
        let mut f = init_field([2, 1, 1], 3, Vec3::zeros(), 1.0, 0.0, 0.0).unwrap();
        // softplus⁻¹(σ) = ln(e^σ − 1)
        let inv = |s: f64| s.exp_m1().ln();
        f.density_params_mut()
            .copy_from_slice(&[inv(0.05), inv(0.5)]);
        f.semantic_params_mut()[3..6].copy_from_slice(&[0.1, 3.0, -1.0]);
        let occ = extract_occupancy(&f, 0.1);
        assert_eq!(occ.labels(), &[3, 1]);
    }

    #[test]
    fn zero_threshold_leaves_nothing_empty() {
        let f = init_field([3, 3, 3], 4, Vec3::zeros(), 1.0, -700.0, 0.0).unwrap();
        assert_eq!(extract_occupancy(&f, 0.0).occupied_count(), 27);
    }

    #[test]
    fn coords_round_trip() {
        let f = init_field([3, 4, 5], 2, Vec3::zeros(), 1.0, 0.0, 0.0).unwrap();
        for i in 0..f.voxel_count() {
            let [x, y, z] = f.coords(i);
            assert_eq!(f.index(x, y, z), i);
        }
    }
}
