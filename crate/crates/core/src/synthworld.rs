//! Procedural ground truth: semantic occupancy grids with static and moving
//! objects, a multi-camera ego trajectory, and exact per-pixel labels by voxel
//! traversal.
//!
//! The world frame is the ego frame of the current frame. Cameras follow the
//! usual optical convention (x right, y down, z forward); mounting poses map
//! camera coordinates into the ego frame (x forward, y left, z up).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grid_intersect, pixel_ray, Aabb, Mat3, Pinhole, Pose, Ray, Vec3};
use crate::parallel::Workers;
use crate::rng::{stream_rng, StreamRng};
use crate::sdf::{Dims, OccupancyGrid, SemanticDensityField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: Dims,
    pub voxel_size: f64,
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.origin)
    }

    pub fn bounds(&self) -> Aabb {
        let o = self.origin();
        let size = Vec3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.voxel_size;
        Aabb {
            min: o,
            max: o + size,
        }
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin() + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.voxel_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid("grid dims must be positive"));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::invalid("voxel_size must be positive"));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInfo {
    pub name: String,
    #[serde(default)]
    pub dynamic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Half-open box `min ≤ p < max`.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder over `z_min ≤ z < z_max`.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    /// Everything below `height`.
    Ground { height: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: u8,
    pub shape: Shape,
    /// Displacement per frame, in meters.
    #[serde(default)]
    pub velocity: [f64; 3],
}

impl ObjectSpec {
    fn contains(&self, p: &Vec3, shift: &Vec3) -> bool {
        let q = p - shift;
        match &self.shape {
            Shape::Box { min, max } => (0..3).all(|i| q[i] >= min[i] && q[i] < max[i]),
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let (dx, dy) = (q.x - center[0], q.y - center[1]);
                dx * dx + dy * dy < radius * radius && q.z >= *z_min && q.z < *z_max
            }
            Shape::Ground { height } => q.z < *height,
        }
    }

    /// Axis-aligned bounds of the shape (unbounded axes are infinite).
    fn extent(&self, shift: &Vec3) -> ([f64; 3], [f64; 3]) {
        let (lo, hi) = match &self.shape {
            Shape::Box { min, max } => (*min, *max),
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => (
                [center[0] - radius, center[1] - radius, *z_min],
                [center[0] + radius, center[1] + radius, *z_max],
            ),
            Shape::Ground { height } => (
                [f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
                [f64::INFINITY, f64::INFINITY, *height],
            ),
        };
        (
            [lo[0] + shift.x, lo[1] + shift.y, lo[2] + shift.z],
            [hi[0] + shift.x, hi[1] + shift.y, hi[2] + shift.z],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub frames: usize,
    pub current: usize,
    /// Ego displacement per frame, expressed in the world frame.
    pub velocity: [f64; 3],
    /// Ego yaw change per frame, in degrees.
    pub yaw_rate_deg: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            frames: 7,
            current: 3,
            velocity: [1.0, 0.0, 0.0],
            yaw_rate_deg: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub cameras: usize,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    /// Camera height above the ego origin.
    pub mount_height: f64,
    /// Yaw of camera 0 relative to the ego x axis.
    pub yaw_offset_deg: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            cameras: 6,
            width: 48,
            height: 32,
            hfov_deg: 70.0,
            mount_height: 1.93,
            yaw_offset_deg: 7.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Only the listed objects.
    #[default]
    Custom,
    /// Listed objects plus a seeded street: road, sidewalks, buildings, trees,
    /// traffic cones and moving cars.
    Ablation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub grid: GridSpec,
    /// Solid classes; the free-space class is appended after them.
    pub classes: Vec<ClassInfo>,
    pub objects: Vec<ObjectSpec>,
    pub trajectory: TrajectorySpec,
    pub rig: RigSpec,
    pub profile: Profile,
}

pub const ABLATION_CLASSES: [(&str, bool); 6] = [
    ("road", false),
    ("sidewalk", false),
    ("building", false),
    ("vegetation", false),
    ("car", true),
    ("traffic_cone", false),
];

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::ablation()
    }
}

impl SceneSpec {
    /// The default street scene: 64×64×16 voxels of 0.4 m, six cameras,
    /// seven frames.
    pub fn ablation() -> Self {
        SceneSpec {
            grid: GridSpec {
                dims: [64, 64, 16],
                voxel_size: 0.4,
                origin: [-12.8, -12.8, -0.4],
            },
            classes: ABLATION_CLASSES
                .iter()
                .map(|&(name, dynamic)| ClassInfo {
                    name: name.into(),
                    dynamic,
                })
                .collect(),
            objects: Vec::new(),
            trajectory: TrajectorySpec::default(),
            rig: RigSpec::default(),
            profile: Profile::Ablation,
        }
    }

    /// 2D label classes including the free class.
    pub fn num_classes(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.classes.is_empty() || self.classes.len() > 253 {
            return Err(Error::invalid("need between 1 and 253 solid classes"));
        }
        if self.profile == Profile::Ablation && self.classes.len() < ABLATION_CLASSES.len() {
            return Err(Error::invalid(format!(
                "the ablation profile needs {} classes",
                ABLATION_CLASSES.len()
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.class as usize >= self.classes.len() {
                return Err(Error::invalid(format!(
                    "object {i} has class {} but only {} classes exist",
                    o.class,
                    self.classes.len()
                )));
            }
        }
        let t = &self.trajectory;
        if t.frames == 0 || t.current >= t.frames {
            return Err(Error::invalid("trajectory needs current < frames"));
        }
        let r = &self.rig;
        if r.cameras == 0 || r.width == 0 || r.height == 0 {
            return Err(Error::invalid("rig needs at least one camera and pixel"));
        }
        if !(r.hfov_deg > 0.0 && r.hfov_deg < 180.0) {
            return Err(Error::invalid("hfov_deg must lie in (0, 180)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub intrinsics: Pinhole,
    /// Camera-to-ego transform.
    pub mount: Pose,
}

/// Ring of cameras at equal yaw spacing, looking horizontally.
pub fn camera_rig(rig: &RigSpec) -> Result<Vec<Camera>> {
    let intrinsics = Pinhole::from_hfov(rig.width, rig.height, rig.hfov_deg)?;
    // optical axes: camera z → ego x, camera x → ego −y, camera y → ego −z
    let base = Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    (0..rig.cameras)
        .map(|i| {
            let yaw = (rig.yaw_offset_deg + 360.0 * i as f64 / rig.cameras as f64).to_radians();
            let (s, c) = yaw.sin_cos();
            let rz = Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
            let mount = Pose::new(rz * base, Vec3::new(0.0, 0.0, rig.mount_height))?;
            Ok(Camera { intrinsics, mount })
        })
        .collect()
}

/// Ego pose of frame `f`; the current frame is the identity.
pub fn ego_pose(traj: &TrajectorySpec, f: usize) -> Pose {
    let k = f as f64 - traj.current as f64;
    let t = Vec3::from(traj.velocity) * k;
    Pose::from_axis_angle(Vec3::z(), (traj.yaw_rate_deg * k).to_radians(), t)
}

/// Semantic and depth labels of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    /// Row-major class ids; rays that hit nothing carry the free class.
    pub sem: Vec<u8>,
    /// Row-major distance along the ray; `None` exactly on free pixels.
    pub depth: Vec<Option<f64>>,
}

impl LabelImage {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn validate(&self, free_class: u8) -> Result<()> {
        let n = self.pixel_count();
        if self.sem.len() != n || self.depth.len() != n {
            return Err(Error::invalid("label image buffers do not match its size"));
        }
        for (i, (&s, d)) in self.sem.iter().zip(&self.depth).enumerate() {
            if (s == free_class) != d.is_none() {
                return Err(Error::invalid(format!(
                    "pixel {i}: depth must be present exactly on non-free pixels"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameGt {
    pub ego: Pose,
    pub grid: OccupancyGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub frames: Vec<FrameGt>,
    pub cameras: Vec<Camera>,
}

impl Scene {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn free_class(&self) -> u8 {
        self.spec.classes.len() as u8
    }

    pub fn current(&self) -> usize {
        self.spec.trajectory.current
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec.grid
    }

    pub fn is_dynamic(&self, class: u8) -> bool {
        self.spec
            .classes
            .get(class as usize)
            .is_some_and(|c| c.dynamic)
    }

    pub fn dynamic_classes(&self) -> Vec<u16> {
        (0..self.spec.classes.len() as u16)
            .filter(|&c| self.is_dynamic(c as u8))
            .collect()
    }
}

fn street_objects(spec: &SceneSpec, rng: &mut StreamRng) -> Vec<ObjectSpec> {
    const ROAD: u8 = 0;
    const SIDEWALK: u8 = 1;
    const BUILDING: u8 = 2;
    const VEGETATION: u8 = 3;
    const CAR: u8 = 4;
    const CONE: u8 = 5;
    let b = spec.grid.bounds();
    let (x0, x1) = (b.min.x, b.max.x);
    let ground = 0.0;
    let mut objs = vec![
        ObjectSpec {
            class: SIDEWALK,
            shape: Shape::Ground { height: ground },
            velocity: [0.0; 3],
        },
        ObjectSpec {
            class: ROAD,
            shape: Shape::Box {
                min: [x0, -4.8, b.min.z],
                max: [x1, 4.8, ground],
            },
            velocity: [0.0; 3],
        },
    ];
    let boxed = |class, min: [f64; 3], max: [f64; 3]| ObjectSpec {
        class,
        shape: Shape::Box { min, max },
        velocity: [0.0; 3],
    };
    // building rows on both sides, with gaps
    for side in [-1.0, 1.0] {
        let mut x = x0 + rng.gen_range(0.0..2.0);
        while x < x1 - 2.0 {
            let len = rng.gen_range(3.0..7.0);
            let depth = rng.gen_range(2.4..4.0);
            let height = rng.gen_range(2.8..5.6);
            let near = 8.0 + rng.gen_range(0.0..1.6);
            let (y_lo, y_hi) = if side > 0.0 {
                (near, near + depth)
            } else {
                (-near - depth, -near)
            };
            objs.push(boxed(
                BUILDING,
                [x, y_lo, ground],
                [(x + len).min(x1), y_hi, height],
            ));
            x += len + rng.gen_range(1.2..3.5);
        }
    }
    // trees on the sidewalks
    for side in [-1.0, 1.0] {
        let mut x = x0 + rng.gen_range(1.0..4.0);
        while x < x1 - 1.0 {
            let r = rng.gen_range(0.7..1.2);
            let y = side * rng.gen_range(5.8..6.8);
            let top = rng.gen_range(2.4..3.8);
            objs.push(ObjectSpec {
                class: VEGETATION,
                shape: Shape::Cylinder {
                    center: [x, y],
                    radius: r,
                    z_min: ground,
                    z_max: top,
                },
                velocity: [0.0; 3],
            });
            x += rng.gen_range(5.0..9.0);
        }
    }
    // a few single-column traffic cones near the curb
    for _ in 0..4 {
        let x = rng.gen_range(x0 + 2.0..x1 - 2.0);
        let y = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(3.4..4.4);
        objs.push(boxed(
            CONE,
            [x - 0.2, y - 0.2, ground],
            [x + 0.2, y + 0.2, 0.8],
        ));
    }
    // moving cars, one per lane direction plus a trailing one
    let lanes = [(-2.4, 1.0), (2.4, -1.0), (-2.4, 1.0)];
    for (i, &(y, dir)) in lanes.iter().enumerate() {
        let x = rng.gen_range(-8.0..8.0) + 6.0 * i as f64;
        let x = x0 + 3.0 + (x - x0 - 3.0).rem_euclid(x1 - x0 - 8.0);
        let speed = dir * rng.gen_range(0.6..1.4);
        objs.push(ObjectSpec {
            class: CAR,
            shape: Shape::Box {
                min: [x, y - 0.9, ground],
                max: [x + 4.2, y + 0.9, 1.6],
            },
            velocity: [speed, 0.0, 0.0],
        });
    }
    objs
}

/// Labels every voxel whose center lies inside an object, last object wins.
pub fn voxelize(
    grid: &GridSpec,
    objects: &[ObjectSpec],
    classes: usize,
    frame_delta: f64,
) -> Result<OccupancyGrid> {
    let mut occ = OccupancyGrid::empty(grid.dims, classes + 1)?;
    let [h, w, d] = grid.dims;
    let o = grid.origin();
    let vs = grid.voxel_size;
    // voxel index range whose centers can lie in [lo, hi)
    let range = |lo: f64, hi: f64, axis: usize, n: usize| -> (usize, usize) {
        let a = ((lo - o[axis]) / vs - 0.5).ceil().max(0.0);
        let b = ((hi - o[axis]) / vs - 0.5).floor() + 1.0;
        let b = b.min(n as f64);
        if !(a < b) {
            (0, 0)
        } else {
            (a as usize, b as usize)
        }
    };
    for obj in objects {
        let shift = Vec3::from(obj.velocity) * frame_delta;
        let (lo, hi) = obj.extent(&shift);
        let (xa, xb) = range(lo[0], hi[0], 0, h);
        let (ya, yb) = range(lo[1], hi[1], 1, w);
        let (za, zb) = range(lo[2], hi[2], 2, d);
        for x in xa..xb {
            for y in ya..yb {
                for z in za..zb {
                    if obj.contains(&grid.voxel_center(x, y, z), &shift) {
                        let i = occ.index(x, y, z);
                        occ.labels_mut()[i] = obj.class;
                    }
                }
            }
        }
    }
    Ok(occ)
}

/// Builds the scene for `seed`. Static voxels are shared by all frames;
/// objects with a velocity are re-voxelized per frame.
pub fn gen_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 0x5CE7E);
    let mut objects = match spec.profile {
        Profile::Custom => Vec::new(),
        Profile::Ablation => street_objects(spec, &mut rng),
    };
    objects.extend(spec.objects.iter().cloned());
    let cameras = camera_rig(&spec.rig)?;
    let traj = &spec.trajectory;
    let frames = (0..traj.frames)
        .map(|f| {
            let delta = f as f64 - traj.current as f64;
            Ok(FrameGt {
                ego: ego_pose(traj, f),
                grid: voxelize(&spec.grid, &objects, spec.classes.len(), delta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        spec: spec.clone(),
        frames,
        cameras,
    })
}

/// First occupied voxel along `ray` (voxel traversal). Returns the label and
/// the entry distance.
pub fn raycast(grid: &GridSpec, occ: &OccupancyGrid, ray: &Ray) -> Option<(u8, f64)> {
    let (t0, t1) = grid_intersect(ray, &grid.bounds())?;
    let o = grid.origin();
    let vs = grid.voxel_size;
    let p = ray.at(t0);
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let n = grid.dims[a] as i64;
        let u = (p[a] - o[a]) / vs;
        idx[a] = (u.floor() as i64).clamp(0, n - 1);
        let d = ray.direction[a];
        if d > 0.0 {
            step[a] = 1;
            let boundary = o[a] + (idx[a] + 1) as f64 * vs;
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = vs / d;
        } else if d < 0.0 {
            step[a] = -1;
            let boundary = o[a] + idx[a] as f64 * vs;
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = -vs / d;
        }
    }
    let empty = occ.empty_label();
    let mut t_entry = t0;
    loop {
        let label = occ.get(idx[0] as usize, idx[1] as usize, idx[2] as usize);
        if label != empty {
            return Some((label, t_entry));
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t_entry = t_max[a];
        if t_entry >= t1 {
            return None;
        }
        idx[a] += step[a];
        if idx[a] < 0 || idx[a] >= grid.dims[a] as i64 {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}

/// World-frame pose of camera `cam` at frame `frame`.
pub fn camera_pose(scene: &Scene, frame: usize, cam: usize) -> Result<Pose> {
    let f = scene
        .frames
        .get(frame)
        .ok_or(Error::MissingFrame(frame as i64))?;
    let c = scene
        .cameras
        .get(cam)
        .ok_or_else(|| Error::invalid(format!("no camera {cam}")))?;
    Ok(f.ego.compose(&c.mount))
}

pub fn raycast_labels(scene: &Scene, frame: usize, cam: usize) -> Result<LabelImage> {
    let pose = camera_pose(scene, frame, cam)?;
    let intr = &scene.cameras[cam].intrinsics;
    let occ = &scene.frames[frame].grid;
    let free = scene.free_class();
    let n = intr.pixel_count();
    let mut sem = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    for v in 0..intr.height {
        for u in 0..intr.width {
            let ray = pixel_ray(intr, &pose, u, v)?;
            match raycast(&scene.spec.grid, occ, &ray) {
                Some((label, t)) => {
                    sem.push(label);
                    depth.push(Some(t));
                }
                None => {
                    sem.push(free);
                    depth.push(None);
                }
            }
        }
    }
    Ok(LabelImage {
        width: intr.width,
        height: intr.height,
        sem,
        depth,
    })
}

/// Labels of one frame for every camera.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    pub ego: Pose,
    pub labels: Vec<LabelImage>,
}

/// Everything training needs: geometry, cameras, per-frame labels, and the
/// current frame's ground-truth grid when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub classes: Vec<ClassInfo>,
    pub cameras: Vec<Camera>,
    pub frames: Vec<FrameData>,
    pub current: usize,
    pub gt: Option<OccupancyGrid>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn free_class(&self) -> u8 {
        self.classes.len() as u8
    }

    pub fn dynamic_classes(&self) -> Vec<u16> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.dynamic)
            .map(|(i, _)| i as u16)
            .collect()
    }
}

/// Raycasts every frame and camera.
pub fn render_dataset(scene: &Scene, workers: &Workers) -> Result<Dataset> {
    let cams = scene.cameras.len();
    let images = workers.map_range(scene.frames.len() * cams, |i| {
        raycast_labels(scene, i / cams, i % cams)
    });
    let mut images = images.into_iter();
    let mut frames = Vec::with_capacity(scene.frames.len());
    for f in &scene.frames {
        let labels = images.by_ref().take(cams).collect::<Result<Vec<_>>>()?;
        frames.push(FrameData { ego: f.ego, labels });
    }
    Ok(Dataset {
        grid: scene.spec.grid.clone(),
        classes: scene.spec.classes.clone(),
        cameras: scene.cameras.clone(),
        frames,
        current: scene.current(),
        gt: Some(scene.frames[scene.current()].grid.clone()),
    })
}

/// Converts a ground-truth grid into a near-binary field: occupied voxels get
/// density parameter `occupied` and a one-hot logit of 10 for their class,
/// empty voxels `empty` and zero logits.
pub fn saturated_field(
    grid: &GridSpec,
    occ: &OccupancyGrid,
    num_classes: usize,
    occupied: f64,
    empty: f64,
) -> Result<SemanticDensityField> {
    let n = occ.labels().len();
    let mut density = vec![empty; n];
    let mut semantic = vec![0.0; n * num_classes];
    for (i, &label) in occ.labels().iter().enumerate() {
        if occ.is_occupied(i) {
            if label as usize >= num_classes {
                return Err(Error::invalid(format!(
                    "label {label} needs more than {num_classes} classes"
                )));
            }
            density[i] = occupied;
            semantic[i * num_classes + label as usize] = 10.0;
        }
    }
    SemanticDensityField::from_params(
        grid.dims,
        num_classes,
        grid.origin(),
        grid.voxel_size,
        density,
        semantic,
    )
}
