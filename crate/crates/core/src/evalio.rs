//! Metrics (voxel IoU, rendered label accuracy, depth error) and the binary
//! and netpbm file formats.
//!
//! Layouts, all integers little-endian unless noted:
//! - `SDF1`: magic, u32 H, W, D, L, f64 origin[3], f64 voxel_size, H·W·D f32
//!   density parameters, H·W·D·L f32 semantic parameters.
//! - checkpoint: an `SDF1` block, then `MOM1`, f32 first moments and f32
//!   second moments (density then semantic), u64 iteration, u64 seed.
//! - `OCC1`: magic, u32 H, W, D, H·W·D u8 labels.
//! - PGM (`P5`, 8 or 16 bit, 16-bit samples big-endian) and PPM (`P6`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::geometry::pixel_ray;
use crate::geometry::Pose;
use crate::parallel::Workers;
use crate::renderer::{ray_rng, render_ray_sampled, RenderConfig, RenderOutput};
use crate::sdf::{argmax, OccupancyGrid, SemanticDensityField};
use crate::synthworld::{Camera, ClassInfo, Dataset, FrameData, GridSpec, LabelImage, Scene};
use crate::trainer::TrainState;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OccupiedCounts {
    pub pred: usize,
    pub gt: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// IoU per class; `None` where the class is absent from both grids.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean over classes present in either grid (1 when both are empty).
    pub miou: f64,
    pub occupied_voxel_counts: OccupiedCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sem_pixel_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_abs_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_rmse: Option<f64>,
}

/// Per-class intersection over union between two label grids.
pub fn voxel_miou(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<EvalReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::invalid(format!(
            "grid dims differ: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::invalid(format!(
            "class counts differ: {} vs {}",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    let l = gt.num_classes();
    let mut inter = vec![0usize; l];
    let mut union = vec![0usize; l];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p as usize, g as usize);
        if p == g {
            if p < l {
                inter[p] += 1;
                union[p] += 1;
            }
        } else {
            if p < l {
                union[p] += 1;
            }
            if g < l {
                union[g] += 1;
            }
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..l)
        .map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(EvalReport {
        per_class_iou,
        miou,
        occupied_voxel_counts: OccupiedCounts {
            pred: pred.occupied_count(),
            gt: gt.occupied_count(),
        },
        ..EvalReport::default()
    })
}

/// Class predicted for a rendered ray: the free class below `opacity_min`,
/// otherwise the largest accumulated logit.
pub fn predicted_class(r: &RenderOutput, free_class: u8, opacity_min: f64) -> u8 {
    if r.opacity < opacity_min || r.sem_pix.is_empty() {
        free_class
    } else {
        argmax(&r.sem_pix) as u8
    }
}

/// Per-pixel prediction of one camera: class and raw rendered depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    pub sem: Vec<u8>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

/// Renders every pixel of camera `cam` at frame `frame` with deterministic
/// sampling. Rays are expressed in the current frame.
pub fn render_image(
    field: &SemanticDensityField,
    data: &Dataset,
    frame: usize,
    cam: usize,
    render_cfg: &RenderConfig,
    opacity_min: f64,
    workers: &Workers,
) -> Result<RenderedImage> {
    let f = data
        .frames
        .get(frame)
        .ok_or(Error::MissingFrame(frame as i64))?;
    let c = data
        .cameras
        .get(cam)
        .ok_or_else(|| Error::invalid(format!("no camera {cam}")))?;
    let cur = &data
        .frames
        .get(data.current)
        .ok_or(Error::MissingFrame(data.current as i64))?
        .ego;
    let pose = cur.inverse().compose(&f.ego).compose(&c.mount);
    let (w, h) = (c.intrinsics.width, c.intrinsics.height);
    let cfg = render_cfg.evaluation();
    let free = data.free_class();
    let pixels = workers.map_range((w * h) as usize, |p| -> Result<(u8, f64, f64)> {
        let ray = pixel_ray(&c.intrinsics, &pose, p as u32 % w, p as u32 / w)?;
        let mut out = RenderOutput::default();
        render_ray_sampled(field, &ray, &cfg, &mut ray_rng(0, p), &mut out)?;
        Ok((
            predicted_class(&out, free, opacity_min),
            out.depth_pix,
            out.opacity,
        ))
    });
    let mut img = RenderedImage {
        width: w,
        height: h,
        sem: Vec::with_capacity(pixels.len()),
        depth: Vec::with_capacity(pixels.len()),
        opacity: Vec::with_capacity(pixels.len()),
    };
    for px in pixels {
        let (s, d, o) = px?;
        img.sem.push(s);
        img.depth.push(d);
        img.opacity.push(o);
    }
    Ok(img)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderMetrics {
    pub pixels: usize,
    pub correct: usize,
    pub sem_pixel_accuracy: f64,
    pub depth_pixels: usize,
    pub depth_abs_rel: f64,
    pub depth_rmse: f64,
}

/// Accumulates label agreement and depth error of one rendered image.
pub fn compare_image(pred: &RenderedImage, gt: &LabelImage, m: &mut RenderMetrics) -> Result<()> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::invalid("rendered and label images differ in size"));
    }
    let (mut abs_rel, mut sq) = (
        m.depth_abs_rel * m.depth_pixels as f64,
        m.depth_rmse.powi(2) * m.depth_pixels as f64,
    );
    for i in 0..gt.sem.len() {
        m.pixels += 1;
        if pred.sem[i] == gt.sem[i] {
            m.correct += 1;
        }
        if let Some(d) = gt.depth[i] {
            if d > 0.0 {
                m.depth_pixels += 1;
                abs_rel += (pred.depth[i] - d).abs() / d;
                sq += (pred.depth[i] - d).powi(2);
            }
        }
    }
    m.sem_pixel_accuracy = m.correct as f64 / m.pixels.max(1) as f64;
    if m.depth_pixels > 0 {
        m.depth_abs_rel = abs_rel / m.depth_pixels as f64;
        m.depth_rmse = (sq / m.depth_pixels as f64).sqrt();
    }
    Ok(())
}

/// Renders all cameras of `frame` and compares them with the frame's labels.
pub fn render_eval(
    field: &SemanticDensityField,
    data: &Dataset,
    frame: usize,
    render_cfg: &RenderConfig,
    opacity_min: f64,
    workers: &Workers,
) -> Result<RenderMetrics> {
    let f = data
        .frames
        .get(frame)
        .ok_or(Error::MissingFrame(frame as i64))?;
    let mut m = RenderMetrics::default();
    for (cam, labels) in f.labels.iter().enumerate() {
        let img = render_image(field, data, frame, cam, render_cfg, opacity_min, workers)?;
        compare_image(&img, labels, &mut m)?;
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// binary formats

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, total: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| FormatError::DimOverflow("byte count".into()))?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated {
                expected: total.max(end),
                actual: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4, 4)?;
        if found != expected {
            return Err(FormatError::MagicMismatch {
                expected: String::from_utf8_lossy(expected).into(),
                found: String::from_utf8_lossy(found).into(),
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, 0)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, 0)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, 0)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, total: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n * 4, total)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            count => Err(FormatError::TrailingBytes { count }),
        }
    }
}

fn grid_len(dims: [u32; 3], per_voxel: usize) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(per_voxel, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n <= (u32::MAX as usize) * 256)
        .ok_or_else(|| FormatError::DimOverflow(format!("{dims:?} × {per_voxel}")))
}

fn push_f32s(out: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

/// Parameters are stored as f32.
pub fn encode_sdf(field: &SemanticDensityField) -> Vec<u8> {
    let mut out = Vec::with_capacity(52 + field.param_count() * 4);
    out.extend_from_slice(b"SDF1");
    for d in field.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(field.num_classes() as u32).to_le_bytes());
    for v in field.origin().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&field.voxel_size().to_le_bytes());
    push_f32s(&mut out, field.density_params());
    push_f32s(&mut out, field.semantic_params());
    out
}

fn read_sdf_block(r: &mut Reader) -> Result<SemanticDensityField> {
    r.magic(b"SDF1")?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let l = r.u32()?;
    let origin = [r.f64()?, r.f64()?, r.f64()?];
    let vs = r.f64()?;
    if dims.contains(&0) {
        return Err(FormatError::InvalidHeader(format!("zero grid dimension {dims:?}")).into());
    }
    if !(2..=255).contains(&l) {
        return Err(FormatError::InvalidHeader(format!("class count {l} outside [2, 255]")).into());
    }
    if !(vs > 0.0 && vs.is_finite()) || !origin.iter().all(|v| v.is_finite()) {
        return Err(FormatError::InvalidHeader(
            "non-finite origin or nonpositive voxel size".into(),
        )
        .into());
    }
    let n = grid_len(dims, 1)?;
    let ns = grid_len(dims, l as usize)?;
    let total = r.pos + 4 * (n + ns);
    let density = r.f32s(n, total)?;
    let semantic = r.f32s(ns, total)?;
    SemanticDensityField::from_params(
        dims.map(|d| d as usize),
        l as usize,
        origin.into(),
        vs,
        density,
        semantic,
    )
    .map_err(|e| FormatError::InvalidHeader(e.to_string()).into())
}

pub fn decode_sdf(bytes: &[u8]) -> Result<SemanticDensityField> {
    let mut r = Reader::new(bytes);
    let field = read_sdf_block(&mut r)?;
    r.finish()?;
    Ok(field)
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut out = encode_sdf(&state.field);
    out.extend_from_slice(b"MOM1");
    push_f32s(&mut out, &state.m);
    push_f32s(&mut out, &state.v);
    out.extend_from_slice(&state.iteration.to_le_bytes());
    out.extend_from_slice(&state.seed.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader::new(bytes);
    let field = read_sdf_block(&mut r)?;
    r.magic(b"MOM1")?;
    let n = field.param_count();
    let total = r.pos + 8 * n + 16;
    let m = r.f32s(n, total)?;
    let v = r.f32s(n, total)?;
    let iteration = r.u64()?;
    let seed = r.u64()?;
    r.finish()?;
    if v.iter().any(|&x| !(x >= 0.0)) {
        return Err(FormatError::InvalidHeader("negative second moment".into()).into());
    }
    Ok(TrainState {
        field,
        m,
        v,
        iteration,
        seed,
    })
}

pub fn encode_occ(grid: &OccupancyGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + grid.labels().len());
    out.extend_from_slice(b"OCC1");
    for d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(grid.labels());
    out
}

/// `num_classes` is not stored in the file; when absent the largest label
/// present is taken as the empty label.
pub fn decode_occ(bytes: &[u8], num_classes: Option<usize>) -> Result<OccupancyGrid> {
    let mut r = Reader::new(bytes);
    r.magic(b"OCC1")?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    if dims.contains(&0) {
        return Err(FormatError::InvalidHeader(format!("zero grid dimension {dims:?}")).into());
    }
    let n = grid_len(dims, 1)?;
    let labels = r.take(n, 16 + n)?.to_vec();
    r.finish()?;
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let l = match num_classes {
        Some(l) if max > l => {
            return Err(FormatError::LabelOutOfRange {
                label: max as u32,
                max: l as u32,
            }
            .into())
        }
        Some(l) => l,
        None => max,
    };
    OccupancyGrid::new(dims.map(|d| d as usize), l, labels)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()).into())
}

// ---------------------------------------------------------------------------
// netpbm

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: u32,
    pub height: u32,
    pub maxval: u16,
    pub data: Vec<u16>,
}

fn netpbm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(u32, u32, u32, usize), FormatError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(FormatError::MagicMismatch {
            expected: String::from_utf8_lossy(magic).into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for f in &mut fields {
        // whitespace and comments before each number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(FormatError::InvalidHeader("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *f = text.parse().map_err(|_| {
            FormatError::InvalidHeader(format!("bad header number at byte {start}"))
        })?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(FormatError::InvalidHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(FormatError::InvalidHeader(format!("empty image {w}x{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::InvalidHeader(format!(
            "maxval {maxval} outside [1, 65535]"
        )));
    }
    Ok((w, h, maxval, pos))
}

pub fn encode_pgm(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.data.iter().map(|&v| v as u8));
    } else {
        for &v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let (w, h, maxval, pos) = netpbm_header(bytes, b"P5")?;
    let n = (w as usize)
        .checked_mul(h as usize)
        .ok_or_else(|| FormatError::DimOverflow(format!("{w}x{h}")))?;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let expected = pos + n * bpp;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            count: bytes.len() - expected,
        }
        .into());
    }
    let body = &bytes[pos..];
    let data: Vec<u16> = if bpp == 1 {
        body.iter().map(|&b| b as u16).collect()
    } else {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(&bad) = data.iter().find(|&&v| v as u32 > maxval) {
        return Err(FormatError::LabelOutOfRange {
            label: bad as u32,
            max: maxval,
        }
        .into());
    }
    Ok(Pgm {
        width: w,
        height: h,
        maxval: maxval as u16,
        data,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ppm {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
}

pub fn encode_ppm(img: &Ppm) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Ppm> {
    let (w, h, maxval, pos) = netpbm_header(bytes, b"P6")?;
    if maxval != 255 {
        return Err(FormatError::InvalidHeader(format!(
            "only 8-bit PPM is supported, maxval {maxval}"
        ))
        .into());
    }
    let n = (w as usize)
        .checked_mul(h as usize)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| FormatError::DimOverflow(format!("{w}x{h}")))?;
    let expected = pos + n;
    if bytes.len() != expected {
        return Err(if bytes.len() < expected {
            FormatError::Truncated {
                expected,
                actual: bytes.len(),
            }
        } else {
            FormatError::TrailingBytes {
                count: bytes.len() - expected,
            }
        }
        .into());
    }
    Ok(Ppm {
        width: w,
        height: h,
        rgb: bytes[pos..].to_vec(),
    })
}

/// Fixed color per class id for semantic previews.
pub fn palette(class: u8) -> [u8; 3] {
    const COLORS: [[u8; 3]; 8] = [
        [128, 64, 128],
        [244, 35, 232],
        [70, 70, 70],
        [107, 142, 35],
        [0, 0, 142],
        [255, 120, 0],
        [135, 206, 235],
        [220, 220, 0],
    ];
    COLORS.get(class as usize).copied().unwrap_or_else(|| {
        let h = (class as u32).wrapping_mul(2_654_435_761);
        [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
    })
}

pub fn semantic_preview(width: u32, height: u32, sem: &[u8], free_class: u8) -> Ppm {
    let rgb = sem
        .iter()
        .flat_map(|&c| {
            if c == free_class {
                palette(6)
            } else {
                palette(c)
            }
        })
        .collect();
    Ppm { width, height, rgb }
}

/// Semantic labels as an 8-bit PGM and depth as a 16-bit PGM in millimeters
/// (0 marks free pixels).
pub fn label_pgms(img: &LabelImage) -> (Pgm, Pgm) {
    let sem = Pgm {
        width: img.width,
        height: img.height,
        maxval: 255,
        data: img.sem.iter().map(|&s| s as u16).collect(),
    };
    let depth = Pgm {
        width: img.width,
        height: img.height,
        maxval: 65535,
        data: img
            .depth
            .iter()
            .map(|d| match d {
                Some(m) => (m * 1000.0).round().clamp(1.0, 65535.0) as u16,
                None => 0,
            })
            .collect(),
    };
    (sem, depth)
}

pub fn label_image_from_pgms(sem: &Pgm, depth: &Pgm, free_class: u8) -> Result<LabelImage> {
    if sem.width != depth.width || sem.height != depth.height {
        return Err(Error::invalid("semantic and depth images differ in size"));
    }
    let img = LabelImage {
        width: sem.width,
        height: sem.height,
        sem: sem
            .data
            .iter()
            .map(|&s| u8::try_from(s).map_err(|_| Error::invalid(format!("label {s} exceeds 255"))))
            .collect::<Result<_>>()?,
        depth: depth
            .data
            .iter()
            .map(|&d| (d > 0).then(|| d as f64 / 1000.0))
            .collect(),
    };
    img.validate(free_class)?;
    Ok(img)
}

// ---------------------------------------------------------------------------
// file helpers

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { path: None, source } => Error::Format {
            path: Some(path.to_path_buf()),
            source,
        },
        other => other,
    })
}

pub fn load_sdf(path: &Path) -> Result<SemanticDensityField> {
    with_path(path, decode_sdf(&read_file(path)?))
}

pub fn save_sdf(path: &Path, field: &SemanticDensityField) -> Result<()> {
    write_file(path, &encode_sdf(field))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    with_path(path, decode_checkpoint(&read_file(path)?))
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    write_file(path, &encode_checkpoint(state))
}

pub fn load_occ(path: &Path, num_classes: Option<usize>) -> Result<OccupancyGrid> {
    with_path(path, decode_occ(&read_file(path)?, num_classes))
}

pub fn save_occ(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    write_file(path, &encode_occ(grid))
}

pub fn load_pgm(path: &Path) -> Result<Pgm> {
    with_path(path, decode_pgm(&read_file(path)?))
}

pub fn save_pgm(path: &Path, img: &Pgm) -> Result<()> {
    write_file(path, &encode_pgm(img))
}

pub fn save_ppm(path: &Path, img: &Ppm) -> Result<()> {
    write_file(path, &encode_ppm(img))
}

// ---------------------------------------------------------------------------
// dataset directories

/// Index of a dataset directory. Paths are relative to the directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub grid: GridSpec,
    pub classes: Vec<ClassInfo>,
    pub current: usize,
    pub cameras: Vec<Camera>,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub index: usize,
    pub ego: Pose,
    pub occ: PathBuf,
    pub labels: Vec<ManifestLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLabel {
    pub camera: usize,
    pub sem: PathBuf,
    pub depth: PathBuf,
    pub preview: PathBuf,
}

impl Manifest {
    pub fn label_pairs(&self) -> usize {
        self.frames.iter().map(|f| f.labels.len()).sum()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes per-frame OCC1 grids, label PGMs with PPM previews and
/// `manifest.json` into `dir`.
pub fn save_dataset(dir: &Path, scene: &Scene, data: &Dataset, seed: u64) -> Result<Manifest> {
    let free = data.free_class();
    let mut frames = Vec::with_capacity(data.frames.len());
    for (f, (frame, gt)) in data.frames.iter().zip(&scene.frames).enumerate() {
        let occ = PathBuf::from(format!("occ/frame_{f:03}.occ"));
        save_occ(&dir.join(&occ), &gt.grid)?;
        let mut labels = Vec::with_capacity(frame.labels.len());
        for (c, img) in frame.labels.iter().enumerate() {
            let stem = format!("labels/frame_{f:03}_cam_{c}");
            let entry = ManifestLabel {
                camera: c,
                sem: format!("{stem}_sem.pgm").into(),
                depth: format!("{stem}_depth.pgm").into(),
                preview: format!("{stem}_sem.ppm").into(),
            };
            let (sem, depth) = label_pgms(img);
            save_pgm(&dir.join(&entry.sem), &sem)?;
            save_pgm(&dir.join(&entry.depth), &depth)?;
            save_ppm(
                &dir.join(&entry.preview),
                &semantic_preview(img.width, img.height, &img.sem, free),
            )?;
            labels.push(entry);
        }
        frames.push(ManifestFrame {
            index: f,
            ego: frame.ego,
            occ,
            labels,
        });
    }
    let manifest = Manifest {
        seed,
        grid: data.grid.clone(),
        classes: data.classes.clone(),
        current: data.current,
        cameras: data.cameras.clone(),
        frames,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read_file(&path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Config {
        path: format!(
            "{}: line {} column {}",
            path.display(),
            e.line(),
            e.column()
        ),
        message: e.to_string(),
    })?;
    crate::config::from_value_with_path(value)
}

/// Loads a directory written by [`save_dataset`]. Depth comes back rounded
/// to millimeters; the ground truth is the current frame's grid.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = load_manifest(dir)?;
    m.grid.validate()?;
    let num_classes = m.classes.len() + 1;
    let free = m.classes.len() as u8;
    if m.current >= m.frames.len() {
        return Err(Error::MissingFrame(m.current as i64));
    }
    let mut frames = Vec::with_capacity(m.frames.len());
    for f in &m.frames {
        if f.labels.len() != m.cameras.len() {
            return Err(Error::invalid(format!(
                "frame {} lists {} label pairs for {} cameras",
                f.index,
                f.labels.len(),
                m.cameras.len()
            )));
        }
        let mut labels = Vec::with_capacity(f.labels.len());
        for (c, l) in f.labels.iter().enumerate() {
            if l.camera != c {
                return Err(Error::invalid(format!(
                    "frame {}: label pairs must be in camera order",
                    f.index
                )));
            }
            let sem = load_pgm(&dir.join(&l.sem))?;
            let depth = load_pgm(&dir.join(&l.depth))?;
            let img = label_image_from_pgms(&sem, &depth, free)?;
            let k = &m.cameras[c].intrinsics;
            if img.width != k.width || img.height != k.height {
                return Err(Error::invalid(format!(
                    "{}: size does not match camera {c}",
                    l.sem.display()
                )));
            }
            labels.push(img);
        }
        frames.push(FrameData { ego: f.ego, labels });
    }
    let gt = load_occ(&dir.join(&m.frames[m.current].occ), Some(num_classes))?;
    if gt.dims() != m.grid.dims {
        return Err(Error::invalid(
            "ground-truth grid does not match the manifest grid",
        ));
    }
    Ok(Dataset {
        grid: m.grid,
        classes: m.classes,
        cameras: m.cameras,
        frames,
        current: m.current,
        gt: Some(gt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::sdf::init_field;

    fn grid(labels: Vec<u8>, l: usize) -> OccupancyGrid {
        OccupancyGrid::new([labels.len(), 1, 1], l, labels).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = grid(vec![0, 1, 3, 3, 2], 3);
        let r = voxel_miou(&g, &g).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.per_class_iou, vec![Some(1.0), Some(1.0), Some(1.0)]);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let gt = grid(vec![1, 3, 3], 3);
        let pred = grid(vec![3, 3, 3], 3);
        let r = voxel_miou(&pred, &gt).unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.0));
        assert_eq!(r.per_class_iou[0], None);
        assert_eq!(r.miou, 0.0);
    }

    #[test]
    fn overlap_four_of_twelve() {
        let mut p = vec![4u8; 12];
        let mut g = vec![4u8; 12];
        p[..8].fill(2);
        g[4..].fill(2);
        let r = voxel_miou(&grid(p, 4), &grid(g, 4)).unwrap();
        assert!((r.per_class_iou[2].unwrap() - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn dims_must_match() {
        let a = grid(vec![0, 1], 2);
        let b = grid(vec![0, 1, 2], 2);
        assert!(voxel_miou(&a, &b).is_err());
    }

    #[test]
    fn sdf_round_trip_and_corruption() {
        let mut f = init_field([2, 3, 1], 3, Vec3::new(-1.0, 0.5, 2.0), 0.4, -5.0, 0.25).unwrap();
        f.density_params_mut()[3] = 1.5;
        let bytes = encode_sdf(&f);
        assert_eq!(bytes.len(), 4 + 16 + 32 + 6 * 4 + 18 * 4);
        let back = decode_sdf(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_sdf(&back), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_sdf(&bad),
            Err(Error::Format {
                source: FormatError::MagicMismatch { .. },
                ..
            })
        ));
        let err = decode_sdf(&bytes[..bytes.len() - 5]).unwrap_err();
        match err {
            Error::Format {
                source: FormatError::Truncated { expected, actual },
                ..
            } => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 5);
            }
            other => panic!("{other:?}"),
        }
        let mut huge = bytes.clone();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode_sdf(&huge),
            Err(Error::Format {
                source: FormatError::DimOverflow(_),
                ..
            })
        ));
    }

    #[test]
    fn occ_round_trip() {
        let g = grid(vec![0, 5, 2, 5], 5);
        let back = decode_occ(&encode_occ(&g), Some(5)).unwrap();
        assert_eq!(back, g);
        assert_eq!(decode_occ(&encode_occ(&g), None).unwrap(), g);
        assert!(decode_occ(&encode_occ(&g), Some(3)).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        for maxval in [255u16, 65535] {
            let img = Pgm {
                width: 3,
                height: 2,
                maxval,
                data: vec![0, 1, 2, 200, maxval, 7],
            };
            assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
        }
        let with_comment = b"P5\n# note\n2 1\n255\n\x01\x02";
        assert_eq!(decode_pgm(with_comment).unwrap().data, vec![1, 2]);
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n2 1\n255\n\x00").is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let img = Ppm {
            width: 2,
            height: 1,
            rgb: vec![1, 2, 3, 4, 5, 6],
        };
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn label_pgm_round_trip() {
        let img = LabelImage {
            width: 2,
            height: 2,
            sem: vec![0, 3, 1, 3],
            depth: vec![Some(1.234), None, Some(20.0), None],
        };
        let (s, d) = label_pgms(&img);
        let back = label_image_from_pgms(&s, &d, 3).unwrap();
        assert_eq!(back, img);
    }
}
