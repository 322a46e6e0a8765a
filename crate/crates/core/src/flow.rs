//! Dense appearance flows.
//!
//! A flow is defined on the corrected grid and stores, per pixel, the
//! displacement `(du, dv)` in pixels of that grid pointing into the distorted
//! image: `source = target + displacement`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::camera::{self, Geometry, RadialModel, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const PCNF_MAGIC: &[u8; 4] = b"PCNF";

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, (0.0, 0.0))
    }

    pub fn constant(width: usize, height: usize, d: (f64, f64)) -> Self {
        let mut data = Vec::with_capacity(width * height * 2);
        for _ in 0..width * height {
            data.push(d.0);
            data.push(d.1);
        }
        FlowField {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("flow dimensions must be positive".into()));
        }
        if data.len() != width * height * 2 {
            return Err(Error::Shape(format!(
                "expected {} values for a {width}x{height} flow, got {}",
                width * height * 2,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("flow contains non-finite values".into()));
        }
        Ok(FlowField {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut data = Vec::with_capacity(width * height * 2);
        for y in 0..height {
            for x in 0..width {
                let (du, dv) = f(x, y);
                data.push(du);
                data.push(dv);
            }
        }
        FlowField {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: (f64, f64)) {
        let i = (y * self.width + x) * 2;
        self.data[i] = d.0;
        self.data[i + 1] = d.1;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Writes the little-endian `PCNF` container; values are narrowed to f32.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(12 + self.data.len() * 4);
        buf.extend_from_slice(PCNF_MAGIC);
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Parse(format!("reading flow: {e}")))?;
        if bytes.len() < 12 || &bytes[..4] != PCNF_MAGIC {
            return Err(Error::Parse("missing PCNF header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height) = (word(4), word(8));
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Parse("flow dimensions overflow".into()))?;
        let payload = &bytes[12..];
        if payload.len() != expected {
            return Err(Error::Parse(format!(
                "flow payload is {} bytes, expected {expected} for {width}x{height}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        FlowField::from_vec(width, height, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Flows ordered finest first; each level halves the side of the previous.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPyramid {
    pub levels: Vec<FlowField>,
}

impl FlowPyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> Option<&FlowField> {
        self.levels.first()
    }

    pub fn max_displacements(&self) -> Vec<f64> {
        self.levels.iter().map(max_displacement).collect()
    }

    /// Displacement magnitude never grows from finer to coarser levels.
    pub fn is_displacement_ordered(&self) -> bool {
        self.max_displacements().windows(2).all(|w| w[0] >= w[1])
    }
}

/// Analytic ground-truth flow of `model` on a `width × height` corrected grid.
pub fn gt_flow(model: &RadialModel, width: usize, height: usize) -> Result<FlowField> {
    if width == 0 || height == 0 {
        return Err(Error::Shape("flow dimensions must be positive".into()));
    }
    let (cx, cy) = model.center();
    let nr = model.norm_radius();

    // Farthest grid point from the center bounds every r_u on the grid.
    let corners = [(0, 0), (width - 1, 0), (0, height - 1), (width - 1, height - 1)];
    let (fx, fy) = corners
        .into_iter()
        .max_by(|a, b| {
            let da = (a.0 as f64 - cx).hypot(a.1 as f64 - cy);
            let db = (b.0 as f64 - cx).hypot(b.1 as f64 - cy);
            da.total_cmp(&db)
        })
        .unwrap();
    let r_max = (fx as f64 - cx).hypot(fy as f64 - cy) / nr;
    let wrap = |x: usize, y: usize| move |e: Error| Error::FlowGeneration { x, y, source: Box::new(e) };
    let hi = camera::checked_bracket(model, r_max).map_err(wrap(fx, fy))?;

    let mut flow = FlowField::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let r_pix = dx.hypot(dy);
            if r_pix == 0.0 {
                continue;
            }
            let r_u = r_pix / nr;
            let r_d = camera::invert_in_bracket(model, r_u, DEFAULT_TOL, hi).map_err(wrap(x, y))?;
            let s = (r_d - r_u) * nr / r_pix;
            flow.set(x, y, (s * dx, s * dy));
        }
    }
    Ok(flow)
}

/// 2×2 mean pooling of displacements followed by halving, so values stay in
/// pixels of the coarser grid.
pub fn downsample_flow(flow: &FlowField) -> Result<FlowField> {
    if !flow.width.is_multiple_of(2) || !flow.height.is_multiple_of(2) {
        return Err(Error::Precondition(format!(
            "flow dimensions must be even, got {}x{}",
            flow.width, flow.height
        )));
    }
    let (w, h) = (flow.width / 2, flow.height / 2);
    Ok(FlowField::from_fn(w, h, |x, y| {
        let mut s = (0.0, 0.0);
        for (ox, oy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let d = flow.get(2 * x + ox, 2 * y + oy);
            s.0 += d.0;
            s.1 += d.1;
        }
        (s.0 * 0.125, s.1 * 0.125)
    }))
}

/// Bilinear ×2 upsampling (edge-clamped) with displacements doubled; the
/// counterpart of [`downsample_flow`] for applying coarse flows to full
/// resolution images.
pub fn upsample_flow(flow: &FlowField) -> FlowField {
    let (w, h) = (flow.width, flow.height);
    FlowField::from_fn(w * 2, h * 2, |x, y| {
        let sx = ((x as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (w - 1) as f64);
        let sy = ((y as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (ax, ay) = (sx - x0 as f64, sy - y0 as f64);
        let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let top = lerp(flow.get(x0, y0), flow.get(x1, y0), ax);
        let bot = lerp(flow.get(x0, y1), flow.get(x1, y1), ax);
        let d = lerp(top, bot, ay);
        (2.0 * d.0, 2.0 * d.1)
    })
}

/// Ground-truth pyramid rendered analytically at `base, base/2, …`.
///
/// The model's geometry is taken to describe a square image of side
/// `2 * norm_radius` and is rescaled to every level.
pub fn build_pyramid(model: &RadialModel, base: usize, levels: usize) -> Result<FlowPyramid> {
    if levels == 0 || base == 0 {
        return Err(Error::Precondition("pyramid needs at least one level".into()));
    }
    if levels > usize::BITS as usize || !base.is_multiple_of(1usize << (levels - 1)) {
        return Err(Error::Precondition(format!(
            "base {base} is not divisible by 2^{}",
            levels - 1
        )));
    }
    let levels = (0..levels)
        .map(|i| {
            let side = base >> i;
            gt_flow(&model.for_side(side), side, side)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowPyramid { levels })
}

/// Largest displacement magnitude.
pub fn max_displacement(flow: &FlowField) -> f64 {
    flow.data
        .chunks_exact(2)
        .map(|d| d[0].hypot(d[1]))
        .fold(0.0, f64::max)
}

/// Grayscale rendering of the displacement magnitude, scaled so the largest
/// displacement is white. A zero flow renders black.
pub fn magnitude_image(flow: &FlowField) -> Image {
    let max = max_displacement(flow);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    Image::from_fn(flow.width, flow.height, 1, |x, y, _| {
        let (u, v) = flow.get(x, y);
        u.hypot(v) * scale
    })
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: RadialModel,
    /// RMS of `r_u - Σ k_i r_d^(2i-1)` in normalized units.
    pub rms_residual: f64,
    pub samples: usize,
}

/// Least-squares polynomial model consistent with `flow`.
///
/// Every non-central pixel yields a correspondence: its own radius is `r_u`
/// and the radius of the point it samples is `r_d`. Coefficients minimize
/// `Σ (r_u - Σ k_i r_d^(2i-1))²`.
pub fn fit_model_to_flow(flow: &FlowField, degree: usize, geometry: Geometry) -> Result<FitReport> {
    fit_model_masked(flow, degree, geometry, None)
}

pub fn fit_model_masked(
    flow: &FlowField,
    degree: usize,
    geometry: Geometry,
    mask: Option<&Mask>,
) -> Result<FitReport> {
    if degree == 0 || degree > camera::MAX_COEFFS {
        return Err(Error::Precondition(format!(
            "degree must be in 1..={}, got {degree}",
            camera::MAX_COEFFS
        )));
    }
    let (cx, cy) = geometry.center;
    let nr = geometry.norm_radius;
    let mut rows: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for y in 0..flow.height {
        for x in 0..flow.width {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let r_u = dx.hypot(dy) / nr;
            if r_u < 1e-9 {
                continue;
            }
            let (du, dv) = flow.get(x, y);
            let r_d = (dx + du).hypot(dy + dv) / nr;
            let r2 = r_d * r_d;
            let mut p = r_d;
            for _ in 0..degree {
                rows.push(p);
                p *= r2;
            }
            targets.push(r_u);
        }
    }
    let n = targets.len();
    if n < degree {
        return Err(Error::FitFailed(format!(
            "{n} informative pixels for {degree} coefficients"
        )));
    }
    let a = DMatrix::from_row_slice(n, degree, &rows);
    let b = DVector::from_vec(targets);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax.is_nan() || smax <= 0.0 || smin / smax < 1e-12 {
        return Err(Error::FitFailed(format!(
            "rank-deficient design (condition {:.3e})",
            smax / smin
        )));
    }
    let k = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    let resid = &b - &a * &k;
    let rms_residual = (resid.norm_squared() / n as f64).sqrt();
    let model = RadialModel::polynomial(k.iter().copied().collect(), geometry)?;
    Ok(FitReport {
        model,
        rms_residual,
        samples: n,
    })
}
