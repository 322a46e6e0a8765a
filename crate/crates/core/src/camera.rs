//! Radial distortion models relating the distorted radius `r_d` of a fisheye
//! image to the undistorted radius `r_u` of its perspective counterpart.
//!
//! Radii are normalized: pixel distance from the distortion center divided by
//! `norm_radius` (half the side of the square working image by default), so
//! coefficients are resolution independent.
//!
//! Two families are supported:
//!
//! * polynomial: `r_u = Σ k_i r_d^(2i-1)`
//! * division:   `r_u = r_d / (1 + Σ k_i r_d^(2i-1))`

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_COEFFS: usize = 8;

/// Number of derivative samples used by [`is_monotone`].
pub const MONOTONE_SAMPLES: usize = 1024;

/// Default inversion tolerance on `|forward(r_d) - r_u|`.
pub const DEFAULT_TOL: f64 = 1e-9;

const BISECTION_WIDTH: f64 = 1e-6;
const NEWTON_STEPS: usize = 20;
const DIVISION_EPS: f64 = 1e-12;
const BRACKET_START: f64 = 1e-3;
const BRACKET_GROWTH: f64 = 1.25;
const BRACKET_LIMIT: f64 = 1e8;
const BRACKET_SCAN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Polynomial,
    Division,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Polynomial => f.write_str("polynomial"),
            ModelKind::Division => f.write_str("division"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polynomial" => Ok(ModelKind::Polynomial),
            "division" => Ok(ModelKind::Division),
            other => Err(Error::Parse(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Pixel-space placement of a model: distortion center and the pixel length
/// that maps to normalized radius 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub center: (f64, f64),
    pub norm_radius: f64,
}

impl Geometry {
    /// Centered on a `side × side` image with `norm_radius = side / 2`.
    /// Pixel `(u, v)` sits at continuous coordinate `(u, v)`.
    pub fn square(side: usize) -> Self {
        Self::for_image(side, side)
    }

    pub fn for_image(width: usize, height: usize) -> Self {
        Geometry {
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            norm_radius: width as f64 / 2.0,
        }
    }

    /// Maps this placement onto a grid resampled by `factor` (0.5 halves the
    /// resolution). Pixel centers follow the 2×2 pooling alignment
    /// `x' = (x + 0.5) * factor - 0.5`.
    pub fn scaled(&self, factor: f64) -> Self {
        Geometry {
            center: (
                (self.center.0 + 0.5) * factor - 0.5,
                (self.center.1 + 0.5) * factor - 0.5,
            ),
            norm_radius: self.norm_radius * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialModel {
    kind: ModelKind,
    coeffs: Vec<f64>,
    geometry: Geometry,
}

impl RadialModel {
    pub fn new(kind: ModelKind, coeffs: Vec<f64>, geometry: Geometry) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > MAX_COEFFS {
            return Err(Error::InvalidModel(format!(
                "expected 1..={MAX_COEFFS} coefficients, got {}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidModel("non-finite coefficient".into()));
        }
        if !(geometry.norm_radius > 0.0 && geometry.norm_radius.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "norm_radius must be positive, got {}",
                geometry.norm_radius
            )));
        }
        if !(geometry.center.0.is_finite() && geometry.center.1.is_finite()) {
            return Err(Error::InvalidModel("non-finite center".into()));
        }
        Ok(RadialModel {
            kind,
            coeffs,
            geometry,
        })
    }

    pub fn polynomial(coeffs: Vec<f64>, geometry: Geometry) -> Result<Self> {
        Self::new(ModelKind::Polynomial, coeffs, geometry)
    }

    /// `k = (1, 0, 0, 0)`: `r_u = r_d`.
    pub fn identity(geometry: Geometry) -> Self {
        RadialModel {
            kind: ModelKind::Polynomial,
            coeffs: vec![1.0, 0.0, 0.0, 0.0],
            geometry,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn center(&self) -> (f64, f64) {
        self.geometry.center
    }

    pub fn norm_radius(&self) -> f64 {
        self.geometry.norm_radius
    }

    pub fn with_geometry(&self, geometry: Geometry) -> Self {
        RadialModel {
            geometry,
            ..self.clone()
        }
    }

    /// Same coefficients placed on a square image of side `side`, assuming
    /// the current geometry describes a square image of side `2 * norm_radius`.
    pub fn for_side(&self, side: usize) -> Self {
        let factor = side as f64 / (2.0 * self.geometry.norm_radius);
        self.with_geometry(self.geometry.scaled(factor))
    }

    /// `Σ k_i r^(2i-1)` and its derivative.
    fn odd_series(&self, r: f64) -> (f64, f64) {
        let r2 = r * r;
        let mut pow = r; // r^(2i-1)
        let mut dpow = 1.0; // r^(2i-2)
        let mut s = 0.0;
        let mut ds = 0.0;
        for (i, &k) in self.coeffs.iter().enumerate() {
            s += k * pow;
            ds += (2 * i + 1) as f64 * k * dpow;
            pow *= r2;
            dpow *= r2;
        }
        (s, ds)
    }

    fn value_and_derivative(&self, r_d: f64) -> Result<(f64, f64)> {
        let (s, ds) = self.odd_series(r_d);
        match self.kind {
            ModelKind::Polynomial => Ok((s, ds)),
            ModelKind::Division => {
                let denom = 1.0 + s;
                if denom <= DIVISION_EPS {
                    return Err(Error::Singularity { r_d });
                }
                Ok((r_d / denom, (denom - r_d * ds) / (denom * denom)))
            }
        }
    }

    /// Analytic `d r_u / d r_d`.
    pub fn derivative(&self, r_d: f64) -> Result<f64> {
        check_radius(r_d)?;
        self.value_and_derivative(r_d).map(|(_, d)| d)
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("radius must be finite and >= 0, got {r}")))
    }
}

/// Undistorted radius for a distorted radius, both normalized.
pub fn forward_radius(model: &RadialModel, r_d: f64) -> Result<f64> {
    check_radius(r_d)?;
    model.value_and_derivative(r_d).map(|(v, _)| v)
}

/// True iff `d r_u / d r_d > 0` on a uniform grid of [`MONOTONE_SAMPLES`]
/// points spanning `[0, r_max]` inclusive.
pub fn is_monotone(model: &RadialModel, r_max: f64) -> bool {
    if !(r_max > 0.0 && r_max.is_finite()) {
        return false;
    }
    let n = MONOTONE_SAMPLES - 1;
    (0..=n).all(|i| {
        let r = r_max * i as f64 / n as f64;
        matches!(model.value_and_derivative(r), Ok((_, d)) if d > 0.0)
    })
}

/// Upper end of a bracket `[0, hi]` with `forward(hi) >= r_u`. The end grows
/// geometrically and is then pulled back onto the first crossing, so models
/// that turn over beyond the solution still get a monotone bracket.
fn grow_bracket(model: &RadialModel, r_u: f64) -> Result<f64> {
    let f = |r: f64| forward_radius(model, r).map_err(|_| Error::OutOfRange { r_u });
    let (mut lo, mut hi) = (0.0, BRACKET_START);
    loop {
        let (f_hi, d_hi) = model.value_and_derivative(hi).map_err(|_| Error::OutOfRange { r_u })?;
        if f_hi >= r_u {
            break;
        }
        if d_hi <= 0.0 {
            // falling at hi: a crossing inside the last step would be missed
            let step = (hi - lo) / BRACKET_SCAN as f64;
            if let Some(r) = (1..BRACKET_SCAN).map(|i| lo + step * i as f64).find(|&r| f(r).is_ok_and(|v| v >= r_u)) {
                (lo, hi) = (r - step, r);
                break;
            }
        }
        lo = hi;
        hi *= BRACKET_GROWTH;
        if hi > BRACKET_LIMIT {
            return Err(Error::OutOfRange { r_u });
        }
    }
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < r_u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Distorted radius `r_d` with `|forward(r_d) - r_u| <= tol`.
///
/// Grows a bracket `[0, hi]`, verifies monotonicity on it, bisects down to a
/// width of 1e-6 and finishes with safeguarded Newton steps.
pub fn invert_radius(model: &RadialModel, r_u: f64, tol: f64) -> Result<f64> {
    check_radius(r_u)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Precondition(format!("tolerance must be > 0, got {tol}")));
    }
    if r_u == 0.0 {
        return Ok(0.0);
    }
    let hi = checked_bracket(model, r_u)?;
    solve_in_bracket(model, r_u, tol, hi)
}

/// Upper end of a bracket `[0, hi]` with `forward(hi) >= r_u`, after
/// checking monotonicity on it. Any `r_u' <= r_u` can then be solved on the
/// same bracket with [`invert_in_bracket`].
pub(crate) fn checked_bracket(model: &RadialModel, r_u: f64) -> Result<f64> {
    check_radius(r_u)?;
    let hi = grow_bracket(model, r_u)?;
    if !is_monotone(model, hi) {
        return Err(Error::NotMonotone { r_max: hi });
    }
    Ok(hi)
}

/// Inversion on a bracket previously validated by [`checked_bracket`].
pub(crate) fn invert_in_bracket(model: &RadialModel, r_u: f64, tol: f64, hi: f64) -> Result<f64> {
    check_radius(r_u)?;
    if r_u == 0.0 {
        return Ok(0.0);
    }
    solve_in_bracket(model, r_u, tol, hi)
}

fn solve_in_bracket(model: &RadialModel, r_u: f64, tol: f64, hi: f64) -> Result<f64> {
    let g = |r: f64| model.value_and_derivative(r).map(|(v, d)| (v - r_u, d));
    let (mut lo, mut hi) = (0.0_f64, hi);

    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let (v, _) = g(mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..NEWTON_STEPS {
        let (v, d) = g(x)?;
        if v == 0.0 {
            return Ok(x);
        }
        let step = x - v / d;
        if v.abs() <= tol {
            // one polishing step, kept only if it does not make things worse
            if d > 0.0 && step >= lo && step <= hi {
                if let Ok((vs, _)) = g(step) {
                    if vs.abs() <= v.abs() {
                        return Ok(step);
                    }
                }
            }
            return Ok(x);
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        x = if d > 0.0 && step >= lo && step <= hi {
            step
        } else {
            0.5 * (lo + hi)
        };
    }

    // Newton stalled; finish by plain bisection down to float resolution.
    loop {
        let (v, _) = g(x)?;
        if v.abs() <= tol {
            return Ok(x);
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::Precondition(format!(
                "tolerance {tol} not attainable at r_u = {r_u}"
            )));
        }
        x = mid;
    }
}

/// Per-coefficient closed sampling intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRanges {
    pub intervals: Vec<(f64, f64)>,
    pub max_attempts: usize,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            intervals: vec![(0.9, 1.1), (0.1, 0.6), (-0.05, 0.2), (-0.05, 0.1)],
            max_attempts: 1000,
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() || self.intervals.len() > MAX_COEFFS {
            return Err(Error::Config(format!(
                "expected 1..={MAX_COEFFS} intervals, got {}",
                self.intervals.len()
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        for (i, &(lo, hi)) in self.intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("interval {i} is invalid: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Default monotonicity domain for sampled models: the corner radius √2.
pub const DEFAULT_SAMPLE_RMAX: f64 = std::f64::consts::SQRT_2;

/// Draws polynomial coefficients uniformly inside `ranges`, rejecting draws
/// that are not monotone on `[0, r_max]`.
pub fn sample_model<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &ParamRanges,
    r_max: f64,
    geometry: Geometry,
) -> Result<RadialModel> {
    ranges.validate()?;
    for _ in 0..ranges.max_attempts {
        let coeffs = ranges
            .intervals
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
            .collect();
        let model = RadialModel::polynomial(coeffs, geometry)?;
        if is_monotone(&model, r_max) {
            return Ok(model);
        }
    }
    Err(Error::SamplingFailed {
        attempts: ranges.max_attempts,
    })
}

impl fmt::Display for RadialModel {
    /// Four-line text form; numbers carry 17 significant digits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind {}", self.kind)?;
        write!(f, "coeffs")?;
        for k in &self.coeffs {
            write!(f, " {k:.16e}")?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "center {:.16e} {:.16e}",
            self.geometry.center.0, self.geometry.center.1
        )?;
        writeln!(f, "norm_radius {:.16e}", self.geometry.norm_radius)
    }
}

fn parse_f64(tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad number `{tok}`: {e}")))
}

impl FromStr for RadialModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kind = None;
        let mut coeffs = None;
        let mut center = None;
        let mut norm_radius = None;
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut toks = line.split_whitespace();
            let key = toks.next().unwrap_or_default();
            let rest: Vec<&str> = toks.collect();
            match key {
                "kind" => {
                    let [k] = rest.as_slice() else {
                        return Err(Error::Parse("`kind` takes one value".into()));
                    };
                    kind = Some(k.parse::<ModelKind>()?);
                }
                "coeffs" => {
                    coeffs = Some(rest.iter().map(|t| parse_f64(t)).collect::<Result<Vec<_>>>()?);
                }
                "center" => {
                    let [x, y] = rest.as_slice() else {
                        return Err(Error::Parse("`center` takes two values".into()));
                    };
                    center = Some((parse_f64(x)?, parse_f64(y)?));
                }
                "norm_radius" => {
                    let [v] = rest.as_slice() else {
                        return Err(Error::Parse("`norm_radius` takes one value".into()));
                    };
                    norm_radius = Some(parse_f64(v)?);
                }
                other => return Err(Error::Parse(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("missing `{k}` line"));
        RadialModel::new(
            kind.ok_or_else(|| missing("kind"))?,
            coeffs.ok_or_else(|| missing("coeffs"))?,
            Geometry {
                center: center.ok_or_else(|| missing("center"))?,
                norm_radius: norm_radius.ok_or_else(|| missing("norm_radius"))?,
            },
        )
    }
}

impl RadialModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        std::fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))?
            .parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> Geometry {
        Geometry::square(256)
    }

    fn poly(k: &[f64]) -> RadialModel {
        RadialModel::polynomial(k.to_vec(), geom()).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(forward_radius(&poly(&[1.0, 0.0, 0.0, 0.0]), 0.5).unwrap(), 0.5);
        let v = forward_radius(&poly(&[1.0, 0.5, 0.0, 0.0]), 0.8).unwrap();
        assert!((v - 1.056).abs() < 1e-12);
        let div = RadialModel::new(ModelKind::Division, vec![0.0; 4], geom()).unwrap();
        assert_eq!(forward_radius(&div, 0.7).unwrap(), 0.7);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = poly(&[1.0]);
        assert!(matches!(forward_radius(&m, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(forward_radius(&m, -0.1), Err(Error::Domain(_))));
        let div = RadialModel::new(ModelKind::Division, vec![-1.0], geom()).unwrap();
        assert!(matches!(forward_radius(&div, 1.0), Err(Error::Singularity { .. })));
    }

    #[test]
    fn model_invariants_enforced() {
        assert!(RadialModel::polynomial(vec![], geom()).is_err());
        assert!(RadialModel::polynomial(vec![1.0; 9], geom()).is_err());
        let bad = Geometry {
            center: (0.0, 0.0),
            norm_radius: 0.0,
        };
        assert!(RadialModel::polynomial(vec![1.0], bad).is_err());
    }

    #[test]
    fn inverse_examples() {
        let id = poly(&[1.0, 0.0, 0.0, 0.0]);
        assert!((invert_radius(&id, 0.3, 1e-10).unwrap() - 0.3).abs() < 1e-10);
        let m = poly(&[1.0, 0.5, 0.0, 0.0]);
        assert!((invert_radius(&m, 1.056, 1e-10).unwrap() - 0.8).abs() < 1e-9);
        assert_eq!(invert_radius(&m, 0.0, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn inverse_errors() {
        let fold = poly(&[1.0, -2.0, 0.0, 0.0]);
        // peak of r - 2r^3 is ~0.272 at r = 1/sqrt(6)
        assert!(matches!(
            invert_radius(&fold, 0.5, 1e-9),
            Err(Error::OutOfRange { .. })
        ));
        // below the peak the first crossing lies on the rising part
        let r = invert_radius(&fold, 0.27, 1e-9).unwrap();
        assert!(r < 1.0 / 6f64.sqrt());
        // r - 2r^3 + 1.5r^5 dips between 0.49 and 0.75, so 0.35 is only
        // reached after the dip
        let dip = poly(&[1.0, -2.0, 1.5, 0.0]);
        assert!(matches!(
            invert_radius(&dip, 0.35, 1e-9),
            Err(Error::NotMonotone { .. })
        ));
        assert!(invert_radius(&dip, 0.25, 1e-9).is_ok());
        let sat = RadialModel::new(ModelKind::Division, vec![1.0], geom()).unwrap();
        // r / (1 + r) never reaches 1
        assert!(matches!(invert_radius(&sat, 1.0, 1e-9), Err(Error::OutOfRange { .. })));
        assert!(invert_radius(&sat, 0.5, 1e-9).is_ok());
        assert!(invert_radius(&poly(&[1.0]), 0.5, 0.0).is_err());
    }

    #[test]
    fn solves_just_below_turnover() {
        // peaks near r = 1.47; the bracket step jumps right over the crossing
        let m = poly(&[1.0788, 0.3036, 0.0118, -0.0467]);
        let r_u = 0.98 * forward_radius(&m, 1.47).unwrap();
        let r = invert_radius(&m, r_u, 1e-9).unwrap();
        assert!(r < 1.47);
        assert!((forward_radius(&m, r).unwrap() - r_u).abs() <= 1e-9);
    }

    #[test]
    fn monotone_examples() {
        assert!(is_monotone(&poly(&[1.0, 0.0, 0.0, 0.0]), 1.5));
        assert!(!is_monotone(&poly(&[1.0, -2.0, 0.0, 0.0]), 1.0));
        assert!(is_monotone(&poly(&[1.0, 0.5, 0.0, 0.0]), 1.5));
        assert!(!is_monotone(&poly(&[1.0]), 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_respects_point_ranges() {
        let ranges = ParamRanges::default();
        let a = sample_model(&mut ChaCha8Rng::seed_from_u64(42), &ranges, DEFAULT_SAMPLE_RMAX, geom()).unwrap();
        let b = sample_model(&mut ChaCha8Rng::seed_from_u64(42), &ranges, DEFAULT_SAMPLE_RMAX, geom()).unwrap();
        assert_eq!(a, b);

        let point = ParamRanges {
            intervals: vec![(1.0, 1.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
            max_attempts: 1,
        };
        let m = sample_model(&mut ChaCha8Rng::seed_from_u64(1), &point, 1.0, geom()).unwrap();
        assert_eq!(m, RadialModel::identity(geom()));
    }

    #[test]
    fn sampling_gives_up() {
        let never = ParamRanges {
            intervals: vec![(-1.0, -0.5)],
            max_attempts: 5,
        };
        let r = sample_model(&mut ChaCha8Rng::seed_from_u64(0), &never, 1.0, geom());
        assert!(matches!(r, Err(Error::SamplingFailed { attempts: 5 })));
        let inverted = ParamRanges {
            intervals: vec![(1.0, 0.0)],
            max_attempts: 5,
        };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn text_format() {
        let m = poly(&[1.0, 0.25, -0.03125, 0.1]);
        let s = m.to_string();
        assert!(s.starts_with("kind polynomial\ncoeffs "));
        assert_eq!(s.lines().count(), 4);
        assert_eq!(s.parse::<RadialModel>().unwrap(), m);
        assert!("kind fisheye\n".parse::<RadialModel>().is_err());
        assert!("kind polynomial\ncoeffs 1\n".parse::<RadialModel>().is_err());
    }

    #[test]
    fn geometry_scaling_matches_pooling_alignment() {
        let g = Geometry::square(256).scaled(0.5);
        assert_eq!(g, Geometry::square(128));
        let m = poly(&[1.0, 0.3]).for_side(64);
        assert_eq!(m.geometry(), Geometry::square(64));
    }
}
