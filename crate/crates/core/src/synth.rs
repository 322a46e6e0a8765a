//! Synthetic fisheye dataset generation and dataset file I/O.
//!
//! Both distortion and rectification are backward mappings: every
//! destination pixel computes where it comes from and samples bilinearly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{self, forward_radius, Geometry, ParamRanges, RadialModel};
use crate::error::{Error, Result};
use crate::flow::{build_pyramid, gt_flow, max_displacement, FlowPyramid};
use crate::image::{Image, Mask};
use crate::warp::{sample_bilinear, warp_bilinear, Border};

const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Sample {
    pub fisheye: Image,
    pub gt: Image,
    pub pyramid: FlowPyramid,
    pub model: RadialModel,
    pub valid_mask: Mask,
}

fn max_grid_radius(width: usize, height: usize, g: Geometry) -> f64 {
    [(0, 0), (width - 1, 0), (0, height - 1), (width - 1, height - 1)]
        .into_iter()
        .map(|(x, y)| (x as f64 - g.center.0).hypot(y as f64 - g.center.1) / g.norm_radius)
        .fold(0.0, f64::max)
}

/// Fisheye image of a square perspective image. Each fisheye pixel at
/// distorted radius `r_d` samples the perspective image at `forward(r_d)`
/// along the same polar angle. Pixels whose source leaves the image are
/// black and masked out.
pub fn distort_image(persp: &Image, model: &RadialModel) -> Result<(Image, Mask)> {
    distort_image_with(persp, model, false)
}

/// [`distort_image`] optionally restricted to the inscribed circle.
pub fn distort_image_with(persp: &Image, model: &RadialModel, circular: bool) -> Result<(Image, Mask)> {
    let (w, h, ch) = (persp.width(), persp.height(), persp.channels());
    if w != h {
        return Err(Error::Precondition(format!("perspective image must be square, got {w}x{h}")));
    }
    let g = model.geometry();
    let r_max = max_grid_radius(w, h, g);
    if !camera::is_monotone(model, r_max) {
        return Err(Error::NotMonotone { r_max });
    }
    let mut out = Image::new(w, h, ch);
    let mut mask = Mask::filled(w, h, false);
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - g.center.0;
            let dy = y as f64 - g.center.1;
            let r_d = dx.hypot(dy) / g.norm_radius;
            if circular && r_d > 1.0 {
                continue;
            }
            let (sx, sy) = if r_d == 0.0 {
                (x as f64, y as f64)
            } else {
                let s = forward_radius(model, r_d)? / r_d;
                (g.center.0 + dx * s, g.center.1 + dy * s)
            };
            if sx < -EDGE_EPS || sy < -EDGE_EPS || sx > xmax + EDGE_EPS || sy > ymax + EDGE_EPS {
                continue;
            }
            let (sx, sy) = (sx.clamp(0.0, xmax), sy.clamp(0.0, ymax));
            mask.set(x, y, true);
            for c in 0..ch {
                out.set(x, y, c, sample_bilinear(persp, sx, sy, c, Border::Clamp));
            }
        }
    }
    Ok((out, mask))
}

/// Undoes [`distort_image`] by warping with the analytic flow; by
/// construction identical to `warp_bilinear(fisheye, gt_flow(model))`.
pub fn rectify_image(fisheye: &Image, model: &RadialModel) -> Result<Image> {
    let flow = gt_flow(model, fisheye.width(), fisheye.height())?;
    warp_bilinear(fisheye, &flow, Border::Zeros)
}

/// Pixels of the rectified image whose every non-zero bilinear tap lands on
/// a valid fisheye pixel.
pub fn rectified_valid_mask(model: &RadialModel, fisheye_mask: &Mask) -> Result<Mask> {
    let (w, h) = (fisheye_mask.width(), fisheye_mask.height());
    let flow = gt_flow(model, w, h)?;
    Ok(Mask::from_fn(w, h, |x, y| {
        let (du, dv) = flow.get(x, y);
        let (sx, sy) = (x as f64 + du, y as f64 + dv);
        let (fx, fy) = (sx.floor(), sy.floor());
        let (ax, ay) = (sx - fx, sy - fy);
        for (ox, oy, wgt) in [
            (0, 0, (1.0 - ax) * (1.0 - ay)),
            (1, 0, ax * (1.0 - ay)),
            (0, 1, (1.0 - ax) * ay),
            (1, 1, ax * ay),
        ] {
            if wgt == 0.0 {
                continue;
            }
            let (tx, ty) = (fx as isize + ox, fy as isize + oy);
            if tx < 0 || ty < 0 || tx >= w as isize || ty >= h as isize {
                return false;
            }
            if !fisheye_mask.get(tx as usize, ty as usize) {
                return false;
            }
        }
        true
    }))
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub size: usize,
    /// Pyramid levels below the image resolution (finest is `size / 2`).
    pub pyramid_levels: usize,
    pub circular_mask: bool,
    pub ranges: ParamRanges,
    pub r_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 256,
            pyramid_levels: 5,
            circular_mask: false,
            ranges: ParamRanges::default(),
            r_max: camera::DEFAULT_SAMPLE_RMAX,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || self.pyramid_levels == 0 {
            return Err(Error::Config("size must be >= 2 and pyramid_levels >= 1".into()));
        }
        if !(self.size / 2).is_multiple_of(1 << (self.pyramid_levels - 1)) || !self.size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "size {} does not support {} pyramid levels",
                self.size, self.pyramid_levels
            )));
        }
        self.ranges.validate()
    }
}

/// Distorts an already prepared `size × size` perspective image.
pub fn make_sample(persp: &Image, model: &RadialModel, config: &SynthConfig) -> Result<Sample> {
    let (fisheye, valid_mask) = distort_image_with(persp, model, config.circular_mask)?;
    let pyramid = build_pyramid(model, persp.width() / 2, config.pyramid_levels)?;
    Ok(Sample {
        fisheye,
        gt: persp.clone(),
        pyramid,
        model: model.clone(),
        valid_mask,
    })
}

/// Center square crop followed by a resize to `size × size`.
pub fn prepare_source(img: &image::RgbImage, size: usize) -> Image {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let resized = if side as usize == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    };
    Image::from_rgb8(&resized)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub src_path: PathBuf,
    pub coeffs: Vec<f64>,
    pub max_displacement_px: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<(PathBuf, String)>,
    pub failed: Vec<(usize, String)>,
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

pub fn sample_stem(index: usize) -> String {
    format!("{index:06}")
}

fn list_sources(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Builds a dataset of `count` samples from the images in `src_dir`.
///
/// Output per sample `i`: `{i:06}_fish.png`, `{i:06}_gt.png`,
/// `{i:06}_model.txt` and `{i:06}_flow.pcnf` (finest pyramid level), plus one
/// line of `manifest.tsv`. The result is a pure function of the source
/// bytes, `seed` and `config`.
pub fn make_dataset(
    src_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    count: usize,
    seed: u64,
    config: &SynthConfig,
) -> Result<Manifest> {
    let (src_dir, out_dir) = (src_dir.as_ref(), out_dir.as_ref());
    config.validate()?;
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut pool = list_sources(src_dir)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    order_rng.set_stream(u64::MAX);
    pool.shuffle(&mut order_rng);

    let mut manifest = Manifest {
        path: out_dir.join(MANIFEST_NAME),
        ..Default::default()
    };
    let mut text = String::new();
    let mut next = 0usize;
    let geometry = Geometry::square(config.size);

    for index in 0..count {
        let (src_path, persp) = loop {
            if pool.is_empty() {
                return Err(Error::Dataset(format!("no readable images in {}", src_dir.display())));
            }
            let k = next % pool.len();
            match image::open(&pool[k]) {
                Ok(img) => {
                    next = k + 1;
                    break (pool[k].clone(), prepare_source(&img.to_rgb8(), config.size));
                }
                Err(e) => {
                    warn!("skipping unreadable source {}: {e}", pool[k].display());
                    let _ = writeln!(text, "#skipped\t{}\t{e}", pool[k].display());
                    manifest.skipped.push((pool.remove(k), e.to_string()));
                    next = k;
                }
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let result = camera::sample_model(&mut rng, &config.ranges, config.r_max, geometry)
            .and_then(|model| make_sample(&persp, &model, config))
            .and_then(|sample| {
                let full = gt_flow(&sample.model, config.size, config.size)?;
                Ok((sample, max_displacement(&full)))
            });
        let (sample, max_disp) = match result {
            Ok(v) => v,
            Err(e) => {
                warn!("sample {index} failed: {e}");
                let _ = writeln!(text, "#failed\t{index}\t{e}");
                manifest.failed.push((index, e.to_string()));
                continue;
            }
        };

        let stem = out_dir.join(sample_stem(index));
        let with = |suffix: &str| PathBuf::from(format!("{}{suffix}", stem.display()));
        sample.fisheye.save_png(with("_fish.png"))?;
        sample.gt.save_png(with("_gt.png"))?;
        sample.model.save(with("_model.txt"))?;
        if let Some(finest) = sample.pyramid.finest() {
            finest.save(with("_flow.pcnf"))?;
        }

        let _ = write!(text, "{index}\t{}", src_path.display());
        for k in sample.model.coeffs() {
            let _ = write!(text, "\t{k}");
        }
        let _ = writeln!(text, "\t{max_disp:.6}");
        manifest.entries.push(ManifestEntry {
            index,
            src_path,
            coeffs: sample.model.coeffs().to_vec(),
            max_displacement_px: max_disp,
        });
    }
    fs::write(&manifest.path, text).map_err(|e| Error::io(&manifest.path, e))?;
    Ok(manifest)
}

/// Parses the data lines of a `manifest.tsv`; comment lines are ignored.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 4 {
                return Err(Error::Parse(format!("short manifest line `{line}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
            Ok(ManifestEntry {
                index: cols[0]
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad index `{}`: {e}", cols[0])))?,
                src_path: PathBuf::from(cols[1]),
                coeffs: cols[2..cols.len() - 1].iter().map(|s| num(s)).collect::<Result<_>>()?,
                max_displacement_px: num(cols[cols.len() - 1])?,
            })
        })
        .collect()
}

/// A sample as stored on disk.
#[derive(Debug, Clone)]
pub struct StoredSample {
    pub index: usize,
    pub fisheye: Image,
    pub gt: Image,
    pub model: RadialModel,
}

/// Loads every sample listed in the manifest of `dir`. Samples with missing
/// or corrupt files are skipped with a warning.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<StoredSample>> {
    let dir = dir.as_ref();
    let entries = read_manifest(dir.join(MANIFEST_NAME))?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let stem = dir.join(sample_stem(e.index));
        let with = |suffix: &str| PathBuf::from(format!("{}{suffix}", stem.display()));
        let loaded = (|| -> Result<StoredSample> {
            let fisheye = Image::load(with("_fish.png"))?;
            let gt = Image::load(with("_gt.png"))?;
            let model = RadialModel::load(with("_model.txt"))?;
            if !fisheye.same_shape(&gt) {
                return Err(Error::Shape("fisheye and gt sizes differ".into()));
            }
            Ok(StoredSample {
                index: e.index,
                fisheye,
                gt,
                model,
            })
        })();
        match loaded {
            Ok(s) => out.push(s),
            Err(err) => warn!("skipping sample {}: {err}", e.index),
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no usable samples in {}", dir.display())));
    }
    Ok(out)
}
