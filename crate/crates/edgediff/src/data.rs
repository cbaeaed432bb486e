//! Dataset plumbing: the synthetic low-contrast dataset generator, 8-bit PNG
//! I/O, and the Images/GT directory-layout loader.

use crate::edge::{extract_edge_prior, EdgeOperator, EdgePrior, ImageRgb};
use crate::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png error on {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("{path}: unsupported bit depth {depth:?}, only 8-bit PNG is supported")]
    UnsupportedDepth { path: PathBuf, depth: png::BitDepth },
    #[error("{path}: unsupported color type {color:?}")]
    UnsupportedColor { path: PathBuf, color: png::ColorType },
    #[error("{path}: only PNG images are supported, convert other formats first")]
    UnsupportedFormat { path: PathBuf },
    #[error("image '{stem}' has no ground-truth partner in GT/")]
    MissingGt { stem: String },
    #[error("'{stem}': image is {iw}x{ih} but ground truth is {gw}x{gh}")]
    DimMismatch { stem: String, iw: usize, ih: usize, gw: usize, gh: usize },
    #[error("invalid synthetic config: {0}")]
    BadConfig(String),
    #[error("edge extraction failed: {0}")]
    Edge(#[from] crate::edge::EdgeError),
    #[error("invalid grid data in {path}: {message}")]
    BadGrid { path: PathBuf, message: String },
}

/// One (image, mask) pair; edge priors are computed on first use and cached
/// per operator.
#[derive(Debug)]
pub struct Sample {
    pub id: String,
    pub image: ImageRgb,
    pub mask: Grid,
    prior_cache: RefCell<HashMap<String, EdgePrior>>,
}

impl Sample {
    pub fn new(id: String, image: ImageRgb, mask: Grid) -> Self {
        Self { id, image, mask, prior_cache: RefCell::new(HashMap::new()) }
    }

    /// Edge prior for `op`, computed once per (sample, operator).
    pub fn prior(&self, op: EdgeOperator) -> Result<EdgePrior, DataError> {
        let key = op.cache_key();
        if let Some(p) = self.prior_cache.borrow().get(&key) {
            return Ok(p.clone());
        }
        let p = extract_edge_prior(&self.image, op)?;
        self.prior_cache.borrow_mut().insert(key, p.clone());
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    Blob,
    Elongated,
    MultiPronged,
}

/// Generator knobs for the synthetic camouflage set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Foreground intensity shift in (0, 0.2].
    pub delta: f64,
    pub octaves: usize,
    pub shape: ShapeFamily,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 16,
            height: 64,
            width: 64,
            seed: 0,
            delta: 0.08,
            octaves: 3,
            shape: ShapeFamily::Blob,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.count == 0 {
            return Err(DataError::BadConfig("count must be >= 1".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(DataError::BadConfig(format!(
                "resolution {}x{} too small, need at least 16x16",
                self.height, self.width
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 0.2) {
            return Err(DataError::BadConfig(format!("delta {} outside (0, 0.2]", self.delta)));
        }
        if self.octaves == 0 {
            return Err(DataError::BadConfig("octaves must be >= 1".into()));
        }
        Ok(())
    }
}

const AREA_LO: f64 = 0.02;
const AREA_HI: f64 = 0.60;

/// Multi-octave value noise in a narrow band around mid-gray, so regional
/// means stay close and the delta shift dominates the fg/bg contrast.
fn value_noise(h: usize, w: usize, octaves: usize, rng: &mut ChaCha8Rng) -> Grid {
    let mut acc = Grid::zeros(h, w);
    let mut amp_total = 0.0;
    for o in 0..octaves {
        let cells = 4usize << o;
        let amp = 0.5f64.powi(o as i32);
        amp_total += amp;
        let lattice =
            Grid::from_fn(cells + 1, cells + 1, |_, _| rng.gen_range(0.0..1.0));
        let layer = Grid::from_fn(h, w, |i, j| {
            let u = i as f64 / h as f64 * cells as f64;
            let v = j as f64 / w as f64 * cells as f64;
            let (i0, j0) = (u.floor() as usize, v.floor() as usize);
            let (fi, fj) = (u - i0 as f64, v - j0 as f64);
            let a = lattice.get(i0, j0);
            let b = lattice.get(i0, j0 + 1);
            let c = lattice.get(i0 + 1, j0);
            let d = lattice.get(i0 + 1, j0 + 1);
            a * (1.0 - fi) * (1.0 - fj) + b * (1.0 - fi) * fj + c * fi * (1.0 - fj) + d * fi * fj
        });
        acc = acc.add(&layer.scale(amp));
    }
    // [0, amp_total] -> [0.48, 0.52]; the band is kept narrower than the
    // smallest supported delta so the shape stays the dominant intensity cue
    acc.map(|v| 0.48 + 0.04 * v / amp_total)
}

/// Star-shaped region r(theta) = base * (1 + sum_k a_k sin(k theta + phi_k)),
/// anisotropically scaled per family. Star-shaped about its center, hence
/// simply connected.
struct RadialShape {
    ci: f64,
    cj: f64,
    base: f64,
    aspect: f64,
    harmonics: Vec<(f64, f64, f64)>, // (k, amplitude, phase)
}

impl RadialShape {
    fn draw(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = (cfg.height as f64, cfg.width as f64);
        let ci = rng.gen_range(0.3 * h..0.7 * h);
        let cj = rng.gen_range(0.3 * w..0.7 * w);
        let base = rng.gen_range(0.12..0.32) * h.min(w);
        let (aspect, ks, amp_hi): (f64, std::ops::Range<usize>, f64) = match cfg.shape {
            ShapeFamily::Blob => (1.0, 2..4, 0.25),
            ShapeFamily::Elongated => (rng.gen_range(2.5..4.0), 2..4, 0.2),
            ShapeFamily::MultiPronged => (1.0, 5..9, 0.45),
        };
        let k = rng.gen_range(ks) as f64;
        let harmonics = vec![
            (k, rng.gen_range(0.1..amp_hi), rng.gen_range(0.0..TAU)),
            (2.0, rng.gen_range(0.0..0.15), rng.gen_range(0.0..TAU)),
        ];
        Self { ci, cj, base, aspect, harmonics }
    }

    fn contains(&self, i: usize, j: usize) -> bool {
        let di = (i as f64 - self.ci) * self.aspect.sqrt();
        let dj = (j as f64 - self.cj) / self.aspect.sqrt();
        let rho = (di * di + dj * dj).sqrt();
        let theta = di.atan2(dj);
        let r = self.base
            * (1.0
                + self
                    .harmonics
                    .iter()
                    .map(|&(k, a, p)| a * (k * theta + p).sin())
                    .sum::<f64>());
        rho <= r.max(2.0)
    }

    fn mask(&self, h: usize, w: usize) -> Grid {
        Grid::from_fn(h, w, |i, j| if self.contains(i, j) { 1.0 } else { 0.0 })
    }
}

/// Deterministic synthetic dataset: textured background plus an embedded
/// shape whose interior is the same texture shifted by delta. Shapes are
/// redrawn until the mask area lands in the [2%, 60%] band.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Sample>, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    for n in 0..cfg.count {
        let texture = value_noise(cfg.height, cfg.width, cfg.octaves, &mut rng);
        let mask = loop {
            let shape = RadialShape::draw(cfg, &mut rng);
            let mask = shape.mask(cfg.height, cfg.width);
            let area = mask.mean();
            if (AREA_LO..=AREA_HI).contains(&area) {
                break mask;
            }
        };
        let gray = texture.zip_map(&mask, |t, m| (t + cfg.delta * m).clamp(0.0, 1.0));
        let image = ImageRgb::splat(gray).expect("unit-range gray");
        out.push(Sample::new(format!("synthetic_{n:04}"), image, mask));
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn png_err(path: &Path) -> impl FnOnce(png::DecodingError) -> DataError + '_ {
    move |e| DataError::Png { path: path.to_path_buf(), message: e.to_string() }
}

fn decode_png(path: &Path) -> Result<(Vec<u8>, usize, usize, png::ColorType), DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(png_err(path))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err(path))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(DataError::UnsupportedDepth { path: path.to_path_buf(), depth: info.bit_depth });
    }
    buf.truncate(info.buffer_size());
    Ok((buf, info.height as usize, info.width as usize, info.color_type))
}

fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 255.0
}

fn unit_to_byte(v: f64) -> u8 {
    // round half up after clamping
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Read an 8-bit PNG as a grayscale grid. Grayscale files decode exactly
/// (write -> read is lossless); color inputs are reduced by the standard
/// luma weights.
pub fn read_png_gray(path: &Path) -> Result<Grid, DataError> {
    let (buf, h, w, color) = decode_png(path)?;
    let luma = |r: u8, g: u8, b: u8| {
        0.299 * byte_to_unit(r) + 0.587 * byte_to_unit(g) + 0.114 * byte_to_unit(b)
    };
    let data: Vec<f64> = match color {
        png::ColorType::Grayscale => buf.iter().map(|&b| byte_to_unit(b)).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).map(|c| byte_to_unit(c[0])).collect(),
        png::ColorType::Rgb => buf.chunks_exact(3).map(|c| luma(c[0], c[1], c[2])).collect(),
        png::ColorType::Rgba => buf.chunks_exact(4).map(|c| luma(c[0], c[1], c[2])).collect(),
        other => return Err(DataError::UnsupportedColor { path: path.to_path_buf(), color: other }),
    };
    Grid::new(h, w, data)
        .map_err(|e| DataError::BadGrid { path: path.to_path_buf(), message: e.to_string() })
}

/// Read an 8-bit PNG as RGB; grayscale inputs are splatted, alpha dropped.
pub fn read_png_rgb(path: &Path) -> Result<ImageRgb, DataError> {
    let (buf, h, w, color) = decode_png(path)?;
    let px = |f: &dyn Fn(usize) -> (f64, f64, f64)| -> Result<ImageRgb, DataError> {
        let mut r = Vec::with_capacity(h * w);
        let mut g = Vec::with_capacity(h * w);
        let mut b = Vec::with_capacity(h * w);
        for k in 0..h * w {
            let (rv, gv, bv) = f(k);
            r.push(rv);
            g.push(gv);
            b.push(bv);
        }
        let make = |d: Vec<f64>| Grid::new(h, w, d);
        let (r, g, b) = (make(r), make(g), make(b));
        match (r, g, b) {
            (Ok(r), Ok(g), Ok(b)) => ImageRgb::new(r, g, b).map_err(|e| DataError::BadGrid {
                path: path.to_path_buf(),
                message: e.to_string(),
            }),
            _ => Err(DataError::BadGrid { path: path.to_path_buf(), message: "empty image".into() }),
        }
    };
    match color {
        png::ColorType::Grayscale => px(&|k| {
            let v = byte_to_unit(buf[k]);
            (v, v, v)
        }),
        png::ColorType::GrayscaleAlpha => px(&|k| {
            let v = byte_to_unit(buf[2 * k]);
            (v, v, v)
        }),
        png::ColorType::Rgb => px(&|k| {
            (byte_to_unit(buf[3 * k]), byte_to_unit(buf[3 * k + 1]), byte_to_unit(buf[3 * k + 2]))
        }),
        png::ColorType::Rgba => px(&|k| {
            (byte_to_unit(buf[4 * k]), byte_to_unit(buf[4 * k + 1]), byte_to_unit(buf[4 * k + 2]))
        }),
        other => Err(DataError::UnsupportedColor { path: path.to_path_buf(), color: other }),
    }
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| DataError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(encode)?;
    writer.write_image_data(data).map_err(|e| DataError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write a [0,1] grid as 8-bit grayscale PNG (round half up).
pub fn write_png_gray(path: &Path, g: &Grid) -> Result<(), DataError> {
    let bytes: Vec<u8> = g.data().iter().map(|&v| unit_to_byte(v)).collect();
    encode_png(path, g.width(), g.height(), png::ColorType::Grayscale, &bytes)
}

/// Write an RGB image as 8-bit PNG.
pub fn write_png_rgb(path: &Path, img: &ImageRgb) -> Result<(), DataError> {
    let n = img.height() * img.width();
    let mut bytes = Vec::with_capacity(3 * n);
    for k in 0..n {
        bytes.push(unit_to_byte(img.red().data()[k]));
        bytes.push(unit_to_byte(img.green().data()[k]));
        bytes.push(unit_to_byte(img.blue().data()[k]));
    }
    encode_png(path, img.width(), img.height(), png::ColorType::Rgb, &bytes)
}

/// Load `<root>/Images/*.png` paired with `<root>/GT/<stem>.png`, sorted by
/// stem. Ground truth is thresholded at 128/255.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>, DataError> {
    let images_dir = root.join("Images");
    let gt_dir = root.join("GT");
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&images_dir).map_err(io_err(&images_dir))? {
        let entry = entry.map_err(io_err(&images_dir))?;
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "png" => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
                stems.push((stem, path));
            }
            "jpg" | "jpeg" => return Err(DataError::UnsupportedFormat { path }),
            _ => {}
        }
    }
    stems.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Vec::with_capacity(stems.len());
    for (stem, img_path) in stems {
        let gt_path = gt_dir.join(format!("{stem}.png"));
        if !gt_path.exists() {
            return Err(DataError::MissingGt { stem });
        }
        let image = read_png_rgb(&img_path)?;
        let gt = read_png_gray(&gt_path)?;
        let (ih, iw) = (image.height(), image.width());
        let (gh, gw) = (gt.height(), gt.width());
        if (ih, iw) != (gh, gw) {
            return Err(DataError::DimMismatch { stem, iw, ih, gw, gh });
        }
        // threshold at 128/255
        let mask = gt.map(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 });
        out.push(Sample::new(stem, image, mask));
    }
    Ok(out)
}
