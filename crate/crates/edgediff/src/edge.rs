//! Edge prior construction: grayscale conversion, the five interchangeable
//! extraction operators (Sobel, Prewitt, Laplacian, LoG, Canny) and the
//! smoothed-threshold sanitization used as the image-grounded loss target.

use crate::{Grid, GridError, Kernel3x3};
use std::collections::VecDeque;
use std::fmt;
use thiserror::Error;

/// Stability floor added under the gradient-magnitude square root.
pub const EDGE_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EdgeError {
    #[error("channel dimensions differ: {0}x{1} vs {2}x{3}")]
    ChannelMismatch(usize, usize, usize, usize),
    #[error("channel values must lie in [0,1], found {0}")]
    OutOfRange(f64),
    #[error("sanitize threshold must lie in [0,1), got {0}")]
    BadThreshold(f64),
    #[error("operator parameter must be positive, got {0}")]
    BadParameter(f64),
    #[error("canny thresholds must satisfy 0 < low < high, got low={0} high={1}")]
    BadCannyThresholds(f64, f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Three-channel image with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    r: Grid,
    g: Grid,
    b: Grid,
}

impl ImageRgb {
    pub fn new(r: Grid, g: Grid, b: Grid) -> Result<Self, EdgeError> {
        for ch in [&g, &b] {
            if !r.same_shape(ch) {
                return Err(EdgeError::ChannelMismatch(r.height(), r.width(), ch.height(), ch.width()));
            }
        }
        for ch in [&r, &g, &b] {
            if let Some(&v) = ch.data().iter().find(|v| **v < 0.0 || **v > 1.0) {
                return Err(EdgeError::OutOfRange(v));
            }
        }
        Ok(Self { r, g, b })
    }

    /// Grayscale image replicated over all three channels.
    pub fn splat(gray: Grid) -> Result<Self, EdgeError> {
        Self::new(gray.clone(), gray.clone(), gray)
    }

    pub fn height(&self) -> usize {
        self.r.height()
    }

    pub fn width(&self) -> usize {
        self.r.width()
    }

    pub fn red(&self) -> &Grid {
        &self.r
    }

    pub fn green(&self) -> &Grid {
        &self.g
    }

    pub fn blue(&self) -> &Grid {
        &self.b
    }
}

/// BT.601 luminance: 0.299 R + 0.587 G + 0.114 B.
pub fn to_grayscale(img: &ImageRgb) -> Grid {
    Grid::from_fn(img.height(), img.width(), |i, j| {
        0.299 * img.r.get(i, j) + 0.587 * img.g.get(i, j) + 0.114 * img.b.get(i, j)
    })
}

/// Which extractor produced a prior, with operator-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "operator", rename_all = "snake_case")]
#[derive(Default)]
pub enum EdgeOperator {
    #[default]
    Sobel,
    Prewitt,
    Laplacian,
    Log { sigma: f64 },
    Canny { sigma: f64, low: f64, high: f64 },
}


impl EdgeOperator {
    pub fn log_default() -> Self {
        // Classical Marr-Hildreth default.
        EdgeOperator::Log { sigma: 1.4 }
    }

    pub fn canny_default() -> Self {
        EdgeOperator::Canny { sigma: 1.0, low: 0.1, high: 0.2 }
    }

    pub fn validate(&self) -> Result<(), EdgeError> {
        match *self {
            EdgeOperator::Sobel | EdgeOperator::Prewitt | EdgeOperator::Laplacian => Ok(()),
            EdgeOperator::Log { sigma } => {
                if sigma > 0.0 {
                    Ok(())
                } else {
                    Err(EdgeError::BadParameter(sigma))
                }
            }
            EdgeOperator::Canny { sigma, low, high } => {
                if sigma <= 0.0 {
                    return Err(EdgeError::BadParameter(sigma));
                }
                if !(0.0 < low && low < high) {
                    return Err(EdgeError::BadCannyThresholds(low, high));
                }
                Ok(())
            }
        }
    }

    /// Stable identifier usable as a disk-cache key component.
    pub fn cache_key(&self) -> String {
        match *self {
            EdgeOperator::Sobel => "sobel".into(),
            EdgeOperator::Prewitt => "prewitt".into(),
            EdgeOperator::Laplacian => "laplacian".into(),
            EdgeOperator::Log { sigma } => format!("log_s{sigma:.3}"),
            EdgeOperator::Canny { sigma, low, high } => {
                format!("canny_s{sigma:.3}_l{low:.3}_h{high:.3}")
            }
        }
    }

    /// Canny output is binary and carries no gradient; it must never be used
    /// as a function of the prediction.
    pub fn is_differentiable(&self) -> bool {
        !matches!(self, EdgeOperator::Canny { .. })
    }
}

impl fmt::Display for EdgeOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EdgeOperator::Sobel => "sobel",
            EdgeOperator::Prewitt => "prewitt",
            EdgeOperator::Laplacian => "laplacian",
            EdgeOperator::Log { .. } => "log",
            EdgeOperator::Canny { .. } => "canny",
        };
        f.write_str(name)
    }
}

/// A [0,1] boundary-strength map plus the operator that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePrior {
    pub grid: Grid,
    pub operator: EdgeOperator,
}

/// Gradient magnitude sqrt((Kx*g)^2 + (Ky*g)^2 + eps), clipped to [0,1].
pub fn sobel_magnitude(g: &Grid) -> Grid {
    gradient_magnitude(g, &Kernel3x3::sobel_x(), &Kernel3x3::sobel_y())
}

pub fn prewitt_magnitude(g: &Grid) -> Grid {
    gradient_magnitude(g, &Kernel3x3::prewitt_x(), &Kernel3x3::prewitt_y())
}

fn gradient_magnitude(g: &Grid, kx: &Kernel3x3, ky: &Kernel3x3) -> Grid {
    let gx = g.conv2d_same(kx);
    let gy = g.conv2d_same(ky);
    gx.zip_map(&gy, |x, y| (x * x + y * y + EDGE_EPS).sqrt()).clamp01()
}

fn laplacian_edges(g: &Grid) -> Grid {
    g.conv2d_same(&Kernel3x3::laplacian()).map(f64::abs).clamp01()
}

/// Gaussian smoothing with a separable kernel, border-renormalized so
/// constants stay constant.
pub fn gaussian_smooth(g: &Grid, sigma: f64) -> Grid {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &Grid, vertical: bool| {
        Grid::from_fn(src.height(), src.width(), |i, j| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (wi, d) in (-radius..=radius).enumerate() {
                let (si, sj) = if vertical { (i as isize + d, j as isize) } else { (i as isize, j as isize + d) };
                if si >= 0 && (si as usize) < src.height() && sj >= 0 && (sj as usize) < src.width() {
                    acc += weights[wi] * src.get(si as usize, sj as usize);
                    norm += weights[wi];
                }
            }
            acc / norm
        })
    };
    pass(&pass(g, false), true)
}

fn log_edges(g: &Grid, sigma: f64) -> Grid {
    laplacian_edges(&gaussian_smooth(g, sigma))
}

/// 3x3 cross-correlation with replicated borders; Canny-only, so the image
/// frame does not read as a step against the zero padding.
fn conv3_replicate(g: &Grid, k: &Kernel3x3) -> Grid {
    let (h, w) = (g.height() as isize, g.width() as isize);
    Grid::from_fn(g.height(), g.width(), |i, j| {
        let mut acc = 0.0;
        for di in -1..=1isize {
            for dj in -1..=1isize {
                let si = (i as isize + di).clamp(0, h - 1) as usize;
                let sj = (j as isize + dj).clamp(0, w - 1) as usize;
                acc += k.weights[((di + 1) * 3 + (dj + 1)) as usize] * g.get(si, sj);
            }
        }
        acc
    })
}

fn canny_edges(g: &Grid, sigma: f64, low: f64, high: f64) -> Grid {
    let smoothed = gaussian_smooth(g, sigma);
    let gx = conv3_replicate(&smoothed, &Kernel3x3::sobel_x());
    let gy = conv3_replicate(&smoothed, &Kernel3x3::sobel_y());
    let mag = gx.zip_map(&gy, |x, y| (x * x + y * y).sqrt());
    let peak = mag.max_value();
    if peak <= 0.0 {
        return Grid::zeros(g.height(), g.width());
    }
    let mag = mag.scale(1.0 / peak);

    let (h, w) = (g.height(), g.width());
    let at = |m: &Grid, i: isize, j: isize| -> f64 {
        if i >= 0 && (i as usize) < h && j >= 0 && (j as usize) < w {
            m.get(i as usize, j as usize)
        } else {
            0.0
        }
    };
    // Non-maximum suppression along the quantized gradient direction. Ties
    // are broken asymmetrically (strict against the negative-side neighbour)
    // so an ideal step keeps exactly one pixel.
    let mut thin = Grid::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let m = mag.get(i, j);
            if m == 0.0 {
                continue;
            }
            let theta = gy.get(i, j).atan2(gx.get(i, j)).to_degrees().rem_euclid(180.0);
            let (di, dj): (isize, isize) = if !(22.5..157.5).contains(&theta) {
                (0, 1)
            } else if theta < 67.5 {
                (1, 1)
            } else if theta < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let n_neg = at(&mag, i as isize - di, j as isize - dj);
            let n_pos = at(&mag, i as isize + di, j as isize + dj);
            if m > n_neg && m >= n_pos {
                thin.set(i, j, m);
            }
        }
    }

    // Double-threshold hysteresis: strong pixels seed, weak pixels join by
    // 8-connectivity.
    let mut out = Grid::zeros(h, w);
    let mut queue = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if thin.get(i, j) >= high {
                out.set(i, j, 1.0);
                queue.push_back((i, j));
            }
        }
    }
    while let Some((i, j)) = queue.pop_front() {
        for di in -1..=1isize {
            for dj in -1..=1isize {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni >= 0 && (ni as usize) < h && nj >= 0 && (nj as usize) < w {
                    let (ni, nj) = (ni as usize, nj as usize);
                    if out.get(ni, nj) == 0.0 && thin.get(ni, nj) >= low {
                        out.set(ni, nj, 1.0);
                        queue.push_back((ni, nj));
                    }
                }
            }
        }
    }
    out
}

/// Run the configured operator over the grayscale projection of `img`.
pub fn extract_edge_prior(img: &ImageRgb, op: EdgeOperator) -> Result<EdgePrior, EdgeError> {
    op.validate()?;
    let gray = to_grayscale(img);
    let grid = match op {
        EdgeOperator::Sobel => sobel_magnitude(&gray),
        EdgeOperator::Prewitt => prewitt_magnitude(&gray),
        EdgeOperator::Laplacian => laplacian_edges(&gray),
        EdgeOperator::Log { sigma } => log_edges(&gray, sigma),
        EdgeOperator::Canny { sigma, low, high } => canny_edges(&gray, sigma, low, high),
    };
    Ok(EdgePrior { grid, operator: op })
}

/// Smooth, threshold and rescale a prior: max(0, (AvgPool3(E) - tau)/(1 - tau)).
pub fn sanitize_edges(e: &EdgePrior, tau: f64) -> Result<Grid, EdgeError> {
    sanitize_grid(&e.grid, tau)
}

pub fn sanitize_grid(e: &Grid, tau: f64) -> Result<Grid, EdgeError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(EdgeError::BadThreshold(tau));
    }
    let pooled = e.avg_pool_same(3)?;
    Ok(pooled.map(|v| ((v - tau) / (1.0 - tau)).max(0.0)))
}
