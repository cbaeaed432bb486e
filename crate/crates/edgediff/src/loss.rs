//! Multi-scale boundary-informed training objective: boundary-weighted focal
//! BCE, weighted IoU, ground-truth edge alignment, uncertainty regularization
//! and image-grounded edge consistency, aggregated over spatial scales.
//!
//! All terms are differentiable with respect to the logit map `z`. Weight
//! maps, ground-truth Sobel responses and sanitized priors are constants
//! during differentiation: they depend only on `y` and the input image.

use crate::edge::{sanitize_grid, EdgeError, EDGE_EPS};
use crate::tape::Var;
use crate::{Grid, Kernel3x3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("mask must be binary, found {0}")]
    NonBinaryMask(f64),
    #[error("invalid loss coefficients: {0}")]
    BadCoefficients(String),
    #[error(transparent)]
    Edge(#[from] EdgeError),
}

/// Every knob of the training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossCoefficients {
    pub lambda_gt_edge: f64,
    pub lambda_ual: f64,
    pub lambda_rgb: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub pool_k: usize,
    pub tau: f64,
    /// (scale, weight) pairs; scales in (0,1], weights positive.
    pub scales: Vec<(f64, f64)>,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self {
            lambda_gt_edge: 0.01,
            lambda_ual: 0.01,
            lambda_rgb: 0.005,
            gamma: 2.0,
            alpha: 5.0,
            pool_k: 31,
            tau: 0.25,
            scales: vec![(1.0, 1.0), (0.5, 0.25), (0.25, 0.125)],
        }
    }
}

impl LossCoefficients {
    /// The single-scale structure-only baseline row of the ablation grid.
    pub fn single_scale_fs() -> Self {
        Self {
            lambda_gt_edge: 0.0,
            lambda_ual: 0.0,
            lambda_rgb: 0.0,
            scales: vec![(1.0, 1.0)],
            ..Self::default()
        }
    }

    /// Multi-scale structure-only configuration.
    pub fn multiscale_fs() -> Self {
        Self { lambda_gt_edge: 0.0, lambda_ual: 0.0, lambda_rgb: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |m: String| Err(LossError::BadCoefficients(m));
        if self.scales.is_empty() {
            return bad("scales must be nonempty".into());
        }
        for &(s, w) in &self.scales {
            if !(s > 0.0 && s <= 1.0) {
                return bad(format!("scale {s} outside (0,1]"));
            }
            if w <= 0.0 {
                return bad(format!("scale weight {w} not positive"));
            }
        }
        if self.pool_k.is_multiple_of(2) || self.pool_k == 0 {
            return bad(format!("pool_k must be odd, got {}", self.pool_k));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0,1)", self.tau));
        }
        for (name, v) in [
            ("lambda_gt_edge", self.lambda_gt_edge),
            ("lambda_ual", self.lambda_ual),
            ("lambda_rgb", self.lambda_rgb),
        ] {
            if v < 0.0 {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Per-term values at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLossTerms {
    pub scale: f64,
    pub weight: f64,
    pub fbce: f64,
    pub wiou: f64,
    pub fs: f64,
    pub gt_edge: f64,
    pub ual: f64,
    pub rgb: f64,
    pub total: f64,
}

/// Full per-scale, per-term record plus the scale-aggregated objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_scale: Vec<ScaleLossTerms>,
    pub total: f64,
}

impl LossBreakdown {
    /// Recompute the aggregate from the recorded parts.
    pub fn reconstruct_total(&self) -> f64 {
        let wsum: f64 = self.per_scale.iter().map(|t| t.weight).sum();
        self.per_scale.iter().map(|t| t.weight * t.total).sum::<f64>() / wsum
    }
}

fn check_shapes(z: &Grid, y: &Grid) -> Result<(), LossError> {
    if z.same_shape(y) {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch(z.height(), z.width(), y.height(), y.width()))
    }
}

fn check_binary(y: &Grid) -> Result<(), LossError> {
    match y.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(&v) => Err(LossError::NonBinaryMask(v)),
        None => Ok(()),
    }
}

/// w = 1 + alpha * |AvgPool_k(y) - y|; large exactly at boundary pixels.
pub fn boundary_weight_map(y: &Grid, alpha: f64, k: usize) -> Result<Grid, LossError> {
    check_binary(y)?;
    let pooled = y.avg_pool_same(k).map_err(EdgeError::from)?;
    Ok(pooled.zip_map(y, |p, yv| 1.0 + alpha * (p - yv).abs()))
}

const CLAMP_LO: f64 = 1e-7;
const CLAMP_HI: f64 = 1.0 - 1e-7;

/// Boundary-weighted focal BCE from logits, normalized by the weight mass.
pub fn focal_bce<'t>(z: Var<'t>, y: &Grid, w: &Grid, gamma: f64) -> Result<Var<'t>, LossError> {
    let zv = z.value();
    check_shapes(&zv, y)?;
    check_shapes(&zv, w)?;
    let yhat = z.sigmoid().clamp(CLAMP_LO, CLAMP_HI);
    let one_minus_y = y.map(|v| 1.0 - v);
    // p_t = yhat*y + (1 - yhat)*(1 - y)
    let p_t = yhat.mul_const(y).add(yhat.scale(-1.0).add_scalar(1.0).mul_const(&one_minus_y));
    let modulation = p_t.scale(-1.0).add_scalar(1.0).powf(gamma);
    let bce = z.bce_with_logits(y);
    let num = modulation.mul(bce).mul_const(w).sum();
    Ok(num.scale(1.0 / (w.sum() + EDGE_EPS)))
}

/// 1 - (sum(w*yhat*y) + 1) / (sum(w*(yhat+y)) - sum(w*yhat*y) + 1).
pub fn weighted_iou<'t>(z: Var<'t>, y: &Grid, w: &Grid) -> Result<Var<'t>, LossError> {
    let zv = z.value();
    check_shapes(&zv, y)?;
    check_shapes(&zv, w)?;
    let yhat = z.sigmoid();
    let wy = w.mul(y);
    let inter = yhat.mul_const(&wy).sum();
    let wyhat_sum = yhat.mul_const(w).sum();
    let union = wyhat_sum.add_scalar(wy.sum()).sub(inter);
    let ratio = inter.add_scalar(1.0).mul(union.add_scalar(1.0).powf(-1.0));
    Ok(ratio.scale(-1.0).add_scalar(1.0))
}

/// Focal BCE + weighted IoU with a shared boundary weight map.
pub fn focal_structure<'t>(
    z: Var<'t>,
    y: &Grid,
    c: &LossCoefficients,
) -> Result<(Var<'t>, Var<'t>), LossError> {
    let w = boundary_weight_map(y, c.alpha, c.pool_k)?;
    Ok((focal_bce(z, y, &w, c.gamma)?, weighted_iou(z, y, &w)?))
}

/// Differentiable Sobel magnitude of a tape grid, clipped to [0,1].
fn sobel_magnitude_var<'t>(v: Var<'t>) -> Var<'t> {
    let gx = v.conv2d(&Kernel3x3::sobel_x());
    let gy = v.conv2d(&Kernel3x3::sobel_y());
    gx.mul(gx).add(gy.mul(gy)).add_scalar(EDGE_EPS).sqrt().clamp(0.0, 1.0)
}

fn l1_mean_to_const<'t>(v: Var<'t>, target: &Grid) -> Var<'t> {
    v.sub_const(target).abs().mean()
}

/// Mean L1 distance between the prediction's Sobel response and the mask's.
pub fn gt_edge_loss<'t>(z: Var<'t>, y: &Grid) -> Result<Var<'t>, LossError> {
    let zv = z.value();
    check_shapes(&zv, y)?;
    let pred_edges = sobel_magnitude_var(z.sigmoid());
    let target = crate::edge::sobel_magnitude(y);
    Ok(l1_mean_to_const(pred_edges, &target))
}

/// (1/HW) * sum(1 - (2*yhat - 1)^2); maximal at yhat = 0.5.
pub fn uncertainty_loss<'t>(z: Var<'t>) -> Var<'t> {
    let centered = z.sigmoid().scale(2.0).add_scalar(-1.0);
    centered.mul(centered).scale(-1.0).add_scalar(1.0).mean()
}

/// Mean L1 distance between the prediction's Sobel response and the
/// sanitized prior; the prior is a constant with respect to `z`.
pub fn rgb_edge_loss<'t>(z: Var<'t>, e: &Grid, tau: f64) -> Result<Var<'t>, LossError> {
    let zv = z.value();
    check_shapes(&zv, e)?;
    let target = sanitize_grid(e, tau)?;
    let pred_edges = sobel_magnitude_var(z.sigmoid());
    Ok(l1_mean_to_const(pred_edges, &target))
}

/// Evaluate all four terms at every configured scale and aggregate.
///
/// Ground-truth masks are re-binarized at 0.5 after bilinear resampling; the
/// prior is resampled bilinearly and sanitized at each scale.
pub fn multiscale_total<'t>(
    z: Var<'t>,
    y: &Grid,
    e: &Grid,
    c: &LossCoefficients,
) -> Result<(LossBreakdown, Var<'t>), LossError> {
    c.validate()?;
    let zv = z.value();
    check_shapes(&zv, y)?;
    check_shapes(&zv, e)?;
    check_binary(y)?;
    let (h, w) = (zv.height(), zv.width());

    let mut per_scale = Vec::with_capacity(c.scales.len());
    let mut aggregate: Option<Var<'t>> = None;
    let weight_sum: f64 = c.scales.iter().map(|&(_, w)| w).sum();

    for &(s, omega) in &c.scales {
        let (hs, ws) = (((h as f64 * s).floor() as usize).max(1), ((w as f64 * s).floor() as usize).max(1));
        let zs = if (hs, ws) == (h, w) { z } else { z.resize_bilinear(hs, ws) };
        let ys = y
            .resize_bilinear(hs, ws)
            .map_err(EdgeError::from)?
            .map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let es = e.resize_bilinear(hs, ws).map_err(EdgeError::from)?;

        let (fbce, wiou) = focal_structure(zs, &ys, c)?;
        let fs = fbce.add(wiou);
        let gt = gt_edge_loss(zs, &ys)?;
        let ual = uncertainty_loss(zs);
        let rgb = rgb_edge_loss(zs, &es, c.tau)?;

        let total = fs
            .add(gt.scale(c.lambda_gt_edge))
            .add(ual.scale(c.lambda_ual))
            .add(rgb.scale(c.lambda_rgb));

        per_scale.push(ScaleLossTerms {
            scale: s,
            weight: omega,
            fbce: fbce.scalar_value(),
            wiou: wiou.scalar_value(),
            fs: fs.scalar_value(),
            gt_edge: gt.scalar_value(),
            ual: ual.scalar_value(),
            rgb: rgb.scalar_value(),
            total: total.scalar_value(),
        });

        let contribution = total.scale(omega / weight_sum);
        aggregate = Some(match aggregate {
            Some(acc) => acc.add(contribution),
            None => contribution,
        });
    }

    let root = aggregate.expect("scales nonempty");
    let breakdown = LossBreakdown { per_scale, total: root.scalar_value() };
    Ok((breakdown, root))
}
