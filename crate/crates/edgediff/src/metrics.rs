//! The four standard evaluation metrics (S-measure, E-measure, weighted
//! F-beta, MAE), following the de-facto reference evaluation procedures.
//! Every nontrivial metric is cross-checked against a naive double-loop
//! oracle in the integration tests.

use crate::Grid;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("ground truth must be binary, found {0}")]
    NonBinaryMask(f64),
    #[error("prediction value {0} outside [0,1]")]
    NonUnitPrediction(f64),
    #[error("evaluation sets have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("evaluation set is empty")]
    EmptySet,
}

/// Mean per-image metrics over an evaluated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub s_measure: f64,
    pub e_measure: f64,
    pub weighted_fbeta: f64,
    pub mae: f64,
    pub count: usize,
}

const EPS: f64 = 1e-20;

fn check_pair(pred: &Grid, gt: &Grid) -> Result<(), MetricsError> {
    if !pred.same_shape(gt) {
        return Err(MetricsError::ShapeMismatch(
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width(),
        ));
    }
    if let Some(&v) = pred.data().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        return Err(MetricsError::NonUnitPrediction(v));
    }
    if let Some(&v) = gt.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(MetricsError::NonBinaryMask(v));
    }
    Ok(())
}

/// Mean absolute error; in [0,1] for unit-range inputs.
pub fn mae(pred: &Grid, gt: &Grid) -> Result<f64, MetricsError> {
    check_pair(pred, gt)?;
    Ok(pred.zip_map(gt, |p, y| (p - y).abs()).mean())
}

fn sample_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Object score 2*mean / (mean^2 + 1 + std).
fn object_score(xs: &[f64]) -> f64 {
    let (mean, var) = sample_stats(xs);
    2.0 * mean / (mean * mean + 1.0 + var.sqrt() + EPS)
}

/// SSIM-like region similarity with sample (n-1) moments.
fn region_ssim(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, vx) = sample_stats(xs);
    let (my, vy) = sample_stats(ys);
    let n = xs.len() as f64;
    let cov = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
    };
    let alpha = 4.0 * mx * my * cov;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn partition(
    pred: &Grid,
    gt: &Grid,
    cut_r: usize,
    cut_c: usize,
) -> [(Vec<f64>, Vec<f64>); 4] {
    let mut parts: [(Vec<f64>, Vec<f64>); 4] = Default::default();
    for i in 0..gt.height() {
        for j in 0..gt.width() {
            let q = match (i < cut_r, j < cut_c) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            parts[q].0.push(pred.get(i, j));
            parts[q].1.push(gt.get(i, j));
        }
    }
    parts
}

/// Structure measure: S = (S_object + S_region) / 2, with mean-based
/// fallbacks for all-empty / all-full ground truth.
pub fn s_measure(pred: &Grid, gt: &Grid) -> Result<f64, MetricsError> {
    check_pair(pred, gt)?;
    let mu = gt.mean();
    if mu == 0.0 {
        return Ok(1.0 - pred.mean());
    }
    if mu == 1.0 {
        return Ok(pred.mean());
    }

    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let (mut ri, mut rj, mut n_fg) = (0.0, 0.0, 0.0);
    for i in 0..gt.height() {
        for j in 0..gt.width() {
            if gt.get(i, j) == 1.0 {
                fg.push(pred.get(i, j));
                ri += i as f64;
                rj += j as f64;
                n_fg += 1.0;
            } else {
                bg.push(1.0 - pred.get(i, j));
            }
        }
    }
    let s_object = mu * object_score(&fg) + (1.0 - mu) * object_score(&bg);

    // Quadrant split at the foreground centroid; quadrant weights are area
    // fractions, empty quadrants contribute nothing.
    let cut_r = (ri / n_fg).round() as usize + 1;
    let cut_c = (rj / n_fg).round() as usize + 1;
    let total = (gt.height() * gt.width()) as f64;
    let s_region: f64 = partition(pred, gt, cut_r, cut_c)
        .iter()
        .map(|(ps, ys)| ps.len() as f64 / total * region_ssim(ps, ys))
        .sum();

    Ok((0.5 * s_object + 0.5 * s_region).clamp(0.0, 1.0))
}

/// Adaptive binarization at min(2*mean, 1); a zero threshold falls back to
/// strict positivity so an all-zero prediction stays all-zero.
fn adaptive_binarize(pred: &Grid) -> Grid {
    let thr = (2.0 * pred.mean()).min(1.0);
    if thr == 0.0 {
        pred.map(|p| if p > 0.0 { 1.0 } else { 0.0 })
    } else {
        pred.map(|p| if p >= thr { 1.0 } else { 0.0 })
    }
}

/// Enhanced-alignment measure over the adaptively binarized prediction;
/// plain mean over all pixels, so the value stays in [0,1].
pub fn e_measure(pred: &Grid, gt: &Grid) -> Result<f64, MetricsError> {
    check_pair(pred, gt)?;
    let fm = adaptive_binarize(pred);
    let mu = gt.mean();
    if mu == 0.0 {
        return Ok(1.0 - fm.mean());
    }
    if mu == 1.0 {
        return Ok(fm.mean());
    }
    let mfm = fm.mean();
    let enhanced = fm.zip_map(gt, |f, y| {
        let af = f - mfm;
        let ag = y - mu;
        let phi = 2.0 * af * ag / (af * af + ag * ag + EPS);
        (1.0 + phi) * (1.0 + phi) / 4.0
    });
    Ok(enhanced.mean())
}

/// Exact squared Euclidean distance transform (two-pass 1-D lower-envelope
/// algorithm), columns then rows. `f` holds 0 at sources, +inf elsewhere.
fn edt_sq(fg: &Grid) -> Vec<f64> {
    let (h, w) = (fg.height(), fg.width());
    let mut d: Vec<f64> = fg
        .data()
        .iter()
        .map(|&v| if v == 1.0 { 0.0 } else { f64::INFINITY })
        .collect();
    let mut scratch = vec![0.0; h.max(w)];
    for j in 0..w {
        for i in 0..h {
            scratch[i] = d[i * w + j];
        }
        let out = dt1d(&scratch[..h]);
        for i in 0..h {
            d[i * w + j] = out[i];
        }
    }
    for i in 0..h {
        scratch[..w].copy_from_slice(&d[i * w..(i + 1) * w]);
        let out = dt1d(&scratch[..w]);
        d[i * w..(i + 1) * w].copy_from_slice(&out);
    }
    d
}

/// 1-D squared-distance transform via the lower envelope of parabolas.
fn dt1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = if f[p].is_infinite() {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64)
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut out = vec![0.0; n];
    let mut k2 = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k2 + 1] < q as f64 {
            k2 += 1;
        }
        let p = v[k2];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
    out
}

/// Nearest foreground pixel per cell, breaking squared-distance ties toward
/// the smallest column, then the smallest row. Separable scan: per column
/// the nearest foreground row, then a sweep over candidate columns.
fn nearest_fg(gt: &Grid) -> Vec<(usize, usize)> {
    let (h, w) = (gt.height(), gt.width());
    // nearest foreground row per (row, column), smallest row on ties
    let mut col_row = vec![usize::MAX; h * w];
    let mut col_d = vec![f64::INFINITY; h * w];
    for j in 0..w {
        for i in 0..h {
            if gt.get(i, j) != 1.0 {
                continue;
            }
            for r in 0..h {
                let d = (r as f64 - i as f64).powi(2);
                if d < col_d[r * w + j] {
                    col_d[r * w + j] = d;
                    col_row[r * w + j] = i;
                }
            }
        }
    }
    let mut out = vec![(usize::MAX, usize::MAX); h * w];
    for i in 0..h {
        for j in 0..w {
            let mut best = f64::INFINITY;
            for jc in 0..w {
                if col_row[i * w + jc] == usize::MAX {
                    continue;
                }
                let d = col_d[i * w + jc] + (j as f64 - jc as f64).powi(2);
                if d < best {
                    best = d;
                    out[i * w + j] = (col_row[i * w + jc], jc);
                }
            }
        }
    }
    out
}

/// Normalized 7x7 Gaussian (sigma = 5) applied with zero padding.
fn gauss7(g: &Grid) -> Grid {
    let mut k = [[0.0f64; 7]; 7];
    let mut sum = 0.0;
    for (u, row) in k.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            let (du, dv) = (u as f64 - 3.0, v as f64 - 3.0);
            *cell = (-(du * du + dv * dv) / 50.0).exp();
            sum += *cell;
        }
    }
    let (h, w) = (g.height(), g.width());
    Grid::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for (u, row) in k.iter().enumerate() {
            for (v, &kv) in row.iter().enumerate() {
                let (ii, jj) = (i as isize + u as isize - 3, j as isize + v as isize - 3);
                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                    acc += kv * g.get(ii as usize, jj as usize);
                }
            }
        }
        acc / sum
    })
}

/// Weighted F-beta (beta^2 = 1): errors propagated from the nearest
/// foreground pixel, smoothed, and distance-attenuated in the background.
/// All-empty ground truth scores 0 by convention.
pub fn weighted_fbeta(pred: &Grid, gt: &Grid) -> Result<f64, MetricsError> {
    check_pair(pred, gt)?;
    if gt.sum() == 0.0 {
        return Ok(0.0);
    }
    let (h, w) = (gt.height(), gt.width());
    let err = pred.zip_map(gt, |p, y| (p - y).abs());
    let dist_sq = edt_sq(gt);
    let nearest = nearest_fg(gt);

    let et = Grid::from_fn(h, w, |i, j| {
        if gt.get(i, j) == 1.0 {
            err.get(i, j)
        } else {
            let (ni, nj) = nearest[i * w + j];
            err.get(ni, nj)
        }
    });
    let ea = gauss7(&et);
    // Foreground pixels take the smoothed error when it is smaller.
    let min_e = Grid::from_fn(h, w, |i, j| {
        if gt.get(i, j) == 1.0 {
            err.get(i, j).min(ea.get(i, j))
        } else {
            err.get(i, j)
        }
    });
    let ew = Grid::from_fn(h, w, |i, j| {
        if gt.get(i, j) == 1.0 {
            min_e.get(i, j)
        } else {
            let b = 2.0 - (0.5f64.ln() / 5.0 * dist_sq[i * w + j].sqrt()).exp();
            min_e.get(i, j) * b
        }
    });

    let n_fg = gt.sum();
    let fg_err: f64 = ew.data().iter().zip(gt.data()).filter(|&(_, &y)| y == 1.0).map(|(&e, _)| e).sum();
    let bg_err: f64 = ew.data().iter().zip(gt.data()).filter(|&(_, &y)| y == 0.0).map(|(&e, _)| e).sum();
    let tp_w = n_fg - fg_err;
    let recall = 1.0 - fg_err / n_fg;
    let precision = tp_w / (tp_w + bg_err + EPS);
    let f = 2.0 * precision * recall / (precision + recall + EPS);
    Ok(f.clamp(0.0, 1.0))
}

/// Per-image metrics averaged over an aligned prediction/ground-truth set.
pub fn evaluate(preds: &[Grid], gts: &[Grid]) -> Result<MetricsReport, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut report =
        MetricsReport { s_measure: 0.0, e_measure: 0.0, weighted_fbeta: 0.0, mae: 0.0, count: preds.len() };
    for (p, y) in preds.iter().zip(gts) {
        report.s_measure += s_measure(p, y)?;
        report.e_measure += e_measure(p, y)?;
        report.weighted_fbeta += weighted_fbeta(p, y)?;
        report.mae += mae(p, y)?;
    }
    let n = preds.len() as f64;
    report.s_measure /= n;
    report.e_measure /= n;
    report.weighted_fbeta /= n;
    report.mae /= n;
    Ok(report)
}
