//! Naive double-loop reference oracles for the evaluation metrics. These
//! deliberately avoid the library's optimized helpers (separable transforms,
//! shared convolution code): everything is an explicit loop over pixels so
//! the two implementations can only agree by computing the same thing.

#![allow(dead_code)]

use edgediff::Grid;

const EPS: f64 = 1e-20;

pub fn oracle_mae(pred: &Grid, gt: &Grid) -> f64 {
    let mut acc = 0.0;
    for i in 0..pred.height() {
        for j in 0..pred.width() {
            acc += (pred.get(i, j) - gt.get(i, j)).abs();
        }
    }
    acc / (pred.height() * pred.width()) as f64
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - mean) * (x - mean);
    }
    acc / (xs.len() as f64 - 1.0)
}

fn object_score(xs: &[f64]) -> f64 {
    let m = mean_of(xs);
    let sd = sample_var(xs, m).sqrt();
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn ssim_like(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean_of(xs);
    let my = mean_of(ys);
    let vx = sample_var(xs, mx);
    let vy = sample_var(ys, my);
    let cov = if xs.len() < 2 {
        0.0
    } else {
        let mut acc = 0.0;
        for k in 0..xs.len() {
            acc += (xs[k] - mx) * (ys[k] - my);
        }
        acc / (xs.len() as f64 - 1.0)
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

pub fn oracle_s_measure(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let mut mu = 0.0;
    for i in 0..h {
        for j in 0..w {
            mu += gt.get(i, j);
        }
    }
    mu /= (h * w) as f64;
    let mut pred_mean = 0.0;
    for i in 0..h {
        for j in 0..w {
            pred_mean += pred.get(i, j);
        }
    }
    pred_mean /= (h * w) as f64;
    if mu == 0.0 {
        return 1.0 - pred_mean;
    }
    if mu == 1.0 {
        return pred_mean;
    }

    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let (mut ri, mut rj, mut n_fg) = (0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
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

    let cut_r = (ri / n_fg).round() as usize + 1;
    let cut_c = (rj / n_fg).round() as usize + 1;
    let mut s_region = 0.0;
    for q in 0..4 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..h {
            for j in 0..w {
                let quad = match (i < cut_r, j < cut_c) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                if quad == q {
                    xs.push(pred.get(i, j));
                    ys.push(gt.get(i, j));
                }
            }
        }
        if !xs.is_empty() {
            s_region += xs.len() as f64 / (h * w) as f64 * ssim_like(&xs, &ys);
        }
    }
    (0.5 * s_object + 0.5 * s_region).clamp(0.0, 1.0)
}

pub fn oracle_e_measure(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let n = (h * w) as f64;
    let mut pm = 0.0;
    let mut mu = 0.0;
    for i in 0..h {
        for j in 0..w {
            pm += pred.get(i, j);
            mu += gt.get(i, j);
        }
    }
    pm /= n;
    mu /= n;
    let thr = (2.0 * pm).min(1.0);
    let binarize = |p: f64| {
        if thr == 0.0 {
            if p > 0.0 {
                1.0
            } else {
                0.0
            }
        } else if p >= thr {
            1.0
        } else {
            0.0
        }
    };
    let mut fm_mean = 0.0;
    for i in 0..h {
        for j in 0..w {
            fm_mean += binarize(pred.get(i, j));
        }
    }
    fm_mean /= n;
    if mu == 0.0 {
        return 1.0 - fm_mean;
    }
    if mu == 1.0 {
        return fm_mean;
    }
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let af = binarize(pred.get(i, j)) - fm_mean;
            let ag = gt.get(i, j) - mu;
            let phi = 2.0 * af * ag / (af * af + ag * ag + EPS);
            acc += (1.0 + phi) * (1.0 + phi) / 4.0;
        }
    }
    acc / n
}

/// Nearest foreground pixel by exhaustive scan: columns outer, rows inner,
/// strict improvement only — ties resolve to the smallest column, then the
/// smallest row.
fn oracle_nearest(gt: &Grid, i: usize, j: usize) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for c in 0..gt.width() {
        for r in 0..gt.height() {
            if gt.get(r, c) != 1.0 {
                continue;
            }
            let d = (r as f64 - i as f64).powi(2) + (c as f64 - j as f64).powi(2);
            if best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((r, c, d));
            }
        }
    }
    best
}

pub fn oracle_weighted_fbeta(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let mut n_fg = 0.0;
    for i in 0..h {
        for j in 0..w {
            n_fg += gt.get(i, j);
        }
    }
    if n_fg == 0.0 {
        return 0.0;
    }

    let err = |i: usize, j: usize| (pred.get(i, j) - gt.get(i, j)).abs();
    let mut et = vec![0.0; h * w];
    let mut dist = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            if gt.get(i, j) == 1.0 {
                et[i * w + j] = err(i, j);
            } else {
                let (ni, nj, d) = oracle_nearest(gt, i, j).expect("nonempty foreground");
                et[i * w + j] = err(ni, nj);
                dist[i * w + j] = d.sqrt();
            }
        }
    }

    // 7x7 Gaussian (sigma = 5), normalized, zero padding.
    let mut ksum = 0.0;
    let kernel = |u: i64, v: i64| (-((u * u + v * v) as f64) / 50.0).exp();
    for u in -3i64..=3 {
        for v in -3i64..=3 {
            ksum += kernel(u, v);
        }
    }
    let mut ea = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for u in -3i64..=3 {
                for v in -3i64..=3 {
                    let (ii, jj) = (i as i64 + u, j as i64 + v);
                    if ii >= 0 && jj >= 0 && ii < h as i64 && jj < w as i64 {
                        acc += kernel(u, v) * et[ii as usize * w + jj as usize];
                    }
                }
            }
            ea[i * w + j] = acc / ksum;
        }
    }

    let mut fg_err = 0.0;
    let mut bg_err = 0.0;
    for i in 0..h {
        for j in 0..w {
            if gt.get(i, j) == 1.0 {
                fg_err += err(i, j).min(ea[i * w + j]);
            } else {
                let b = 2.0 - (0.5f64.ln() / 5.0 * dist[i * w + j]).exp();
                bg_err += err(i, j) * b;
            }
        }
    }
    let tp_w = n_fg - fg_err;
    let recall = 1.0 - fg_err / n_fg;
    let precision = tp_w / (tp_w + bg_err + EPS);
    (2.0 * precision * recall / (precision + recall + EPS)).clamp(0.0, 1.0)
}
