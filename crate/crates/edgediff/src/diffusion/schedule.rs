use super::DiffusionError;
use std::f64::consts::FRAC_PI_2;

const OFFSET: f64 = 0.008;
const CLAMP_LO: f64 = 1e-5;
const CLAMP_HI: f64 = 1.0 - 1e-5;

/// Cosine cumulative signal schedule, indexed by timestep t in [1, T].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// abar_t = f(t/T) / f(0) with f(u) = cos^2((u + s)/(1 + s) * pi/2),
    /// clamped into (1e-5, 1 - 1e-5). Clamping can flatten the extreme tail
    /// for long schedules, so ties are nudged to keep the sequence strictly
    /// decreasing.
    pub fn cosine(t_total: usize) -> Result<Self, DiffusionError> {
        if t_total == 0 {
            return Err(DiffusionError::BadScheduleLength(0));
        }
        let f = |u: f64| ((u + OFFSET) / (1.0 + OFFSET) * FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let mut alpha_bar = Vec::with_capacity(t_total);
        for t in 1..=t_total {
            let a = (f(t as f64 / t_total as f64) / f0).clamp(CLAMP_LO, CLAMP_HI);
            alpha_bar.push(a);
        }
        for t in 1..t_total {
            if alpha_bar[t] >= alpha_bar[t - 1] {
                alpha_bar[t] = alpha_bar[t - 1] * (1.0 - 1e-9);
            }
        }
        Ok(Self { alpha_bar })
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        if t == 0 || t > self.alpha_bar.len() {
            return Err(DiffusionError::TimestepOutOfRange { t, t_total: self.alpha_bar.len() });
        }
        Ok(self.alpha_bar[t - 1])
    }

    pub(crate) fn from_raw(alpha_bar: Vec<f64>) -> Result<Self, DiffusionError> {
        if alpha_bar.is_empty() {
            return Err(DiffusionError::BadScheduleLength(0));
        }
        Ok(Self { alpha_bar })
    }
}
