//! Parameter-free boundary feature injection: rescale the prior to stage-1
//! resolution, optionally sharpen it with the fixed Laplacian, broadcast it
//! across channels and add it to the first-stage feature map.

use crate::edge::EdgePrior;
use crate::{FeatureMap, Grid, GridError, Kernel3x3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    pub lambda_inj: f64,
    pub use_laplacian_prefilter: bool,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self { lambda_inj: 0.075, use_laplacian_prefilter: true }
    }
}

impl InjectionConfig {
    pub fn disabled() -> Self {
        Self { lambda_inj: 0.0, use_laplacian_prefilter: false }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.lambda_inj < 0.0 {
            return Err(format!("lambda_inj must be nonnegative, got {}", self.lambda_inj));
        }
        Ok(())
    }
}

/// Rescale the prior to the stage-1 resolution; with the prefilter enabled,
/// take |Laplacian| of the rescaled map so both polarities survive.
pub fn sharpen_prior(e: &EdgePrior, h: usize, w: usize, prefilter: bool) -> Result<Grid, GridError> {
    let rescaled = e.grid.resize_nearest(h, w)?;
    if prefilter {
        Ok(rescaled.conv2d_same(&Kernel3x3::laplacian()).map(f64::abs))
    } else {
        Ok(rescaled)
    }
}

/// Replicate one grid across `c` identical channels.
pub fn broadcast_prior(phi: &Grid, c: usize) -> Result<FeatureMap, GridError> {
    if c == 0 {
        return Err(GridError::EmptyDims { h: 0, w: 0 });
    }
    let channels: Vec<Grid> = std::iter::repeat_n(phi.clone(), c).collect();
    FeatureMap::from_channels(&channels)
}

/// F1 + lambda_inj * broadcast(sharpen(E)); shape-preserving, zero trainable
/// parameters.
pub fn inject(f1: &FeatureMap, e: &EdgePrior, cfg: &InjectionConfig) -> Result<FeatureMap, GridError> {
    let phi = sharpen_prior(e, f1.height(), f1.width(), cfg.use_laplacian_prefilter)?;
    let pi = broadcast_prior(&phi, f1.channels())?;
    Ok(f1.add(&pi.scale(cfg.lambda_inj)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge::EdgeOperator;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn prior(g: Grid) -> EdgePrior {
        EdgePrior { grid: g, operator: EdgeOperator::Sobel }
    }

    fn random_fmap(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        let chans: Vec<Grid> = (0..c)
            .map(|_| Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        FeatureMap::from_channels(&chans).unwrap()
    }

    #[test]
    fn sharpen_constant_prior_is_zero_with_prefilter() {
        let e = prior(Grid::filled(8, 8, 0.5));
        let phi = sharpen_prior(&e, 8, 8, true).unwrap();
        for i in 1..7 {
            for j in 1..7 {
                assert_eq!(phi.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn sharpen_without_prefilter_is_resize() {
        let e = prior(Grid::from_fn(4, 4, |i, j| (i * 4 + j) as f64 / 16.0));
        let phi = sharpen_prior(&e, 2, 2, false).unwrap();
        assert_eq!(phi, e.grid.resize_nearest(2, 2).unwrap());
        assert!(sharpen_prior(&e, 0, 2, false).is_err());
    }

    #[test]
    fn sharpen_impulse_gives_laplacian_stencil() {
        let mut g = Grid::zeros(5, 5);
        g.set(2, 2, 1.0);
        let phi = sharpen_prior(&prior(g), 5, 5, true).unwrap();
        assert_eq!(phi.get(2, 2), 4.0);
        for (i, j) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(phi.get(i, j), 1.0);
        }
        assert_eq!(phi.get(1, 1), 0.0);
    }

    #[test]
    fn broadcast_replicates_channels() {
        let phi = Grid::from_fn(3, 3, |i, j| (i + j) as f64);
        let f = broadcast_prior(&phi, 3).unwrap();
        for c in 0..3 {
            assert_eq!(f.channel(c), phi);
        }
        assert_abs_diff_eq!(f.sum(), 3.0 * phi.sum(), epsilon = 1e-12);
        assert_eq!(broadcast_prior(&phi, 1).unwrap().channels(), 1);
        assert!(broadcast_prior(&phi, 0).is_err());
    }

    #[test]
    fn inject_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let f1 = random_fmap(&mut rng, 4, 6, 6);
        let e = prior(Grid::from_fn(12, 12, |_, _| rng.gen_range(0.0..1.0)));

        let zero = InjectionConfig { lambda_inj: 0.0, use_laplacian_prefilter: true };
        assert_eq!(inject(&f1, &e, &zero).unwrap(), f1);

        let constant = prior(Grid::filled(12, 12, 0.4));
        let cfg = InjectionConfig::default();
        let out = inject(&f1, &constant, &cfg).unwrap();
        // Laplacian of a constant is zero away from the frame.
        for c in 0..4 {
            for i in 1..5 {
                for j in 1..5 {
                    assert_abs_diff_eq!(out.channel(c).get(i, j), f1.channel(c).get(i, j), epsilon = 1e-15);
                }
            }
        }
        let zeroes = prior(Grid::zeros(12, 12));
        assert_eq!(inject(&f1, &zeroes, &cfg).unwrap(), f1);
    }

    #[test]
    fn inject_is_linear_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let f1 = random_fmap(&mut rng, 3, 5, 7);
        let e = prior(Grid::from_fn(10, 14, |_, _| rng.gen_range(0.0..1.0)));
        let one = InjectionConfig { lambda_inj: 0.075, use_laplacian_prefilter: true };
        let two = InjectionConfig { lambda_inj: 0.15, use_laplacian_prefilter: true };
        let d1 = inject(&f1, &e, &one).unwrap().add(&f1.scale(-1.0));
        let d2 = inject(&f1, &e, &two).unwrap().add(&f1.scale(-1.0));
        for (a, b) in d1.data().iter().zip(d2.data()) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn inject_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let f1 = random_fmap(&mut rng, 5, 9, 4);
        let e = prior(Grid::from_fn(18, 8, |_, _| rng.gen_range(0.0..1.0)));
        let out = inject(&f1, &e, &InjectionConfig::default()).unwrap();
        assert_eq!((out.channels(), out.height(), out.width()), (5, 9, 4));
    }

    #[test]
    fn default_lambda_matches_configured_value() {
        assert_eq!(InjectionConfig::default().lambda_inj, 0.075);
        assert!(InjectionConfig::default().use_laplacian_prefilter);
    }
}
