use super::DiffusionError;
use crate::edge::EdgePrior;
use crate::inject::{sharpen_prior, InjectionConfig};
use crate::{Grid, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Architecture knobs: channel widths of the three encoder stages. The
/// injection always lands on the stage-1 features and carries no parameters,
/// so `param_count` is a function of the widths alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub widths: [usize; 3],
    pub injection: InjectionConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { widths: [16, 32, 64], injection: InjectionConfig::default() }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.widths.contains(&0) {
            return Err(DiffusionError::BadTrainerConfig("denoiser widths must be positive".into()));
        }
        self.injection
            .validate()
            .map_err(|e| DiffusionError::BadTrainerConfig(e.to_string()))
    }

    /// Conv layers in parameter order: (c_in, c_out).
    fn layers(&self) -> [(usize, usize); 7] {
        let [c1, c2, c3] = self.widths;
        [(2, c1), (c1, c2), (c2, c3), (c3, c2), (c2, c1), (c1, c1), (c1, 1)]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(ci, co)| ci * co * 9 + co).sum()
    }
}

/// Small encoder-decoder conditional denoiser. Input is the noised mask and
/// the grayscale image; stage 1 embeds them at half resolution (where the
/// edge prior is injected), two further stages halve again, and the decoder
/// mirrors the encoder with additive skips back to full-resolution logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    params: Vec<f64>,
}

fn silu<'t>(v: Var<'t>) -> Var<'t> {
    v.mul(v.sigmoid())
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Sinusoidal timestep embedding of dimension `dim`, evaluated at step `t`.
fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let freq = 10000f64.powf(-((2 * (k / 2)) as f64) / dim as f64);
            let x = t as f64 * freq;
            if k % 2 == 0 {
                x.sin()
            } else {
                x.cos()
            }
        })
        .collect()
}

impl Denoiser {
    /// He-initialized parameters, deterministic in `seed`.
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self, DiffusionError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(cfg.param_count());
        for (ci, co) in cfg.layers() {
            let std = (2.0 / (ci as f64 * 9.0)).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for _ in 0..ci * co * 9 {
                params.push(normal.sample(&mut rng));
            }
            params.extend(std::iter::repeat_n(0.0, co));
        }
        Ok(Self { cfg, params })
    }

    pub fn from_params(cfg: DenoiserConfig, params: Vec<f64>) -> Result<Self, DiffusionError> {
        cfg.validate()?;
        if params.len() != cfg.param_count() {
            return Err(DiffusionError::BadTrainerConfig(format!(
                "expected {} parameters, got {}",
                cfg.param_count(),
                params.len()
            )));
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.cfg.param_count()
    }

    /// Register every kernel and bias as a tape leaf, in flat-parameter
    /// order: per layer, kernels (c_out major, c_in minor, row-major 3x3),
    /// then biases.
    fn param_leaves<'t>(&self, tape: &'t Tape) -> Vec<Vec<Var<'t>>> {
        let mut offset = 0;
        let mut layers = Vec::new();
        for (ci, co) in self.cfg.layers() {
            let mut vars = Vec::with_capacity(ci * co + co);
            for _ in 0..ci * co {
                let k = Grid::new(3, 3, self.params[offset..offset + 9].to_vec())
                    .expect("finite kernel params");
                vars.push(tape.leaf(k));
                offset += 9;
            }
            for _ in 0..co {
                vars.push(tape.leaf_scalar(self.params[offset]));
                offset += 1;
            }
            layers.push(vars);
        }
        layers
    }

    /// One conv layer: out[co] = sum_ci in[ci] * K[co][ci] + b[co].
    fn conv_layer<'t>(inputs: &[Var<'t>], vars: &[Var<'t>], ci: usize, co: usize) -> Vec<Var<'t>> {
        debug_assert_eq!(inputs.len(), ci);
        (0..co)
            .map(|o| {
                let mut acc = inputs[0].conv2d_var(vars[o * ci]);
                for i in 1..ci {
                    acc = acc.add(inputs[i].conv2d_var(vars[o * ci + i]));
                }
                acc.add_broadcast(vars[ci * co + o])
            })
            .collect()
    }

    /// Build the full forward graph on `tape`; returns the full-resolution
    /// logit node and the parameter leaves in flat order.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        x_t: &Grid,
        gray: &Grid,
        prior: &EdgePrior,
        t: usize,
    ) -> Result<(Var<'t>, Vec<Var<'t>>), DiffusionError> {
        if !x_t.same_shape(gray) {
            return Err(DiffusionError::BadTrainerConfig(format!(
                "noised mask {}x{} vs image {}x{}",
                x_t.height(),
                x_t.width(),
                gray.height(),
                gray.width()
            )));
        }
        let (h, w) = (x_t.height(), x_t.width());
        let layers = self.cfg.layers();
        let vars = self.param_leaves(tape);
        let [c1, c2, c3] = self.cfg.widths;

        let inputs = vec![tape.leaf(x_t.clone()), tape.leaf(gray.clone())];
        let emb = timestep_embedding(t, c1);

        // Stage 1: embed at half resolution, add the timestep bias, inject.
        let (h1, w1) = (half(h), half(w));
        let mut f1: Vec<Var<'t>> = Self::conv_layer(&inputs, &vars[0], layers[0].0, layers[0].1)
            .into_iter()
            .enumerate()
            .map(|(ch, v)| v.resize_bilinear(h1, w1).add_scalar(emb[ch]))
            .collect();
        let lambda = self.cfg.injection.lambda_inj;
        if lambda != 0.0 {
            let phi = sharpen_prior(prior, h1, w1, self.cfg.injection.use_laplacian_prefilter)
                .map_err(|e| DiffusionError::BadTrainerConfig(e.to_string()))?;
            let bump = phi.scale(lambda);
            f1 = f1.into_iter().map(|v| v.add_const(&bump)).collect();
        }
        let a1: Vec<Var<'t>> = f1.into_iter().map(silu).collect();

        // Stages 2 and 3.
        let (h2, w2) = (half(h1), half(w1));
        let a2: Vec<Var<'t>> = Self::conv_layer(&a1, &vars[1], layers[1].0, layers[1].1)
            .into_iter()
            .map(|v| silu(v.resize_bilinear(h2, w2)))
            .collect();
        let (h3, w3) = (half(h2), half(w2));
        let a3: Vec<Var<'t>> = Self::conv_layer(&a2, &vars[2], layers[2].0, layers[2].1)
            .into_iter()
            .map(|v| silu(v.resize_bilinear(h3, w3)))
            .collect();

        // Decoder with additive skips from the matching encoder stages.
        let d1: Vec<Var<'t>> = Self::conv_layer(&a3, &vars[3], c3, c2)
            .into_iter()
            .zip(&a2)
            .map(|(v, &skip)| silu(v.resize_bilinear(h2, w2).add(skip)))
            .collect();
        let d2: Vec<Var<'t>> = Self::conv_layer(&d1, &vars[4], c2, c1)
            .into_iter()
            .zip(&a1)
            .map(|(v, &skip)| silu(v.resize_bilinear(h1, w1).add(skip)))
            .collect();
        let d3: Vec<Var<'t>> = Self::conv_layer(&d2, &vars[5], c1, c1)
            .into_iter()
            .map(|v| silu(v.resize_bilinear(h, w)))
            .collect();
        let logits = Self::conv_layer(&d3, &vars[6], c1, 1).pop().expect("single logit channel");

        Ok((logits, vars.into_iter().flatten().collect()))
    }

    /// Plain inference: forward on a throwaway tape, returning logit values.
    pub fn predict_logits(
        &self,
        x_t: &Grid,
        gray: &Grid,
        prior: &EdgePrior,
        t: usize,
    ) -> Result<Grid, DiffusionError> {
        let tape = Tape::new();
        let (logits, _) = self.forward(&tape, x_t, gray, prior, t)?;
        Ok(logits.value())
    }

    /// Flatten per-leaf gradients into the parameter layout.
    pub fn grad_vec(&self, param_vars: &[Var<'_>], grads: &crate::Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params.len());
        let mut vi = 0;
        for (ci, co) in self.cfg.layers() {
            for _ in 0..ci * co {
                match grads.wrt(param_vars[vi]) {
                    Some(g) => out.extend_from_slice(g.data()),
                    None => out.extend(std::iter::repeat_n(0.0, 9)),
                }
                vi += 1;
            }
            for _ in 0..co {
                out.push(grads.wrt_scalar(param_vars[vi]));
                vi += 1;
            }
        }
        out
    }
}
