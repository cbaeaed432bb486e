//! Minimal reverse-mode differentiation over the fixed operation set the
//! losses and the denoiser need: elementwise arithmetic, power, sigmoid, log,
//! abs, sqrt, clamp, sum, stable BCE-from-logits, 3x3 convolution (with
//! gradients for both the field and the kernel), clipped average pooling and
//! bilinear resampling.
//!
//! Scalars are carried as 1x1 grids so fan-in accumulation is uniform. A tape
//! is append-only and thread-confined; `backward` never mutates it, so
//! repeated calls are idempotent.

use crate::grid::{Grid, Kernel3x3};
use crate::grid::bilinear_axis;
use std::cell::RefCell;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TapeError {
    #[error("backward root must be scalar (1x1), got {0}x{1}")]
    NonScalarRoot(usize, usize),
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulConst(usize, Grid),
    AddConst(usize),
    Powf(usize, f64),
    Sigmoid(usize),
    Ln(usize),
    Abs(usize),
    Sqrt(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    /// Add a 1x1 scalar node to every element of a grid node.
    AddBroadcast(usize, usize),
    ConvConst(usize, Kernel3x3),
    /// Kernel is itself a 3x3 grid node; gradients flow to both operands.
    ConvVar { input: usize, kernel: usize },
    AvgPool(usize, usize),
    ResizeBilinear(usize),
    BceLogits(usize, Grid),
}

struct Node {
    value: Grid,
    op: Op,
}

/// Append-only differentiation graph.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Grid, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, idx: nodes.len() - 1 }
    }

    /// Register a leaf grid; gradients are reported for every leaf.
    pub fn leaf(&self, g: Grid) -> Var<'_> {
        self.push(g, Op::Leaf)
    }

    /// Register a scalar leaf as a 1x1 grid.
    pub fn leaf_scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Grid::filled(1, 1, v))
    }
}

/// Handle to one tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Grid {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn scalar_value(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.idx].value;
        debug_assert_eq!((v.height(), v.width()), (1, 1));
        v.get(0, 0)
    }

    fn with_value<R>(&self, f: impl FnOnce(&Grid) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    // Named like the Grid builders rather than the std ops traits; Var is
    // Copy and tape-bound, so operator sugar would hide the recording.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.add(b)));
        self.tape.push(v, Op::Add(self.idx, o.idx))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.sub(b)));
        self.tape.push(v, Op::Sub(self.idx, o.idx))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.mul(b)));
        self.tape.push(v, Op::Mul(self.idx, o.idx))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.with_value(|a| a.scale(c));
        self.tape.push(v, Op::Scale(self.idx, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.with_value(|a| a.map(|x| x + c));
        self.tape.push(v, Op::AddScalar(self.idx))
    }

    /// Elementwise product with a constant grid (no gradient into the constant).
    pub fn mul_const(self, c: &Grid) -> Var<'t> {
        let v = self.with_value(|a| a.mul(c));
        self.tape.push(v, Op::MulConst(self.idx, c.clone()))
    }

    /// Elementwise sum with a constant grid (no gradient into the constant).
    pub fn add_const(self, c: &Grid) -> Var<'t> {
        let v = self.with_value(|a| a.add(c));
        self.tape.push(v, Op::AddConst(self.idx))
    }

    /// Elementwise difference against a constant grid.
    pub fn sub_const(self, c: &Grid) -> Var<'t> {
        self.add_const(&c.scale(-1.0))
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let v = self.with_value(|a| a.map(|x| x.powf(p)));
        self.tape.push(v, Op::Powf(self.idx, p))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.with_value(|a| a.map(sigmoid));
        self.tape.push(v, Op::Sigmoid(self.idx))
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.with_value(|a| a.map(f64::ln));
        self.tape.push(v, Op::Ln(self.idx))
    }

    pub fn abs(self) -> Var<'t> {
        let v = self.with_value(|a| a.map(f64::abs));
        self.tape.push(v, Op::Abs(self.idx))
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.with_value(|a| a.map(f64::sqrt));
        self.tape.push(v, Op::Sqrt(self.idx))
    }

    /// Saturating clamp; subgradient is zero outside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.with_value(|a| a.map(|x| x.max(lo).min(hi)));
        self.tape.push(v, Op::Clamp(self.idx, lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.with_value(|a| Grid::filled(1, 1, a.sum()));
        self.tape.push(v, Op::Sum(self.idx))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.with_value(|a| a.len()) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Add a 1x1 scalar node to every element (conv bias and the like).
    pub fn add_broadcast(self, s: Var<'t>) -> Var<'t> {
        let b = s.scalar_value();
        let v = self.with_value(|a| a.map(|x| x + b));
        self.tape.push(v, Op::AddBroadcast(self.idx, s.idx))
    }

    pub fn conv2d(self, k: &Kernel3x3) -> Var<'t> {
        let v = self.with_value(|a| a.conv2d_same(k));
        self.tape.push(v, Op::ConvConst(self.idx, *k))
    }

    /// Convolution with a learnable 3x3 kernel node.
    pub fn conv2d_var(self, kernel: Var<'t>) -> Var<'t> {
        let k = kernel.with_value(grid_as_kernel);
        let v = self.with_value(|a| a.conv2d_same(&k));
        self.tape.push(v, Op::ConvVar { input: self.idx, kernel: kernel.idx })
    }

    pub fn avg_pool(self, k: usize) -> Var<'t> {
        let v = self.with_value(|a| a.avg_pool_same(k).expect("odd pooling kernel"));
        self.tape.push(v, Op::AvgPool(self.idx, k))
    }

    pub fn resize_bilinear(self, h2: usize, w2: usize) -> Var<'t> {
        let v = self.with_value(|a| a.resize_bilinear(h2, w2).expect("positive target dims"));
        self.tape.push(v, Op::ResizeBilinear(self.idx))
    }

    /// Elementwise binary cross-entropy from logits against a constant target,
    /// in the log-sum-exp stable form; gradient is `sigmoid(z) - y`.
    pub fn bce_with_logits(self, target: &Grid) -> Var<'t> {
        let v = self.with_value(|z| {
            z.zip_map(target, |zi, yi| zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p())
        });
        self.tape.push(v, Op::BceLogits(self.idx, target.clone()))
    }

    /// Reverse pass from a scalar root: returns d(root)/d(node) for every node
    /// reached, in particular every leaf.
    pub fn backward(self) -> Result<Gradients, TapeError> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.idx].value;
        if (root.height(), root.width()) != (1, 1) {
            return Err(TapeError::NonScalarRoot(root.height(), root.width()));
        }
        let mut grads: Vec<Option<Grid>> = vec![None; nodes.len()];
        grads[self.idx] = Some(Grid::filled(1, 1, 1.0));

        for i in (0..=self.idx).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, g.mul(&nodes[*b].value));
                    accumulate(&mut grads, *b, g.mul(&nodes[*a].value));
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::MulConst(a, c) => accumulate(&mut grads, *a, g.mul(c)),
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::Powf(a, p) => {
                    let x = &nodes[*a].value;
                    accumulate(&mut grads, *a, g.zip_map(x, |gi, xi| gi * p * xi.powf(p - 1.0)));
                }
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    accumulate(&mut grads, *a, g.zip_map(s, |gi, si| gi * si * (1.0 - si)));
                }
                Op::Ln(a) => {
                    let x = &nodes[*a].value;
                    accumulate(&mut grads, *a, g.zip_map(x, |gi, xi| gi / xi));
                }
                Op::Abs(a) => {
                    let x = &nodes[*a].value;
                    accumulate(&mut grads, *a, g.zip_map(x, |gi, xi| gi * sign0(xi)));
                }
                Op::Sqrt(a) => {
                    let s = &node.value;
                    accumulate(&mut grads, *a, g.zip_map(s, |gi, si| gi * 0.5 / si));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 }),
                    );
                }
                Op::Sum(a) => {
                    let x = &nodes[*a].value;
                    let gv = g.get(0, 0);
                    accumulate(&mut grads, *a, Grid::filled(x.height(), x.width(), gv));
                }
                Op::AddBroadcast(a, s) => {
                    accumulate(&mut grads, *s, Grid::filled(1, 1, g.sum()));
                    accumulate(&mut grads, *a, g);
                }
                Op::ConvConst(a, k) => {
                    accumulate(&mut grads, *a, g.conv2d_same(&k.flipped()));
                }
                Op::ConvVar { input, kernel } => {
                    let k = grid_as_kernel(&nodes[*kernel].value);
                    accumulate(&mut grads, *input, g.conv2d_same(&k.flipped()));
                    accumulate(&mut grads, *kernel, conv_kernel_grad(&nodes[*input].value, &g));
                }
                Op::AvgPool(a, k) => {
                    accumulate(&mut grads, *a, avg_pool_backward(&g, *k));
                }
                Op::ResizeBilinear(a) => {
                    let x = &nodes[*a].value;
                    accumulate(&mut grads, *a, resize_bilinear_backward(&g, x.height(), x.width()));
                }
                Op::BceLogits(a, y) => {
                    let z = &nodes[*a].value;
                    let dz = Grid::from_fn(z.height(), z.width(), |i, j| {
                        sigmoid(z.get(i, j)) - y.get(i, j)
                    });
                    accumulate(&mut grads, *a, g.mul(&dz));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Grid>>,
}

impl Gradients {
    /// Gradient with respect to a node; `None` when the node does not reach
    /// the root.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Grid> {
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    pub fn wrt_scalar(&self, v: Var<'_>) -> f64 {
        self.wrt(v).map(|g| g.get(0, 0)).unwrap_or(0.0)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Grid>], idx: usize, g: Grid) {
    match &mut grads[idx] {
        Some(acc) => *acc = acc.add(&g),
        slot => *slot = Some(g),
    }
}

fn grid_as_kernel(g: &Grid) -> Kernel3x3 {
    assert_eq!((g.height(), g.width()), (3, 3), "kernel node must be 3x3");
    let mut w = [0.0; 9];
    w.copy_from_slice(g.data());
    Kernel3x3::new(w)
}

/// d(conv_out)/d(kernel): correlate the input with the output cotangent.
fn conv_kernel_grad(input: &Grid, g: &Grid) -> Grid {
    let (h, w) = (input.height() as isize, input.width() as isize);
    Grid::from_fn(3, 3, |u, v| {
        let (du, dv) = (u as isize - 1, v as isize - 1);
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = (i + du, j + dv);
                if si >= 0 && si < h && sj >= 0 && sj < w {
                    acc += g.get(i as usize, j as usize) * input.get(si as usize, sj as usize);
                }
            }
        }
        acc
    })
}

fn avg_pool_backward(g: &Grid, k: usize) -> Grid {
    let r = (k / 2) as isize;
    let (h, w) = (g.height() as isize, g.width() as isize);
    let mut out = Grid::zeros(g.height(), g.width());
    for i in 0..h {
        for j in 0..w {
            let i0 = (i - r).max(0);
            let i1 = (i + r).min(h - 1);
            let j0 = (j - r).max(0);
            let j1 = (j + r).min(w - 1);
            let share = g.get(i as usize, j as usize) / (((i1 - i0 + 1) * (j1 - j0 + 1)) as f64);
            for si in i0..=i1 {
                for sj in j0..=j1 {
                    let cur = out.get(si as usize, sj as usize);
                    out.set(si as usize, sj as usize, cur + share);
                }
            }
        }
    }
    out
}

fn resize_bilinear_backward(g: &Grid, src_h: usize, src_w: usize) -> Grid {
    let mut out = Grid::zeros(src_h, src_w);
    if g.height() == src_h && g.width() == src_w {
        return out.add(g);
    }
    for i in 0..g.height() {
        let (i0, i1, fi) = bilinear_axis(i, g.height(), src_h);
        for j in 0..g.width() {
            let (j0, j1, fj) = bilinear_axis(j, g.width(), src_w);
            let gv = g.get(i, j);
            let mut scatter = |r: usize, c: usize, wgt: f64| {
                out.set(r, c, out.get(r, c) + gv * wgt);
            };
            scatter(i0, j0, (1.0 - fi) * (1.0 - fj));
            scatter(i0, j1, (1.0 - fi) * fj);
            scatter(i1, j0, fi * (1.0 - fj));
            scatter(i1, j1, fi * fj);
        }
    }
    out
}
