//! Reverse-mode differentiation over a fixed set of vector-valued nodes.
//!
//! Parameters live in flat blocks registered on the tape (borrowed, never
//! copied for matrix products). A forward pass records nodes; `backward`
//! seeds one or more nodes with cotangents and returns the accumulated
//! gradient of every trainable block.
//!
//! Shape errors while recording are programming errors of the fixed
//! architectures built on top of this and panic; the public model functions
//! validate user-facing shapes before touching the tape.

use super::{matvec_raw, sigmoid, softplus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param {
        block: usize,
        offset: usize,
    },
    Linear {
        block: usize,
        w: usize,
        rows: usize,
        cols: usize,
        bias: Option<usize>,
        input: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// vector times a length-1 node
    MulScalar(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Tanh(usize),
    Exp(usize),
    Softplus(usize),
    Square(usize),
    Sum(usize),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        offset: usize,
    },
    Clamp {
        input: usize,
        lo: f64,
        hi: f64,
    },
}

struct Block<'a> {
    data: &'a [f64],
    trainable: bool,
}

pub struct Tape<'a> {
    blocks: Vec<Block<'a>>,
    ops: Vec<Op>,
    values: Vec<Vec<f64>>,
}

/// Gradients of one backward pass, one buffer per registered block.
/// Frozen blocks get an empty buffer.
#[derive(Debug, Clone)]
pub struct Gradients {
    blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn block(&self, id: BlockId) -> &[f64] {
        &self.blocks[id.0]
    }

    pub fn take(&mut self, id: BlockId) -> Vec<f64> {
        std::mem::take(&mut self.blocks[id.0])
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            blocks: Vec::new(),
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a parameter block whose gradient is returned by `backward`.
    pub fn register(&mut self, data: &'a [f64]) -> BlockId {
        self.blocks.push(Block {
            data,
            trainable: true,
        });
        BlockId(self.blocks.len() - 1)
    }

    /// Registers a block used only for its values.
    pub fn register_frozen(&mut self, data: &'a [f64]) -> BlockId {
        self.blocks.push(Block {
            data,
            trainable: false,
        });
        BlockId(self.blocks.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.values[id.0];
        assert_eq!(v.len(), 1, "node is not scalar");
        v[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        NodeId(self.ops.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// `len` entries of a block starting at `offset`.
    pub fn param(&mut self, block: BlockId, offset: usize, len: usize) -> NodeId {
        let v = self.blocks[block.0].data[offset..offset + len].to_vec();
        self.push(
            Op::Param {
                block: block.0,
                offset,
            },
            v,
        )
    }

    /// `W x (+ b)` with `W` (`rows x cols`, row-major) and `b` read from a block.
    pub fn linear(
        &mut self,
        block: BlockId,
        w_offset: usize,
        rows: usize,
        cols: usize,
        bias_offset: Option<usize>,
        input: NodeId,
    ) -> NodeId {
        let data = self.blocks[block.0].data;
        let x = &self.values[input.0];
        assert_eq!(x.len(), cols, "linear: input len {} vs cols {}", x.len(), cols);
        let mut y = matvec_raw(&data[w_offset..w_offset + rows * cols], rows, cols, x);
        if let Some(b) = bias_offset {
            for (yi, bi) in y.iter_mut().zip(&data[b..b + rows]) {
                *yi += bi;
            }
        }
        self.push(
            Op::Linear {
                block: block.0,
                w: w_offset,
                rows,
                cols,
                bias: bias_offset,
                input: input.0,
            },
            y,
        )
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.len(), vb.len(), "elementwise op on lengths {} and {}", va.len(), vb.len());
        va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect()
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.values[a.0].iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), v)
    }

    /// Vector `a` times scalar node `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let c = self.scalar(s);
        let v = self.map(a, |x| x * c);
        self.push(Op::MulScalar(a.0, s.0), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.map(a, |x| x * c);
        self.push(Op::Scale(a.0, c), v)
    }

    /// `a + c` elementwise.
    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.map(a, |x| x + c);
        self.push(Op::Shift(a.0), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::tanh);
        self.push(Op::Tanh(a.0), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::exp);
        self.push(Op::Exp(a.0), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, softplus);
        self.push(Op::Softplus(a.0), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| x * x);
        self.push(Op::Square(a.0), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.values[a.0].iter().sum();
        self.push(Op::Sum(a.0), vec![s])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = Vec::with_capacity(parts.iter().map(|p| self.values[p.0].len()).sum());
        for p in parts {
            v.extend_from_slice(&self.values[p.0]);
        }
        self.push(Op::Concat(parts.iter().map(|p| p.0).collect()), v)
    }

    pub fn slice(&mut self, a: NodeId, offset: usize, len: usize) -> NodeId {
        let v = self.values[a.0][offset..offset + len].to_vec();
        self.push(Op::Slice { input: a.0, offset }, v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.map(a, |x| x.clamp(lo, hi));
        self.push(Op::Clamp { input: a.0, lo, hi }, v)
    }

    /// Sum of squares, `‖a‖²`.
    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let s = self.square(a);
        self.sum(s)
    }

    /// Gradient of a scalar node seeded with `seed` (normally `[1.0]`).
    pub fn backward(&self, output: NodeId, seed: &[f64]) -> Result<Gradients> {
        self.backward_many(&[(output, seed)])
    }

    /// Reverse sweep from several seeded nodes at once (vector-Jacobian
    /// product of the concatenated outputs).
    pub fn backward_many(&self, seeds: &[(NodeId, &[f64])]) -> Result<Gradients> {
        if self.ops.is_empty() {
            return Err(Error::Tape("backward called before any forward operation".into()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        let mut start = 0;
        for (node, seed) in seeds {
            let len = self
                .values
                .get(node.0)
                .ok_or_else(|| Error::Tape(format!("node {} not on this tape", node.0)))?
                .len();
            if seed.len() != len {
                return Err(Error::Tape(format!(
                    "seed len {} does not match node len {len}",
                    seed.len()
                )));
            }
            accumulate(&mut adj[node.0], seed);
            start = start.max(node.0 + 1);
        }

        let mut grads: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .map(|b| if b.trainable { vec![0.0; b.data.len()] } else { Vec::new() })
            .collect();

        for i in (0..start).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param { block, offset } => {
                    if self.blocks[*block].trainable {
                        let dst = &mut grads[*block][*offset..*offset + g.len()];
                        for (d, gi) in dst.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                }
                Op::Linear {
                    block,
                    w,
                    rows,
                    cols,
                    bias,
                    input,
                } => {
                    let data = self.blocks[*block].data;
                    let wmat = &data[*w..*w + rows * cols];
                    let mut dx = vec![0.0; *cols];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            let row = &wmat[r * cols..(r + 1) * cols];
                            for (d, wv) in dx.iter_mut().zip(row) {
                                *d += gr * wv;
                            }
                        }
                    }
                    if self.blocks[*block].trainable {
                        let x = &self.values[*input];
                        let gw = &mut grads[*block];
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                let dst = &mut gw[w + r * cols..w + (r + 1) * cols];
                                for (d, xv) in dst.iter_mut().zip(x) {
                                    *d += gr * xv;
                                }
                            }
                        }
                        if let Some(b) = bias {
                            for (d, gi) in gw[*b..*b + rows].iter_mut().zip(&g) {
                                *d += gi;
                            }
                        }
                    }
                    accumulate_owned(&mut adj[*input], dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[*a], &g);
                    accumulate_owned(&mut adj[*b], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[*a], &g);
                    accumulate_owned(&mut adj[*b], g.iter().map(|x| -x).collect());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.values[*a], &self.values[*b]);
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    accumulate_owned(&mut adj[*a], ga);
                    accumulate_owned(&mut adj[*b], gb);
                }
                Op::MulScalar(a, s) => {
                    let c = self.values[*s][0];
                    let va = &self.values[*a];
                    let gs: f64 = g.iter().zip(va).map(|(x, y)| x * y).sum();
                    accumulate_owned(&mut adj[*a], g.iter().map(|x| x * c).collect());
                    accumulate_owned(&mut adj[*s], vec![gs]);
                }
                Op::Scale(a, c) => {
                    accumulate_owned(&mut adj[*a], g.iter().map(|x| x * c).collect());
                }
                Op::Shift(a) => accumulate_owned(&mut adj[*a], g),
                Op::Tanh(a) => {
                    let y = &self.values[i];
                    let ga = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                    accumulate_owned(&mut adj[*a], ga);
                }
                Op::Exp(a) => {
                    let y = &self.values[i];
                    let ga = g.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                    accumulate_owned(&mut adj[*a], ga);
                }
                Op::Softplus(a) => {
                    let x = &self.values[*a];
                    let ga = g.iter().zip(x).map(|(gi, xi)| gi * sigmoid(*xi)).collect();
                    accumulate_owned(&mut adj[*a], ga);
                }
                Op::Square(a) => {
                    let x = &self.values[*a];
                    let ga = g.iter().zip(x).map(|(gi, xi)| 2.0 * gi * xi).collect();
                    accumulate_owned(&mut adj[*a], ga);
                }
                Op::Sum(a) => {
                    let n = self.values[*a].len();
                    accumulate_owned(&mut adj[*a], vec![g[0]; n]);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.values[*p].len();
                        accumulate(&mut adj[*p], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { input, offset } => {
                    let n = self.values[*input].len();
                    let slot = adj[*input].get_or_insert_with(|| vec![0.0; n]);
                    for (d, gi) in slot[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    let x = &self.values[*input];
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(gi, xi)| if *xi >= *lo && *xi <= *hi { *gi } else { 0.0 })
                        .collect();
                    accumulate_owned(&mut adj[*input], ga);
                }
            }
        }
        Ok(Gradients { blocks: grads })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(v) => v.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(v) => v.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_gradient() {
        let w = [3.0];
        let mut t = Tape::new();
        let b = t.register(&w);
        let p = t.param(b, 0, 1);
        let y = t.sum_sq(p);
        assert_eq!(t.scalar(y), 9.0);
        let g = t.backward(y, &[1.0]).unwrap();
        assert_eq!(g.block(b), &[6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let w = [0.0];
        let mut t = Tape::new();
        let b = t.register(&w);
        let p = t.param(b, 0, 1);
        let y = t.tanh(p);
        let y = t.sum(y);
        let g = t.backward(y, &[1.0]).unwrap();
        assert_eq!(g.block(b), &[1.0]);
    }

    #[test]
    fn backward_before_forward_is_usage_error() {
        let t = Tape::new();
        let err = t.backward(NodeId(0), &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Tape(_)));
    }

    #[test]
    fn seed_length_is_checked() {
        let w = [1.0, 2.0];
        let mut t = Tape::new();
        let b = t.register(&w);
        let p = t.param(b, 0, 2);
        assert!(t.backward(p, &[1.0]).is_err());
    }

    #[test]
    fn frozen_blocks_get_no_gradient() {
        let w = [2.0];
        let mut t = Tape::new();
        let b = t.register_frozen(&w);
        let p = t.param(b, 0, 1);
        let y = t.sum_sq(p);
        let g = t.backward(y, &[1.0]).unwrap();
        assert!(g.block(b).is_empty());
    }

    /// f(p) = sum(tanh(W2 tanh(W1 x + b1) + b2)) with p = [W1, b1, W2, b2].
    fn mlp(t: &mut Tape<'_>, b: BlockId, x: &[f64]) -> NodeId {
        let xi = t.constant(x.to_vec());
        let h = t.linear(b, 0, 4, 3, Some(12), xi);
        let h = t.tanh(h);
        let o = t.linear(b, 16, 2, 4, Some(24), h);
        let o = t.softplus(o);
        let o = t.square(o);
        t.sum(o)
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<f64> = (0..26).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = [0.3, -0.7, 1.1];
        let mut t = Tape::new();
        let b = t.register(&p);
        let out = mlp(&mut t, b, &x);
        let g = t.backward(out, &[1.0]).unwrap();
        let fd = finite_diff(
            |q: &[f64]| {
                let mut t = Tape::new();
                let b = t.register(q);
                let o = mlp(&mut t, b, &x);
                t.scalar(o)
            },
            &p,
            1e-5,
        );
        for (a, n) in g.block(b).iter().zip(&fd) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn backward_is_linear_in_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..26).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::new();
        let b = t.register(&p);
        let f1 = mlp(&mut t, b, &[1.0, 0.0, -1.0]);
        let f2 = mlp(&mut t, b, &[0.5, 0.5, 0.2]);
        let total = t.add(f1, f2);
        let g_sum = t.backward(total, &[1.0]).unwrap();
        let g1 = t.backward(f1, &[1.0]).unwrap();
        let g2 = t.backward(f2, &[1.0]).unwrap();
        for i in 0..p.len() {
            let lhs = g_sum.block(b)[i];
            let rhs = g1.block(b)[i] + g2.block(b)[i];
            assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn slice_concat_clamp_mul_scalar_gradients() {
        let p = [0.4, -2.5, 1.3, 0.9];
        let f = |q: &[f64]| {
            let mut t = Tape::new();
            let b = t.register(q);
            let a = t.param(b, 0, 3);
            let s = t.param(b, 3, 1);
            let c = t.clamp(a, -2.0, 2.0);
            let e = t.exp(c);
            let m = t.mul_scalar(e, s);
            let head = t.slice(m, 0, 2);
            let cat = t.concat(&[head, s]);
            let d = t.sub(cat, a);
            let sq = t.sum_sq(d);
            (t.scalar(sq), t.backward(sq, &[1.0]).unwrap().block(b).to_vec())
        };
        let (_, g) = f(&p);
        let fd = finite_diff(|q: &[f64]| f(q).0, &p, 1e-6);
        for (a, n) in g.iter().zip(&fd) {
            assert!((a - n).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {n}");
        }
    }
}
