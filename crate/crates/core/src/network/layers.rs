//! Dense building blocks with hand-written backward passes. Activations are
//! row-major `(tokens, features)` matrices.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{Init, ParamLayout, ParamStore, TensorId};

pub(crate) const LN_EPS: f64 = 1e-6;
/// Standard deviation of the normal initialisation of linear weights.
pub const LINEAR_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: TensorId,
    pub b: TensorId,
}

impl Linear {
    pub fn new(l: &mut ParamLayout, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            w: l.add(format!("{name}.weight"), &[din, dout], Init::Normal { std: LINEAR_INIT_STD }),
            b: l.add(format!("{name}.bias"), &[dout], Init::Zeros),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&p.mat(self.w));
        y += &p.vec(self.b);
        y
    }

    /// Accumulates weight gradients and returns `dL/dx`.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        x: &ArrayView2<f64>,
        dy: &ArrayView2<f64>,
    ) -> Array2<f64> {
        self.accumulate(g, x, dy);
        dy.dot(&p.mat(self.w).t())
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, g: &mut ParamStore, x: &ArrayView2<f64>, dy: &ArrayView2<f64>) {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.mat_mut(self.w));
        let db = dy.sum_axis(Axis(0));
        let mut gb = g.vec_mut(self.b);
        gb += &db;
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: TensorId,
    pub beta: TensorId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(l: &mut ParamLayout, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: l.add(format!("{name}.gamma"), &[dim], Init::Ones),
            beta: l.add(format!("{name}.beta"), &[dim], Init::Zeros),
            dim,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &ArrayView2<f64>) -> (Array2<f64>, LnCache) {
        let d = self.dim as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *is = 1.0 / (var + LN_EPS).sqrt();
            row *= *is;
        }
        let mut y = &xhat * &p.vec(self.gamma);
        y += &p.vec(self.beta);
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        c: &LnCache,
        dy: &ArrayView2<f64>,
    ) -> Array2<f64> {
        {
            let dgamma = (dy * &c.xhat).sum_axis(Axis(0));
            let mut gg = g.vec_mut(self.gamma);
            gg += &dgamma;
        }
        {
            let dbeta = dy.sum_axis(Axis(0));
            let mut gb = g.vec_mut(self.beta);
            gb += &dbeta;
        }
        let d = self.dim as f64;
        let mut dx = dy * &p.vec(self.gamma);
        for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.inv_std) {
            let mean_g = row.sum() / d;
            let mean_gx = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            row.zip_mut_with(&xh, |v, &x| *v = is * (*v - mean_g - x * mean_gx));
        }
        dx
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

/// Two-layer perceptron `fc2(gelu(fc1(x)))`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl Mlp {
    pub fn new(l: &mut ParamLayout, name: &str, dim: usize, hidden: usize) -> Self {
        Mlp {
            fc1: Linear::new(l, &format!("{name}.fc1"), dim, hidden),
            fc2: Linear::new(l, &format!("{name}.fc2"), hidden, dim),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.fc1.forward(p, x);
        let act = pre.mapv(gelu);
        let y = self.fc2.forward(p, &act.view());
        (y, MlpCache { pre, act })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        x: &ArrayView2<f64>,
        c: &MlpCache,
        dy: &ArrayView2<f64>,
    ) -> Array2<f64> {
        let mut dh = self.fc2.backward(p, g, &c.act.view(), dy);
        dh.zip_mut_with(&c.pre, |d, &z| *d *= gelu_grad(z));
        self.fc1.backward(p, g, x, &dh.view())
    }
}

/// One independent attention problem: query rows attend to key/value rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnGroup {
    pub q: Range<usize>,
    pub kv: Range<usize>,
}

impl AttnGroup {
    pub fn same(r: Range<usize>) -> Self {
        AttnGroup { q: r.clone(), kv: r }
    }

    /// `count` consecutive self-attention groups of `size` rows each.
    pub fn blocks(count: usize, size: usize) -> Vec<AttnGroup> {
        (0..count).map(|i| AttnGroup::same(i * size..(i + 1) * size)).collect()
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    ctx: Array2<f64>,
    /// Softmax weights, group-major then head.
    pub weights: Vec<Array2<f64>>,
}

impl Attention {
    pub fn new(l: &mut ParamLayout, name: &str, dim: usize, heads: usize) -> Self {
        Attention {
            q: Linear::new(l, &format!("{name}.q"), dim, dim),
            k: Linear::new(l, &format!("{name}.k"), dim, dim),
            v: Linear::new(l, &format!("{name}.v"), dim, dim),
            o: Linear::new(l, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(
        &self,
        p: &ParamStore,
        xq: &ArrayView2<f64>,
        xkv: &ArrayView2<f64>,
        groups: &[AttnGroup],
    ) -> (Array2<f64>, AttnCache) {
        let q = self.q.forward(p, xq);
        let k = self.k.forward(p, xkv);
        let v = self.v.forward(p, xkv);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Array2::zeros(q.raw_dim());
        let mut weights = Vec::with_capacity(groups.len() * self.heads);
        for g in groups {
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![g.q.clone(), cols.clone()]);
                let kh = k.slice(s![g.kv.clone(), cols.clone()]);
                let vh = v.slice(s![g.kv.clone(), cols.clone()]);
                let mut a = qh.dot(&kh.t());
                a *= scale;
                softmax_rows(&mut a);
                ctx.slice_mut(s![g.q.clone(), cols]).assign(&a.dot(&vh));
                weights.push(a);
            }
        }
        let out = self.o.forward(p, &ctx.view());
        (out, AttnCache { q, k, v, ctx, weights })
    }

    /// Returns `(dL/dxq, dL/dxkv)`.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        xq: &ArrayView2<f64>,
        xkv: &ArrayView2<f64>,
        groups: &[AttnGroup],
        c: &AttnCache,
        dy: &ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let dctx = self.o.backward(p, g, &c.ctx.view(), dy);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        let mut wi = c.weights.iter();
        for grp in groups {
            for h in 0..self.heads {
                let a = wi.next().expect("cached weights");
                let cols = h * dh..(h + 1) * dh;
                let qh = c.q.slice(s![grp.q.clone(), cols.clone()]);
                let kh = c.k.slice(s![grp.kv.clone(), cols.clone()]);
                let vh = c.v.slice(s![grp.kv.clone(), cols.clone()]);
                let dc = dctx.slice(s![grp.q.clone(), cols.clone()]);
                let mut dvh = dv.slice_mut(s![grp.kv.clone(), cols.clone()]);
                general_mat_mul(1.0, &a.t(), &dc, 1.0, &mut dvh);
                let da = dc.dot(&vh.t());
                let mut ds = &da * a;
                for (mut row, ar) in ds.rows_mut().into_iter().zip(a.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&ar, |v, &w| *v -= w * dot);
                }
                // row now holds a * (da - dot); rescale for the score scaling
                ds *= scale;
                let mut dqh = dq.slice_mut(s![grp.q.clone(), cols.clone()]);
                general_mat_mul(1.0, &ds, &kh, 1.0, &mut dqh);
                let mut dkh = dk.slice_mut(s![grp.kv.clone(), cols]);
                general_mat_mul(1.0, &ds.t(), &qh, 1.0, &mut dkh);
            }
        }
        let dxq = self.q.backward(p, g, xq, &dq.view());
        let mut dxkv = self.k.backward(p, g, xkv, &dk.view());
        dxkv += &self.v.backward(p, g, xkv, &dv.view());
        (dxq, dxkv)
    }
}

pub(crate) fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}
