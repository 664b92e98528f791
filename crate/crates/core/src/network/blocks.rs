use ndarray::{Array2, ArrayView2, Axis};

use super::layers::{gelu, gelu_grad, AttnCache, AttnGroup, Attention, LayerNorm, Linear, LnCache, Mlp, MlpCache};
use super::params::{ParamLayout, ParamStore};

/// Pre-norm Transformer block.
///
/// `kv_rows` restricts keys and values to a subset of rows (the group `kv`
/// ranges then index into that subset). The two residual branches are
/// multiplied by `scales`; a zero scale skips the branch entirely.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    kv: Option<Array2<f64>>,
    attn: Option<AttnCache>,
    ln2: Option<LnCache>,
    b: Option<Array2<f64>>,
    mlp: Option<MlpCache>,
    scales: [f64; 2],
}

impl BlockCache {
    pub fn attention(&self) -> Option<&AttnCache> {
        self.attn.as_ref()
    }
}

impl TransformerBlock {
    pub fn new(l: &mut ParamLayout, name: &str, dim: usize, heads: usize, hidden: usize) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(l, &format!("{name}.ln1"), dim),
            attn: Attention::new(l, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(l, &format!("{name}.ln2"), dim),
            mlp: Mlp::new(l, &format!("{name}.mlp"), dim, hidden),
        }
    }

    pub fn forward(
        &self,
        p: &ParamStore,
        x: Array2<f64>,
        groups: &[AttnGroup],
        kv_rows: Option<&[usize]>,
        scales: [f64; 2],
    ) -> (Array2<f64>, BlockCache) {
        let mut x = x;
        let (a, ln1) = self.ln1.forward(p, &x.view());
        let kv = kv_rows.map(|r| a.select(Axis(0), r));
        let mut attn = None;
        if scales[0] != 0.0 {
            let kv_view = kv.as_ref().map_or(a.view(), |k| k.view());
            let (h, c) = self.attn.forward(p, &a.view(), &kv_view, groups);
            x.scaled_add(scales[0], &h);
            attn = Some(c);
        }
        let (mut ln2, mut b, mut mlp) = (None, None, None);
        if scales[1] != 0.0 {
            let (bb, l2) = self.ln2.forward(p, &x.view());
            let (m, mc) = self.mlp.forward(p, &bb.view());
            x.scaled_add(scales[1], &m);
            ln2 = Some(l2);
            b = Some(bb);
            mlp = Some(mc);
        }
        (
            x,
            BlockCache {
                ln1,
                a,
                kv,
                attn,
                ln2,
                b,
                mlp,
                scales,
            },
        )
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        groups: &[AttnGroup],
        kv_rows: Option<&[usize]>,
        c: &BlockCache,
        dy: Array2<f64>,
    ) -> Array2<f64> {
        let mut dx = dy;
        if let (Some(b), Some(mc), Some(l2)) = (&c.b, &c.mlp, &c.ln2) {
            let dm = &dx * c.scales[1];
            let db = self.mlp.backward(p, g, &b.view(), mc, &dm.view());
            dx += &self.ln2.backward(p, g, l2, &db.view());
        }
        if let Some(ac) = &c.attn {
            let dh = &dx * c.scales[0];
            let kv_view = c.kv.as_ref().map_or(c.a.view(), |k| k.view());
            let (mut da, dkv) =
                self.attn
                    .backward(p, g, &c.a.view(), &kv_view, groups, ac, &dh.view());
            match kv_rows {
                Some(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        let mut row = da.row_mut(r);
                        row += &dkv.row(i);
                    }
                }
                None => da += &dkv,
            }
            dx += &self.ln1.backward(p, g, &c.ln1, &da.view());
        }
        dx
    }
}

/// Centers of a kernel-3 convolution with stride `r` and `ceil(len / r)`
/// outputs, placed symmetrically inside the sequence.
pub fn strided_positions(len: usize, r: usize) -> Vec<usize> {
    let m = len.div_ceil(r);
    let off = ((len - 1) - (m - 1) * r) / 2;
    (0..m).map(|i| off + i * r).collect()
}

/// Attention + MLP whose second layer is a strided kernel-3 convolution
/// over the sequence axis with replicate padding.
#[derive(Debug, Clone)]
pub struct StridedBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    /// Kernel taps stacked as a `(3 * hidden) x dim` map.
    pub conv: Linear,
    pub stride: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct StridedCache {
    ln1: LnCache,
    a: Array2<f64>,
    attn: AttnCache,
    ln2: LnCache,
    b: Array2<f64>,
    pre: Array2<f64>,
    cols: Array2<f64>,
    taps: Vec<[usize; 3]>,
    positions: Vec<usize>,
    len: usize,
}

impl StridedBlock {
    pub fn new(
        l: &mut ParamLayout,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        stride: usize,
    ) -> Self {
        StridedBlock {
            ln1: LayerNorm::new(l, &format!("{name}.ln1"), dim),
            attn: Attention::new(l, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(l, &format!("{name}.ln2"), dim),
            fc1: Linear::new(l, &format!("{name}.fc1"), dim, hidden),
            conv: Linear::new(l, &format!("{name}.conv"), 3 * hidden, dim),
            stride,
            hidden,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: Array2<f64>) -> (Array2<f64>, StridedCache) {
        let len = x.nrows();
        let (a, ln1) = self.ln1.forward(p, &x.view());
        let (h, attn) = self.attn.forward(p, &a.view(), &a.view(), &[AttnGroup::same(0..len)]);
        let x1 = x + h;
        let (b, ln2) = self.ln2.forward(p, &x1.view());
        let pre = self.fc1.forward(p, &b.view());
        let act = pre.mapv(gelu);
        let positions = strided_positions(len, self.stride);
        let hd = self.hidden;
        let taps: Vec<[usize; 3]> = positions
            .iter()
            .map(|&c| [c.saturating_sub(1), c, (c + 1).min(len - 1)])
            .collect();
        let mut cols = Array2::zeros((positions.len(), 3 * hd));
        for (i, t) in taps.iter().enumerate() {
            for (k, &src) in t.iter().enumerate() {
                cols.row_mut(i)
                    .slice_mut(ndarray::s![k * hd..(k + 1) * hd])
                    .assign(&act.row(src));
            }
        }
        let mut y = self.conv.forward(p, &cols.view());
        y += &x1.select(Axis(0), &positions);
        (
            y,
            StridedCache {
                ln1,
                a,
                attn,
                ln2,
                b,
                pre,
                cols,
                taps,
                positions,
                len,
            },
        )
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        c: &StridedCache,
        dy: &ArrayView2<f64>,
    ) -> Array2<f64> {
        let hd = self.hidden;
        let dcols = self.conv.backward(p, g, &c.cols.view(), dy);
        let mut dact = Array2::<f64>::zeros((c.len, hd));
        for (i, t) in c.taps.iter().enumerate() {
            for (k, &src) in t.iter().enumerate() {
                let mut row = dact.row_mut(src);
                row += &dcols.row(i).slice(ndarray::s![k * hd..(k + 1) * hd]);
            }
        }
        dact.zip_mut_with(&c.pre, |d, &z| *d *= gelu_grad(z));
        let db = self.fc1.backward(p, g, &c.b.view(), &dact.view());
        let mut dx1 = self.ln2.backward(p, g, &c.ln2, &db.view());
        for (i, &pos) in c.positions.iter().enumerate() {
            let mut row = dx1.row_mut(pos);
            row += &dy.row(i);
        }
        let groups = [AttnGroup::same(0..c.len)];
        let (dq, dkv) = self
            .attn
            .backward(p, g, &c.a.view(), &c.a.view(), &groups, &c.attn, &dx1.view());
        let da = dq + dkv;
        dx1 + self.ln1.backward(p, g, &c.ln1, &da.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_follow_ceil_reduction() {
        assert_eq!(strided_positions(71, 3).len(), 24);
        assert_eq!(strided_positions(24, 5), vec![1, 6, 11, 16, 21]);
        assert_eq!(strided_positions(5, 5), vec![2]);
        assert_eq!(strided_positions(41, 4).len(), 11);
        assert_eq!(strided_positions(11, 4), vec![1, 5, 9]);
        assert_eq!(strided_positions(3, 3), vec![1]);
        assert_eq!(strided_positions(1, 1), vec![0]);
    }
}
