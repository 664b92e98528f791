use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{BlockCache, StridedBlock, StridedCache, TransformerBlock};
use super::config::ModelConfig;
use super::layers::{AttnGroup, LayerNorm, Linear, LnCache};
use super::params::{Init, ParamLayout, ParamStore, TensorId};
use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Pose3D};
use crate::sequencing::TokenLayout;

/// Network outputs are in metres internally and scaled to millimetres.
pub const OUTPUT_SCALE_MM: f64 = 1000.0;

/// Forward-pass mode. Training draws stochastic-depth decisions from a
/// generator seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Intermediate sequence `P'`, `N_out x 3J`, millimetres.
    pub sequence: Array2<f64>,
    /// Center pose `P_t`, `3J`, millimetres.
    pub center: Array1<f64>,
    /// Per temporal block and head, `N_out x N_out` attention weights.
    pub attention: Option<Vec<Vec<Array2<f64>>>>,
}

fn to_pose(row: ndarray::ArrayView1<f64>) -> Pose3D {
    Pose3D(row.exact_chunks(3).into_iter().map(|c| [c[0], c[1], c[2]]).collect())
}

impl ForwardOutput {
    pub fn sequence_poses(&self) -> Vec<Pose3D> {
        self.sequence.rows().into_iter().map(to_pose).collect()
    }

    pub fn center_pose(&self) -> Pose3D {
        to_pose(self.center.view())
    }
}

#[derive(Debug, Clone)]
struct Spatial {
    embed: Linear,
    pe: TensorId,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct StridedStage {
    blocks: Vec<StridedBlock>,
    norm: LayerNorm,
    head: Linear,
}

/// Spatial, temporal and strided Transformer stack. Holds the architecture
/// only; weights live in a [`ParamStore`] built from [`Uplifter::layout`].
#[derive(Debug, Clone)]
pub struct Uplifter {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    spatial: Option<Spatial>,
    condense: Linear,
    upsample_token: TensorId,
    temporal_pe: TensorId,
    temporal: Vec<TransformerBlock>,
    seq_norm: LayerNorm,
    seq_head: Linear,
    strided: Option<StridedStage>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n_in: usize,
    layout: TokenLayout,
    input: Array2<f64>,
    spatial_blocks: Vec<BlockCache>,
    spatial_norm: Option<LnCache>,
    flat: Array2<f64>,
    temporal_blocks: Vec<BlockCache>,
    seq_norm: LnCache,
    seq_normed: Array2<f64>,
    strided_blocks: Vec<StridedCache>,
    strided_norm: Option<LnCache>,
    strided_normed: Option<Array2<f64>>,
}

const PE_STD: f64 = 0.02;

impl Uplifter {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut l = ParamLayout::default();
        let j = c.joints;
        let spatial = c.spatial_enabled.then(|| Spatial {
            embed: Linear::new(&mut l, "spatial.embed", 2, c.d_joint),
            pe: l.add("spatial.pos_embed", &[j, c.d_joint], Init::Normal { std: PE_STD }),
            blocks: (0..c.k_joint)
                .map(|i| {
                    TransformerBlock::new(
                        &mut l,
                        &format!("spatial.block{i}"),
                        c.d_joint,
                        c.heads_spatial,
                        c.mlp_ratio * c.d_joint,
                    )
                })
                .collect(),
            norm: LayerNorm::new(&mut l, "spatial.norm", c.d_joint),
        });
        let flat_width = if c.spatial_enabled { j * c.d_joint } else { j * 2 };
        let condense = Linear::new(&mut l, "condense", flat_width, c.d_temp);
        let upsample_token = l.add("upsample_token", &[1, c.d_temp], Init::Normal { std: PE_STD });
        let temporal_pe = l.add(
            "temporal.pos_embed",
            &[c.n_out(), c.d_temp],
            Init::Normal { std: PE_STD },
        );
        let temporal = if c.temporal_enabled {
            (0..c.k_temp)
                .map(|i| {
                    TransformerBlock::new(
                        &mut l,
                        &format!("temporal.block{i}"),
                        c.d_temp,
                        c.heads_temporal,
                        c.mlp_ratio * c.d_temp,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let seq_norm = LayerNorm::new(&mut l, "sequence.norm", c.d_temp);
        let seq_head = Linear::new(&mut l, "sequence.head", c.d_temp, 3 * j);
        let strided = c.strided_enabled.then(|| StridedStage {
            blocks: c
                .strides
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    StridedBlock::new(
                        &mut l,
                        &format!("strided.block{i}"),
                        c.d_temp,
                        c.heads_temporal,
                        c.mlp_ratio * c.d_temp,
                        r,
                    )
                })
                .collect(),
            norm: LayerNorm::new(&mut l, "center.norm", c.d_temp),
            head: Linear::new(&mut l, "center.head", c.d_temp, 3 * j),
        });
        Ok(Uplifter {
            config,
            layout: Arc::new(l),
            spatial,
            condense,
            upsample_token,
            temporal_pe,
            temporal,
            seq_norm,
            seq_head,
            strided,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        ParamStore::init(self.layout.clone(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn upsample_token_id(&self) -> TensorId {
        self.upsample_token
    }

    pub fn temporal_pe_id(&self) -> TensorId {
        self.temporal_pe
    }

    fn check(&self, p: &ParamStore, poses: &[Pose2D], layout: &TokenLayout) -> Result<()> {
        if !Arc::ptr_eq(p.layout(), &self.layout) && **p.layout() != *self.layout {
            return Err(Error::Config("parameter layout does not match the model".into()));
        }
        if layout.n_out != self.config.n_out() {
            return Err(Error::shape(self.config.n_out(), layout.n_out));
        }
        if layout.pose_slots.is_empty() {
            return Err(Error::Config("window has no pose slots to attend to".into()));
        }
        if poses.len() != layout.pose_slots.len() {
            return Err(Error::shape(layout.pose_slots.len(), poses.len()));
        }
        for pose in poses {
            if pose.0.len() != self.config.joints {
                return Err(Error::shape(self.config.joints, pose.0.len()));
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        p: &ParamStore,
        poses: &[Pose2D],
        layout: &TokenLayout,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        self.forward_with_cache(p, poses, layout, mode).map(|(o, _)| o)
    }

    /// Eval-mode forward that also returns the temporal attention maps.
    pub fn forward_traced(
        &self,
        p: &ParamStore,
        poses: &[Pose2D],
        layout: &TokenLayout,
    ) -> Result<ForwardOutput> {
        let (mut out, cache) = self.forward_with_cache(p, poses, layout, Mode::Eval)?;
        let n_out = layout.n_out;
        let traces = cache
            .temporal_blocks
            .iter()
            .map(|bc| {
                let Some(ac) = bc.attention() else {
                    return Vec::new();
                };
                ac.weights
                    .iter()
                    .map(|w| {
                        if w.ncols() == n_out {
                            return w.clone();
                        }
                        let mut full = Array2::zeros((n_out, n_out));
                        for (k, &slot) in layout.pose_slots.iter().enumerate() {
                            full.column_mut(slot).assign(&w.column(k));
                        }
                        full
                    })
                    .collect()
            })
            .collect();
        out.attention = Some(traces);
        Ok(out)
    }

    fn drop_scales(&self, rng: &mut Option<ChaCha8Rng>) -> [f64; 2] {
        let pdrop = self.config.drop_path_rate;
        match rng {
            Some(r) if pdrop > 0.0 => {
                let keep = 1.0 / (1.0 - pdrop);
                let mut one = || if r.random::<f64>() < pdrop { 0.0 } else { keep };
                [one(), one()]
            }
            _ => [1.0, 1.0],
        }
    }

    fn temporal_attention_plan(
        &self,
        block: usize,
        layout: &TokenLayout,
    ) -> (Vec<AttnGroup>, Option<Vec<usize>>) {
        let n = layout.n_out;
        if block == 0 && self.config.duta_enabled && !layout.upsample_slots.is_empty() {
            (
                vec![AttnGroup {
                    q: 0..n,
                    kv: 0..layout.pose_slots.len(),
                }],
                Some(layout.pose_slots.clone()),
            )
        } else {
            (vec![AttnGroup::same(0..n)], None)
        }
    }

    pub fn forward_with_cache(
        &self,
        p: &ParamStore,
        poses: &[Pose2D],
        layout: &TokenLayout,
        mode: Mode,
    ) -> Result<(ForwardOutput, ForwardCache)> {
        self.check(p, poses, layout)?;
        let c = &self.config;
        let j = c.joints;
        let n_in = poses.len();
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        let input = Array2::from_shape_fn((n_in * j, 2), |(r, k)| poses[r / j].0[r % j][k]);

        let mut spatial_blocks = Vec::new();
        let mut spatial_norm = None;
        let flat = match &self.spatial {
            Some(sp) => {
                let mut x = sp.embed.forward(p, &input.view());
                let pe = p.mat(sp.pe);
                for (r, mut row) in x.rows_mut().into_iter().enumerate() {
                    row += &pe.row(r % j);
                }
                let groups = AttnGroup::blocks(n_in, j);
                for b in &sp.blocks {
                    let scales = self.drop_scales(&mut rng);
                    let (y, bc) = b.forward(p, x, &groups, None, scales);
                    x = y;
                    spatial_blocks.push(bc);
                }
                let (y, lc) = sp.norm.forward(p, &x.view());
                spatial_norm = Some(lc);
                y.into_shape_with_order((n_in, j * c.d_joint))
                    .expect("contiguous activations")
            }
            None => input
                .clone()
                .into_shape_with_order((n_in, j * 2))
                .expect("contiguous input"),
        };
        let tokens = self.condense.forward(p, &flat.view());

        let n_out = layout.n_out;
        let mut y = Array2::zeros((n_out, c.d_temp));
        let u = p.mat(self.upsample_token);
        for &slot in &layout.upsample_slots {
            y.row_mut(slot).assign(&u.row(0));
        }
        for (k, &slot) in layout.pose_slots.iter().enumerate() {
            y.row_mut(slot).assign(&tokens.row(k));
        }
        y += &p.mat(self.temporal_pe);

        let mut temporal_blocks = Vec::with_capacity(self.temporal.len());
        for (i, b) in self.temporal.iter().enumerate() {
            let (groups, kv) = self.temporal_attention_plan(i, layout);
            let scales = self.drop_scales(&mut rng);
            let (out, bc) = b.forward(p, y, &groups, kv.as_deref(), scales);
            y = out;
            temporal_blocks.push(bc);
        }

        let (seq_normed, seq_norm) = self.seq_norm.forward(p, &y.view());
        let mut sequence = self.seq_head.forward(p, &seq_normed.view());
        sequence *= OUTPUT_SCALE_MM;

        let mut strided_blocks = Vec::new();
        let mut strided_norm = None;
        let mut strided_normed = None;
        let center = match &self.strided {
            Some(st) => {
                let mut z = y;
                for b in &st.blocks {
                    let (out, sc) = b.forward(p, z);
                    z = out;
                    strided_blocks.push(sc);
                }
                let (zn, lc) = st.norm.forward(p, &z.view());
                let mut out = st.head.forward(p, &zn.view());
                out *= OUTPUT_SCALE_MM;
                strided_norm = Some(lc);
                strided_normed = Some(zn);
                out.row(0).to_owned()
            }
            None => sequence.row(layout.center_slot()).to_owned(),
        };

        Ok((
            ForwardOutput {
                sequence,
                center,
                attention: None,
            },
            ForwardCache {
                n_in,
                layout: layout.clone(),
                input,
                spatial_blocks,
                spatial_norm,
                flat,
                temporal_blocks,
                seq_norm,
                seq_normed,
                strided_blocks,
                strided_norm,
                strided_normed,
            },
        ))
    }

    /// Accumulate parameter gradients of a loss with output gradients
    /// `d_sequence` (`N_out x 3J`) and `d_center` (`3J`) into `g`.
    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &ForwardCache,
        d_sequence: &Array2<f64>,
        d_center: &Array1<f64>,
        g: &mut ParamStore,
    ) {
        let c = &self.config;
        let j = c.joints;
        let layout = &cache.layout;
        let mut d_seq = d_sequence * OUTPUT_SCALE_MM;

        let mut dy = match &self.strided {
            Some(st) => {
                let dc = (d_center * OUTPUT_SCALE_MM).insert_axis(Axis(0));
                let zn = cache.strided_normed.as_ref().expect("strided cache");
                let dzn = st.head.backward(p, g, &zn.view(), &dc.view());
                let ln = cache.strided_norm.as_ref().expect("strided cache");
                let mut dz = st.norm.backward(p, g, ln, &dzn.view());
                for (b, sc) in st.blocks.iter().zip(&cache.strided_blocks).rev() {
                    dz = b.backward(p, g, sc, &dz.view());
                }
                dz
            }
            None => {
                let mut row = d_seq.row_mut(layout.center_slot());
                row.scaled_add(OUTPUT_SCALE_MM, d_center);
                Array2::zeros((layout.n_out, c.d_temp))
            }
        };
        let dnorm = self.seq_head.backward(p, g, &cache.seq_normed.view(), &d_seq.view());
        dy += &self.seq_norm.backward(p, g, &cache.seq_norm, &dnorm.view());

        for (i, (b, bc)) in self.temporal.iter().zip(&cache.temporal_blocks).enumerate().rev() {
            let (groups, kv) = self.temporal_attention_plan(i, layout);
            dy = b.backward(p, g, &groups, kv.as_deref(), bc, dy);
        }

        {
            let mut gpe = g.mat_mut(self.temporal_pe);
            gpe += &dy;
        }
        {
            let mut gu = g.mat_mut(self.upsample_token);
            let mut gu = gu.row_mut(0);
            for &slot in &layout.upsample_slots {
                gu += &dy.row(slot);
            }
        }
        let dtokens = dy.select(Axis(0), &layout.pose_slots);

        match &self.spatial {
            Some(sp) => {
                let dflat = self.condense.backward(p, g, &cache.flat.view(), &dtokens.view());
                let dflat = dflat
                    .into_shape_with_order((cache.n_in * j, c.d_joint))
                    .expect("contiguous gradient");
                let ln = cache.spatial_norm.as_ref().expect("spatial cache");
                let mut dx = sp.norm.backward(p, g, ln, &dflat.view());
                let groups = AttnGroup::blocks(cache.n_in, j);
                for (b, bc) in sp.blocks.iter().zip(&cache.spatial_blocks).rev() {
                    dx = b.backward(p, g, &groups, None, bc, dx);
                }
                {
                    let mut gpe = g.mat_mut(sp.pe);
                    for (r, row) in dx.rows().into_iter().enumerate() {
                        let mut target = gpe.row_mut(r % j);
                        target += &row;
                    }
                }
                sp.embed.accumulate(g, &cache.input.view(), &dx.view());
            }
            None => self.condense.accumulate(g, &cache.flat.view(), &dtokens.view()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{grad_check, LossGrad};
    use crate::sequencing::{token_layout, StrideSchedule};

    fn inputs(n: usize, j: usize, seed: u64) -> Vec<Pose2D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Pose2D((0..j).map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect()))
            .collect()
    }

    fn weighted(out: &ForwardOutput) -> LossGrad {
        let ws = out.sequence.mapv(|_| 0.0) + 1.0;
        let ws = Array2::from_shape_fn(ws.raw_dim(), |(i, k)| ((i * 7 + k) as f64 * 0.31).sin() * 1e-3);
        let wc = Array1::from_shape_fn(out.center.len(), |k| (k as f64 * 0.7).cos() * 1e-3);
        LossGrad {
            value: (&out.sequence * &ws).sum() + (&out.center * &wc).sum(),
            d_sequence: ws,
            d_center: wc,
        }
    }

    fn tiny() -> (Uplifter, TokenLayout) {
        let s = StrideSchedule::new(9, 4, 1).unwrap();
        let m = Uplifter::new(ModelConfig::tiny(s, 5)).unwrap();
        (m, token_layout(&s).unwrap())
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (m, layout) = tiny();
        let p = m.init_params(1);
        let x = inputs(layout.n_in(), 5, 2);
        let r = grad_check(&m, &p, &x, &layout, weighted, 400, 1e-4, 3).unwrap();
        assert!(r.max_rel_error < 1e-4, "{:?}", r.worst());
    }

    #[test]
    fn ablations_keep_gradients_exact() {
        let s = StrideSchedule::new(9, 4, 1).unwrap();
        let layout = token_layout(&s).unwrap();
        for (sp, te, st, duta) in [
            (false, true, true, true),
            (true, false, true, true),
            (true, true, false, true),
            (true, true, true, false),
        ] {
            let mut c = ModelConfig::tiny(s, 5);
            c.spatial_enabled = sp;
            c.temporal_enabled = te;
            c.strided_enabled = st;
            c.duta_enabled = duta;
            let m = Uplifter::new(c).unwrap();
            let p = m.init_params(4);
            let x = inputs(layout.n_in(), 5, 5);
            let r = grad_check(&m, &p, &x, &layout, weighted, 300, 1e-5, 6).unwrap();
            assert!(r.max_rel_error < 1e-4, "{sp} {te} {st} {duta}: {:?}", r.worst());
        }
    }

    #[test]
    fn duta_rows_ignore_upsampling_slots() {
        let (m, layout) = tiny();
        let p = m.init_params(1);
        let out = m.forward_traced(&p, &inputs(3, 5, 2), &layout).unwrap();
        let maps = &out.attention.unwrap()[0];
        assert_eq!(maps.len(), 2);
        for a in maps {
            for row in a.rows() {
                let pose_mass: f64 = layout.pose_slots.iter().map(|&s| row[s]).sum();
                assert!((pose_mass - 1.0).abs() < 1e-12);
                assert!(layout.upsample_slots.iter().all(|&s| row[s] == 0.0));
            }
        }
    }

    #[test]
    fn upsample_token_gets_no_gradient_through_masked_keys() {
        let s = StrideSchedule::new(9, 4, 1).unwrap();
        let layout = token_layout(&s).unwrap();
        let mut c = ModelConfig::tiny(s, 5);
        c.strided_enabled = false;
        let loss_on_pose_slots = |out: &ForwardOutput| {
            let mut ws = Array2::zeros(out.sequence.raw_dim());
            for &slot in &layout.pose_slots {
                ws.row_mut(slot).fill(1e-3);
            }
            LossGrad {
                value: (&out.sequence * &ws).sum(),
                d_sequence: ws,
                d_center: Array1::zeros(out.center.len()),
            }
        };
        let x = inputs(3, 5, 9);
        for duta in [true, false] {
            c.duta_enabled = duta;
            let m = Uplifter::new(c.clone()).unwrap();
            let p = m.init_params(2);
            let (_, g) =
                crate::network::analytic_gradient(&m, &p, &x, &layout, &loss_on_pose_slots).unwrap();
            let gu = g.slice(m.upsample_token_id());
            let norm: f64 = gu.iter().map(|v| v * v).sum();
            if duta {
                assert_eq!(norm, 0.0);
            } else {
                assert!(norm > 0.0);
            }
        }
    }

    #[test]
    fn eval_is_deterministic_and_strided_toggle_keeps_sequence() {
        let (m, layout) = tiny();
        let p = m.init_params(1);
        let x = inputs(3, 5, 2);
        let a = m.forward(&p, &x, &layout, Mode::Eval).unwrap();
        let b = m.forward(&p, &x, &layout, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sequence.nrows(), 9);
        assert_eq!(a.center.len(), 15);

        let mut c = m.config().clone();
        c.strided_enabled = false;
        let m2 = Uplifter::new(c).unwrap();
        // parameters shared by name
        let mut p2 = m2.init_params(0);
        for spec in m2.layout().specs() {
            let src = m.layout().find(&spec.name).unwrap();
            let dst = m2.layout().find(&spec.name).unwrap();
            p2.slice_mut(dst).copy_from_slice(p.slice(src));
        }
        let o2 = m2.forward(&p2, &x, &layout, Mode::Eval).unwrap();
        assert_eq!(o2.sequence, a.sequence);
        assert_eq!(o2.center, a.sequence.row(layout.center_slot()));
    }

    #[test]
    fn upsample_slots_differ_through_positional_embedding() {
        let (m, layout) = tiny();
        let p = m.init_params(1);
        let out = m.forward(&p, &inputs(3, 5, 2), &layout, Mode::Eval).unwrap();
        let (a, b) = (layout.upsample_slots[0], layout.upsample_slots[1]);
        assert_ne!(out.sequence.row(a), out.sequence.row(b));
    }

    #[test]
    fn drop_path_only_in_training() {
        let s = StrideSchedule::new(9, 4, 1).unwrap();
        let mut c = ModelConfig::tiny(s, 5);
        c.drop_path_rate = 0.5;
        let m = Uplifter::new(c).unwrap();
        let layout = token_layout(&s).unwrap();
        let p = m.init_params(1);
        let x = inputs(3, 5, 2);
        let e1 = m.forward(&p, &x, &layout, Mode::Eval).unwrap();
        let e2 = m.forward(&p, &x, &layout, Mode::Eval).unwrap();
        assert_eq!(e1, e2);
        let t1 = m.forward(&p, &x, &layout, Mode::Train { seed: 5 }).unwrap();
        let t2 = m.forward(&p, &x, &layout, Mode::Train { seed: 5 }).unwrap();
        assert_eq!(t1, t2);
        let differs = (0..20).any(|seed| m.forward(&p, &x, &layout, Mode::Train { seed }).unwrap() != e1);
        assert!(differs);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, layout) = tiny();
        let p = m.init_params(1);
        assert!(m.forward(&p, &inputs(2, 5, 2), &layout, Mode::Eval).is_err());
        assert!(m.forward(&p, &inputs(3, 4, 2), &layout, Mode::Eval).is_err());
    }
}
