use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{ForwardOutput, Mode, Uplifter};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::sequencing::TokenLayout;

/// Scalar loss and its gradient with respect to both network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub d_sequence: Array2<f64>,
    pub d_center: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Gradients below this magnitude are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Analytic gradient of `loss` for one eval-mode forward pass.
pub fn analytic_gradient<F>(
    model: &Uplifter,
    params: &ParamStore,
    poses: &[Pose2D],
    layout: &TokenLayout,
    loss: &F,
) -> Result<(f64, ParamStore)>
where
    F: Fn(&ForwardOutput) -> LossGrad,
{
    let (out, cache) = model.forward_with_cache(params, poses, layout, Mode::Eval)?;
    let lg = loss(&out);
    let mut g = ParamStore::zeros(params.layout().clone());
    model.backward(params, &cache, &lg.d_sequence, &lg.d_center, &mut g);
    if let Some((name, idx)) = g.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            path: format!("{name}[{idx}]"),
        });
    }
    Ok((lg.value, g))
}

/// Compare analytic gradients with central differences on `probes`
/// randomly chosen scalar parameters.
pub fn grad_check<F>(
    model: &Uplifter,
    params: &ParamStore,
    poses: &[Pose2D],
    layout: &TokenLayout,
    loss: F,
    probes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ForwardOutput) -> LossGrad,
{
    let (_, g) = analytic_gradient(model, params, poses, layout, &loss)?;
    let n = params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, n, probes.min(n));
    let mut shifted = params.clone();
    let eval = |p: &ParamStore| -> Result<f64> {
        Ok(loss(&model.forward(p, poses, layout, Mode::Eval)?).value)
    };
    let mut out = Vec::with_capacity(picked.len());
    for i in picked.iter() {
        let x = params.data()[i];
        shifted.data_mut()[i] = x + epsilon;
        let up = eval(&shifted)?;
        shifted.data_mut()[i] = x - epsilon;
        let down = eval(&shifted)?;
        shifted.data_mut()[i] = x;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = g.data()[i];
        let (spec, index) = params.layout().locate(i).expect("index in layout");
        out.push(Probe {
            tensor: spec.name.clone(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = out.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        probes: out,
    })
}
