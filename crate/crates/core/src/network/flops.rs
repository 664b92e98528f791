//! Closed-form forward-pass cost.
//!
//! Convention: one multiply-accumulate counts as two FLOPs. Normalization,
//! softmax, GELU, additions of positional embeddings and residuals are
//! ignored.

use serde::{Deserialize, Serialize};

use super::config::{reduction_lengths, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub spatial: f64,
    pub temporal: f64,
    pub strided: f64,
    pub heads: f64,
    pub total: f64,
}

/// `L` rows through a `d_in -> d_out` map.
pub fn linear_flops(rows: usize, d_in: usize, d_out: usize) -> f64 {
    2.0 * rows as f64 * d_in as f64 * d_out as f64
}

/// Projections plus score and value products for `q` queries and `kv`
/// keys/values per group, over `groups` independent groups.
fn attention_flops(groups: usize, q: usize, kv: usize, d: usize) -> f64 {
    let g = groups as f64;
    g * (2.0 * linear_flops(q, d, d) + 2.0 * linear_flops(kv, d, d))
        + g * 2.0 * 2.0 * (q * kv * d) as f64
}

fn block_flops(groups: usize, q: usize, kv: usize, d: usize, hidden: usize) -> f64 {
    attention_flops(groups, q, kv, d)
        + groups as f64 * (linear_flops(q, d, hidden) + linear_flops(q, hidden, d))
}

/// Cost of one forward pass (one window, one output pose) for `c`.
/// The number of pose tokens is `ceil(N / s_in)`.
pub fn flops_estimate(c: &ModelConfig) -> FlopsBreakdown {
    let n_in = (c.schedule.window - 1) / c.schedule.stride_in.max(1) + 1;
    let n_out = c.n_out();
    let j = c.joints;
    let (dj, dt) = (c.d_joint, c.d_temp);

    let spatial = if c.spatial_enabled {
        let per_pose = linear_flops(j, 2, dj)
            + c.k_joint as f64 * block_flops(1, j, j, dj, c.mlp_ratio * dj)
            + linear_flops(1, j * dj, dt);
        n_in as f64 * per_pose
    } else {
        n_in as f64 * linear_flops(1, 2 * j, dt)
    };

    let mut temporal = 0.0;
    if c.temporal_enabled {
        for b in 0..c.k_temp {
            let kv = if b == 0 && c.duta_enabled { n_in } else { n_out };
            temporal += block_flops(1, n_out, kv, dt, c.mlp_ratio * dt);
        }
    }

    let mut strided = 0.0;
    let mut heads = linear_flops(n_out, dt, 3 * j);
    if c.strided_enabled {
        let lens = reduction_lengths(n_out, &c.strides);
        for w in lens.windows(2) {
            let (l, m) = (w[0], w[1]);
            let hidden = c.mlp_ratio * dt;
            strided += attention_flops(1, l, l, dt)
                + linear_flops(l, dt, hidden)
                + linear_flops(m, 3 * hidden, dt);
        }
        heads += linear_flops(1, dt, 3 * j);
    }

    FlopsBreakdown {
        spatial,
        temporal,
        strided,
        heads,
        total: spatial + temporal + strided + heads,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequencing::StrideSchedule;

    #[test]
    fn linear_convention() {
        assert_eq!(linear_flops(10, 3, 7), 420.0);
    }

    #[test]
    fn monotone_in_depth_and_window() {
        let s = StrideSchedule::new(351, 20, 5).unwrap();
        let base = ModelConfig::preset(s, 17);
        let f0 = flops_estimate(&base).total;
        let mut deeper = base.clone();
        deeper.k_temp += 1;
        assert!(flops_estimate(&deeper).total > f0);
        let mut prev = 0.0;
        for window in (301..=375).step_by(10) {
            let mut c = base.clone();
            c.schedule = StrideSchedule::new(window, 20, 5).unwrap();
            c.validate().unwrap();
            let f = flops_estimate(&c).total;
            assert!(f > prev, "N = {window}");
            prev = f;
        }
        let mut wider = base.clone();
        wider.d_temp += 6;
        assert!(flops_estimate(&wider).total > f0);
    }

    #[test]
    fn breakdown_sums() {
        let s = StrideSchedule::new(81, 4, 2).unwrap();
        let b = flops_estimate(&ModelConfig::preset(s, 17));
        let sum = b.spatial + b.temporal + b.strided + b.heads;
        assert!((sum - b.total).abs() < 1e-6 * b.total);
    }
}
