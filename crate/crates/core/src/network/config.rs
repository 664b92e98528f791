use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequencing::StrideSchedule;

/// Architecture hyper-parameters of the uplifting network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub joints: usize,
    pub schedule: StrideSchedule,
    pub k_joint: usize,
    pub k_temp: usize,
    pub k_strided: usize,
    pub d_joint: usize,
    pub d_temp: usize,
    pub heads_spatial: usize,
    pub heads_temporal: usize,
    pub mlp_ratio: usize,
    /// One reduction factor per strided block.
    pub strides: Vec<usize>,
    pub drop_path_rate: f64,
    pub spatial_enabled: bool,
    pub temporal_enabled: bool,
    pub strided_enabled: bool,
    /// Restrict the first temporal block to pose-token keys and values.
    pub duta_enabled: bool,
}

/// Length after each reduction, starting with `n_out`.
pub fn reduction_lengths(n_out: usize, strides: &[usize]) -> Vec<usize> {
    let mut lens = vec![n_out];
    for &r in strides {
        let l = *lens.last().unwrap();
        lens.push(if r == 0 { l } else { l.div_ceil(r) });
    }
    lens
}

/// Strides reducing `n_out` to a single token in `k` steps.
pub fn default_strides(n_out: usize, k: usize) -> Vec<usize> {
    match (n_out, k) {
        (71, 3) => return vec![3, 5, 5],
        (41, 3) => return vec![4, 4, 3],
        _ => {}
    }
    let mut len = n_out;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let steps = (k - i) as u32;
        let mut r = 1usize;
        while r.pow(steps) < len {
            r += 1;
        }
        out.push(r);
        len = len.div_ceil(r);
    }
    out
}

impl ModelConfig {
    /// Full-size configuration with default widths and depths.
    pub fn preset(schedule: StrideSchedule, joints: usize) -> Self {
        let n_out = schedule.n_out();
        ModelConfig {
            joints,
            schedule,
            k_joint: 4,
            k_temp: 4,
            k_strided: 3,
            d_joint: 32,
            d_temp: 348,
            heads_spatial: 4,
            heads_temporal: 6,
            mlp_ratio: 2,
            strides: default_strides(n_out, 3),
            drop_path_rate: 0.1,
            spatial_enabled: true,
            temporal_enabled: true,
            strided_enabled: true,
            duta_enabled: true,
        }
    }

    /// Small configuration for tests and quick experiments.
    pub fn tiny(schedule: StrideSchedule, joints: usize) -> Self {
        ModelConfig {
            k_joint: 1,
            k_temp: 1,
            k_strided: 1,
            d_joint: 4,
            d_temp: 8,
            heads_spatial: 2,
            heads_temporal: 2,
            strides: default_strides(schedule.n_out(), 1),
            drop_path_rate: 0.0,
            ..ModelConfig::preset(schedule, joints)
        }
    }

    /// Same architecture with the strides recomputed for `k_strided` blocks.
    pub fn with_strided_depth(mut self, k: usize) -> Self {
        self.k_strided = k;
        self.strides = default_strides(self.schedule.n_out(), k);
        self
    }

    pub fn n_out(&self) -> usize {
        self.schedule.n_out()
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.joints == 0 {
            return bad("joint count must be positive".into());
        }
        if self.d_joint == 0 || self.d_temp == 0 || self.mlp_ratio == 0 {
            return bad("widths must be positive".into());
        }
        for (name, d, h) in [
            ("spatial", self.d_joint, self.heads_spatial),
            ("temporal", self.d_temp, self.heads_temporal),
        ] {
            if h == 0 || d % h != 0 {
                return bad(format!("{name} width {d} is not divisible by {h} heads"));
            }
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return bad(format!(
                "drop_path_rate {} outside [0, 1)",
                self.drop_path_rate
            ));
        }
        if self.strided_enabled {
            if self.strides.len() != self.k_strided {
                return bad(format!(
                    "{} strides given for {} strided blocks",
                    self.strides.len(),
                    self.k_strided
                ));
            }
            if self.strides.contains(&0) {
                return bad("strides must be positive".into());
            }
            let lens = reduction_lengths(self.n_out(), &self.strides);
            if *lens.last().unwrap() != 1 {
                return bad(format!(
                    "strides {:?} reduce {} tokens to {:?}, not 1",
                    self.strides,
                    self.n_out(),
                    lens
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_arithmetic() {
        assert_eq!(reduction_lengths(71, &[3, 5, 5]), vec![71, 24, 5, 1]);
        assert_eq!(reduction_lengths(41, &[4, 4, 3]), vec![41, 11, 3, 1]);
        assert_eq!(reduction_lengths(1, &[1, 1, 1]), vec![1, 1, 1, 1]);
        for n in 1..300 {
            for k in 1..4 {
                let s = default_strides(n, k);
                assert_eq!(*reduction_lengths(n, &s).last().unwrap(), 1, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn validation() {
        let s = StrideSchedule::new(351, 20, 5).unwrap();
        let c = ModelConfig::preset(s, 17);
        assert_eq!(c.strides, vec![3, 5, 5]);
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.heads_temporal = 8;
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.strides = vec![3, 3, 3];
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.drop_path_rate = 1.0;
        assert!(bad.validate().is_err());
    }
}
