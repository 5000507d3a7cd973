use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::AlignmentMode;
use crate::error::{Error, Result};

/// How the alignment feeding the adapter windows is chosen per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentPolicy {
    Greedy,
    Forced,
    /// Forced for the first half, then greedy with a linearly rising probability.
    Mixed,
}

impl AlignmentPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "forced" => Ok(Self::Forced),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!("unknown alignment mode {other:?} (greedy, forced, mixed)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Forced => "forced",
            Self::Mixed => "mixed",
        }
    }
}

/// Probability of choosing the greedy alignment at `step`.
pub fn greedy_probability(step: usize, total_steps: usize, policy: AlignmentPolicy, p_max: f64) -> f64 {
    match policy {
        AlignmentPolicy::Forced => 0.0,
        AlignmentPolicy::Greedy => 1.0,
        AlignmentPolicy::Mixed => {
            let half = total_steps / 2;
            if step < half || total_steps - half == 0 {
                0.0
            } else {
                p_max * (step - half) as f64 / (total_steps - half) as f64
            }
        }
    }
}

/// Draw the alignment mode for one step. The rng is consumed only in the
/// ramp region of the mixed policy.
pub fn alignment_schedule(step: usize, total_steps: usize, policy: AlignmentPolicy, p_max: f64, rng: &mut impl Rng) -> AlignmentMode {
    let p = greedy_probability(step, total_steps, policy, p_max);
    let greedy = match policy {
        AlignmentPolicy::Forced => false,
        AlignmentPolicy::Greedy => true,
        AlignmentPolicy::Mixed => p > 0.0 && rng.gen::<f64>() < p,
    };
    if greedy {
        AlignmentMode::Greedy
    } else {
        AlignmentMode::Forced
    }
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to 0
/// at `total`.
pub fn lr_at(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total || total == warmup {
        return 0.0;
    }
    peak * (total - step) as f64 / (total - warmup) as f64
}

/// `ntp + lambda * ctc`; non-finite inputs are rejected.
pub fn combined_loss(ntp: f64, ctc: f64, lambda: f64) -> Result<f64> {
    if !ntp.is_finite() || !ctc.is_finite() {
        return Err(Error::Diverged { step: 0, detail: format!("non-finite loss: ntp={ntp} ctc={ctc}") });
    }
    Ok(ntp + lambda * ctc)
}
