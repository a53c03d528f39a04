//! Per-segment utilities: alpha-fair, switching-discounted, and max-min.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ladder::QualityConvention;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UtilityError {
    #[error("quality {quality} is outside the domain of the alpha={alpha} utility (needs q > 0)")]
    Domain { quality: f64, alpha: f64 },
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    /// Sum of `U_alpha(q)`.
    AlphaFair { alpha: f64 },
    /// Maximize the minimum per-segment quality.
    MaxMin,
}

/// Multiplier applied to a step's utility when its level differs from the
/// previous step's level. Same-level steps are weighted by 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingDiscount {
    pub delta_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub switching: Option<SwitchingDiscount>,
}

impl Objective {
    pub fn alpha_fair(alpha: f64) -> Self {
        Objective {
            kind: ObjectiveKind::AlphaFair { alpha },
            switching: None,
        }
    }

    pub fn max_mean() -> Self {
        Self::alpha_fair(0.0)
    }

    pub fn max_min() -> Self {
        Objective {
            kind: ObjectiveKind::MaxMin,
            switching: None,
        }
    }

    pub fn with_switching(mut self, delta_diff: f64) -> Self {
        self.switching = Some(SwitchingDiscount { delta_diff });
        self
    }

    pub fn accumulator(&self) -> Accumulator {
        match self.kind {
            ObjectiveKind::AlphaFair { .. } => Accumulator::Sum,
            ObjectiveKind::MaxMin => Accumulator::Min,
        }
    }

    /// Checks parameter ranges and compatibility with a quality convention.
    ///
    /// `-MSE` qualities are negative, so only `alpha = 0` and max-min are
    /// admitted for them.
    pub fn validate(&self, convention: QualityConvention) -> Result<(), UtilityError> {
        if let ObjectiveKind::AlphaFair { alpha } = self.kind {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(UtilityError::InvalidObjective(format!(
                    "alpha must be a finite nonnegative number, got {alpha}"
                )));
            }
            if alpha != 0.0 && !convention.is_positive() {
                return Err(UtilityError::InvalidObjective(format!(
                    "alpha={alpha} needs positive qualities; {convention} only supports alpha=0 or max-min"
                )));
            }
        }
        if let Some(SwitchingDiscount { delta_diff }) = self.switching {
            if !(delta_diff > 0.0 && delta_diff <= 1.0) {
                return Err(UtilityError::InvalidObjective(format!(
                    "switching discount must lie in (0, 1], got {delta_diff}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ObjectiveKind::AlphaFair { alpha } => write!(f, "alpha:{alpha}")?,
            ObjectiveKind::MaxMin => f.write_str("max-min")?,
        }
        if let Some(s) = self.switching {
            write!(f, "+switch:{}", s.delta_diff)?;
        }
        Ok(())
    }
}

/// Parses `max-min`, `max-mean`, `alpha:<a>` (or `alpha=<a>`), optionally
/// followed by `+switch:<delta>`.
impl FromStr for Objective {
    type Err = UtilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UtilityError::InvalidObjective(format!("cannot parse objective `{s}`"));
        let mut parts = s.trim().split('+');
        let head = parts.next().ok_or_else(bad)?.trim();
        let mut objective = match head {
            "max-min" | "maxmin" => Objective::max_min(),
            "max-mean" | "max-sum" => Objective::max_mean(),
            _ => {
                let value = head
                    .strip_prefix("alpha:")
                    .or_else(|| head.strip_prefix("alpha="))
                    .ok_or_else(bad)?;
                Objective::alpha_fair(value.trim().parse().map_err(|_| bad())?)
            }
        };
        for extra in parts {
            let value = extra
                .trim()
                .strip_prefix("switch:")
                .or_else(|| extra.trim().strip_prefix("switch="))
                .ok_or_else(bad)?;
            objective = objective.with_switching(value.trim().parse().map_err(|_| bad())?);
        }
        Ok(objective)
    }
}

/// How step utilities combine along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulator {
    Sum,
    Min,
}

impl Accumulator {
    pub fn identity(self) -> f64 {
        match self {
            Accumulator::Sum => 0.0,
            Accumulator::Min => f64::INFINITY,
        }
    }

    pub fn combine(self, acc: f64, step: f64) -> f64 {
        match self {
            Accumulator::Sum => acc + step,
            Accumulator::Min => acc.min(step),
        }
    }
}

/// `q^(1-alpha) / (1-alpha)`, or `ln q` at `alpha = 1`.
pub fn u_alpha(q: f64, alpha: f64) -> Result<f64, UtilityError> {
    if alpha == 0.0 {
        return Ok(q);
    }
    if q.is_nan() || q <= 0.0 {
        return Err(UtilityError::Domain { quality: q, alpha });
    }
    if alpha == 1.0 {
        Ok(q.ln())
    } else {
        Ok(q.powf(1.0 - alpha) / (1.0 - alpha))
    }
}

/// Utility contributed by one step.
///
/// Under max-min the quality passes through unchanged; the accumulator takes
/// the minimum downstream.
pub fn step_utility(
    q: f64,
    prev_level: Option<usize>,
    cur_level: usize,
    objective: &Objective,
) -> Result<f64, UtilityError> {
    match objective.kind {
        ObjectiveKind::MaxMin => Ok(q),
        ObjectiveKind::AlphaFair { alpha } => {
            let u = u_alpha(q, alpha)?;
            let delta = match (objective.switching, prev_level) {
                (Some(s), Some(prev)) if prev != cur_level => s.delta_diff,
                _ => 1.0,
            };
            Ok(delta * u)
        }
    }
}
