//! Probe-and-adapt client control loop.
//!
//! Each step estimates the bandwidth share by additive probing with a
//! backoff when the estimate overshoots measured throughput, smooths it with
//! an EWMA, picks a level, and sets the time until the next request.
//!
//! Three selection policies share the loop:
//! - [`ControllerKind::PandaCq`]: quality-aware, delegates to the
//!   sliding-window planner.
//! - [`ControllerKind::PandaBaseline`]: highest level fitting under the
//!   smoothed probe estimate.
//! - [`ControllerKind::RateBased`]: highest level fitting under an EWMA of
//!   measured throughput, no probing.

use std::fmt;
use std::str::FromStr;

use crate::dp::PlanError;
use crate::ladder::Level;
use crate::online::{online_step, OnlineConfig, OnlineDecision};
use crate::utility::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    PandaCq,
    PandaBaseline,
    RateBased,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::PandaCq => "panda-cq",
            ControllerKind::PandaBaseline => "panda-baseline",
            ControllerKind::RateBased => "rate-based",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "panda-cq" => Ok(ControllerKind::PandaCq),
            "panda-baseline" | "panda" => Ok(ControllerKind::PandaBaseline),
            "rate-based" => Ok(ControllerKind::RateBased),
            other => Err(format!("unknown controller `{other}`")),
        }
    }
}

/// Client parameters. Rates are bits/second, times seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Probe convergence gain.
    pub kappa: f64,
    /// Additive probe term, bits/second.
    pub w: f64,
    /// EWMA gain.
    pub a: f64,
    /// Buffer-correction gain of the request interval.
    pub beta: f64,
    pub tau: f64,
    pub b_ref: f64,
    pub b_low: f64,
    pub b_high: f64,
    pub max_horizon: usize,
    /// Multiplicative safety margin of the rate-based selectors.
    pub epsilon: f64,
    /// Planner bin count over `[b_low, b_high]`.
    pub bins: usize,
}

impl ControllerConfig {
    pub fn panda_cq() -> Self {
        ControllerConfig {
            kappa: 0.28,
            w: 0.3e6,
            a: 0.2,
            beta: 0.2,
            tau: 2.0,
            b_ref: 30.0,
            b_low: 10.0,
            b_high: 50.0,
            max_horizon: 30,
            epsilon: 0.0,
            bins: 50,
        }
    }

    pub fn panda_baseline() -> Self {
        ControllerConfig {
            b_ref: 20.0,
            ..Self::panda_cq()
        }
    }

    pub fn for_kind(kind: ControllerKind) -> Self {
        match kind {
            ControllerKind::PandaCq => Self::panda_cq(),
            ControllerKind::PandaBaseline | ControllerKind::RateBased => Self::panda_baseline(),
        }
    }

    pub fn online(&self) -> OnlineConfig {
        OnlineConfig {
            b_low: self.b_low,
            b_high: self.b_high,
            b_ref: self.b_ref,
            tau: self.tau,
            bins: self.bins,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let gains = [
            ("kappa", self.kappa),
            ("w", self.w),
            ("a", self.a),
            ("beta", self.beta),
            ("tau", self.tau),
        ];
        for (name, v) in gains {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        if self.max_horizon == 0 || self.bins == 0 {
            return Err("H and K must be >= 1".into());
        }
        self.online().validate().map_err(|e| e.to_string())
    }

    /// Like [`ControllerConfig::validate`], but skips the buffer bounds for
    /// controllers that never plan.
    pub fn validate_for(&self, kind: ControllerKind) -> Result<(), String> {
        match kind {
            ControllerKind::PandaCq => self.validate(),
            ControllerKind::PandaBaseline | ControllerKind::RateBased => {
                let relaxed = ControllerConfig {
                    b_low: 0.0,
                    b_high: f64::MAX,
                    b_ref: self.b_ref.max(0.0),
                    ..*self
                };
                if self.b_ref.is_nan() || self.b_ref < 0.0 {
                    return Err(format!("B0 must be >= 0, got {}", self.b_ref));
                }
                relaxed.validate()
            }
        }
    }

    /// Applies one `key = value` override. `w` is given in Mbps.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = || -> Result<f64, String> {
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("bad value `{value}` for `{key}`"))
        };
        let count = || -> Result<usize, String> {
            value
                .trim()
                .parse::<usize>()
                .map_err(|_| format!("bad value `{value}` for `{key}`"))
        };
        match key.trim() {
            "kappa" => self.kappa = num()?,
            "w" => self.w = num()? * 1e6,
            "a" => self.a = num()?,
            "beta" => self.beta = num()?,
            "tau" => self.tau = num()?,
            "B0" => self.b_ref = num()?,
            "BL" => self.b_low = num()?,
            "BH" => self.b_high = num()?,
            "H" => self.max_horizon = count()?,
            "epsilon" => self.epsilon = num()?,
            "K" => self.bins = count()?,
            other => return Err(format!("unknown parameter `{other}`")),
        }
        Ok(())
    }

    /// Parses a key-value file (`key = value`, `#` comments) on top of `self`.
    pub fn apply_kv(mut self, text: &str) -> Result<Self, String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            self.set(k, v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        self.validate()?;
        Ok(self)
    }
}

/// Estimator state carried between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeState {
    pub x_hat: f64,
    pub y_hat: f64,
    /// Duration of the previous step.
    pub t_prev: f64,
    /// Throughput measured on the previous download.
    pub x_tilde_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub x_hat: f64,
    pub y_hat: f64,
    pub b_offset: f64,
    /// Extent of the window plan behind a quality-aware decision.
    pub plan: Option<PlanSpan>,
}

/// Buffer bounds a window plan ran under and the range its trajectory
/// covered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSpan {
    pub b_low: f64,
    pub b_high: f64,
    pub min_buffer: f64,
    pub max_buffer: f64,
}

impl PlanSpan {
    pub fn within_bounds(&self) -> bool {
        self.min_buffer >= self.b_low && self.max_buffer <= self.b_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub bitrate: f64,
    pub level: usize,
    pub target_interval: f64,
    pub diagnostics: Diagnostics,
}

/// Additive-increase probe with backoff on overshoot.
///
/// The gain `T * kappa` is capped at 1; past that a long step would push the
/// estimate beyond the measured throughput and possibly below zero.
pub fn probe_update(state: &ProbeState, config: &ControllerConfig) -> f64 {
    let overshoot = (state.x_hat - state.x_tilde_prev + config.w).max(0.0);
    let gain = (state.t_prev * config.kappa).min(1.0);
    state.x_hat + gain * (config.w - overshoot)
}

/// Exponential smoothing with gain `T * a`, capped at 1.
pub fn ewma_update(state: &ProbeState, x_hat_new: f64, config: &ControllerConfig) -> f64 {
    let gain = (state.t_prev * config.a).min(1.0);
    state.y_hat + gain * (x_hat_new - state.y_hat)
}

/// Time until the next request, clamped at zero.
pub fn target_interval(
    bitrate: f64,
    y_hat: f64,
    b_prev: f64,
    b_offset: f64,
    horizon: usize,
    config: &ControllerConfig,
) -> f64 {
    let t = bitrate * config.tau / y_hat
        + config.beta * (b_prev - config.b_ref)
        + b_offset.max(0.0) / horizon.max(1) as f64;
    t.max(0.0)
}

pub fn select_cq(
    state: &ProbeState,
    b_prev: f64,
    window: &[Vec<Level>],
    objective: &Objective,
    config: &ControllerConfig,
    prev_level: Option<usize>,
) -> Result<OnlineDecision, PlanError> {
    online_step(
        &config.online(),
        state.y_hat,
        b_prev,
        window.len(),
        window,
        objective,
        prev_level,
    )
}

/// Highest level whose bitrate fits under `(1 - epsilon) * y_hat`, or the
/// lowest level if none does. The returned diagnostics carry `y_hat` in both
/// estimate fields.
pub fn select_rate_based(
    y_hat: f64,
    b_prev: f64,
    step_levels: &[Level],
    config: &ControllerConfig,
) -> StepDecision {
    let budget = (1.0 - config.epsilon) * y_hat;
    let level = step_levels
        .iter()
        .rposition(|l| l.bitrate_bps <= budget)
        .unwrap_or(0);
    let bitrate = step_levels[level].bitrate_bps;
    StepDecision {
        bitrate,
        level,
        target_interval: target_interval(bitrate, y_hat, b_prev, 0.0, 1, config),
        diagnostics: Diagnostics {
            x_hat: y_hat,
            y_hat,
            b_offset: 0.0,
            plan: None,
        },
    }
}

/// Stateful per-session controller.
///
/// Call [`Controller::decide`] when a request is due and
/// [`Controller::observe`] once the download finishes.
#[derive(Debug, Clone)]
pub struct Controller {
    kind: ControllerKind,
    config: ControllerConfig,
    state: Option<ProbeState>,
    last_level: Option<usize>,
}

impl Controller {
    pub fn new(kind: ControllerKind, config: ControllerConfig) -> Self {
        Controller {
            kind,
            config,
            state: None,
            last_level: None,
        }
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&ProbeState> {
        self.state.as_ref()
    }

    /// Picks the level for the first step of `window` given the current
    /// buffer. The first request of a session always takes the lowest
    /// level and is issued immediately.
    pub fn decide(
        &mut self,
        b_prev: f64,
        window: &[Vec<Level>],
        objective: &Objective,
    ) -> Result<StepDecision, PlanError> {
        if window.is_empty() || window[0].is_empty() {
            return Err(PlanError::InvalidRequest("empty window".into()));
        }
        let Some(mut state) = self.state else {
            self.last_level = Some(0);
            return Ok(StepDecision {
                bitrate: window[0][0].bitrate_bps,
                level: 0,
                target_interval: 0.0,
                diagnostics: Diagnostics {
                    x_hat: 0.0,
                    y_hat: 0.0,
                    b_offset: 0.0,
                    plan: None,
                },
            });
        };

        let x_hat = match self.kind {
            ControllerKind::PandaCq | ControllerKind::PandaBaseline => {
                probe_update(&state, &self.config)
            }
            ControllerKind::RateBased => state.x_tilde_prev,
        };
        // keep the estimate positive so the planner always has a bandwidth
        let x_hat = x_hat.max(f64::MIN_POSITIVE);
        let y_hat = ewma_update(&state, x_hat, &self.config).max(f64::MIN_POSITIVE);
        state.x_hat = x_hat;
        state.y_hat = y_hat;
        self.state = Some(state);

        let decision = match self.kind {
            ControllerKind::PandaCq => {
                let d = select_cq(
                    &state,
                    b_prev,
                    window,
                    objective,
                    &self.config,
                    self.last_level,
                )?;
                let grid = self.config.online().effective_grid(b_prev)?;
                let plan = d.planned_window.as_ref().map(|p| PlanSpan {
                    b_low: grid.b_low(),
                    b_high: grid.b_high(),
                    min_buffer: p.trajectory.iter().copied().fold(f64::INFINITY, f64::min),
                    max_buffer: p
                        .trajectory
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max),
                });
                StepDecision {
                    bitrate: d.bitrate,
                    level: d.level,
                    target_interval: target_interval(
                        d.bitrate,
                        y_hat,
                        b_prev,
                        d.b_offset,
                        window.len(),
                        &self.config,
                    ),
                    diagnostics: Diagnostics {
                        x_hat,
                        y_hat,
                        b_offset: d.b_offset,
                        plan,
                    },
                }
            }
            ControllerKind::PandaBaseline | ControllerKind::RateBased => {
                let mut d = select_rate_based(y_hat, b_prev, &window[0], &self.config);
                d.diagnostics.x_hat = x_hat;
                d
            }
        };
        self.last_level = Some(decision.level);
        Ok(decision)
    }

    /// Records the measured throughput and actual duration of the step just
    /// completed.
    pub fn observe(&mut self, x_tilde: f64, step_duration: f64) {
        match &mut self.state {
            None => {
                self.state = Some(ProbeState {
                    x_hat: x_tilde,
                    y_hat: x_tilde,
                    t_prev: step_duration,
                    x_tilde_prev: x_tilde,
                })
            }
            Some(s) => {
                s.t_prev = step_duration;
                s.x_tilde_prev = x_tilde;
            }
        }
    }
}
