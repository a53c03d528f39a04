//! Sliding-window adaptation: plan over the visible horizon, apply only the
//! first decision.

use crate::dp::{buffer_step, plan, BufferGrid, FinalBuffer, PlanError, PlanRequest, PlanResult};
use crate::ladder::{Level, SegmentLadder};
use crate::utility::Objective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    pub b_low: f64,
    pub b_high: f64,
    /// Reference level the buffer is steered toward (`B0`).
    pub b_ref: f64,
    pub tau: f64,
    /// Bin count over the nominal `[b_low, b_high]`.
    pub bins: usize,
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(0.0 <= self.b_low && self.b_low <= self.b_ref && self.b_ref <= self.b_high) {
            return Err(PlanError::InvalidRequest(format!(
                "need 0 <= b_low <= b_ref <= b_high, got {} / {} / {}",
                self.b_low, self.b_ref, self.b_high
            )));
        }
        if self.bins == 0 {
            return Err(PlanError::InvalidRequest("bin count must be >= 1".into()));
        }
        Ok(())
    }

    /// Grid over `[min(b_low, b_prev), max(b_high, b_prev)]` with the nominal
    /// bin width.
    pub fn effective_grid(&self, b_prev: f64) -> Result<BufferGrid, PlanError> {
        let lo = self.b_low.min(b_prev);
        let hi = self.b_high.max(b_prev);
        let nominal_db = (self.b_high - self.b_low) / self.bins as f64;
        let bins = if lo == self.b_low && hi == self.b_high {
            self.bins
        } else if nominal_db > 0.0 {
            (((hi - lo) / nominal_db).round() as usize).max(1)
        } else {
            self.bins
        };
        BufferGrid::new(lo, hi, bins)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineDecision {
    pub bitrate: f64,
    pub level: usize,
    pub b_offset: f64,
    /// Full window plan; `None` when the lowest level was forced because no
    /// plan existed.
    pub planned_window: Option<PlanResult>,
}

impl OnlineDecision {
    pub fn is_fallback(&self) -> bool {
        self.planned_window.is_none()
    }
}

/// One step of the sliding-window adapter.
///
/// Plans `horizon` steps from `b_prev` toward `b_ref` at constant bandwidth
/// and returns the first planned level. If no plan keeps the buffer inside
/// the widened bounds, the cheapest level of the first step is returned.
pub fn online_step(
    config: &OnlineConfig,
    bandwidth_bps: f64,
    b_prev: f64,
    horizon: usize,
    window: &[Vec<Level>],
    objective: &Objective,
    prev_level: Option<usize>,
) -> Result<OnlineDecision, PlanError> {
    config.validate()?;
    if horizon == 0 || window.len() < horizon {
        return Err(PlanError::InvalidRequest(format!(
            "horizon {horizon} needs a window of at least that many steps, got {}",
            window.len()
        )));
    }
    if !(b_prev.is_finite() && b_prev >= 0.0) {
        return Err(PlanError::InvalidRequest(format!(
            "buffer {b_prev} must be >= 0"
        )));
    }
    let window = &window[..horizon];
    let request = PlanRequest {
        b_init: b_prev,
        b_final: FinalBuffer::Target(config.b_ref),
        grid: config.effective_grid(b_prev)?,
        tau: config.tau,
        bandwidth_bps,
        window,
        objective: *objective,
        prev_level,
    };
    match plan(&request) {
        Ok(result) => Ok(OnlineDecision {
            bitrate: result.bitrates[0],
            level: result.levels[0],
            b_offset: result.b_offset,
            planned_window: Some(result),
        }),
        Err(PlanError::Infeasible { .. }) => {
            let (level, cheapest) = window[0]
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.bitrate_bps.total_cmp(&b.1.bitrate_bps))
                .expect("validated non-empty step");
            Ok(OnlineDecision {
                bitrate: cheapest.bitrate_bps,
                level,
                b_offset: 0.0,
                planned_window: None,
            })
        }
        Err(e) => Err(e),
    }
}

/// `min(max_horizon, segments remaining)` for the 1-based `step_index`.
pub fn horizon_for(step_index: usize, total_segments: usize, max_horizon: usize) -> usize {
    let remaining = (total_segments + 1).saturating_sub(step_index.max(1));
    max_horizon.min(remaining)
}

/// One step of an idealized closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealStep {
    pub level: usize,
    pub bitrate: f64,
    pub quality: f64,
    pub buffer: f64,
    pub fallback: bool,
}

/// Streams a whole ladder at constant bandwidth with no gaps between
/// downloads, updating the buffer by [`buffer_step`] after every decision.
pub fn run_ideal(
    config: &OnlineConfig,
    ladder: &SegmentLadder,
    bandwidth_bps: f64,
    b_init: f64,
    max_horizon: usize,
    objective: &Objective,
) -> Result<Vec<IdealStep>, PlanError> {
    let total = ladder.len();
    let mut buffer = b_init;
    let mut prev_level = None;
    let mut out = Vec::with_capacity(total);
    for n in 0..total {
        let h = horizon_for(n + 1, total, max_horizon);
        let window = ladder.window(n, h);
        // a drained buffer is clamped; the loop models a stall as zero buffer
        let d = online_step(
            config,
            bandwidth_bps,
            buffer.max(0.0),
            h,
            window,
            objective,
            prev_level,
        )?;
        let q = window[0][d.level].quality;
        buffer = buffer_step(buffer.max(0.0), d.bitrate, bandwidth_bps, config.tau);
        prev_level = Some(d.level);
        out.push(IdealStep {
            level: d.level,
            bitrate: d.bitrate,
            quality: q,
            buffer,
            fallback: d.is_fallback(),
        });
    }
    Ok(out)
}
