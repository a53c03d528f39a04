//! Piecewise-constant link capacity.

use std::fs;
use std::path::Path;

use super::SimError;

/// Capacity holds from each breakpoint until the next one. The last value
/// holds until `end`, or forever when `end` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    breakpoints: Vec<(f64, f64)>,
    end: Option<f64>,
}

impl BandwidthTrace {
    pub fn new(breakpoints: Vec<(f64, f64)>, end: Option<f64>) -> Result<Self, SimError> {
        if let Some(&(t0, _)) = breakpoints.first() {
            if t0 != 0.0 {
                return Err(SimError::Trace(format!(
                    "trace must start at time 0, got {t0}"
                )));
            }
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SimError::Trace(format!(
                    "breakpoint times must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((t, c)) = breakpoints
            .iter()
            .find(|(_, c)| !(c.is_finite() && *c > 0.0))
        {
            return Err(SimError::Trace(format!(
                "capacity at {t} must be positive, got {c}"
            )));
        }
        if let Some(e) = end {
            if e.is_nan() || e < 0.0 {
                return Err(SimError::Trace(format!("end time must be >= 0, got {e}")));
            }
        }
        Ok(BandwidthTrace { breakpoints, end })
    }

    pub fn constant(capacity_bps: f64, end: Option<f64>) -> Result<Self, SimError> {
        Self::new(vec![(0.0, capacity_bps)], end)
    }

    /// Steps through `(start_time, capacity)` pairs, ending at `end`.
    pub fn steps(steps: &[(f64, f64)], end: f64) -> Result<Self, SimError> {
        Self::new(steps.to_vec(), Some(end))
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn end(&self) -> Option<f64> {
        self.end
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty() || self.end == Some(0.0)
    }

    pub fn capacity_at(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&(bt, _)| bt <= t);
        if idx == 0 {
            0.0
        } else {
            self.breakpoints[idx - 1].1
        }
    }

    /// First breakpoint strictly after `t`.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        let idx = self.breakpoints.partition_point(|&(bt, _)| bt <= t);
        self.breakpoints.get(idx).map(|&(bt, _)| bt)
    }

    /// CSV rows `time_s,capacity_bps`, with an optional final `end,<time_s>`
    /// row.
    pub fn parse_csv(text: &str) -> Result<Self, SimError> {
        let mut points = Vec::new();
        let mut end = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("time_s") {
                continue;
            }
            let bad = || SimError::Trace(format!("line {}: expected `time_s,capacity_bps`", i + 1));
            let (a, b) = line.split_once(',').ok_or_else(bad)?;
            if a.trim() == "end" {
                end = Some(b.trim().parse().map_err(|_| bad())?);
                continue;
            }
            points.push((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ));
        }
        Self::new(points, end)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,capacity_bps\n");
        for (t, c) in &self.breakpoints {
            out.push_str(&format!("{t},{c}\n"));
        }
        if let Some(e) = self.end {
            out.push_str(&format!("end,{e}\n"));
        }
        out
    }
}
