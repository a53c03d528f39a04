//! Per-step records, summaries, and their text formats.

use std::fmt::Write as _;

use crate::controller::{ControllerKind, PlanSpan};
use crate::dp::PlanResult;
use crate::ladder::{QualityConvention, DEFAULT_PSNR_CAP_DB};

use super::SimError;

/// One fetched segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Time the request was issued.
    pub wall_time: f64,
    pub segment_index: usize,
    pub level: usize,
    pub bitrate: f64,
    pub quality: f64,
    /// Buffer right after the segment arrived.
    pub buffer_after: f64,
    pub x_hat: f64,
    pub y_hat: f64,
    /// Target inter-request time.
    pub t_hat: f64,
    /// Download duration.
    pub t_download: f64,
    /// Actual inter-request time, `max(t_hat, t_download)`.
    pub t_actual: f64,
    pub b_offset: f64,
    /// Window plan extent for quality-aware decisions; not written to CSV.
    pub plan: Option<PlanSpan>,
}

pub const STEP_CSV_HEADER: &str = "wall_time,segment_index,level,bitrate_bps,quality,buffer_after,x_hat,y_hat,t_hat,t_download,t_actual,b_offset";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stall {
    pub start_time: f64,
    pub duration: f64,
}

/// Session accounting snapshot taken at every event boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSample {
    pub time: f64,
    pub buffer: f64,
    /// Content seconds downloaded so far.
    pub downloaded: f64,
    /// Content seconds played so far.
    pub played: f64,
    pub stalled: f64,
    pub pre_start: f64,
    /// Time after playback of the final segment ended.
    pub finished: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryMetrics {
    pub mean_quality: f64,
    pub min_quality: f64,
    pub quality_stddev: f64,
    pub psnr_p5: Option<f64>,
    pub avg_bitrate: f64,
    pub stall_count: usize,
    pub stall_total: f64,
    pub min_buffer: f64,
    pub max_buffer: f64,
}

impl SummaryMetrics {
    /// Metric names and values in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("mean_quality", Some(self.mean_quality)),
            ("min_quality", Some(self.min_quality)),
            ("quality_stddev", Some(self.quality_stddev)),
            ("psnr_p5", self.psnr_p5),
            ("avg_bitrate", Some(self.avg_bitrate)),
            ("stall_count", Some(self.stall_count as f64)),
            ("stall_total", Some(self.stall_total)),
            ("min_buffer", Some(self.min_buffer)),
            ("max_buffer", Some(self.max_buffer)),
        ]
    }

    /// Flat `key=value` block.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            match v {
                Some(v) => writeln!(out, "{k}={v}").unwrap(),
                None => writeln!(out, "{k}=NA").unwrap(),
            }
        }
        out
    }
}

/// Output of one simulated session.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub controller: ControllerKind,
    pub start_segment: usize,
    pub convention: QualityConvention,
    pub steps: Vec<StepRecord>,
    pub stalls: Vec<Stall>,
    pub playout_start: Option<f64>,
    pub audit: Vec<AuditSample>,
    pub summary: Option<SummaryMetrics>,
}

impl SimReport {
    /// Builds a report from a plan, laying steps back to back with no
    /// off-intervals.
    pub fn from_plan(
        plan: &PlanResult,
        tau: f64,
        bandwidth_bps: f64,
        convention: QualityConvention,
    ) -> Self {
        let mut t = 0.0;
        let steps = plan
            .levels
            .iter()
            .enumerate()
            .map(|(m, &level)| {
                let dl = tau * plan.bitrates[m] / bandwidth_bps;
                let rec = StepRecord {
                    wall_time: t,
                    segment_index: m,
                    level,
                    bitrate: plan.bitrates[m],
                    quality: plan.qualities[m],
                    buffer_after: plan.trajectory[m + 1],
                    x_hat: bandwidth_bps,
                    y_hat: bandwidth_bps,
                    t_hat: 0.0,
                    t_download: dl,
                    t_actual: dl,
                    b_offset: plan.b_offset,
                    plan: None,
                };
                t += dl;
                rec
            })
            .collect();
        let mut report = SimReport {
            controller: ControllerKind::PandaCq,
            start_segment: 0,
            convention,
            steps,
            stalls: Vec::new(),
            playout_start: Some(0.0),
            audit: Vec::new(),
            summary: None,
        };
        report.summary = compute_metrics(&report, convention).ok();
        report
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.steps.len() + 1));
        out.push_str(STEP_CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.wall_time,
                s.segment_index,
                s.level,
                s.bitrate,
                s.quality,
                s.buffer_after,
                s.x_hat,
                s.y_hat,
                s.t_hat,
                s.t_download,
                s.t_actual,
                s.b_offset
            )
            .unwrap();
        }
        out
    }

    /// Summary plus stall log as a flat `key=value` block.
    pub fn summary_kv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "controller={}", self.controller).unwrap();
        writeln!(out, "start_segment={}", self.start_segment).unwrap();
        writeln!(out, "segments={}", self.steps.len()).unwrap();
        match self.playout_start {
            Some(t) => writeln!(out, "playout_start={t}").unwrap(),
            None => writeln!(out, "playout_start=NA").unwrap(),
        }
        if let Some(s) = &self.summary {
            out.push_str(&s.to_kv());
        }
        for (i, st) in self.stalls.iter().enumerate() {
            writeln!(out, "stall.{i}={},{}", st.start_time, st.duration).unwrap();
        }
        out
    }
}

/// Nearest-rank percentile, taking the lower rank: the `ceil(p/100 * n)`-th
/// smallest value.
pub fn percentile_nearest_rank(values: &[f64], percent: u32) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (percent as usize * n).div_ceil(100).max(1);
    Some(sorted[rank.min(n) - 1])
}

pub fn compute_metrics(
    report: &SimReport,
    convention: QualityConvention,
) -> Result<SummaryMetrics, SimError> {
    if report.steps.is_empty() {
        return Err(SimError::EmptyReport);
    }
    let start = report.playout_start.unwrap_or(f64::NEG_INFINITY);
    let mut buffers: Vec<f64> = report
        .steps
        .iter()
        .filter(|s| s.wall_time + s.t_download >= start)
        .map(|s| s.buffer_after)
        .collect();
    if buffers.is_empty() {
        buffers = report.steps.iter().map(|s| s.buffer_after).collect();
    }
    Ok(segment_stats(
        report.steps.iter(),
        convention,
        std::slice::from_ref(report),
        buffers.iter().copied().fold(f64::INFINITY, f64::min),
        buffers.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ))
}

/// Metrics over the segments of several sessions taken together. Stall
/// counts and durations add up; buffer extremes span all sessions.
pub fn compute_pooled_metrics(
    reports: &[SimReport],
    convention: QualityConvention,
) -> Result<SummaryMetrics, SimError> {
    let per: Vec<SummaryMetrics> = reports
        .iter()
        .filter(|r| !r.steps.is_empty())
        .map(|r| compute_metrics(r, convention))
        .collect::<Result<_, _>>()?;
    if per.is_empty() {
        return Err(SimError::EmptyReport);
    }
    Ok(segment_stats(
        reports.iter().flat_map(|r| &r.steps),
        convention,
        reports,
        per.iter()
            .map(|m| m.min_buffer)
            .fold(f64::INFINITY, f64::min),
        per.iter()
            .map(|m| m.max_buffer)
            .fold(f64::NEG_INFINITY, f64::max),
    ))
}

fn segment_stats<'a>(
    steps: impl Iterator<Item = &'a StepRecord>,
    convention: QualityConvention,
    reports: &[SimReport],
    min_buffer: f64,
    max_buffer: f64,
) -> SummaryMetrics {
    let (qualities, bitrates): (Vec<f64>, Vec<f64>) = steps.map(|s| (s.quality, s.bitrate)).unzip();
    let n = qualities.len() as f64;
    let mean = qualities.iter().sum::<f64>() / n;
    let min = qualities.iter().copied().fold(f64::INFINITY, f64::min);
    let var = qualities.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n;
    let psnr: Option<Vec<f64>> = qualities
        .iter()
        .map(|&q| convention.to_psnr(q, DEFAULT_PSNR_CAP_DB))
        .collect();
    let stalls = reports.iter().flat_map(|r| &r.stalls);
    SummaryMetrics {
        mean_quality: mean,
        min_quality: min,
        quality_stddev: var.sqrt(),
        psnr_p5: psnr.and_then(|v| percentile_nearest_rank(&v, 5)),
        avg_bitrate: bitrates.iter().sum::<f64>() / n,
        stall_count: stalls.clone().count(),
        stall_total: stalls.fold(0.0, |acc, s| acc + s.duration),
        min_buffer,
        max_buffer,
    }
}
