//! Fluid-flow playout simulator.
//!
//! Clients share one bottleneck whose capacity follows a
//! [`BandwidthTrace`]. At every instant the capacity is split equally among
//! clients with a download in flight; clients waiting out an off-interval
//! take nothing. Time advances from event to event: download completion,
//! off-interval expiry, buffer drain, or a capacity change.
//!
//! Each client plays content at rate 1 once its buffer first reaches the
//! startup level. A drained buffer stalls playback until the next segment
//! arrives; downloads continue during a stall.

mod report;
mod trace;

pub use report::{
    compute_metrics, compute_pooled_metrics, percentile_nearest_rank, AuditSample, SimReport,
    Stall, StepRecord, SummaryMetrics, STEP_CSV_HEADER,
};
pub use trace::BandwidthTrace;

use thiserror::Error;

use crate::controller::{Controller, ControllerConfig, ControllerKind, StepDecision};
use crate::dp::PlanError;
use crate::ladder::SegmentLadder;
use crate::online::horizon_for;
use crate::utility::Objective;

/// Events closer than this (seconds) are processed together.
const EVENT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("ladder segment duration {ladder} s does not match controller tau {config} s")]
    TauMismatch { ladder: f64, config: f64 },
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error("invalid session: {0}")]
    Session(String),
    #[error("report has no steps")]
    EmptyReport,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Inputs describing one streaming client.
#[derive(Debug, Clone, Copy)]
pub struct ClientSession<'a> {
    pub controller: ControllerKind,
    pub ladder: &'a SegmentLadder,
    pub start_segment: usize,
    /// Buffer level that starts playback; half the reference level when
    /// `None`.
    pub startup_buffer: Option<f64>,
}

impl<'a> ClientSession<'a> {
    pub fn new(controller: ControllerKind, ladder: &'a SegmentLadder) -> Self {
        ClientSession {
            controller,
            ladder,
            start_segment: 0,
            startup_buffer: None,
        }
    }

    pub fn starting_at(mut self, segment: usize) -> Self {
        self.start_segment = segment;
        self
    }
}

/// Link usage over `[time, time + duration)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    pub time: f64,
    pub duration: f64,
    pub capacity: f64,
    pub active: usize,
    /// Sum of the rates handed to active downloads.
    pub allotted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedOutcome {
    pub reports: Vec<SimReport>,
    pub link: Vec<LinkSample>,
}

pub fn run_single(
    session: ClientSession<'_>,
    trace: &BandwidthTrace,
    objective: &Objective,
    config: &ControllerConfig,
) -> Result<SimReport, SimError> {
    let mut reports = run_shared(&[session], trace, objective, config)?;
    Ok(reports.remove(0))
}

pub fn run_shared(
    sessions: &[ClientSession<'_>],
    trace: &BandwidthTrace,
    objective: &Objective,
    config: &ControllerConfig,
) -> Result<Vec<SimReport>, SimError> {
    Ok(run_shared_audited(sessions, trace, objective, config)?.reports)
}

/// Equal split of `capacity` over `active` flows whose sum never exceeds
/// `capacity` in floating point.
pub fn fair_share(capacity: f64, active: usize) -> f64 {
    if active == 0 {
        return 0.0;
    }
    let sum = |s: f64| (0..active).fold(0.0, |acc, _| acc + s);
    let mut share = capacity / active as f64;
    while share > 0.0 && sum(share) > capacity {
        share = f64::from_bits(share.to_bits() - 1);
    }
    share
}

/// [`run_shared`] plus the per-interval link log.
pub fn run_shared_audited(
    sessions: &[ClientSession<'_>],
    trace: &BandwidthTrace,
    objective: &Objective,
    config: &ControllerConfig,
) -> Result<SharedOutcome, SimError> {
    if sessions.is_empty() {
        return Err(SimError::Session("at least one session is required".into()));
    }
    for s in sessions {
        config
            .validate_for(s.controller)
            .map_err(SimError::Session)?;
        if s.ladder.tau() != config.tau {
            return Err(SimError::TauMismatch {
                ladder: s.ladder.tau(),
                config: config.tau,
            });
        }
        objective
            .validate(s.ladder.convention())
            .map_err(PlanError::from)?;
    }

    let mut clients: Vec<Client<'_>> = sessions.iter().map(|s| Client::new(s, config)).collect();
    let mut link = Vec::new();
    let mut t = 0.0;

    if !trace.is_empty() {
        for c in clients.iter_mut() {
            c.audit(t);
            c.start_next(t, objective)?;
        }
        loop {
            if clients.iter().all(|c| matches!(c.phase, Phase::Done)) {
                break;
            }
            if trace.end().is_some_and(|e| t >= e) {
                break;
            }
            let capacity = trace.capacity_at(t);
            let active = clients.iter().filter(|c| c.is_downloading()).count();
            let share = fair_share(capacity, active);

            let mut t_next = f64::INFINITY;
            for c in &clients {
                t_next = t_next.min(c.next_event(t, share));
            }
            if let Some(bp) = trace.next_change_after(t) {
                t_next = t_next.min(bp);
            }
            if let Some(e) = trace.end() {
                t_next = t_next.min(e);
            }
            if !t_next.is_finite() {
                break;
            }
            let dt = (t_next - t).max(0.0);
            link.push(LinkSample {
                time: t,
                duration: dt,
                capacity,
                active,
                allotted: (0..active).fold(0.0, |acc, _| acc + share),
            });
            for c in clients.iter_mut() {
                c.advance(dt, share);
            }
            t = t_next;
            for c in clients.iter_mut() {
                c.handle_events(t, objective)?;
                c.audit(t);
            }
        }
    }

    let reports = clients.into_iter().map(|c| c.finish(t)).collect();
    Ok(SharedOutcome { reports, link })
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Downloading {
        segment: usize,
        request_time: f64,
        total_bits: f64,
        remaining_bits: f64,
        decision: StepDecision,
    },
    Off {
        until: f64,
    },
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Playback {
    NotStarted,
    Playing,
    Stalled { since: f64 },
    Finished,
}

struct Client<'a> {
    ladder: &'a SegmentLadder,
    start_segment: usize,
    next_segment: usize,
    controller: Controller,
    max_horizon: usize,
    startup: f64,
    phase: Phase,
    playback: Playback,
    buffer: f64,
    downloaded: f64,
    played: f64,
    stalled: f64,
    pre_start: f64,
    finished: f64,
    playout_start: Option<f64>,
    steps: Vec<StepRecord>,
    stalls: Vec<Stall>,
    audit: Vec<AuditSample>,
}

impl<'a> Client<'a> {
    fn new(session: &ClientSession<'a>, config: &ControllerConfig) -> Self {
        Client {
            ladder: session.ladder,
            start_segment: session.start_segment,
            next_segment: session.start_segment,
            controller: Controller::new(session.controller, *config),
            max_horizon: config.max_horizon,
            startup: session.startup_buffer.unwrap_or(config.b_ref / 2.0),
            phase: Phase::Done,
            playback: Playback::NotStarted,
            buffer: 0.0,
            downloaded: 0.0,
            played: 0.0,
            stalled: 0.0,
            pre_start: 0.0,
            finished: 0.0,
            playout_start: None,
            steps: Vec::new(),
            stalls: Vec::new(),
            audit: Vec::new(),
        }
    }

    fn is_downloading(&self) -> bool {
        matches!(self.phase, Phase::Downloading { .. })
    }

    fn next_event(&self, t: f64, share: f64) -> f64 {
        let mut next = match self.phase {
            Phase::Downloading { remaining_bits, .. } if share > 0.0 => t + remaining_bits / share,
            Phase::Off { until } => until,
            _ => f64::INFINITY,
        };
        if self.playback == Playback::Playing {
            next = next.min(t + self.buffer);
        }
        next
    }

    fn advance(&mut self, dt: f64, share: f64) {
        if let Phase::Downloading { remaining_bits, .. } = &mut self.phase {
            *remaining_bits -= share * dt;
        }
        match self.playback {
            Playback::NotStarted => self.pre_start += dt,
            Playback::Playing => {
                self.buffer -= dt;
                self.played += dt;
            }
            Playback::Stalled { .. } => self.stalled += dt,
            Playback::Finished => self.finished += dt,
        }
    }

    fn handle_events(&mut self, t: f64, objective: &Objective) -> Result<(), SimError> {
        if let Phase::Downloading {
            remaining_bits,
            total_bits,
            ..
        } = self.phase
        {
            let share_left = remaining_bits / total_bits;
            if share_left <= EVENT_EPS * 1e-3 || remaining_bits <= 0.0 {
                self.complete(t, objective)?;
            }
        }
        if self.playback == Playback::Playing && self.buffer <= EVENT_EPS {
            // content below the event tolerance counts as played
            self.played += self.buffer;
            self.buffer = 0.0;
            self.playback = if matches!(self.phase, Phase::Done) {
                Playback::Finished
            } else {
                Playback::Stalled { since: t }
            };
        }
        if let Phase::Off { until } = self.phase {
            if t >= until - EVENT_EPS {
                self.start_next(t, objective)?;
            }
        }
        Ok(())
    }

    fn complete(&mut self, t: f64, objective: &Objective) -> Result<(), SimError> {
        let Phase::Downloading {
            segment,
            request_time,
            total_bits,
            decision,
            ..
        } = self.phase
        else {
            unreachable!("complete() called without a download in flight");
        };
        let tau = self.ladder.tau();
        let t_download = t - request_time;
        let x_tilde = total_bits / t_download;
        self.buffer += tau;
        self.downloaded += tau;
        let t_actual = decision.target_interval.max(t_download);
        self.steps.push(StepRecord {
            wall_time: request_time,
            segment_index: segment,
            level: decision.level,
            bitrate: decision.bitrate,
            quality: self.ladder.segment(segment)[decision.level].quality,
            buffer_after: self.buffer,
            x_hat: decision.diagnostics.x_hat,
            y_hat: decision.diagnostics.y_hat,
            t_hat: decision.target_interval,
            t_download,
            t_actual,
            b_offset: decision.diagnostics.b_offset,
            plan: decision.diagnostics.plan,
        });
        self.controller.observe(x_tilde, t_actual);

        let last = segment + 1 >= self.ladder.len();
        match self.playback {
            Playback::Stalled { since } => {
                self.stalls.push(Stall {
                    start_time: since,
                    duration: t - since,
                });
                self.playback = Playback::Playing;
            }
            Playback::NotStarted if self.buffer >= self.startup || last => {
                self.playback = Playback::Playing;
                self.playout_start = Some(t);
            }
            _ => {}
        }

        self.next_segment = segment + 1;
        if last {
            self.phase = Phase::Done;
        } else if decision.target_interval > t_download {
            self.phase = Phase::Off {
                until: request_time + decision.target_interval,
            };
        } else {
            self.start_next(t, objective)?;
        }
        Ok(())
    }

    fn start_next(&mut self, t: f64, objective: &Objective) -> Result<(), SimError> {
        let n = self.next_segment;
        let total = self.ladder.len();
        if n >= total {
            self.phase = Phase::Done;
            return Ok(());
        }
        let h = horizon_for(n + 1, total, self.max_horizon);
        let window = self.ladder.window(n, h);
        let decision = self.controller.decide(self.buffer, window, objective)?;
        let bits = decision.bitrate * self.ladder.tau();
        self.phase = Phase::Downloading {
            segment: n,
            request_time: t,
            total_bits: bits,
            remaining_bits: bits,
            decision,
        };
        Ok(())
    }

    fn audit(&mut self, t: f64) {
        self.audit.push(AuditSample {
            time: t,
            buffer: self.buffer,
            downloaded: self.downloaded,
            played: self.played,
            stalled: self.stalled,
            pre_start: self.pre_start,
            finished: self.finished,
        });
    }

    fn finish(mut self, t: f64) -> SimReport {
        if let Playback::Stalled { since } = self.playback {
            self.stalls.push(Stall {
                start_time: since,
                duration: t - since,
            });
        }
        let mut report = SimReport {
            controller: self.controller.kind(),
            start_segment: self.start_segment,
            convention: self.ladder.convention(),
            steps: self.steps,
            stalls: self.stalls,
            playout_start: self.playout_start,
            audit: self.audit,
            summary: None,
        };
        report.summary = compute_metrics(&report, report.convention).ok();
        report
    }
}
