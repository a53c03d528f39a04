//! Segment bitrate/quality ladders.
//!
//! A ladder holds, for every segment `n` and level `l`, the encoded bitrate
//! `R(n, l)` and a quality score `Q(n, l)`. Ladders are either loaded from a
//! line-oriented CSV manifest or synthesized from a seeded rate-distortion
//! model.
//!
//! Manifest layout:
//!
//! ```text
//! tau,2
//! quality,negated-mse
//! 0,0,400000,-61.2
//! 0,1,600000,-40.8
//! ...
//! ```
//!
//! Data rows are `segment_index,level_index,bitrate_bps,quality`, 0-based,
//! with levels `0..L` present for every segment.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// PSNR reported for a zero MSE unless overridden.
pub const DEFAULT_PSNR_CAP_DB: f64 = 100.0;

const PEAK_SQUARED: f64 = 255.0 * 255.0;

#[derive(Debug, Error)]
pub enum LadderError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("segment {segment} has {found} levels, expected {expected}")]
    RaggedLevels {
        segment: usize,
        expected: usize,
        found: usize,
    },
    #[error("segment {segment} level {level}: bitrate {bitrate} must be positive")]
    NonPositiveBitrate {
        segment: usize,
        level: usize,
        bitrate: f64,
    },
    #[error("segment {segment} level {level}: bitrate {bitrate} does not exceed level {prev_level} ({prev_bitrate})", prev_level = level - 1)]
    NonMonotoneBitrate {
        segment: usize,
        level: usize,
        bitrate: f64,
        prev_bitrate: f64,
    },
    #[error(
        "segment {segment} level {level}: quality {quality} violates the {convention} convention"
    )]
    QualitySign {
        segment: usize,
        level: usize,
        quality: f64,
        convention: QualityConvention,
    },
    #[error("segment {segment} is missing (segments must be contiguous from 0)")]
    MissingSegment { segment: usize },
    #[error("invalid ladder: {0}")]
    Invalid(String),
    #[error("mse must be nonnegative, got {0}")]
    NegativeMse(f64),
}

/// How the quality column of a ladder is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QualityConvention {
    /// Quality is `-MSE`; values are `<= 0`.
    NegatedMse,
    /// Quality is PSNR in decibels; values are `> 0`.
    Psnr,
    /// Any positive score.
    AbstractPositive,
}

impl QualityConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            QualityConvention::NegatedMse => "negated-mse",
            QualityConvention::Psnr => "psnr",
            QualityConvention::AbstractPositive => "abstract-positive",
        }
    }

    pub fn admits(self, quality: f64) -> bool {
        if !quality.is_finite() {
            return false;
        }
        match self {
            QualityConvention::NegatedMse => quality <= 0.0,
            QualityConvention::Psnr | QualityConvention::AbstractPositive => quality > 0.0,
        }
    }

    pub fn is_positive(self) -> bool {
        !matches!(self, QualityConvention::NegatedMse)
    }

    /// PSNR of a quality value, when the convention carries one.
    pub fn to_psnr(self, quality: f64, cap_db: f64) -> Option<f64> {
        match self {
            QualityConvention::NegatedMse => mse_to_psnr_capped(-quality, cap_db).ok(),
            QualityConvention::Psnr => Some(quality),
            QualityConvention::AbstractPositive => None,
        }
    }
}

impl fmt::Display for QualityConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "negated-mse" => Ok(QualityConvention::NegatedMse),
            "psnr" => Ok(QualityConvention::Psnr),
            "abstract-positive" => Ok(QualityConvention::AbstractPositive),
            other => Err(format!("unknown quality convention `{other}`")),
        }
    }
}

/// One encoded representation of a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub bitrate_bps: f64,
    pub quality: f64,
}

impl Level {
    pub fn new(bitrate_bps: f64, quality: f64) -> Self {
        Level {
            bitrate_bps,
            quality,
        }
    }
}

/// Validated per-segment, per-level bitrate and quality table.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLadder {
    tau: f64,
    convention: QualityConvention,
    segments: Vec<Vec<Level>>,
}

impl SegmentLadder {
    /// Builds a ladder, checking every structural invariant.
    pub fn new(
        tau: f64,
        convention: QualityConvention,
        segments: Vec<Vec<Level>>,
    ) -> Result<Self, LadderError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(LadderError::Invalid(format!(
                "segment duration must be positive, got {tau}"
            )));
        }
        let expected = segments.first().map_or(0, Vec::len);
        if !segments.is_empty() && expected == 0 {
            return Err(LadderError::Invalid(
                "segments must have at least one level".into(),
            ));
        }
        for (n, levels) in segments.iter().enumerate() {
            if levels.len() != expected {
                return Err(LadderError::RaggedLevels {
                    segment: n,
                    expected,
                    found: levels.len(),
                });
            }
            for (l, level) in levels.iter().enumerate() {
                if !(level.bitrate_bps.is_finite() && level.bitrate_bps > 0.0) {
                    return Err(LadderError::NonPositiveBitrate {
                        segment: n,
                        level: l,
                        bitrate: level.bitrate_bps,
                    });
                }
                if l > 0 && level.bitrate_bps <= levels[l - 1].bitrate_bps {
                    return Err(LadderError::NonMonotoneBitrate {
                        segment: n,
                        level: l,
                        bitrate: level.bitrate_bps,
                        prev_bitrate: levels[l - 1].bitrate_bps,
                    });
                }
                if !convention.admits(level.quality) {
                    return Err(LadderError::QualitySign {
                        segment: n,
                        level: l,
                        quality: level.quality,
                        convention,
                    });
                }
            }
        }
        Ok(SegmentLadder {
            tau,
            convention,
            segments,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn convention(&self) -> QualityConvention {
        self.convention
    }

    pub fn num_levels(&self) -> usize {
        self.segments.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Vec<Level>] {
        &self.segments
    }

    pub fn segment(&self, n: usize) -> &[Level] {
        &self.segments[n]
    }

    /// Segments `start..start + len`, clamped to the end of the ladder.
    pub fn window(&self, start: usize, len: usize) -> &[Vec<Level>] {
        let end = (start + len).min(self.segments.len());
        &self.segments[start.min(end)..end]
    }

    /// Serializes to the manifest CSV format accepted by [`parse_manifest`].
    pub fn to_manifest(&self) -> String {
        let mut out = format!("tau,{}\nquality,{}\n", self.tau, self.convention);
        for (n, levels) in self.segments.iter().enumerate() {
            for (l, level) in levels.iter().enumerate() {
                out.push_str(&format!(
                    "{n},{l},{},{}\n",
                    level.bitrate_bps, level.quality
                ));
            }
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<(), LadderError> {
        fs::write(path, self.to_manifest()).map_err(|source| LadderError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_manifest(path: &Path) -> Result<SegmentLadder, LadderError> {
    let text = fs::read_to_string(path).map_err(|source| LadderError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&text)
}

/// Parses manifest text. Blank lines and `#` comments are ignored.
pub fn parse_manifest(text: &str) -> Result<SegmentLadder, LadderError> {
    let mut tau = None;
    let mut convention = None;
    let mut rows: BTreeMap<usize, BTreeMap<usize, Level>> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse_err = |message: String| LadderError::Parse {
            line: line_no,
            message,
        };
        match fields[0] {
            "tau" => {
                if fields.len() != 2 {
                    return Err(parse_err("expected `tau,<seconds>`".into()));
                }
                let value: f64 = fields[1]
                    .parse()
                    .map_err(|_| parse_err(format!("bad tau `{}`", fields[1])))?;
                tau = Some(value);
            }
            "quality" => {
                if fields.len() != 2 {
                    return Err(parse_err("expected `quality,<convention>`".into()));
                }
                convention = Some(fields[1].parse::<QualityConvention>().map_err(parse_err)?);
            }
            _ => {
                if fields.len() != 4 {
                    return Err(parse_err(format!(
                        "expected 4 fields `segment,level,bitrate_bps,quality`, got {}",
                        fields.len()
                    )));
                }
                let segment: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(format!("bad segment index `{}`", fields[0])))?;
                let level: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(format!("bad level index `{}`", fields[1])))?;
                let bitrate: f64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(format!("bad bitrate `{}`", fields[2])))?;
                let quality: f64 = fields[3]
                    .parse()
                    .map_err(|_| parse_err(format!("bad quality `{}`", fields[3])))?;
                let prev = rows
                    .entry(segment)
                    .or_default()
                    .insert(level, Level::new(bitrate, quality));
                if prev.is_some() {
                    return Err(parse_err(format!(
                        "duplicate row for segment {segment} level {level}"
                    )));
                }
            }
        }
    }

    let tau = tau.ok_or(LadderError::Parse {
        line: 0,
        message: "missing `tau,<seconds>` header".into(),
    })?;
    let convention = convention.ok_or(LadderError::Parse {
        line: 0,
        message: "missing `quality,<convention>` header".into(),
    })?;

    let expected = rows.values().next().map_or(0, BTreeMap::len);
    let mut segments = Vec::with_capacity(rows.len());
    for (pos, (segment, levels)) in rows.into_iter().enumerate() {
        if segment != pos {
            return Err(LadderError::MissingSegment { segment: pos });
        }
        let contiguous = levels.keys().enumerate().all(|(i, &l)| i == l);
        if levels.len() != expected || !contiguous {
            return Err(LadderError::RaggedLevels {
                segment,
                expected,
                found: levels.len(),
            });
        }
        segments.push(levels.into_values().collect());
    }
    SegmentLadder::new(tau, convention, segments)
}

/// `10 * log10(255^2 / mse)` with a zero MSE mapped to [`DEFAULT_PSNR_CAP_DB`].
pub fn mse_to_psnr(mse: f64) -> Result<f64, LadderError> {
    mse_to_psnr_capped(mse, DEFAULT_PSNR_CAP_DB)
}

pub fn mse_to_psnr_capped(mse: f64, cap_db: f64) -> Result<f64, LadderError> {
    if mse.is_nan() || mse < 0.0 {
        return Err(LadderError::NegativeMse(mse));
    }
    if mse == 0.0 {
        return Ok(cap_db);
    }
    Ok(10.0 * (PEAK_SQUARED / mse).log10())
}

/// Parameters of the synthetic rate-distortion model
/// `mse(n, l) = sigma2(n) * (bitrate(l) / theta)^(-gamma)`.
///
/// `sigma2(n)` is piecewise constant over "scenes" whose lengths are drawn
/// uniformly from `scene_len`, with per-scene values log-uniform in
/// `sigma2_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityProfile {
    pub theta_bps: f64,
    pub gamma: f64,
    pub sigma2_range: (f64, f64),
    pub scene_len: (usize, usize),
}

impl Default for ComplexityProfile {
    fn default() -> Self {
        ComplexityProfile {
            theta_bps: 1_000_000.0,
            gamma: 1.0,
            sigma2_range: (4.0, 120.0),
            scene_len: (3, 15),
        }
    }
}

/// Rate-distortion model used by [`gen_synthetic_ladder`].
pub fn synthetic_mse(sigma2: f64, bitrate_bps: f64, profile: &ComplexityProfile) -> f64 {
    sigma2 * (bitrate_bps / profile.theta_bps).powf(-profile.gamma)
}

/// Seeded per-segment scene-complexity signal.
pub fn scene_complexity(seed: u64, segments: usize, profile: &ComplexityProfile) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = profile.sigma2_range;
    let (min_len, max_len) = profile.scene_len;
    let mut out = Vec::with_capacity(segments);
    while out.len() < segments {
        let len = rng.gen_range(min_len.max(1)..=max_len.max(min_len.max(1)));
        let sigma2 = if hi > lo {
            (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
        } else {
            lo
        };
        let take = len.min(segments - out.len());
        out.extend(std::iter::repeat_n(sigma2, take));
    }
    out
}

/// Builds a CBR ladder (`bitrate_set` at every segment) with `-MSE` qualities
/// from the synthetic rate-distortion model.
pub fn gen_synthetic_ladder(
    seed: u64,
    segments: usize,
    tau: f64,
    bitrate_set: &[f64],
    profile: &ComplexityProfile,
) -> Result<SegmentLadder, LadderError> {
    if bitrate_set.is_empty() {
        return Err(LadderError::Invalid("bitrate set is empty".into()));
    }
    if bitrate_set.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LadderError::Invalid(
            "bitrate set must be strictly increasing".into(),
        ));
    }
    let (lo, hi) = profile.sigma2_range;
    if !(lo > 0.0 && hi >= lo && profile.theta_bps > 0.0 && profile.gamma.is_finite()) {
        return Err(LadderError::Invalid("invalid complexity profile".into()));
    }
    let sigma = scene_complexity(seed, segments, profile);
    let rows = sigma
        .iter()
        .map(|&s2| {
            bitrate_set
                .iter()
                .map(|&r| Level::new(r, -synthetic_mse(s2, r, profile)))
                .collect()
        })
        .collect();
    SegmentLadder::new(tau, QualityConvention::NegatedMse, rows)
}
