//! Experiment spec files.
//!
//! A spec is a flat list of `key = value` lines; `#` starts a comment.
//! Each `client.start_segment` line opens a new client block, and
//! `client.startup_buffer` applies to the most recent one.
//!
//! ```text
//! name = dip
//! ladder.seed = 2024
//! ladder.segments = 300
//! ladder.rates_kbps = 400, 600, 800, 1200, 1600, 2400, 3200
//! trace.points = 0:5e6, 200:2e6, 300:5e6
//! trace.end = 500
//! controllers = panda-cq, panda-baseline
//! objective = max-mean
//! config.H = 20
//! client.start_segment = 0
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use cqstream::controller::ControllerKind;
use cqstream::ladder::ComplexityProfile;
use cqstream::utility::Objective;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum LadderSource {
    Manifest(PathBuf),
    Synthetic {
        seed: u64,
        segments: usize,
        tau: f64,
        rates_bps: Vec<f64>,
        profile: ComplexityProfile,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Inline {
        points: Vec<(f64, f64)>,
        end: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientSpec {
    pub start_segment: usize,
    pub startup_buffer: Option<f64>,
}

/// One controller parameter stepped over a list of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub ladder: LadderSource,
    pub trace: TraceSource,
    pub controllers: Vec<ControllerKind>,
    pub objective: Objective,
    /// Controller parameter overrides applied to every controller.
    pub overrides: Vec<(String, String)>,
    pub clients: Vec<ClientSpec>,
    pub sweep: Option<Sweep>,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read spec {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses spec text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut name = None;
        let mut manifest = None;
        let mut synth = SyntheticKeys::default();
        let mut trace_file = None;
        let mut points = None;
        let mut end = None;
        let mut controllers = None;
        let mut objective = Objective::max_mean();
        let mut overrides = Vec::new();
        let mut clients: Vec<ClientSpec> = Vec::new();
        let mut sweep_key = None;
        let mut sweep_values = None;
        let mut output = None;

        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let err = |m: String| CliError::Invalid(format!("spec line {lineno}: {m}"));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "name" => name = Some(value.to_string()),
                "ladder.manifest" => manifest = Some(base.join(value)),
                "ladder.seed" => synth.seed = Some(parse(value).map_err(err)?),
                "ladder.segments" => synth.segments = Some(parse(value).map_err(err)?),
                "ladder.tau" => synth.tau = Some(parse(value).map_err(err)?),
                "ladder.rates_kbps" => {
                    let kbps: Vec<f64> = parse_list(value).map_err(err)?;
                    synth.rates_bps = Some(kbps.iter().map(|r| r * 1e3).collect());
                }
                "ladder.theta_bps" => synth.profile.theta_bps = parse(value).map_err(err)?,
                "ladder.gamma" => synth.profile.gamma = parse(value).map_err(err)?,
                "ladder.sigma2_min" => synth.profile.sigma2_range.0 = parse(value).map_err(err)?,
                "ladder.sigma2_max" => synth.profile.sigma2_range.1 = parse(value).map_err(err)?,
                "ladder.scene_min" => synth.profile.scene_len.0 = parse(value).map_err(err)?,
                "ladder.scene_max" => synth.profile.scene_len.1 = parse(value).map_err(err)?,
                "trace.file" => trace_file = Some(base.join(value)),
                "trace.points" => points = Some(parse_points(value).map_err(err)?),
                "trace.end" => end = Some(parse(value).map_err(err)?),
                "controllers" => {
                    controllers = Some(parse_list::<ControllerKind>(value).map_err(err)?)
                }
                "objective" => {
                    objective = value
                        .parse()
                        .map_err(|e: cqstream::utility::UtilityError| err(e.to_string()))?
                }
                "client.start_segment" => clients.push(ClientSpec {
                    start_segment: parse(value).map_err(err)?,
                    startup_buffer: None,
                }),
                "client.startup_buffer" => {
                    let c = clients.last_mut().ok_or_else(|| {
                        err("client.startup_buffer before any client.start_segment".into())
                    })?;
                    c.startup_buffer = Some(parse(value).map_err(err)?);
                }
                "sweep.key" => sweep_key = Some(value.to_string()),
                "sweep.values" => sweep_values = Some(parse_list(value).map_err(err)?),
                "output" => output = Some(base.join(value)),
                k if k.starts_with("config.") => {
                    overrides.push((k["config.".len()..].to_string(), value.to_string()));
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }

        let invalid = |m: &str| CliError::Invalid(format!("spec: {m}"));
        let ladder = match (manifest, synth.any()) {
            (Some(_), true) => {
                return Err(invalid(
                    "give either ladder.manifest or synthetic ladder keys, not both",
                ))
            }
            (Some(p), false) => LadderSource::Manifest(p),
            (None, _) => synth.into_source().ok_or_else(|| {
                invalid("ladder needs ladder.manifest or ladder.seed/segments/rates_kbps")
            })?,
        };
        let trace = match (trace_file, points) {
            (Some(_), Some(_)) => {
                return Err(invalid("give either trace.file or trace.points, not both"))
            }
            (Some(p), None) => {
                if end.is_some() {
                    return Err(invalid("trace.end only applies to trace.points; put an `end` row in the trace file"));
                }
                TraceSource::File(p)
            }
            (None, Some(points)) => TraceSource::Inline { points, end },
            (None, None) => return Err(invalid("missing trace.file or trace.points")),
        };
        let controllers = controllers.ok_or_else(|| invalid("missing controllers"))?;
        if controllers.is_empty() {
            return Err(invalid("at least one controller is required"));
        }
        if clients.is_empty() {
            clients.push(ClientSpec {
                start_segment: 0,
                startup_buffer: None,
            });
        }
        let sweep = match (sweep_key, sweep_values) {
            (Some(key), Some(values)) if !values.is_empty() => Some(Sweep { key, values }),
            (None, None) => None,
            _ => {
                return Err(invalid(
                    "sweep needs both sweep.key and a non-empty sweep.values",
                ))
            }
        };
        Ok(ExperimentSpec {
            name: name.unwrap_or_else(|| "run".into()),
            ladder,
            trace,
            controllers,
            objective,
            overrides,
            clients,
            sweep,
            output,
        })
    }
}

#[derive(Default)]
struct SyntheticKeys {
    seed: Option<u64>,
    segments: Option<usize>,
    tau: Option<f64>,
    rates_bps: Option<Vec<f64>>,
    profile: ComplexityProfile,
}

impl SyntheticKeys {
    fn any(&self) -> bool {
        self.seed.is_some()
            || self.segments.is_some()
            || self.rates_bps.is_some()
            || self.tau.is_some()
    }

    fn into_source(self) -> Option<LadderSource> {
        Some(LadderSource::Synthetic {
            seed: self.seed?,
            segments: self.segments?,
            tau: self.tau.unwrap_or(2.0),
            rates_bps: self.rates_bps?,
            profile: self.profile,
        })
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse `{value}`"))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

/// `time:capacity` pairs separated by commas.
fn parse_points(value: &str) -> Result<Vec<(f64, f64)>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            let (t, c) = p
                .split_once(':')
                .ok_or_else(|| format!("expected `time:capacity`, got `{p}`"))?;
            Ok((parse(t)?, parse(c)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHARED: &str = "\
name = shared
ladder.seed = 7
ladder.segments = 400
ladder.rates_kbps = 400, 800, 1600
trace.points = 0:5e6, 100:15e6, 400:5e6
trace.end = 600
controllers = panda-cq, panda-baseline
config.H = 12
client.start_segment = 0
client.start_segment = 50
client.startup_buffer = 4
client.start_segment = 100
";

    #[test]
    fn parses_client_blocks() {
        let s = ExperimentSpec::parse(SHARED, Path::new("/tmp")).unwrap();
        assert_eq!(s.name, "shared");
        assert_eq!(s.clients.len(), 3);
        assert_eq!(
            s.clients[1],
            ClientSpec {
                start_segment: 50,
                startup_buffer: Some(4.0)
            }
        );
        assert_eq!(s.clients[2].startup_buffer, None);
        assert_eq!(
            s.controllers,
            [ControllerKind::PandaCq, ControllerKind::PandaBaseline]
        );
        assert_eq!(s.overrides, [("H".to_string(), "12".to_string())]);
        let TraceSource::Inline { points, end } = &s.trace else {
            panic!()
        };
        assert_eq!(points.len(), 3);
        assert_eq!(*end, Some(600.0));
        let LadderSource::Synthetic { rates_bps, tau, .. } = &s.ladder else {
            panic!()
        };
        assert_eq!(rates_bps, &[400e3, 800e3, 1600e3]);
        assert_eq!(*tau, 2.0);
    }

    #[test]
    fn relative_paths_follow_the_spec() {
        let s = ExperimentSpec::parse(
            "ladder.manifest = m.csv\ntrace.file = t.csv\ncontrollers = rate-based\n",
            Path::new("/data/exp"),
        )
        .unwrap();
        assert_eq!(
            s.ladder,
            LadderSource::Manifest(PathBuf::from("/data/exp/m.csv"))
        );
        assert_eq!(s.trace, TraceSource::File(PathBuf::from("/data/exp/t.csv")));
        assert_eq!(s.clients.len(), 1);
    }

    #[test]
    fn rejects_bad_specs() {
        let base = Path::new(".");
        for bad in [
            "controllers = panda-cq\ntrace.points = 0:1e6\n",
            "ladder.manifest = m\ncontrollers = panda-cq\n",
            "ladder.manifest = m\ntrace.points = 0:1e6\ncontrollers = \n",
            "ladder.manifest = m\ntrace.points = 0:1e6\ncontrollers = panda-xx\n",
            "ladder.manifest = m\ntrace.points = 0:1e6\ncontrollers = panda-cq\nclient.startup_buffer = 3\n",
            "ladder.manifest = m\ntrace.points = 0:1e6\ncontrollers = panda-cq\nsweep.key = BL\n",
            "ladder.manifest = m\ntrace.points = 0:1e6\ncontrollers = panda-cq\nbogus = 1\n",
            "ladder.manifest = m\nladder.seed = 3\ntrace.points = 0:1e6\ncontrollers = panda-cq\n",
        ] {
            assert!(ExperimentSpec::parse(bad, base).is_err(), "accepted: {bad}");
        }
    }
}
