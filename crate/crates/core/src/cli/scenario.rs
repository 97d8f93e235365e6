//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! domain.bounds = 1.0
//! domain.cells = 256
//! couplings.c = -1
//! init.A.center = 0.4
//! time.dt = 1e-3
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::hydro::{CouplingSet, Mode, COUPLING_NAMES};
use crate::odesys::Level;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Hierarchy,
    SelfConsistent,
    OdeOnly,
    KineticInit,
}

impl RunMode {
    pub fn parse(s: &str) -> Option<RunMode> {
        match s {
            "hierarchy" => Some(RunMode::Hierarchy),
            "self-consistent" => Some(RunMode::SelfConsistent),
            "ode-only" => Some(RunMode::OdeOnly),
            "kinetic-init" => Some(RunMode::KineticInit),
            _ => None,
        }
    }

    /// Field mode of the PDE pipeline, `None` for ode-only.
    pub fn hydro_mode(self) -> Option<Mode> {
        match self {
            RunMode::Hierarchy | RunMode::KineticInit => Some(Mode::Hierarchy),
            RunMode::SelfConsistent => Some(Mode::SelfConsistent),
            RunMode::OdeOnly => None,
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Hierarchy => "hierarchy",
            RunMode::SelfConsistent => "self-consistent",
            RunMode::OdeOnly => "ode-only",
            RunMode::KineticInit => "kinetic-init",
        })
    }
}

/// `background + amplitude * exp(-|x - center|² / (2 width²))` on the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
    pub background: f64,
}

impl Bump {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        self.background + self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }

    /// The bump without its background; the background is at rest.
    pub fn moving(&self, x: &[f64]) -> f64 {
        self.eval(x) - self.background
    }

    pub fn peak(&self) -> f64 {
        self.background + self.amplitude
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bounds: Vec<f64>,
    pub cells: Vec<usize>,
    pub couplings: CouplingSet,
    /// Skip the constraint gate of the ODE pipeline.
    pub override_constraints: bool,
    pub init_a: Bump,
    pub init_b: Bump,
    /// Initial velocities of the Assets and Revenue bumps.
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub cfl: f64,
    pub negativity_tolerance: Option<f64>,
    pub mode: RunMode,
    pub level: Level,
    pub seed: u64,
    pub particles: usize,
    pub velocity_spread: f64,
    pub ensemble: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub snapshot_every: usize,
    pub final_snapshot: bool,
    pub identities: bool,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn from_file(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut s = Scenario::parse(&text)?;
        if let Some(p) = &s.ensemble {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    s.ensemble = Some(dir.join(p));
                }
            }
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Scenario, CliError> {
        let mut cfg = Entries::parse(text)?;
        let bounds: Vec<f64> = cfg.list("domain.bounds")?.unwrap_or_else(|| vec![1.0]);
        let dim = match cfg.value::<usize>("domain.dim")? {
            Some(d) if d != bounds.len() && bounds.len() == 1 => d,
            Some(d) if d != bounds.len() => {
                return Err(cfg.error("domain.dim", format!("dim {d} disagrees with {} bounds", bounds.len())));
            }
            _ => bounds.len(),
        };
        let bounds = if bounds.len() == dim {
            bounds
        } else {
            vec![bounds[0]; dim]
        };
        let cells: Vec<usize> = cfg.list("domain.cells")?.unwrap_or_else(|| vec![128]);
        let cells = match cells.len() {
            1 => vec![cells[0]; dim],
            n if n == dim => cells,
            n => return Err(cfg.error("domain.cells", format!("{n} cell counts for {dim} axes"))),
        };

        let mut couplings = CouplingSet::default();
        for name in COUPLING_NAMES {
            if let Some(v) = cfg.value::<f64>(&format!("couplings.{name}"))? {
                couplings.set(name, v);
            }
        }
        let override_constraints = cfg.value::<bool>("couplings.override")?.unwrap_or(false);

        let mut bump = |side: &str, center: f64, amplitude: f64| -> Result<Bump, CliError> {
            let c: Vec<f64> = cfg
                .list(&format!("init.{side}.center"))?
                .unwrap_or_else(|| vec![center]);
            let c = match c.len() {
                1 => vec![c[0]; dim],
                n if n == dim => c,
                n => {
                    return Err(cfg.error(
                        &format!("init.{side}.center"),
                        format!("{n} coordinates for {dim} axes"),
                    ));
                }
            };
            let width = cfg.value(&format!("init.{side}.width"))?.unwrap_or(0.1);
            if !(width > 0.0) {
                return Err(cfg.error(&format!("init.{side}.width"), "width must be positive".into()));
            }
            Ok(Bump {
                center: c,
                width,
                amplitude: cfg.value(&format!("init.{side}.amplitude"))?.unwrap_or(amplitude),
                background: cfg.value(&format!("init.{side}.background"))?.unwrap_or(0.0),
            })
        };
        let init_a = bump("A", 0.4, 1.0)?;
        let init_b = bump("B", 0.6, 1.0)?;
        let mut velocity = |key: &str| -> Result<Vec<f64>, CliError> {
            let v: Vec<f64> = cfg.list(key)?.unwrap_or_else(|| vec![0.0]);
            match v.len() {
                1 => Ok(vec![v[0]; dim]),
                n if n == dim => Ok(v),
                n => Err(cfg.error(key, format!("{n} components for {dim} axes"))),
            }
        };
        let v = velocity("init.v")?;
        let u = velocity("init.u")?;
        let ensemble = cfg.value::<String>("init.ensemble")?.map(PathBuf::from);

        let mode = match cfg.value::<String>("run.mode")? {
            None => RunMode::Hierarchy,
            Some(m) => RunMode::parse(&m).ok_or_else(|| cfg.error("run.mode", format!("unknown mode {m:?}")))?,
        };
        let level = match cfg.value::<String>("ode.level")? {
            Some(l) => Level::parse(&l).ok_or_else(|| cfg.error("ode.level", format!("unknown level {l:?}")))?,
            None if mode == RunMode::OdeOnly => {
                return Err(CliError::Config("ode-only mode requires ode.level".into()));
            }
            None => Level::A,
        };
        let dt = cfg
            .value::<f64>("time.dt")?
            .ok_or_else(|| CliError::Config("time.dt is required".into()))?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(cfg.error("time.dt", "dt must be positive".into()));
        }
        let steps = cfg
            .value::<usize>("time.steps")?
            .ok_or_else(|| CliError::Config("time.steps is required".into()))?;
        let stride = cfg.value::<usize>("time.stride")?.unwrap_or(1).max(1);
        let cfl = cfg.value::<f64>("time.cfl")?.unwrap_or(0.5);
        let negativity_tolerance = match cfg.value::<String>("time.negativity_tolerance")?.as_deref() {
            None => Some(1e-6),
            Some("off") | Some("none") => None,
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|_| cfg.error("time.negativity_tolerance", format!("cannot parse {s:?}")))?,
            ),
        };
        let particles = cfg.value::<usize>("kinetic.particles")?.unwrap_or(0);
        if mode == RunMode::KineticInit && particles == 0 && ensemble.is_none() {
            return Err(CliError::Config(
                "kinetic-init mode requires kinetic.particles or init.ensemble".into(),
            ));
        }
        let scenario = Scenario {
            bounds,
            cells,
            couplings,
            override_constraints,
            init_a,
            init_b,
            v,
            u,
            dt,
            steps,
            stride,
            cfl,
            negativity_tolerance,
            mode,
            level,
            seed: cfg.value("seed")?.unwrap_or(0),
            particles,
            velocity_spread: cfg.value("kinetic.velocity_spread")?.unwrap_or(0.0),
            ensemble,
            out_dir: cfg
                .value::<String>("output.dir")?
                .map(PathBuf::from)
                .unwrap_or_else(|| "out".into()),
            snapshot_every: cfg.value("output.snapshot_every")?.unwrap_or(0),
            final_snapshot: cfg.value("output.final_snapshot")?.unwrap_or(true),
            identities: cfg.value("output.identities")?.unwrap_or(true),
        };
        cfg.finish()?;
        Ok(scenario)
    }
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Entries {
    map: HashMap<String, Entry>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut map: HashMap<String, Entry> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
                line: i + 1,
                message: format!("expected `key = value`, found {line:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || !key.contains('.') && key != "seed" {
                return Err(CliError::Parse {
                    line: i + 1,
                    message: format!("key {key:?} must be `section.name`"),
                });
            }
            if let Some(prev) = map.get(key) {
                return Err(CliError::Parse {
                    line: i + 1,
                    message: format!("{key} already set on line {}", prev.line),
                });
            }
            map.insert(
                key.to_string(),
                Entry {
                    line: i + 1,
                    value: value.trim().to_string(),
                    used: false,
                },
            );
        }
        Ok(Self { map })
    }

    fn error(&self, key: &str, message: String) -> CliError {
        match self.map.get(key) {
            Some(e) => CliError::Parse { line: e.line, message },
            None => CliError::Config(message),
        }
    }

    fn value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        let Some(e) = self.map.get_mut(key) else {
            return Ok(None);
        };
        e.used = true;
        e.value.parse().map(Some).map_err(|_| CliError::Parse {
            line: e.line,
            message: format!("cannot parse {key} = {:?}", e.value),
        })
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        let Some(e) = self.map.get_mut(key) else {
            return Ok(None);
        };
        e.used = true;
        let line = e.line;
        e.value
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| CliError::Parse {
                    line,
                    message: format!("cannot parse {key} entry {:?}", s.trim()),
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    fn finish(self) -> Result<(), CliError> {
        let mut unused: Vec<(&String, &Entry)> = self.map.iter().filter(|(_, e)| !e.used).collect();
        unused.sort_by_key(|(_, e)| e.line);
        match unused.first() {
            Some((key, e)) => Err(CliError::Parse {
                line: e.line,
                message: format!("unknown key {key}"),
            }),
            None => Ok(()),
        }
    }
}
