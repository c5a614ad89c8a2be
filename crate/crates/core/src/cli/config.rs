//! Line-oriented `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::subspace::ToleranceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BuildSystem,
    Perturb,
    Represent,
    Pathology,
    Unb,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::BuildSystem => "build-system",
            Command::Perturb => "perturb",
            Command::Represent => "represent",
            Command::Pathology => "pathology",
            Command::Unb => "unb",
        }
    }

    /// Library module the command drives.
    pub fn module(self) -> &'static str {
        match self {
            Command::BuildSystem => "biorth",
            Command::Perturb => "perturbations",
            Command::Represent => "representing",
            Command::Pathology | Command::Unb => "pathology",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "build-system" => Ok(Command::BuildSystem),
            "perturb" => Ok(Command::Perturb),
            "represent" => Ok(Command::Represent),
            "pathology" => Ok(Command::Pathology),
            "unb" => Ok(Command::Unb),
            _ => Err(format!(
                "unknown command `{s}` (build-system, perturb, represent, pathology, unb)"
            )),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Growth schedule feeding the permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// f(n) = n, lambda_m = m.
    Linear,
    /// f(n) = 4 ln(1 + n).
    Log,
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Schedule::Linear),
            "log" => Ok(Schedule::Log),
            _ => Err(format!("unknown schedule `{s}` (linear, log)")),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Linear => "linear",
            Schedule::Log => "log",
        })
    }
}

pub const CONFIG_HELP: &str = "\
Config keys (`key = value`, `#` starts a comment):
  command         build-system | perturb | represent | pathology | unb
  truncation      system length N, >= 2                      [64]
  seed            RNG seed                                   [0]
  rank_tol, biorth_tol, span_tol, net_resolution             [1e-10, 1e-8, 1e-8, 0.01]
  input           directory holding X.csv, F.csv, system.txt [near-canonical system]
  output          artifact directory                         [out]
  coupling, decay near-canonical system shape                [0.3, 0.5]
  depth           representing-index depth                   [8]
  samples         random unit vectors per diagnostic         [20]
  partition       block partition file for perturb           [none]
  auto_strong     build the strong partition (true/false)    [false]
  eps_scale, eps_ratio  eps_i = eps_scale * eps_ratio^i      [0.25, 0.5]
  eps             explicit comma-separated eps list          [none]
  f_schedule      linear | log, f feeding the permutation    [linear]
  table_size      permutation table length                   [4096]
  c_values        comma-separated c for |Omega(c n)| ratios  [1,2,4]
  lambda          linear | log, lambda_m for unb             [linear]
  sizes           comma-separated unb truncations            [64,128,256]
  m_bound         boundedness constant M of the unb squeeze  [1]";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub truncation: usize,
    pub seed: u64,
    pub tol: ToleranceConfig,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub coupling: f64,
    pub decay: f64,
    pub depth: usize,
    pub samples: usize,
    pub partition: Option<PathBuf>,
    pub auto_strong: bool,
    pub eps_scale: f64,
    pub eps_ratio: f64,
    pub eps: Option<Vec<f64>>,
    pub f_schedule: Schedule,
    pub table_size: usize,
    pub c_values: Vec<usize>,
    pub lambda: Schedule,
    pub sizes: Vec<usize>,
    pub m_bound: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            truncation: 64,
            seed: 0,
            tol: ToleranceConfig::default(),
            input: None,
            output: PathBuf::from("out"),
            coupling: 0.3,
            decay: 0.5,
            depth: 8,
            samples: 20,
            partition: None,
            auto_strong: false,
            eps_scale: 0.25,
            eps_ratio: 0.5,
            eps: None,
            f_schedule: Schedule::Linear,
            table_size: 4096,
            c_values: vec![1, 2, 4],
            lambda: Schedule::Linear,
            sizes: vec![64, 128, 256],
            m_bound: 1.0,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::Parse {
        line,
        msg: format!("{key}: {e}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',').map(|t| parse_value(line, key, t.trim())).collect()
}

fn range_error(key: &str, msg: impl fmt::Display) -> Error {
    Error::InvalidArgument(format!("{key}: {msg}"))
}

/// Parses `key = value` lines; later keys override earlier ones.
pub fn parse_config(source: &str) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (k, v) = text.split_once('=').ok_or(Error::Parse {
            line,
            msg: format!("expected `key = value`, found `{text}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if v.is_empty() {
            return Err(Error::Parse {
                line,
                msg: format!("{k}: missing value"),
            });
        }
        match k {
            "command" => c.command = Some(parse_value(line, k, v)?),
            "truncation" => c.truncation = parse_value(line, k, v)?,
            "seed" => c.seed = parse_value(line, k, v)?,
            "rank_tol" => c.tol.rank_tol = parse_value(line, k, v)?,
            "biorth_tol" => c.tol.biorth_tol = parse_value(line, k, v)?,
            "span_tol" => c.tol.span_tol = parse_value(line, k, v)?,
            "net_resolution" => c.tol.net_resolution = parse_value(line, k, v)?,
            "input" => c.input = Some(PathBuf::from(v)),
            "output" => c.output = PathBuf::from(v),
            "coupling" => c.coupling = parse_value(line, k, v)?,
            "decay" => c.decay = parse_value(line, k, v)?,
            "depth" => c.depth = parse_value(line, k, v)?,
            "samples" => c.samples = parse_value(line, k, v)?,
            "partition" => c.partition = Some(PathBuf::from(v)),
            "auto_strong" => c.auto_strong = parse_value(line, k, v)?,
            "eps_scale" => c.eps_scale = parse_value(line, k, v)?,
            "eps_ratio" => c.eps_ratio = parse_value(line, k, v)?,
            "eps" => c.eps = Some(parse_list(line, k, v)?),
            "f_schedule" => c.f_schedule = parse_value(line, k, v)?,
            "table_size" => c.table_size = parse_value(line, k, v)?,
            "c_values" => c.c_values = parse_list(line, k, v)?,
            "lambda" => c.lambda = parse_value(line, k, v)?,
            "sizes" => c.sizes = parse_list(line, k, v)?,
            "m_bound" => c.m_bound = parse_value(line, k, v)?,
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key `{k}`"),
                })
            }
        }
    }
    c.validate_ranges()?;
    Ok(c)
}

impl ExperimentConfig {
    /// Range checks that do not depend on the command.
    pub fn validate_ranges(&self) -> Result<()> {
        if self.truncation < 2 {
            return Err(range_error("truncation", format!("{} < 2", self.truncation)));
        }
        self.tol.validate()?;
        for (k, v) in [
            ("coupling", self.coupling),
            ("decay", self.decay),
            ("eps_scale", self.eps_scale),
            ("eps_ratio", self.eps_ratio),
            ("m_bound", self.m_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(range_error(k, format!("must be positive, got {v}")));
            }
        }
        if self.eps_ratio >= 1.0 {
            return Err(range_error("eps_ratio", "must be below 1"));
        }
        if self.m_bound < 1.0 {
            return Err(range_error("m_bound", "must be at least 1"));
        }
        for (k, v) in [
            ("depth", self.depth),
            ("samples", self.samples),
            ("table_size", self.table_size),
        ] {
            if v == 0 {
                return Err(range_error(k, "must be positive"));
            }
        }
        if let Some(eps) = &self.eps {
            if let Some(e) = eps.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
                return Err(range_error(
                    "eps",
                    format!("entries must be finite and >= 0, got {e}"),
                ));
            }
        }
        if self.c_values.contains(&0) {
            return Err(range_error("c_values", "entries must be positive"));
        }
        if self.sizes.iter().any(|&n| n < 2) {
            return Err(range_error("sizes", "entries must be at least 2"));
        }
        Ok(())
    }

    /// Merges the command given on the command line with the one in the file.
    pub fn resolve_command(&mut self, cli: Option<Command>) -> Result<Command> {
        match (cli, self.command) {
            (Some(a), Some(b)) if a != b => Err(range_error(
                "command",
                format!("command line says `{a}` but the config says `{b}`"),
            )),
            (Some(a), _) | (None, Some(a)) => {
                self.command = Some(a);
                Ok(a)
            }
            (None, None) => Err(range_error("command", "a command is required")),
        }
    }

    /// Effective values, for the run manifest.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("command", self.command.map(|c| c.to_string()).unwrap_or_default());
        put("truncation", self.truncation.to_string());
        put("seed", self.seed.to_string());
        put("rank_tol", format!("{:e}", self.tol.rank_tol));
        put("biorth_tol", format!("{:e}", self.tol.biorth_tol));
        put("span_tol", format!("{:e}", self.tol.span_tol));
        put("net_resolution", format!("{:e}", self.tol.net_resolution));
        if let Some(p) = &self.input {
            put("input", p.display().to_string());
        }
        put("output", self.output.display().to_string());
        put("coupling", self.coupling.to_string());
        put("decay", self.decay.to_string());
        put("depth", self.depth.to_string());
        put("samples", self.samples.to_string());
        if let Some(p) = &self.partition {
            put("partition", p.display().to_string());
        }
        put("auto_strong", self.auto_strong.to_string());
        put("eps_scale", self.eps_scale.to_string());
        put("eps_ratio", self.eps_ratio.to_string());
        if let Some(e) = &self.eps {
            put(
                "eps",
                e.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            );
        }
        put("f_schedule", self.f_schedule.to_string());
        put("table_size", self.table_size.to_string());
        put("c_values", join(&self.c_values));
        put("lambda", self.lambda.to_string());
        put("sizes", join(&self.sizes));
        put("m_bound", self.m_bound.to_string());
        m
    }
}
