//! Run configuration: a flat `key = value` file whose keys double as CLI
//! flag names.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Single population absorbed into the added density.
    Limit,
    /// Large droplets fragmenting into small ones.
    Bidisperse,
    /// Limit system with mollified advection and truncated coupling.
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluidPreset {
    TaylorGreen,
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SprayPreset {
    None,
    /// Uniform in `x`, centred Gaussian in `ξ`.
    Gaussian,
    /// Uniform in `x`, Gaussian in `ξ` with mean `spray_offset·e₁`.
    OffsetMean,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self {
                    $(v if *v == $variant => $name,)+
                    _ => unreachable!(),
                };
                f.write_str(name)
            }
        }
    };
}

keyword_enum!(ScenarioKind, "scenario",
    "limit" => ScenarioKind::Limit,
    "bidisperse" => ScenarioKind::Bidisperse,
    "regularized" => ScenarioKind::Regularized,
);
keyword_enum!(FluidPreset, "fluid preset",
    "taylor-green" => FluidPreset::TaylorGreen,
    "rest" => FluidPreset::Rest,
);
keyword_enum!(SprayPreset, "spray preset",
    "none" => SprayPreset::None,
    "gaussian" => SprayPreset::Gaussian,
    "offset-mean" => SprayPreset::OffsetMean,
);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub dim: usize,
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub scenario: ScenarioKind,
    pub r2: f64,
    /// Fragmentation time; `inf` disables fragmentation.
    pub tau: f64,
    /// Regularization parameter, `0` for none.
    pub eps: f64,
    pub particle_count: usize,
    pub particle_budget: usize,
    pub seed: u64,
    pub fluid: FluidPreset,
    pub fluid_amplitude: f64,
    pub spray: SprayPreset,
    /// Droplet number density, so `M₀f = spray_density·|Ω|` at `t = 0`.
    pub spray_density: f64,
    pub spray_sigma: f64,
    pub spray_offset: f64,
    /// Uniform initial added density.
    pub rho_init: f64,
    pub nu: f64,
    pub output_dir: Option<PathBuf>,
    pub stride: usize,
    /// Steps between particle/field snapshots; `0` disables them.
    pub snapshot_stride: usize,
    /// Steps between velocity-moment inequality checks on the cloud.
    pub lemma_stride: usize,
    /// Constant `C` of the budget tolerance `C·dt·t`; the default is the
    /// worst `|residual|/(dt·t)` of the fluid-only Taylor–Green run.
    pub budget_c: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dim: 3,
            n: 32,
            dt: 1e-3,
            t_final: 0.5,
            scenario: ScenarioKind::Limit,
            r2: 0.2,
            tau: 1.0,
            eps: 0.0,
            particle_count: 200_000,
            particle_budget: 400_000,
            seed: 1,
            fluid: FluidPreset::TaylorGreen,
            fluid_amplitude: 1.0,
            spray: SprayPreset::OffsetMean,
            spray_density: 0.5,
            spray_sigma: 0.5,
            spray_offset: 0.5,
            rho_init: 0.0,
            nu: 1.0,
            output_dir: None,
            stride: 1,
            snapshot_stride: 0,
            lemma_stride: 50,
            budget_c: 2.5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_real(key: &str, value: &str) -> Result<f64> {
    match value {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse(key, value),
    }
}

impl SimConfig {
    pub const KEYS: [&'static str; 24] = [
        "dim",
        "n",
        "dt",
        "t_final",
        "scenario",
        "r2",
        "tau",
        "eps",
        "particle_count",
        "particle_budget",
        "seed",
        "fluid",
        "fluid_amplitude",
        "spray",
        "spray_density",
        "spray_sigma",
        "spray_offset",
        "rho_init",
        "nu",
        "output_dir",
        "stride",
        "snapshot_stride",
        "lemma_stride",
        "budget_c",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dim" => self.dim = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "dt" => self.dt = parse_real(key, value)?,
            "t_final" => self.t_final = parse_real(key, value)?,
            "scenario" => self.scenario = value.parse()?,
            "r2" => self.r2 = parse_real(key, value)?,
            "tau" => self.tau = parse_real(key, value)?,
            "eps" => self.eps = parse_real(key, value)?,
            "particle_count" => self.particle_count = parse(key, value)?,
            "particle_budget" => self.particle_budget = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "fluid" => self.fluid = value.parse()?,
            "fluid_amplitude" => self.fluid_amplitude = parse_real(key, value)?,
            "spray" => self.spray = value.parse()?,
            "spray_density" => self.spray_density = parse_real(key, value)?,
            "spray_sigma" => self.spray_sigma = parse_real(key, value)?,
            "spray_offset" => self.spray_offset = parse_real(key, value)?,
            "rho_init" => self.rho_init = parse_real(key, value)?,
            "nu" => self.nu = parse_real(key, value)?,
            "output_dir" => self.output_dir = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "stride" => self.stride = parse(key, value)?,
            "snapshot_stride" => self.snapshot_stride = parse(key, value)?,
            "lemma_stride" => self.lemma_stride = parse(key, value)?,
            "budget_c" => self.budget_c = parse_real(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Serializes back to the `key = value` format.
    pub fn to_text(&self) -> String {
        let out_dir = self.output_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: [String; 24] = [
            self.dim.to_string(),
            self.n.to_string(),
            self.dt.to_string(),
            self.t_final.to_string(),
            self.scenario.to_string(),
            self.r2.to_string(),
            if self.tau.is_infinite() { "inf".into() } else { self.tau.to_string() },
            self.eps.to_string(),
            self.particle_count.to_string(),
            self.particle_budget.to_string(),
            self.seed.to_string(),
            self.fluid.to_string(),
            self.fluid_amplitude.to_string(),
            self.spray.to_string(),
            self.spray_density.to_string(),
            self.spray_sigma.to_string(),
            self.spray_offset.to_string(),
            self.rho_init.to_string(),
            self.nu.to_string(),
            out_dir,
            self.stride.to_string(),
            self.snapshot_stride.to_string(),
            self.lemma_stride.to_string(),
            self.budget_c.to_string(),
        ];
        Self::KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim != 2 && self.dim != 3 {
            return bad(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if self.n < 8 || !self.n.is_power_of_two() {
            return bad(format!("n must be a power of two ≥ 8, got {}", self.n));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be non-negative, got {}", self.t_final));
        }
        if !(self.r2 > 0.0 && self.r2 < 1.0) {
            return bad(format!("r2 must lie in (0,1), got {}", self.r2));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be non-negative, got {}", self.eps));
        }
        if self.scenario == ScenarioKind::Regularized && self.eps == 0.0 {
            return bad("the regularized scenario needs eps > 0".into());
        }
        if self.spray != SprayPreset::None && self.particle_count == 0 {
            return bad("a spray preset needs particle_count > 0".into());
        }
        if self.particle_budget < self.particle_count {
            return bad("particle_budget must be at least particle_count".into());
        }
        for (name, v) in [
            ("spray_density", self.spray_density),
            ("spray_sigma", self.spray_sigma),
            ("rho_init", self.rho_init),
            ("fluid_amplitude", self.fluid_amplitude),
            ("budget_c", self.budget_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.spray_offset.is_finite() {
            return bad("spray_offset must be finite".into());
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if self.stride == 0 || self.lemma_stride == 0 {
            return bad("stride and lemma_stride must be positive".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}
