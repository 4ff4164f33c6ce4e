//! Initial data, the coupled time loop for the three systems, run summaries
//! and the small-radius sweep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{FluidPreset, ScenarioKind, SimConfig, SprayPreset};
use crate::density::{density_step, DensityField, DensityOptions};
use crate::diagnostics::{
    budget_tolerance, drag_dissipation, energy_budget, gronwall_compare, mass_budget, moment_lemma_check,
    momentum_budget, remainder_rates, write_csv, DiagnosticsRecord, GronwallProblem, GronwallReport,
    RadialDensity,
};
use crate::error::{Error, Result};
use crate::fluid::{
    drag_force_integral, ns_step, restore_momentum, viscous_dissipation, weighted_energy, weighted_momentum, FluidState,
    NsParams,
};
use crate::grid::{compensated_sum, GridSpec, ScalarField, Spectral, VectorField};
use crate::kinetic::{
    absorb_and_fragment, absorb_to_density, absorb_to_density_with, advance_particles, deposit_moments,
    deposit_moments_weighted, deposit_with, interpolate_velocity, merge_particles, ParticleCloud, Species,
    TruncationSpec,
};
use crate::snapshot::{save_particles, save_scalar, save_vector};

/// Closed-form `M₀`, `M₁`, `M₂` of a spray preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SprayMoments {
    pub m0: f64,
    pub m1: [f64; 3],
    pub m2: f64,
}

pub fn preset_moments(cfg: &SimConfig) -> SprayMoments {
    let grid = GridSpec { dim: cfg.dim, n: cfg.n, length: 2.0 * std::f64::consts::PI };
    let (density, mean) = spray_shape(cfg);
    let m0 = density * grid.volume();
    let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
    SprayMoments {
        m0,
        m1: [m0 * mean[0], m0 * mean[1], m0 * mean[2]],
        m2: m0 * (mean_sq + cfg.dim as f64 * cfg.spray_sigma * cfg.spray_sigma),
    }
}

fn spray_shape(cfg: &SimConfig) -> (f64, [f64; 3]) {
    match cfg.spray {
        SprayPreset::None => (0.0, [0.0; 3]),
        SprayPreset::Gaussian => (cfg.spray_density, [0.0; 3]),
        SprayPreset::OffsetMean => (cfg.spray_density, [cfg.spray_offset, 0.0, 0.0]),
    }
}

/// `A(sin x cos y cos z, −cos x sin y cos z, 0)`; the `z` factor is dropped in 2-D.
pub fn taylor_green(grid: GridSpec, amplitude: f64) -> VectorField {
    let dim = grid.dim;
    VectorField::from_fn(grid, |x| {
        let cz = if dim == 3 { x[2].cos() } else { 1.0 };
        [amplitude * x[0].sin() * x[1].cos() * cz, -amplitude * x[0].cos() * x[1].sin() * cz, 0.0]
    })
}

pub fn initial_fluid(grid: GridSpec, cfg: &SimConfig) -> VectorField {
    match cfg.fluid {
        FluidPreset::TaylorGreen => taylor_green(grid, cfg.fluid_amplitude),
        FluidPreset::Rest => VectorField::zeros(grid),
    }
}

/// Additive recurrence `x_i = frac(s + i·α)` with the generalized golden
/// ratio of dimension `d`.
fn low_discrepancy_step(dim: usize) -> [f64; 3] {
    let mut phi: f64 = 2.0;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let mut a = [0.0; 3];
    for (j, aj) in a.iter_mut().enumerate().take(dim) {
        *aj = (1.0 / phi.powi(j as i32 + 1)).fract();
    }
    a
}

/// Samples a preset with equal weights. Positions follow a randomly shifted
/// low-discrepancy sequence; velocities come in antithetic pairs sharing a
/// position, shifted and rescaled so that `M₀`, `M₁`, `M₂` match
/// [`preset_moments`] to rounding.
pub fn sample_spray(grid: &GridSpec, cfg: &SimConfig) -> Result<ParticleCloud> {
    let dim = grid.dim;
    let mut cloud = ParticleCloud::new(dim);
    let count = cfg.particle_count;
    let (density, mean) = spray_shape(cfg);
    if cfg.spray == SprayPreset::None || count == 0 || density == 0.0 {
        return Ok(cloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shift: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let step = low_discrepancy_step(dim);
    let pairs = count / 2;
    let w = density * grid.volume() / count as f64;

    let mut devs: Vec<f64> = (0..pairs * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let ss: f64 = devs.iter().map(|d| d * d).sum();
    let target = if pairs > 0 {
        // Each deviation appears twice, the unpaired particle carries none.
        0.5 * count as f64 * dim as f64 * cfg.spray_sigma * cfg.spray_sigma
    } else {
        0.0
    };
    let scale = if ss > 0.0 { (target / ss).sqrt() } else { 0.0 };
    for d in devs.iter_mut() {
        *d *= scale;
    }

    let position = |i: usize| -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..dim {
            x[a] = (shift[a] + i as f64 * step[a]).fract() * grid.length;
        }
        x
    };
    for k in 0..pairs {
        let x = position(k);
        for sign in [1.0, -1.0] {
            let mut xi = [0.0; 3];
            for a in 0..dim {
                xi[a] = mean[a] + sign * devs[k * dim + a];
            }
            cloud.push(&x[..dim], &xi[..dim], w, Species::Large);
        }
    }
    if count % 2 == 1 {
        let x = position(pairs);
        cloud.push(&x[..dim], &mean[..dim], w, Species::Large);
    }
    Ok(cloud)
}

/// Drag dissipation coefficient in the energy identity of each system.
pub fn drag_coefficient(kind: ScenarioKind) -> f64 {
    match kind {
        ScenarioKind::Limit | ScenarioKind::Regularized => 1.5,
        ScenarioKind::Bidisperse => 1.0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PassFlags {
    pub divergence: bool,
    /// Liquid volume (bidisperse) or `M₀f + ∫ρ` (limit, regularized with
    /// the truncated loss added back).
    pub volume: bool,
    pub momentum: bool,
    pub energy: bool,
    pub lemma: bool,
    pub gronwall: bool,
}

impl PassFlags {
    pub fn all(&self) -> bool {
        self.divergence && self.volume && self.momentum && self.energy && self.lemma && self.gronwall
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: ScenarioKind,
    pub dim: usize,
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub particles_final: usize,
    pub merges: usize,
    pub wall_time_s: f64,
    pub tolerance_c: f64,
    pub max_div_residual: f64,
    pub energy_residual_final: f64,
    pub energy_residual_max_abs: f64,
    /// Largest `residual − C·dt·t` (energy created beyond tolerance).
    pub energy_upper_excess: f64,
    /// Largest `−residual − C·dt·t` (energy lost beyond tolerance).
    pub energy_lower_excess: f64,
    pub momentum_drift_max: f64,
    pub momentum_drift_final: f64,
    pub volume_drift_max: f64,
    pub lemma_checks: usize,
    pub lemma_failures: usize,
    pub lemma_min_margin: f64,
    pub gronwall: GronwallReport,
    pub pass: PassFlags,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticsRecord>,
    pub summary: RunSummary,
    pub fluid: FluidState,
    pub cloud: ParticleCloud,
    pub density: DensityField,
}

#[derive(Debug, Clone, Copy, Default)]
struct LemmaTally {
    checks: usize,
    failures: usize,
    min_margin: f64,
}

/// Coupled state of one run.
pub struct Simulation {
    pub config: SimConfig,
    pub sp: Spectral,
    pub fluid: FluidState,
    pub cloud: ParticleCloud,
    pub density: DensityField,
    pub records: Vec<DiagnosticsRecord>,
    pub steps_taken: usize,
    /// Number released by absorption but removed by the truncation.
    pub truncated_loss: f64,
    pub merges: usize,
    /// Spray kinetic energy removed by merging so far.
    pub merge_loss: f64,
    initial_bound: f64,
    lemma: LemmaTally,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = GridSpec::periodic(config.dim, config.n)?;
        let u = initial_fluid(grid, &config);
        let cloud = sample_spray(&grid, &config)?;
        let rho = ScalarField::constant(grid, config.rho_init);
        Self::with_state(config, u, cloud, rho)
    }

    /// Starts from explicit initial data; `u` is projected onto divergence-free fields.
    pub fn with_state(config: SimConfig, u: VectorField, mut cloud: ParticleCloud, rho: ScalarField) -> Result<Self> {
        config.validate()?;
        let grid = GridSpec::periodic(config.dim, config.n)?;
        grid.ensure_same(&u.grid)?;
        grid.ensure_same(&rho.grid)?;
        cloud.validate()?;
        if cloud.dim != grid.dim {
            return Err(Error::Parameter("cloud and grid dimensions differ".into()));
        }
        if config.scenario != ScenarioKind::Bidisperse && cloud.species.iter().any(|s| *s == Species::Small) {
            return Err(Error::Parameter("only the bidisperse system carries small droplets".into()));
        }
        if config.scenario == ScenarioKind::Bidisperse && rho.max() > 0.0 {
            return Err(Error::Parameter("the bidisperse system has no added density".into()));
        }
        cloud.wrap_positions(&grid);
        let sp = Spectral::new(grid)?;
        let u = sp.dealias(&sp.leray_project(&u)?);
        let density = DensityField::new(rho)?;
        let initial_bound =
            2.0 * weighted_energy(&u, &density.rho) + cloud.second_moment(None) + 1.0;
        let mut sim = Simulation {
            config,
            sp,
            fluid: FluidState { u, t: 0.0 },
            cloud,
            density,
            records: Vec::new(),
            steps_taken: 0,
            truncated_loss: 0.0,
            merges: 0,
            merge_loss: 0.0,
            initial_bound,
            lemma: LemmaTally { min_margin: f64::INFINITY, ..Default::default() },
        };
        let rec = sim.record()?;
        sim.records.push(rec);
        sim.lemma_check()?;
        Ok(sim)
    }

    pub fn grid(&self) -> GridSpec {
        *self.sp.grid()
    }

    fn truncation(&self) -> Option<TruncationSpec> {
        match self.config.scenario {
            ScenarioKind::Regularized => Some(TruncationSpec { eps: self.config.eps }),
            _ => None,
        }
    }

    /// `½ Σ w·v|ξ|²`.
    fn spray_energy(&self) -> f64 {
        let c = &self.cloud;
        0.5 * compensated_sum((0..c.len()).map(|p| c.w[p] * self.volume_factor(c.species[p]) * c.speed_sq(p)))
    }

    fn volume_factor(&self, s: Species) -> f64 {
        match s {
            Species::Large => 1.0,
            Species::Small => self.config.r2.powi(3),
        }
    }

    /// deposit → fluid → particles → exchange → density.
    pub fn step(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let grid = self.grid();
        let dt = cfg.dt;
        match cfg.scenario {
            ScenarioKind::Limit | ScenarioKind::Regularized => {
                let trunc = self.truncation();
                let mollifier = trunc.map(|t| t.eps);
                let drag = deposit_moments(&self.cloud, &grid, trunc);
                let params = NsParams { nu: cfg.nu, mollifier_eps: mollifier, coupling: 2.0, ..Default::default() };
                let momentum_target = {
                    let p0 = weighted_momentum(&self.fluid.u, &self.density.rho);
                    let f = drag_force_integral(&self.fluid.u, &drag, params.coupling)?;
                    std::array::from_fn::<f64, 3, _>(|a| p0[a] + dt * f[a])
                };
                ns_step(&self.sp, &mut self.fluid, &self.density.rho, &drag, dt, &params)?;
                let advecting = match mollifier {
                    Some(eps) => self.sp.mollify(&self.fluid.u, eps)?,
                    None => self.fluid.u.clone(),
                };
                advance_particles(&mut self.cloud, &advecting, dt, cfg.r2)?;
                let released = match trunc {
                    Some(t) => {
                        let before = self.cloud.number(None);
                        let r = absorb_to_density_with(&mut self.cloud, &grid, dt, |xi| t.weight(xi))?;
                        let lost = before - self.cloud.number(None) - r.integral();
                        self.truncated_loss += lost;
                        r
                    }
                    None => absorb_to_density(&mut self.cloud, &grid, dt)?,
                };
                let source = ScalarField { grid, values: released.values.iter().map(|v| v / dt).collect() };
                let opts = DensityOptions { mollifier_eps: mollifier, conserve_mass: true };
                density_step(&self.sp, &mut self.density, &self.fluid.u, &source, dt, &opts)?;
                // Transport of ρ and the de-aliased convection do not cancel in
                // `∫ρu` on the grid; a mean-flow shift restores the exact budget.
                restore_momentum(&mut self.fluid.u, &self.density.rho, &released, momentum_target);
            }
            ScenarioKind::Bidisperse => {
                let drag = deposit_moments_weighted(&self.cloud, &grid, None, [1.0, cfg.r2]);
                let params = NsParams { nu: cfg.nu, coupling: 1.0, ..Default::default() };
                ns_step(&self.sp, &mut self.fluid, &self.density.rho, &drag, dt, &params)?;
                advance_particles(&mut self.cloud, &self.fluid.u, dt, cfg.r2)?;
                let spawned = absorb_and_fragment(&mut self.cloud, dt, cfg.tau, cfg.r2)?;
                self.cloud.extend(&spawned);
                if self.cloud.len() > cfg.particle_budget {
                    let before = self.spray_energy();
                    let large = self.cloud.select(Species::Large);
                    let room = cfg.particle_budget.saturating_sub(large.len());
                    if room > 0 {
                        // Only spawned droplets are coarsened.
                        let mut small = self.cloud.select(Species::Small);
                        merge_particles(&mut small, &grid, room)?;
                        self.cloud = large;
                        self.cloud.extend(&small);
                    } else {
                        merge_particles(&mut self.cloud, &grid, cfg.particle_budget)?;
                    }
                    self.merge_loss += before - self.spray_energy();
                    self.merges += 1;
                }
            }
        }
        self.steps_taken += 1;
        self.fluid.t = self.steps_taken as f64 * dt;
        Ok(())
    }

    /// Diagnostics of the current state.
    pub fn record(&self) -> Result<DiagnosticsRecord> {
        let grid = self.grid();
        let u = &self.fluid.u;
        let c = &self.cloud;
        let r2 = self.config.r2;
        let drag_weight = |p: usize| match c.species[p] {
            Species::Large => 1.0,
            Species::Small => r2,
        };
        let moments = deposit_with(c, &grid, drag_weight);
        let vol = |p: usize| self.volume_factor(c.species[p]);
        let e_spray = self.spray_energy();
        let mass_f = compensated_sum((0..c.len()).map(|p| c.w[p] * vol(p)));
        let m2 = c.second_moment(None);
        let m1 = c.momentum(None);
        let dv = grid.cell_volume();
        let mut total_momentum = [0.0; 3];
        for a in 0..grid.dim {
            let spray = compensated_sum((0..c.len()).map(|p| c.w[p] * vol(p) * c.xi[p * c.dim + a]));
            let fluid = compensated_sum(
                u.components[a].iter().zip(&self.density.rho.values).map(|(ua, r)| (1.0 + r) * ua),
            );
            total_momentum[a] = spray + fluid * dv;
        }
        let remainder_rate = match self.truncation() {
            Some(t) => remainder_rates(&self.sp, u, c, t.eps)?,
            None => [0.0; 3],
        };
        let rec = DiagnosticsRecord {
            t: self.fluid.t,
            e_kinetic_spray: e_spray,
            e_fluid: weighted_energy(u, &self.density.rho),
            dissipation_visc: viscous_dissipation(&self.sp, u),
            dissipation_drag: drag_dissipation(u, &moments),
            m0: c.number(None),
            m1,
            m2,
            total_momentum,
            mass_f,
            mass_rho: self.density.mass(),
            div_residual: self.sp.divergence_residual(u),
            remainder_rate,
            merge_loss: self.merge_loss,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn lemma_check(&mut self) -> Result<()> {
        if self.cloud.is_empty() {
            return Ok(());
        }
        let h = RadialDensity::from_cloud(&self.cloud, self.grid().volume(), 32)?;
        for (alpha, gamma) in [(0.0, 2.0), (1.0, 2.0)] {
            let check = moment_lemma_check(&h, alpha, gamma)?;
            self.lemma.checks += 1;
            if !check.pass {
                self.lemma.failures += 1;
            }
            self.lemma.min_margin = self.lemma.min_margin.min(check.margin());
        }
        Ok(())
    }

    fn save_snapshots(&self, dir: &Path, label: &str) -> Result<()> {
        let t = self.fluid.t;
        save_vector(&dir.join(format!("u_{label}.bin")), &self.fluid.u, t)?;
        save_scalar(&dir.join(format!("rho_{label}.bin")), &self.density.rho, t)?;
        save_particles(&dir.join(format!("particles_{label}.bin")), &self.cloud, t)?;
        Ok(())
    }

    /// Runs to `t_final`, writing outputs when an output directory is configured.
    pub fn run(mut self) -> Result<RunOutcome> {
        let start = Instant::now();
        let steps = self.config.steps();
        let out_dir = self.config.output_dir.clone();
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("config.txt"), self.config.to_text())?;
        }
        let mut last_good: Option<(FluidState, ParticleCloud, DensityField)> = None;
        for k in 1..=steps {
            if out_dir.is_some() {
                last_good = Some((self.fluid.clone(), self.cloud.clone(), self.density.clone()));
            }
            let stepped = self.step().and_then(|_| {
                let rec = self.record()?;
                if k % self.config.stride == 0 || k == steps {
                    self.records.push(rec);
                }
                Ok(())
            });
            if let Err(e) = stepped {
                if let (Some(dir), Some((fluid, cloud, density))) = (&out_dir, last_good.take()) {
                    self.fluid = fluid;
                    self.cloud = cloud;
                    self.density = density;
                    self.save_snapshots(dir, "last_good")?;
                }
                return Err(e);
            }
            if k % self.config.lemma_stride == 0 {
                self.lemma_check()?;
            }
            if let Some(dir) = &out_dir {
                if self.config.snapshot_stride > 0 && k % self.config.snapshot_stride == 0 {
                    self.save_snapshots(dir, &format!("{k:06}"))?;
                }
            }
        }
        let summary = self.summarize(start.elapsed().as_secs_f64())?;
        if let Some(dir) = &out_dir {
            let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("diagnostics.csv"))?);
            write_csv(&mut csv, &self.records)?;
            std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        }
        Ok(RunOutcome {
            records: self.records,
            summary,
            fluid: self.fluid,
            cloud: self.cloud,
            density: self.density,
        })
    }

    fn summarize(&self, wall_time_s: f64) -> Result<RunSummary> {
        let cfg = &self.config;
        let recs = &self.records;
        let c = cfg.budget_c;
        let energy = energy_budget(recs, drag_coefficient(cfg.scenario))?;
        let momentum = momentum_budget(recs)?;
        let mut mass = mass_budget(recs)?;
        if let Some(last) = mass.last_mut() {
            *last += self.truncated_loss;
        }
        let tol = |t: f64| budget_tolerance(c, cfg.dt, t);
        let mut upper = f64::NEG_INFINITY;
        let mut lower = f64::NEG_INFINITY;
        for (r, e) in recs.iter().zip(&energy) {
            upper = upper.max(e - tol(r.t));
            lower = lower.max(-e - tol(r.t));
        }
        let momentum_excess =
            recs.iter().zip(&momentum).map(|(r, m)| m - tol(r.t)).fold(f64::NEG_INFINITY, f64::max);
        let volume_drift_max = match cfg.scenario {
            // Intermediate rows do not carry the running truncation loss.
            ScenarioKind::Regularized => mass.last().map_or(0.0, |m| m.abs()),
            _ => mass.iter().fold(0.0f64, |a, m| a.max(m.abs())),
        };
        let max_div = recs.iter().map(|r| r.div_residual).fold(0.0, f64::max);

        // a(t) = ‖u‖² + ∫‖∇u‖² against z' = P z⁴, z(0) = P.
        let mut samples = Vec::with_capacity(recs.len());
        let mut acc = 0.0;
        for (i, r) in recs.iter().enumerate() {
            if i > 0 {
                acc += 0.5 * (r.t - recs[i - 1].t) * (r.dissipation_visc + recs[i - 1].dissipation_visc);
            }
            // 2·e_fluid ≥ ‖u‖², so this bounds a(t) from above.
            samples.push((r.t, 2.0 * r.e_fluid + acc));
        }
        let p = self.initial_bound;
        let problem = GronwallProblem::new(p, move |z| p * z.abs().powi(4))?;
        let gronwall = gronwall_compare(&problem, &samples)?;

        let pass = PassFlags {
            divergence: max_div <= 1e-10,
            volume: volume_drift_max <= 1e-10,
            momentum: momentum_excess <= 0.0,
            energy: upper <= 0.0 && lower <= 0.0,
            lemma: self.lemma.failures == 0,
            gronwall: gronwall.pass,
        };
        Ok(RunSummary {
            scenario: cfg.scenario,
            dim: cfg.dim,
            n: cfg.n,
            dt: cfg.dt,
            t_final: self.fluid.t,
            steps: self.steps_taken,
            particles_final: self.cloud.len(),
            merges: self.merges,
            wall_time_s,
            tolerance_c: c,
            max_div_residual: max_div,
            energy_residual_final: energy.last().copied().unwrap_or(0.0),
            energy_residual_max_abs: energy.iter().fold(0.0f64, |a, e| a.max(e.abs())),
            energy_upper_excess: upper,
            energy_lower_excess: lower,
            momentum_drift_max: momentum.iter().cloned().fold(0.0, f64::max),
            momentum_drift_final: momentum.last().copied().unwrap_or(0.0),
            volume_drift_max,
            lemma_checks: self.lemma.checks,
            lemma_failures: self.lemma.failures,
            lemma_min_margin: self.lemma.min_margin,
            gronwall,
            pass,
        })
    }
}

pub fn run_scenario(config: SimConfig) -> Result<RunOutcome> {
    Simulation::new(config)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub r2: f64,
    /// `Σ r2³ w|ξ−u|² / Σ r2³ w` over small droplets at the final time.
    pub delta: f64,
    /// `‖r2³ m0f₂ − ρ_limit‖₂` at the final time.
    pub rho_mismatch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `ln δ` against `ln r2`.
    pub delta_slope: Option<f64>,
    pub delta_decreasing: bool,
    pub mismatch_non_increasing: bool,
}

/// Relaxation metric of the small droplets against the final velocity.
pub fn relaxation_delta(cloud: &ParticleCloud, u: &VectorField) -> f64 {
    let small = cloud.select(Species::Small);
    if small.is_empty() {
        return 0.0;
    }
    let up = interpolate_velocity(u, &small.x);
    let dim = small.dim;
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..small.len() {
        let d2: f64 = (0..dim).map(|a| (small.xi[p * dim + a] - up[p * dim + a]).powi(2)).sum();
        num += small.w[p] * d2;
        den += small.w[p];
    }
    if den > 0.0 { num / den } else { 0.0 }
}

/// `‖r2³ m0(f₂) − ρ‖₂`.
pub fn density_mismatch(cloud: &ParticleCloud, rho: &ScalarField, r2: f64) -> f64 {
    let grid = rho.grid;
    let vol = r2.powi(3);
    let m = deposit_with(cloud, &grid, |p| if cloud.species[p] == Species::Small { vol } else { 0.0 });
    let diff: f64 = m.m0.values.iter().zip(&rho.values).map(|(a, b)| (a - b) * (a - b)).sum();
    (diff * grid.cell_volume()).sqrt()
}

fn log_slope(rows: &[SweepRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.delta > 0.0).map(|r| (r.r2.ln(), r.delta.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn member_dir(base: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    base.as_ref().map(|d| d.join(name))
}

/// Bidisperse runs for each `r2` (descending) plus a limit-system run with
/// the same seed and initial data, executed concurrently.
pub fn sweep_r2(base: &SimConfig, r2_list: &[f64]) -> Result<SweepResult> {
    if r2_list.is_empty() {
        return Err(Error::Parameter("empty r2 list".into()));
    }
    if r2_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Parameter("r2 list must be strictly decreasing".into()));
    }
    let mut limit_cfg = base.clone();
    limit_cfg.scenario = ScenarioKind::Limit;
    limit_cfg.eps = 0.0;
    limit_cfg.output_dir = member_dir(&base.output_dir, "limit");
    let member_cfgs: Vec<SimConfig> = r2_list
        .iter()
        .map(|&r2| {
            let mut c = base.clone();
            c.scenario = ScenarioKind::Bidisperse;
            c.eps = 0.0;
            c.rho_init = 0.0;
            c.r2 = r2;
            c.output_dir = member_dir(&base.output_dir, &format!("r2_{r2}"));
            c
        })
        .collect();
    let (limit, members) = std::thread::scope(|s| {
        let limit = s.spawn(|| run_scenario(limit_cfg));
        let handles: Vec<_> = member_cfgs.into_iter().map(|c| s.spawn(move || run_scenario(c))).collect();
        let members: Vec<Result<RunOutcome>> =
            handles.into_iter().map(|h| h.join().expect("sweep member panicked")).collect();
        (limit.join().expect("limit run panicked"), members)
    });
    let limit = limit?;
    let mut rows = Vec::with_capacity(r2_list.len());
    for (&r2, out) in r2_list.iter().zip(members) {
        let out = out?;
        rows.push(SweepRow {
            r2,
            delta: relaxation_delta(&out.cloud, &out.fluid.u),
            rho_mismatch: density_mismatch(&out.cloud, &limit.density.rho, r2),
        });
    }
    let delta_decreasing = rows.windows(2).all(|w| w[1].delta < w[0].delta);
    let mismatch_non_increasing = rows.windows(2).all(|w| w[1].rho_mismatch <= w[0].rho_mismatch);
    let result = SweepResult { delta_slope: log_slope(&rows), rows, delta_decreasing, mismatch_non_increasing };
    if let Some(dir) = &base.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&result)?)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimConfig {
        SimConfig {
            dim: 2,
            n: 16,
            dt: 2e-3,
            t_final: 0.02,
            particle_count: 2000,
            particle_budget: 4000,
            lemma_stride: 5,
            ..Default::default()
        }
    }

    #[test]
    fn sampler_matches_closed_form_moments() {
        for (dim, count) in [(2, 1001), (3, 4000)] {
            let cfg = SimConfig { dim, particle_count: count, ..Default::default() };
            let grid = GridSpec::periodic(dim, 16).unwrap();
            let cloud = sample_spray(&grid, &cfg).unwrap();
            let exact = preset_moments(&cfg);
            assert_eq!(cloud.len(), count);
            assert!((cloud.number(None) - exact.m0).abs() < 1e-12 * exact.m0);
            let m1 = cloud.momentum(None);
            for a in 0..3 {
                assert!((m1[a] - exact.m1[a]).abs() < 1e-12 * exact.m0);
            }
            assert!((cloud.second_moment(None) - exact.m2).abs() < 1e-12 * exact.m2);
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let cfg = SimConfig { particle_count: 100, ..Default::default() };
        let g = GridSpec::periodic(3, 16).unwrap();
        assert_eq!(sample_spray(&g, &cfg).unwrap(), sample_spray(&g, &cfg).unwrap());
        let other = SimConfig { seed: 2, ..cfg.clone() };
        assert_ne!(sample_spray(&g, &cfg).unwrap(), sample_spray(&g, &other).unwrap());
    }

    #[test]
    fn empty_spray_is_pure_navier_stokes() {
        let cfg = SimConfig { spray: SprayPreset::None, particle_count: 0, ..small_config() };
        let out = run_scenario(cfg).unwrap();
        for r in &out.records {
            assert_eq!((r.e_kinetic_spray, r.m0, r.mass_rho, r.dissipation_drag), (0.0, 0.0, 0.0, 0.0));
        }
        assert!(out.density.rho.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn limit_run_conserves_total_mass() {
        let out = run_scenario(small_config()).unwrap();
        let first = out.records[0].total_mass();
        for r in &out.records {
            assert!((r.total_mass() - first).abs() < 1e-10 * first);
        }
        assert!(out.summary.pass.volume && out.summary.pass.lemma && out.summary.pass.divergence);
    }

    #[test]
    fn bidisperse_without_fragmentation_keeps_species_volume() {
        let cfg = SimConfig { scenario: ScenarioKind::Bidisperse, tau: f64::INFINITY, ..small_config() };
        let out = run_scenario(cfg).unwrap();
        assert!(out.cloud.species.iter().all(|s| *s == Species::Large));
        let v0 = out.records[0].mass_f;
        assert!(out.records.iter().all(|r| (r.mass_f - v0).abs() < 1e-12 * v0));
    }

    #[test]
    fn bidisperse_merging_keeps_liquid_volume() {
        let cfg = SimConfig {
            scenario: ScenarioKind::Bidisperse,
            particle_count: 400,
            particle_budget: 1000,
            ..small_config()
        };
        let out = run_scenario(cfg).unwrap();
        assert!(out.summary.merges > 0);
        assert!(out.cloud.len() <= 1000);
        let v0 = out.records[0].mass_f;
        assert!(out.records.iter().all(|r| (r.mass_f - v0).abs() < 1e-12 * v0));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let a = run_scenario(small_config()).unwrap();
        let b = run_scenario(small_config()).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.cloud, b.cloud);
    }

    #[test]
    fn regularized_run_reports_remainders() {
        let cfg = SimConfig { scenario: ScenarioKind::Regularized, eps: 0.5, ..small_config() };
        let out = run_scenario(cfg).unwrap();
        assert!(out.records.iter().skip(1).any(|r| r.remainder_rate.iter().any(|v| *v != 0.0)));
        assert!(out.summary.pass.volume, "{:?}", out.summary);
    }

    #[test]
    fn equilibrated_small_droplets_have_zero_delta() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let mut cloud = ParticleCloud::new(2);
        cloud.push(&[1.0, 2.0], &[0.0, 0.0], 3.0, Species::Small);
        assert_eq!(relaxation_delta(&cloud, &VectorField::zeros(g)), 0.0);
    }

    #[test]
    fn sweep_rejects_unsorted_lists() {
        assert!(sweep_r2(&small_config(), &[0.1, 0.2]).is_err());
        assert!(sweep_r2(&small_config(), &[]).is_err());
    }

    #[test]
    fn single_member_sweep() {
        let res = sweep_r2(&small_config(), &[0.3]).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert!(res.delta_decreasing && res.mismatch_non_increasing && res.delta_slope.is_none());
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig { output_dir: Some(dir.path().to_path_buf()), snapshot_stride: 5, ..small_config() };
        run_scenario(cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert!(csv.starts_with("t,e_kinetic_spray"));
        assert_eq!(csv.lines().count(), 1 + 11);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert!(summary["pass"]["divergence"].as_bool().unwrap());
        assert!(summary["wall_time_s"].as_f64().is_some());
        assert!(dir.path().join("particles_000010.bin").exists());
    }
}
