//! Moments, conservation budgets, the velocity-moment interpolation
//! inequality, and Grönwall / blow-up comparison utilities.

use std::f64::consts::PI;
use std::io::Write;

use ode_solvers::{Dop853, OutputType, System, Vector1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, GridSpec, ScalarField, Spectral, VectorField};
use crate::kinetic::{deposit_with, MomentFields, ParticleCloud, TruncationSpec};

/// One row of the diagnostics table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// `½ Σ w·v|ξ|²` with `v` the droplet volume of the species.
    pub e_kinetic_spray: f64,
    /// `½∫(1+ρ)|u|²`.
    pub e_fluid: f64,
    /// `∫|∇u|²`.
    pub dissipation_visc: f64,
    /// `∫∫|u−ξ|²f`, species-weighted for two populations.
    pub dissipation_drag: f64,
    pub m0: f64,
    pub m1: [f64; 3],
    pub m2: f64,
    /// `Σ w·v·ξ + ∫(1+ρ)u`.
    pub total_momentum: [f64; 3],
    /// Liquid volume carried by particles.
    pub mass_f: f64,
    pub mass_rho: f64,
    pub div_residual: f64,
    /// Instantaneous integrands of the three regularization remainders.
    pub remainder_rate: [f64; 3],
    /// Spray kinetic energy removed by particle merging up to `t`.
    pub merge_loss: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 24] = [
        "t",
        "e_kinetic_spray",
        "e_fluid",
        "dissipation_visc",
        "dissipation_drag",
        "m0",
        "m1_x",
        "m1_y",
        "m1_z",
        "m2",
        "momentum_x",
        "momentum_y",
        "momentum_z",
        "mass_f",
        "mass_rho",
        "div_residual",
        "remainder_rate_1",
        "remainder_rate_2",
        "remainder_rate_3",
        "merge_loss",
        "energy",
        "mass_total",
        "momentum_norm",
        "dissipation_total",
    ];

    pub fn energy(&self) -> f64 {
        self.e_kinetic_spray + self.e_fluid
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_f + self.mass_rho
    }

    pub fn values(&self) -> [f64; 24] {
        let p = self.total_momentum;
        [
            self.t,
            self.e_kinetic_spray,
            self.e_fluid,
            self.dissipation_visc,
            self.dissipation_drag,
            self.m0,
            self.m1[0],
            self.m1[1],
            self.m1[2],
            self.m2,
            p[0],
            p[1],
            p[2],
            self.mass_f,
            self.mass_rho,
            self.div_residual,
            self.remainder_rate[0],
            self.remainder_rate[1],
            self.remainder_rate[2],
            self.merge_loss,
            self.energy(),
            self.total_mass(),
            (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt(),
            self.dissipation_visc + self.dissipation_drag,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: self.t, what: "diagnostics record".into() });
        }
        if self.e_kinetic_spray < 0.0 || self.e_fluid < 0.0 {
            return Err(Error::InvalidField("negative energy in diagnostics".into()));
        }
        Ok(())
    }
}

pub fn csv_header() -> String {
    DiagnosticsRecord::COLUMNS.join(",")
}

pub fn csv_row(rec: &DiagnosticsRecord) -> String {
    rec.values().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

pub fn write_csv(out: &mut impl Write, records: &[DiagnosticsRecord]) -> Result<()> {
    writeln!(out, "{}", csv_header())?;
    for r in records {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}

/// Gridded `m_α` and global `M_α = Σ w|ξ|^α` of a cloud.
pub fn compute_moments(cloud: &ParticleCloud, grid: &GridSpec, alpha: f64) -> Result<(ScalarField, f64)> {
    if !(alpha >= 0.0) {
        return Err(Error::Parameter(format!("moment order must be non-negative, got {alpha}")));
    }
    let weight = |p: usize| cloud.speed_sq(p).sqrt().powf(alpha);
    let fields = deposit_with(cloud, grid, weight);
    let total = compensated_sum((0..cloud.len()).map(|p| cloud.w[p] * weight(p)));
    Ok((fields.m0, total))
}

/// `∫(|u|²m0 − 2u·m1 + m2)`: the drag dissipation of gridded moments. With
/// cloud-in-cell moments this equals the exact discrete exchange.
pub fn drag_dissipation(u: &VectorField, moments: &MomentFields) -> f64 {
    let grid = u.grid;
    let mut acc = 0.0;
    for p in 0..grid.npts() {
        let mut uu = 0.0;
        let mut um = 0.0;
        for a in 0..grid.dim {
            let v = u.components[a][p];
            uu += v * v;
            um += v * moments.m1.components[a][p];
        }
        acc += uu * moments.m0.values[p] - 2.0 * um + moments.m2.values[p];
    }
    acc * grid.cell_volume()
}

/// Instantaneous integrands of the regularization remainders
/// `(3/2)∫∫f|u|²(1−γ_ε)`, `2∫∫fξ·u(γ_ε−1)` and `∫∫fξ·(u⋆φ_ε − u)`.
pub fn remainder_rates(sp: &Spectral, u: &VectorField, cloud: &ParticleCloud, eps: f64) -> Result<[f64; 3]> {
    let grid = *sp.grid();
    grid.ensure_same(&u.grid)?;
    let trunc = TruncationSpec::new(eps)?;
    let cut = deposit_with(cloud, &grid, |p| 1.0 - trunc.weight(cloud.velocity(p)));
    let full = deposit_with(cloud, &grid, |_| 1.0);
    let smooth = sp.mollify(u, eps)?;
    let dv = grid.cell_volume();
    let mut r = [0.0; 3];
    for p in 0..grid.npts() {
        for a in 0..grid.dim {
            let v = u.components[a][p];
            r[0] += v * v * cut.m0.values[p];
            r[1] -= v * cut.m1.components[a][p];
            r[2] += (smooth.components[a][p] - v) * full.m1.components[a][p];
        }
    }
    Ok([1.5 * r[0] * dv, 2.0 * r[1] * dv, r[2] * dv])
}

fn trapezoid_cumulative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    for i in 0..t.len() {
        if i > 0 {
            acc += 0.5 * (t[i] - t[i - 1]) * (y[i] + y[i - 1]);
        }
        out.push(acc);
    }
    out
}

fn check_monotone(records: &[DiagnosticsRecord]) -> Result<()> {
    if records.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::Parameter("diagnostic time stamps must increase".into()));
    }
    Ok(())
}

/// Cumulative remainders `(R¹, R², R³)(t)` by trapezoidal quadrature of
/// the recorded integrands.
pub fn regularization_remainder(records: &[DiagnosticsRecord]) -> Result<Vec<[f64; 3]>> {
    check_monotone(records)?;
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let cols: Vec<Vec<f64>> = (0..3)
        .map(|k| trapezoid_cumulative(&t, &records.iter().map(|r| r.remainder_rate[k]).collect::<Vec<_>>()))
        .collect();
    Ok((0..t.len()).map(|i| [cols[0][i], cols[1][i], cols[2][i]]).collect())
}

/// `E(t) + L(t) + ∫₀ᵗ(‖∇u‖² + c·D_drag) − E(0) − R(t)` where `L` is the
/// merge loss and `R` the summed regularization remainder (zero when no
/// remainder was recorded).
pub fn energy_budget(records: &[DiagnosticsRecord], drag_coefficient: f64) -> Result<Vec<f64>> {
    check_monotone(records)?;
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let diss: Vec<f64> =
        records.iter().map(|r| r.dissipation_visc + drag_coefficient * r.dissipation_drag).collect();
    let cum = trapezoid_cumulative(&t, &diss);
    let rem = regularization_remainder(records)?;
    let e0 = records[0].energy();
    Ok(records
        .iter()
        .zip(cum.iter().zip(&rem))
        .map(|(r, (c, q))| r.energy() + r.merge_loss + c - e0 - (q[0] + q[1] + q[2]))
        .collect())
}

/// `|P(t) − P(0)|` for the total momentum.
pub fn momentum_budget(records: &[DiagnosticsRecord]) -> Result<Vec<f64>> {
    check_monotone(records)?;
    let Some(first) = records.first() else { return Ok(Vec::new()) };
    Ok(records
        .iter()
        .map(|r| {
            (0..3).map(|a| (r.total_momentum[a] - first.total_momentum[a]).powi(2)).sum::<f64>().sqrt()
        })
        .collect())
}

/// `(M0f + ∫ρ)(t) − (M0f + ∫ρ)(0)`.
pub fn mass_budget(records: &[DiagnosticsRecord]) -> Result<Vec<f64>> {
    check_monotone(records)?;
    let Some(first) = records.first() else { return Ok(Vec::new()) };
    Ok(records.iter().map(|r| r.total_mass() - first.total_mass()).collect())
}

/// Budget tolerance `C·dt·t`.
pub fn budget_tolerance(c: f64, dt: f64, t: f64) -> f64 {
    c * dt * t
}

/// Volume of the unit ball in `dim` dimensions.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => PI.powf(dim as f64 / 2.0) / libm_gamma(dim as f64 / 2.0 + 1.0),
    }
}

fn libm_gamma(x: f64) -> f64 {
    // Only reached for dim ∉ {2,3}; integer and half-integer arguments.
    if x == 1.0 || x == 2.0 {
        return 1.0;
    }
    if (x - 0.5).abs() < 1e-12 {
        return PI.sqrt();
    }
    (x - 1.0) * libm_gamma(x - 1.0)
}

/// Non-negative radial density, constant on shells `r_{j−1} < |ξ| ≤ r_j`
/// (with `r_{−1} = 0`) and zero outside the last radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialDensity {
    pub dim: usize,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialDensity {
    pub fn new(dim: usize, radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        if radii.len() != values.len() {
            return Err(Error::Parameter("radii and values differ in length".into()));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("radii must be positive and increasing".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("density values must be finite and non-negative".into()));
        }
        Ok(RadialDensity { dim, radii, values })
    }

    /// Indicator of the unit ball.
    pub fn unit_ball(dim: usize) -> Self {
        RadialDensity { dim, radii: vec![1.0], values: vec![1.0] }
    }

    /// Domain-averaged radial profile of a cloud's velocity distribution,
    /// `h(|ξ|) = Σ_shell w / (|Ω|·|shell|)`, on `bins` equal shells.
    pub fn from_cloud(cloud: &ParticleCloud, domain_volume: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(domain_volume > 0.0) {
            return Err(Error::Parameter("need at least one bin and a positive volume".into()));
        }
        let dim = cloud.dim;
        let rmax = (0..cloud.len()).map(|p| cloud.speed_sq(p).sqrt()).fold(0.0, f64::max);
        let rmax = if rmax > 0.0 { rmax * (1.0 + 1e-12) } else { 1.0 };
        let dr = rmax / bins as f64;
        let mut mass = vec![0.0; bins];
        for p in 0..cloud.len() {
            let s = cloud.speed_sq(p).sqrt();
            let b = ((s / dr) as usize).min(bins - 1);
            mass[b] += cloud.w[p];
        }
        let omega = unit_ball_volume(dim);
        let radii: Vec<f64> = (1..=bins).map(|j| j as f64 * dr).collect();
        let values = (0..bins)
            .map(|j| {
                let lo = j as f64 * dr;
                let shell = omega * (radii[j].powi(dim as i32) - lo.powi(dim as i32));
                mass[j] / (domain_volume * shell)
            })
            .collect();
        RadialDensity::new(dim, radii, values)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Exact `m_α = ∫|ξ|^α h(ξ) dξ`.
    pub fn moment(&self, alpha: f64) -> f64 {
        let d = self.dim as f64;
        let surface = d * unit_ball_volume(self.dim);
        let mut prev = 0.0;
        let mut acc = 0.0;
        for (r, c) in self.radii.iter().zip(&self.values) {
            acc += c * surface * (r.powf(alpha + d) - prev) / (alpha + d);
            prev = r.powf(alpha + d);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl LemmaCheck {
    /// `1 − lhs/rhs`; non-negative when the inequality holds.
    pub fn margin(&self) -> f64 {
        if self.rhs == 0.0 {
            if self.lhs == 0.0 { 0.0 } else { f64::NEG_INFINITY }
        } else {
            1.0 - self.lhs / self.rhs
        }
    }
}

/// `m_α h ≤ (ω_d‖h‖∞ + 1)(m_γ h)^{(α+d)/(γ+d)}` for `0 ≤ α < γ`.
pub fn moment_lemma_check(h: &RadialDensity, alpha: f64, gamma: f64) -> Result<LemmaCheck> {
    if !(alpha >= 0.0) || !(gamma > alpha) {
        return Err(Error::Parameter(format!("need 0 ≤ α < γ, got α={alpha}, γ={gamma}")));
    }
    let d = h.dim as f64;
    let lhs = h.moment(alpha);
    let rhs = (unit_ball_volume(h.dim) * h.sup() + 1.0) * h.moment(gamma).powf((alpha + d) / (gamma + d));
    Ok(LemmaCheck { lhs, rhs, pass: lhs <= rhs * (1.0 + 1e-9) })
}

/// Scalar comparison problem `z' = f(z)`, `z(0) = initial`, for a convex
/// non-decreasing `f`.
pub struct GronwallProblem {
    pub initial: f64,
    rate: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for GronwallProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GronwallProblem").field("initial", &self.initial).finish_non_exhaustive()
    }
}

impl GronwallProblem {
    pub fn new(initial: f64, rate: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !initial.is_finite() {
            return Err(Error::Parameter("initial value must be finite".into()));
        }
        Ok(GronwallProblem { initial, rate: Box::new(rate) })
    }

    /// `z' = A z^{γ+1}`, `z(0) = A`.
    pub fn power_law(a: f64, gamma: f64) -> Result<Self> {
        if !(a > 0.0 && gamma > 0.0 && a.is_finite() && gamma.is_finite()) {
            return Err(Error::Parameter(format!("need A, γ > 0, got A={a}, γ={gamma}")));
        }
        Self::new(a, move |z| a * z.abs().powf(gamma + 1.0))
    }

    pub fn rate(&self, z: f64) -> f64 {
        (self.rate)(z)
    }
}

const BLOWUP_LEVEL: f64 = 1e12;

struct Scalar<'a> {
    problem: &'a GronwallProblem,
    last: (f64, f64),
    blew_up: bool,
}

impl System<f64, Vector1<f64>> for Scalar<'_> {
    fn system(&self, _t: f64, y: &Vector1<f64>, dy: &mut Vector1<f64>) {
        dy[0] = self.problem.rate(y[0]);
    }

    fn solout(&mut self, t: f64, y: &Vector1<f64>, _dy: &Vector1<f64>) -> bool {
        self.last = (t, y[0]);
        if !(y[0].abs() <= BLOWUP_LEVEL) {
            self.blew_up = true;
        }
        self.blew_up
    }
}

/// Integrates from `(t0, z0)` to `t1`, stopping early once `|z|` exceeds
/// the blow-up level or the step size underflows. Returns the last accepted `(t, z)` and whether it
/// stopped early.
fn integrate_scalar(problem: &GronwallProblem, t0: f64, z0: f64, t1: f64) -> Result<((f64, f64), bool)> {
    if t1 <= t0 {
        return Ok(((t0, z0), false));
    }
    let sys = Scalar { problem, last: (t0, z0), blew_up: false };
    let mut solver = Dop853::new(sys, t0, t1, t1 - t0, Vector1::new(z0), 1e-13, 1e-14);
    solver.set_output(OutputType::Sparse);
    let outcome = solver.integrate();
    let (t_last, z_last) = {
        let (ts, ys) = solver.results().get();
        match (ts.last(), ys.last()) {
            (Some(t), Some(y)) => (*t, y[0]),
            _ => (t0, z0),
        }
    };
    match outcome {
        Ok(_) => Ok(((t_last, z_last), !(z_last.abs() <= BLOWUP_LEVEL))),
        // Near a finite-time singularity the step size underflows relative
        // to t before z reaches the blow-up level.
        Err(ode_solvers::dop_shared::IntegrationError::StepSizeUnderflow { .. }) => Ok(((t_last, z_last), true)),
        Err(e) => Err(Error::Ode(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallReport {
    pub pass: bool,
    /// Largest `a(t)/z(t)` over compared samples.
    pub max_ratio: f64,
    pub compared: usize,
    /// Time at which the comparison solution left the representable range,
    /// if it did so before the last sample.
    pub blowup_time: Option<f64>,
}

/// Checks `a(t) ≤ z(t)(1+1e−8)` at every sample `(t, a)` with `t ≥ 0`
/// increasing and `t[0] = 0`, while `z` stays finite.
pub fn gronwall_compare(problem: &GronwallProblem, samples: &[(f64, f64)]) -> Result<GronwallReport> {
    if samples.windows(2).any(|w| w[1].0 < w[0].0) || samples.first().is_some_and(|s| s.0 < 0.0) {
        return Err(Error::Parameter("sample times must be non-negative and non-decreasing".into()));
    }
    let mut t = 0.0;
    let mut z = problem.initial;
    let mut pass = true;
    let mut max_ratio = f64::NEG_INFINITY;
    let mut compared = 0;
    let mut blowup_time = None;
    for &(ts, a) in samples {
        let ((t_new, z_new), blew) = integrate_scalar(problem, t, z, ts)?;
        if blew {
            blowup_time = Some(t_new);
            break;
        }
        t = ts;
        z = z_new;
        compared += 1;
        if a > z * (1.0 + 1e-8) + 1e-300 {
            pass = false;
        }
        if z != 0.0 {
            max_ratio = max_ratio.max(a / z);
        }
    }
    Ok(GronwallReport { pass, max_ratio, compared, blowup_time })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupReport {
    /// `1/(γA^{γ+1})`.
    pub t_bound: f64,
    /// Last integrated time before the solution left the resolvable range.
    pub t_stop: f64,
    pub z_stop: f64,
    /// `t_stop + ∫_{z_stop}^∞ dz/(A z^{γ+1})`.
    pub t_numeric: f64,
}

/// Existence-time bound for `z' = A z^{γ+1}`, `z(0) = A`, against its
/// numerically integrated blow-up time.
pub fn blowup_time_bound(a: f64, gamma: f64) -> Result<BlowupReport> {
    let problem = GronwallProblem::power_law(a, gamma)?;
    let t_bound = 1.0 / (gamma * a.powf(gamma + 1.0));
    let horizon = 4.0 * t_bound;
    let ((t_stop, z_stop), blew) = integrate_scalar(&problem, 0.0, a, horizon)?;
    if !blew {
        return Err(Error::Ode(format!("no blow-up before t = {horizon}")));
    }
    let tail = z_stop.powf(-gamma) / (a * gamma);
    Ok(BlowupReport { t_bound, t_stop, z_stop, t_numeric: t_stop + tail })
}
