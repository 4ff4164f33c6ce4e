//! Standalone property suites: spectral projector, velocity-moment
//! inequality, Grönwall comparison and blow-up times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{blowup_time_bound, gronwall_compare, moment_lemma_check, GronwallProblem, RadialDensity};
use crate::error::Result;
use crate::grid::{GridSpec, Spectral, VectorField};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub fields: usize,
    /// `max ‖P(Pv) − Pv‖∞`.
    pub idempotence: f64,
    /// `max |⟨Pv, w⟩ − ⟨v, Pw⟩| / (‖v‖‖w‖)`.
    pub symmetry: f64,
    /// `max ‖div Pv‖∞`.
    pub divergence: f64,
    pub seconds: f64,
}

impl ProjectionReport {
    pub fn pass(&self, tol: f64) -> bool {
        self.idempotence <= tol && self.symmetry <= tol && self.divergence <= tol
    }
}

fn random_field(grid: GridSpec, rng: &mut impl Rng) -> VectorField {
    let comps = (0..grid.dim).map(|_| (0..grid.npts()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    VectorField { grid, components: comps }
}

pub fn projection_suite(dim: usize, n: usize, fields: usize, seed: u64) -> Result<ProjectionReport> {
    let start = std::time::Instant::now();
    let grid = GridSpec::periodic(dim, n)?;
    let sp = Spectral::new(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ProjectionReport { fields, ..Default::default() };
    for _ in 0..fields {
        let v = random_field(grid, &mut rng);
        let w = random_field(grid, &mut rng);
        let pv = sp.leray_project(&v)?;
        let pw = sp.leray_project(&w)?;
        let ppv = sp.leray_project(&pv)?;
        rep.idempotence = rep.idempotence.max(ppv.sub(&pv).max_abs());
        let asym = (pv.dot(&w) - v.dot(&pw)).abs() / (v.l2_norm() * w.l2_norm());
        rep.symmetry = rep.symmetry.max(asym);
        let div = sp.divergence(&pv)?;
        rep.divergence = rep.divergence.max(div.values.iter().fold(0.0, |a, x| a.max(x.abs())));
    }
    rep.seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaSuiteReport {
    pub cases: usize,
    pub failures: usize,
    /// Smallest `1 − lhs/rhs` over all cases.
    pub min_margin: f64,
    pub ball_lhs: f64,
    pub ball_rhs: f64,
    pub seconds: f64,
}

/// A random piecewise-constant radial density with 1 to 8 shells.
pub fn random_radial_density(dim: usize, rng: &mut impl Rng) -> RadialDensity {
    let shells = rng.gen_range(1..=8);
    let mut r = 0.0;
    let mut radii = Vec::with_capacity(shells);
    let mut values = Vec::with_capacity(shells);
    for _ in 0..shells {
        r += rng.gen_range(0.05..1.0);
        radii.push(r);
        values.push(if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..5.0) });
    }
    RadialDensity { dim, radii, values }
}

/// Unit ball with `(α, γ) = (0, 2)` plus `cases` random densities and exponents
/// `0 ≤ α < γ ≤ 6`.
pub fn lemma_suite(dim: usize, cases: usize, seed: u64) -> Result<LemmaSuiteReport> {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = moment_lemma_check(&RadialDensity::unit_ball(dim), 0.0, 2.0)?;
    let mut failures = usize::from(!ball.pass);
    let mut min_margin = ball.margin();
    for _ in 0..cases {
        let h = random_radial_density(dim, &mut rng);
        let alpha = rng.gen_range(0.0..4.0);
        let gamma = alpha + rng.gen_range(0.05..2.0);
        let c = moment_lemma_check(&h, alpha, gamma)?;
        if !c.pass {
            failures += 1;
        }
        min_margin = min_margin.min(c.margin());
    }
    Ok(LemmaSuiteReport {
        cases: cases + 1,
        failures,
        min_margin,
        ball_lhs: ball.lhs,
        ball_rhs: ball.rhs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupCase {
    pub a: f64,
    pub gamma: f64,
    pub t_bound: f64,
    pub t_numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallSuiteReport {
    pub cases: Vec<BlowupCase>,
    /// Cases with `T_numeric < T_bound(1 − 1e−6)`.
    pub failures: usize,
    pub closed_form_error: f64,
    pub comparison_pass: bool,
    pub seconds: f64,
}

/// Blow-up times for `(1,1)`, `(1,3)` and `cases` random `A ∈ [0.5,2]`,
/// `γ ∈ [0.25,4]`, plus comparison checks on exact and sub-solutions.
pub fn gronwall_suite(cases: usize, seed: u64) -> Result<GronwallSuiteReport> {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![(1.0, 1.0), (1.0, 3.0)];
    for _ in 0..cases {
        params.push((rng.gen_range(0.5..2.0), rng.gen_range(0.25..4.0)));
    }
    let mut out = Vec::with_capacity(params.len());
    let mut failures = 0;
    for (a, gamma) in params {
        let r = blowup_time_bound(a, gamma)?;
        if r.t_numeric < r.t_bound * (1.0 - 1e-6) {
            failures += 1;
        }
        out.push(BlowupCase { a, gamma, t_bound: r.t_bound, t_numeric: r.t_numeric });
    }
    let closed_form_error = (out[0].t_numeric - 1.0).abs().max((out[1].t_numeric - 1.0 / 3.0).abs());

    // z' = z², z(0) = 1/2 has z = 1/(2 − t); a = z and a = z/2 must both pass.
    let p = GronwallProblem::new(0.5, |z| z * z)?;
    let exact: Vec<(f64, f64)> = (0..19).map(|i| (0.1 * i as f64, 1.0 / (2.0 - 0.1 * i as f64))).collect();
    let half: Vec<(f64, f64)> = exact.iter().map(|(t, z)| (*t, 0.5 * z)).collect();
    let comparison_pass = gronwall_compare(&p, &exact)?.pass && gronwall_compare(&p, &half)?.pass;
    Ok(GronwallSuiteReport {
        cases: out,
        failures,
        closed_form_error,
        comparison_pass,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_projection_suite() {
        let r = projection_suite(2, 16, 5, 1).unwrap();
        assert!(r.pass(1e-12), "{r:?}");
    }

    #[test]
    fn small_lemma_suite() {
        let r = lemma_suite(3, 50, 3).unwrap();
        assert_eq!(r.failures, 0);
        assert!(r.min_margin >= 0.0);
        let r = lemma_suite(2, 50, 3).unwrap();
        assert_eq!(r.failures, 0);
    }

    #[test]
    fn small_gronwall_suite() {
        let r = gronwall_suite(5, 9).unwrap();
        assert_eq!(r.failures, 0);
        assert!(r.closed_form_error < 1e-6 && r.comparison_pass);
    }
}
