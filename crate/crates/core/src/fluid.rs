//! Variable-density incompressible Navier–Stokes with drag retroaction.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, ScalarField, Spectral, VectorField};

/// Divergence-free velocity at time `t`.
#[derive(Debug, Clone)]
pub struct FluidState {
    pub u: VectorField,
    pub t: f64,
}

/// Velocity moments of the spray on the grid: `m0 = ∫f dξ`, `m1 = ∫ξ f dξ`.
#[derive(Debug, Clone)]
pub struct DragField {
    pub m0: ScalarField,
    pub m1: VectorField,
}

impl DragField {
    pub fn zeros(grid: crate::grid::GridSpec) -> Self {
        DragField { m0: ScalarField::zeros(grid), m1: VectorField::zeros(grid) }
    }
}

/// `coupling · (m1 − u m0)` pointwise.
pub fn drag_force(u: &VectorField, drag: &DragField, coupling: f64) -> Result<VectorField> {
    u.grid.ensure_same(&drag.m0.grid)?;
    u.grid.ensure_same(&drag.m1.grid)?;
    let mut out = VectorField::zeros(u.grid);
    for (a, comp) in out.components.iter_mut().enumerate() {
        let (uc, m1c) = (&u.components[a], &drag.m1.components[a]);
        for (i, v) in comp.iter_mut().enumerate() {
            *v = coupling * (m1c[i] - uc[i] * drag.m0.values[i]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct NsParams {
    pub nu: f64,
    /// Mollify the advecting velocity (regularized system).
    pub mollifier_eps: Option<f64>,
    /// Coefficient in front of the drag retroaction.
    pub coupling: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for NsParams {
    fn default() -> Self {
        NsParams { nu: 1.0, mollifier_eps: None, coupling: 2.0, cg_tol: 1e-12, cg_max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NsStepReport {
    pub cg_iters: usize,
    pub div_residual: f64,
    /// `E(t+dt) − E(t) − dt·P(t)` with `P` the instantaneous power of the
    /// right-hand side at frozen density; `O(dt²)`.
    pub energy_defect: f64,
}

/// `∫(1+ρ)u`.
pub fn weighted_momentum(u: &VectorField, rho: &ScalarField) -> [f64; 3] {
    let mut out = [0.0; 3];
    let dv = u.grid.cell_volume();
    for (a, c) in u.components.iter().enumerate() {
        out[a] = compensated_sum(c.iter().zip(&rho.values).map(|(v, r)| (1.0 + r) * v)) * dv;
    }
    out
}

/// `∫ drag_force`.
pub fn drag_force_integral(u: &VectorField, drag: &DragField, coupling: f64) -> Result<[f64; 3]> {
    let f = drag_force(u, drag, coupling)?;
    let mut out = [0.0; 3];
    for (a, c) in f.components.iter().enumerate() {
        out[a] = compensated_sum(c.iter().copied()) * u.grid.cell_volume();
    }
    Ok(out)
}

/// Adds the constant `c` to `u` so that `∫(1+ρ)(u+c) = target + ∫inflow·(u+c)`,
/// where `inflow` is the density added during the step. A constant shift keeps
/// `u` divergence-free and de-aliased. Returns `c`.
pub fn restore_momentum(u: &mut VectorField, rho: &ScalarField, inflow: &ScalarField, target: [f64; 3]) -> [f64; 3] {
    let dv = u.grid.cell_volume();
    let carried = compensated_sum(inflow.values.iter().copied()) * dv;
    let denom = rho.integral() + u.grid.volume() - carried;
    let current = weighted_momentum(u, rho);
    let mut shift = [0.0; 3];
    for (a, comp) in u.components.iter_mut().enumerate() {
        let brought = compensated_sum(comp.iter().zip(&inflow.values).map(|(v, s)| v * s)) * dv;
        let c = (target[a] + brought - current[a]) / denom;
        for v in comp.iter_mut() {
            *v += c;
        }
        shift[a] = c;
    }
    shift
}

/// `max|u|·dt/h`.
pub fn cfl_number(u: &VectorField, dt: f64) -> f64 {
    u.max_abs() * dt / u.grid.h()
}

pub(crate) fn check_cfl(u: &VectorField, dt: f64) -> Result<()> {
    let cfl = cfl_number(u, dt);
    if cfl > 1.0 {
        let umax = u.max_abs();
        return Err(Error::Cfl { cfl, suggested_dt: u.grid.h() / umax });
    }
    Ok(())
}

/// `½∫(1+ρ)|u|²`.
pub fn weighted_energy(u: &VectorField, rho: &ScalarField) -> f64 {
    let dv = u.grid.cell_volume();
    let mut e = 0.0;
    for i in 0..u.grid.npts() {
        let s: f64 = u.components.iter().map(|c| c[i] * c[i]).sum();
        e += (1.0 + rho.values[i]) * s;
    }
    0.5 * e * dv
}

/// `∫|∇u|²` evaluated spectrally.
pub fn viscous_dissipation(sp: &Spectral, u: &VectorField) -> f64 {
    let k2 = sp.k2();
    let vol = u.grid.volume();
    u.components
        .iter()
        .map(|c| {
            let coeffs = sp.forward(c);
            coeffs.iter().zip(k2).map(|(v, k)| v.norm_sqr() * k).sum::<f64>()
        })
        .sum::<f64>()
        * vol
}

/// `−(a·∇)u`, de-aliased by the 2/3 rule.
pub fn convection(sp: &Spectral, advecting: &VectorField, u: &VectorField) -> VectorField {
    let grid = u.grid;
    let dim = grid.dim;
    let npts = grid.npts();
    let kvec = sp.kvec();
    let mut out = VectorField::zeros(grid);
    for i in 0..dim {
        let coeffs = sp.forward(&u.components[i]);
        let mut acc = vec![0.0; npts];
        for j in 0..dim {
            let d: Vec<Complex64> = coeffs
                .iter()
                .enumerate()
                .map(|(m, c)| c * Complex64::new(0.0, kvec[m][j]))
                .collect();
            let dj = sp.inverse(&d);
            let aj = &advecting.components[j];
            for p in 0..npts {
                acc[p] -= aj[p] * dj[p];
            }
        }
        let mut s = sp.forward(&acc);
        sp.dealias_coeffs(&mut s);
        out.components[i] = sp.inverse(&s);
    }
    out
}

/// One step of the momentum equation
/// `(1+ρ)[∂ₜu + (u⋆)·∇u] + ∇p − νΔu = coupling·(m1 − u m0)`, `div u = 0`.
///
/// Explicit convection and drag, pointwise division by `1+ρ`, the
/// `(1+ρ)`-weighted projection, and an exact integrating factor for
/// `νΔu/(1+ρ̄)`. The result is de-aliased and Leray-projected.
pub fn ns_step(
    sp: &Spectral,
    state: &mut FluidState,
    rho: &ScalarField,
    drag: &DragField,
    dt: f64,
    params: &NsParams,
) -> Result<NsStepReport> {
    let grid = *sp.grid();
    grid.ensure_same(&state.u.grid)?;
    grid.ensure_same(&rho.grid)?;
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be non-negative, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(NsStepReport { div_residual: sp.divergence_residual(&state.u), ..Default::default() });
    }
    check_cfl(&state.u, dt)?;
    let u = &state.u;
    let npts = grid.npts();

    let advecting = match params.mollifier_eps {
        Some(eps) => sp.mollify(u, eps)?,
        None => u.clone(),
    };
    let conv = convection(sp, &advecting, u);
    let lap = sp.vector_laplacian(u)?;
    let force = drag_force(u, drag, params.coupling)?;

    let rho_bar = rho.mean();
    let beta: Vec<f64> = rho.values.iter().map(|r| 1.0 / (1.0 + r)).collect();
    let stiff = params.nu / (1.0 + rho_bar);

    // Full acceleration before projection, and its explicit part.
    let mut full = VectorField::zeros(grid);
    let mut explicit = VectorField::zeros(grid);
    for a in 0..grid.dim {
        for p in 0..npts {
            let visc = params.nu * lap.components[a][p];
            let f = conv.components[a][p] + beta[p] * (visc + force.components[a][p]);
            full.components[a][p] = f;
            explicit.components[a][p] = f - stiff * lap.components[a][p];
        }
    }

    let uniform = rho.max() - rho.min() <= 1e-14 * (1.0 + rho.max().abs());
    let (projected, cg_iters) = if uniform {
        (sp.leray_project(&explicit)?, 0)
    } else {
        sp.weighted_project(&explicit, &beta, params.cg_tol, params.cg_max_iter)?
    };

    let e0 = weighted_energy(u, rho);
    let mut power = 0.0;
    for a in 0..grid.dim {
        for p in 0..npts {
            power += (1.0 + rho.values[p]) * u.components[a][p] * full.components[a][p];
        }
    }
    power *= grid.cell_volume();

    let k2 = sp.k2();
    let mut coeffs: Vec<Vec<Complex64>> = (0..grid.dim)
        .map(|a| {
            let mut v = u.components[a].clone();
            for (x, d) in v.iter_mut().zip(&projected.components[a]) {
                *x += dt * d;
            }
            let mut c = sp.forward(&v);
            for (m, cm) in c.iter_mut().enumerate() {
                *cm *= (-stiff * k2[m] * dt).exp();
            }
            sp.dealias_coeffs(&mut c);
            c
        })
        .collect();
    sp.project_coeffs(&mut coeffs);
    let components: Vec<Vec<f64>> = coeffs.iter().map(|c| sp.inverse(c)).collect();
    let new_u = VectorField { grid, components };
    new_u.check_finite().map_err(|_| Error::NonFinite {
        t: state.t + dt,
        what: "velocity after fluid step".into(),
    })?;

    let e1 = weighted_energy(&new_u, rho);
    state.u = new_u;
    state.t += dt;
    Ok(NsStepReport {
        cg_iters,
        div_residual: sp.divergence_residual(&state.u),
        energy_defect: e1 - e0 - dt * power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components =
            (0..grid.dim).map(|_| (0..grid.npts()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        VectorField { grid, components }
    }

    #[test]
    fn drag_vanishes_at_equilibrium() {
        let g = GridSpec::periodic(2, 8).unwrap();
        let u = random_field(g, 1);
        let m0 = ScalarField::constant(g, 0.7);
        let mut m1 = u.clone();
        for c in m1.components.iter_mut() {
            for v in c.iter_mut() {
                *v *= 0.7;
            }
        }
        let f = drag_force(&u, &DragField { m0, m1 }, 2.0).unwrap();
        assert!(f.max_abs() < 1e-15);
    }

    #[test]
    fn drag_coefficient_two() {
        let g = GridSpec::periodic(3, 8).unwrap();
        let u = VectorField::zeros(g);
        let drag = DragField {
            m0: ScalarField::constant(g, 1.0),
            m1: VectorField::constant(g, &[1.0, 0.0, 0.0]),
        };
        let f = drag_force(&u, &drag, 2.0).unwrap();
        assert!(f.components[0].iter().all(|v| *v == 2.0));
        assert!(f.components[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn drag_matches_pointwise_loop() {
        let g = GridSpec::periodic(3, 8).unwrap();
        let u = random_field(g, 2);
        let m1 = random_field(g, 3);
        let m0 = ScalarField { grid: g, values: random_field(g, 4).components[0].clone() };
        let f = drag_force(&u, &DragField { m0: m0.clone(), m1: m1.clone() }, 1.3).unwrap();
        for i in 0..g.npts() {
            for a in 0..3 {
                let oracle = 1.3 * (m1.components[a][i] - u.components[a][i] * m0.values[i]);
                assert!((f.components[a][i] - oracle).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn drag_grid_mismatch() {
        let g = GridSpec::periodic(2, 8).unwrap();
        let h = GridSpec::periodic(2, 16).unwrap();
        assert!(matches!(
            drag_force(&VectorField::zeros(g), &DragField::zeros(h), 2.0),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn zero_dt_is_identity() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let u = sp.leray_project(&random_field(g, 5)).unwrap();
        let mut st = FluidState { u: u.clone(), t: 0.0 };
        ns_step(&sp, &mut st, &ScalarField::zeros(g), &DragField::zeros(g), 0.0, &NsParams::default())
            .unwrap();
        assert_eq!(st.u, u);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let u = VectorField::from_fn(g, |x| [x[1].sin() * 10.0, 0.0, 0.0]);
        let mut st = FluidState { u, t: 0.0 };
        let r = ns_step(&sp, &mut st, &ScalarField::zeros(g), &DragField::zeros(g), 0.1, &NsParams::default());
        assert!(matches!(r, Err(Error::Cfl { .. })));
    }

    #[test]
    fn shear_mode_decays_exactly() {
        let g = GridSpec::periodic(3, 32).unwrap();
        let sp = Spectral::new(g).unwrap();
        let u = VectorField::from_fn(g, |x| [x[1].sin(), 0.0, 0.0]);
        let e0 = u.norm_sq();
        let mut st = FluidState { u, t: 0.0 };
        let rho = ScalarField::zeros(g);
        let drag = DragField::zeros(g);
        for _ in 0..100 {
            ns_step(&sp, &mut st, &rho, &drag, 1e-3, &NsParams::default()).unwrap();
        }
        let ratio = st.u.norm_sq() / e0;
        assert!((ratio - (-0.2f64).exp()).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn energy_non_increasing_without_spray() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let u0 = sp.dealias(&sp.leray_project(&random_field(g, 11)).unwrap());
        let mut st = FluidState { u: u0, t: 0.0 };
        let rho = ScalarField::zeros(g);
        let drag = DragField::zeros(g);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut e = st.u.norm_sq();
        for _ in 0..100 {
            let dt = rng.gen_range(1e-4..2e-2);
            let rep = ns_step(&sp, &mut st, &rho, &drag, dt, &NsParams::default()).unwrap();
            assert!(rep.div_residual < 1e-10);
            let e1 = st.u.norm_sq();
            assert!(e1 <= e * (1.0 + 1e-13), "{e1} > {e}");
            e = e1;
        }
    }

    #[test]
    fn variable_density_step_stays_divergence_free() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let u0 = VectorField::from_fn(g, |x| {
            [x[0].sin() * x[1].cos() * x[2].cos(), -x[0].cos() * x[1].sin() * x[2].cos(), 0.0]
        });
        let mut st = FluidState { u: u0, t: 0.0 };
        let rho = ScalarField::from_fn(g, |x| 0.5 + 0.3 * (x[0] - x[2]).cos());
        let drag = DragField {
            m0: ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[1].sin()),
            m1: VectorField::from_fn(g, |x| [0.2, x[0].cos(), 0.0]),
        };
        for _ in 0..5 {
            let rep = ns_step(&sp, &mut st, &rho, &drag, 1e-3, &NsParams::default()).unwrap();
            assert!(rep.div_residual < 1e-10, "{}", rep.div_residual);
            assert!(rep.cg_iters > 0);
        }
    }

    #[test]
    fn energy_defect_is_second_order() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let u0 = VectorField::from_fn(g, |x| [x[1].sin() + 0.5 * (x[0] + x[1]).cos(), -0.5 * (x[0] + x[1]).cos(), 0.0]);
        let u0 = sp.leray_project(&u0).unwrap();
        let rho = ScalarField::from_fn(g, |x| 0.4 + 0.2 * x[0].sin());
        let drag = DragField {
            m0: ScalarField::constant(g, 1.0),
            m1: VectorField::from_fn(g, |x| [x[1].cos(), 0.3, 0.0]),
        };
        let defect = |dt: f64| {
            let mut st = FluidState { u: u0.clone(), t: 0.0 };
            ns_step(&sp, &mut st, &rho, &drag, dt, &NsParams::default()).unwrap().energy_defect.abs()
        };
        let (d1, d2) = (defect(4e-3), defect(2e-3));
        let order = (d1 / d2).log2();
        assert!(order > 1.7 && order < 2.3, "order {order}");
    }

    #[test]
    fn momentum_shift_meets_budget() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let mut u = sp.leray_project(&random_field(g, 5)).unwrap();
        let rho = ScalarField::from_fn(g, |x| 0.3 + 0.2 * x[0].cos());
        let inflow = ScalarField::from_fn(g, |x| 0.01 * (1.0 + x[1].sin()));
        let target = [1.5, -0.25, 0.0];
        let c = restore_momentum(&mut u, &rho, &inflow, target);
        let p = weighted_momentum(&u, &rho);
        for a in 0..2 {
            let brought: f64 =
                u.components[a].iter().zip(&inflow.values).map(|(v, s)| v * s).sum::<f64>() * g.cell_volume();
            assert!((p[a] - target[a] - brought).abs() < 1e-12, "{a}: {c:?}");
        }
        assert!(sp.divergence_residual(&u) < 1e-12);
    }
}
