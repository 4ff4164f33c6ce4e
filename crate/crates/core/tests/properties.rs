//! Randomized invariants of the grid, particle, density and diagnostics layers.

use proptest::prelude::*;

use spray_core::config::SimConfig;
use spray_core::density::{density_step, DensityField, DensityOptions};
use spray_core::diagnostics::{blowup_time_bound, moment_lemma_check, RadialDensity};
use spray_core::fluid::{drag_force, DragField};
use spray_core::grid::{compensated_sum, GridSpec, ScalarField, Spectral, VectorField};
use spray_core::kinetic::{
    absorb_and_fragment, deposit_with, interpolate_velocity, merge_particles, ParticleCloud, Species,
};

fn field_from(grid: GridSpec, values: &[f64]) -> VectorField {
    let npts = grid.npts();
    let components = (0..grid.dim).map(|a| (0..npts).map(|p| values[(a * npts + p) % values.len()]).collect()).collect();
    VectorField { grid, components }
}

fn cloud_from(dim: usize, rows: &[(Vec<f64>, Vec<f64>, f64, bool)]) -> ParticleCloud {
    let mut c = ParticleCloud::new(dim);
    for (x, xi, w, small) in rows {
        c.push(&x[..dim], &xi[..dim], *w, if *small { Species::Small } else { Species::Large });
    }
    c
}

fn particle_rows(max: usize) -> impl Strategy<Value = Vec<(Vec<f64>, Vec<f64>, f64, bool)>> {
    prop::collection::vec(
        (
            prop::collection::vec(0.0..6.28f64, 3),
            prop::collection::vec(-2.0..2.0f64, 3),
            1e-3..1.0f64,
            any::<bool>(),
        ),
        1..max,
    )
}

fn species_totals(c: &ParticleCloud, s: Species) -> (f64, Vec<f64>, f64) {
    let m1 = c.momentum(Some(s));
    (c.number(Some(s)), m1[..c.dim].to_vec(), c.second_moment(Some(s)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn leray_is_idempotent_and_solenoidal(values in prop::collection::vec(-1.0..1.0f64, 64..256), dim in 2usize..4) {
        let grid = GridSpec::periodic(dim, 8).unwrap();
        let sp = Spectral::new(grid).unwrap();
        let v = field_from(grid, &values);
        let pv = sp.leray_project(&v).unwrap();
        let ppv = sp.leray_project(&pv).unwrap();
        prop_assert!(ppv.sub(&pv).max_abs() <= 1e-12);
        prop_assert!(sp.divergence_residual(&pv) <= 1e-12);
        prop_assert!(pv.l2_norm() <= v.l2_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn scatter_and_gather_are_adjoint(rows in particle_rows(40), values in prop::collection::vec(-1.0..1.0f64, 16..128)) {
        let grid = GridSpec::periodic(3, 8).unwrap();
        let mut cloud = cloud_from(3, &rows);
        cloud.wrap_positions(&grid);
        let g = field_from(grid, &values);
        let m = deposit_with(&cloud, &grid, |_| 1.0);
        let up = interpolate_velocity(&g, &cloud.x);
        let lhs = compensated_sum((0..cloud.len()).map(|p| cloud.w[p] * up[p * 3]));
        let rhs = compensated_sum(m.m0.values.iter().zip(&g.components[0]).map(|(a, b)| a * b)) * grid.cell_volume();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!((m.m0.integral() - cloud.number(None)).abs() <= 1e-12 * cloud.number(None));
    }

    #[test]
    fn merging_keeps_number_and_momentum_per_species(rows in particle_rows(60), budget in 1usize..30) {
        let grid = GridSpec::periodic(3, 8).unwrap();
        let mut cloud = cloud_from(3, &rows);
        cloud.wrap_positions(&grid);
        let before = [species_totals(&cloud, Species::Large), species_totals(&cloud, Species::Small)];
        merge_particles(&mut cloud, &grid, budget).unwrap();
        let after = [species_totals(&cloud, Species::Large), species_totals(&cloud, Species::Small)];
        for (b, a) in before.iter().zip(&after) {
            prop_assert!((a.0 - b.0).abs() <= 1e-12 * (1.0 + b.0));
            for (x, y) in a.1.iter().zip(&b.1) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + b.0 * 2.0));
            }
            prop_assert!(a.2 <= b.2 * (1.0 + 1e-12) + 1e-15);
        }
        prop_assert!(cloud.len() <= rows.len());
        cloud.validate().unwrap();
    }

    #[test]
    fn fragmentation_keeps_liquid_volume_and_momentum(rows in particle_rows(40), steps in 1usize..20, r2 in 0.05..0.5f64) {
        let mut cloud = cloud_from(3, &rows.iter().map(|(x, xi, w, _)| (x.clone(), xi.clone(), *w, false)).collect::<Vec<_>>());
        let vol = r2.powi(3);
        let totals = |c: &ParticleCloud| {
            let v = |p: usize| if c.species[p] == Species::Small { vol } else { 1.0 };
            let mass = compensated_sum((0..c.len()).map(|p| c.w[p] * v(p)));
            let mom: Vec<f64> = (0..3).map(|a| compensated_sum((0..c.len()).map(|p| c.w[p] * v(p) * c.xi[p * 3 + a]))).collect();
            (mass, mom)
        };
        let (m0, p0) = totals(&cloud);
        for _ in 0..steps {
            let spawned = absorb_and_fragment(&mut cloud, 0.05, 1.0, r2).unwrap();
            cloud.extend(&spawned);
        }
        let (m1, p1) = totals(&cloud);
        prop_assert!((m1 - m0).abs() <= 1e-13 * m0);
        for (a, b) in p1.iter().zip(&p0) {
            prop_assert!((a - b).abs() <= 1e-13 * m0 * 2.0);
        }
    }

    #[test]
    fn density_step_is_positive_and_bounded(
        amp in 0.0..1.0f64,
        phase in 0.0..6.28f64,
        rho_values in prop::collection::vec(0.0..2.0f64, 256),
        dt in 1e-4..5e-3f64,
    ) {
        let grid = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(grid).unwrap();
        let u = sp.leray_project(&VectorField::from_fn(grid, |x| {
            [amp * (x[1] + phase).sin(), amp * (x[0] - phase).cos(), 0.0]
        })).unwrap();
        let rho = ScalarField { grid, values: rho_values };
        let (lo, hi) = (rho.min(), rho.max());
        let mass = rho.integral();
        let mut d = DensityField::new(rho).unwrap();
        let zero = ScalarField::zeros(grid);
        density_step(&sp, &mut d, &u, &zero, dt, &DensityOptions { mollifier_eps: None, conserve_mass: true }).unwrap();
        prop_assert!(d.rho.min() >= 0.0 && lo >= 0.0);
        prop_assert!(d.rho.max() <= hi * (1.0 + 1e-14));
        prop_assert!((d.mass() - mass).abs() <= 1e-12 * (1.0 + mass));
    }

    #[test]
    fn drag_force_matches_pointwise(values in prop::collection::vec(-1.0..1.0f64, 64..128), c in 0.5..3.0f64) {
        let grid = GridSpec::periodic(2, 8).unwrap();
        let u = field_from(grid, &values);
        let m1 = field_from(grid, &values.iter().rev().copied().collect::<Vec<_>>());
        let m0 = ScalarField { grid, values: (0..grid.npts()).map(|i| values[i % values.len()].abs()).collect() };
        let f = drag_force(&u, &DragField { m0: m0.clone(), m1: m1.clone() }, c).unwrap();
        for a in 0..2 {
            for i in 0..grid.npts() {
                let expect = c * (m1.components[a][i] - u.components[a][i] * m0.values[i]);
                prop_assert!((f.components[a][i] - expect).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn moment_inequality_holds(
        shells in prop::collection::vec((0.05..1.0f64, 0.0..5.0f64), 1..8),
        alpha in 0.0..4.0f64,
        gap in 0.05..2.0f64,
        dim in 2usize..4,
    ) {
        let mut r = 0.0;
        let radii: Vec<f64> = shells.iter().map(|s| { r += s.0; r }).collect();
        let values: Vec<f64> = shells.iter().map(|s| s.1).collect();
        let h = RadialDensity::new(dim, radii, values).unwrap();
        let c = moment_lemma_check(&h, alpha, alpha + gap).unwrap();
        prop_assert!(c.pass, "{c:?}");
    }

    #[test]
    fn blowup_never_precedes_the_bound(a in 0.25..3.0f64, gamma in 0.2..4.0f64) {
        let r = blowup_time_bound(a, gamma).unwrap();
        prop_assert!(r.t_numeric >= r.t_bound * (1.0 - 1e-6), "{r:?}");
        // The comparison problem starts at z(0) = A, so the closed form applies.
        prop_assert!((r.t_numeric - r.t_bound).abs() <= 1e-6 * r.t_bound);
    }

    #[test]
    fn config_text_round_trips(dt in 1e-5..1e-2f64, n in 2usize..6, seed in any::<u64>(), r2 in 0.01..0.9f64) {
        let cfg = SimConfig { dt, n: 1 << n, seed, r2, ..SimConfig::default() };
        let back = SimConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
