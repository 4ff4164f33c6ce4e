//! Semi-Lagrangian transport of the added density `ρ` with a kinetic source.

use crate::error::{Error, Result};
use crate::fluid::check_cfl;
use crate::grid::{compensated_sum, GridSpec, ScalarField, Spectral, VectorField};
use crate::kinetic::interpolate_velocity;

/// Non-negative added density.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub rho: ScalarField,
}

impl DensityField {
    pub fn zeros(grid: GridSpec) -> Self {
        DensityField { rho: ScalarField::zeros(grid) }
    }

    pub fn new(rho: ScalarField) -> Result<Self> {
        rho.check_finite()?;
        if rho.values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidField("density must be non-negative".into()));
        }
        Ok(DensityField { rho })
    }

    pub fn mass(&self) -> f64 {
        self.rho.integral()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DensityOptions {
    /// Advect with the mollified velocity (regularized system).
    pub mollifier_eps: Option<f64>,
    /// Restore `∫ρ` after the advection with a positivity- and
    /// maximum-preserving correction.
    pub conserve_mass: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DensityStepReport {
    pub mass_before: f64,
    pub mass_after: f64,
    pub source_mass: f64,
    /// `∫ρ' − ∫ρ − dt∫source` before any mass correction.
    pub advection_mass_defect: f64,
}

impl DensityStepReport {
    /// `∫ρ' − ∫ρ − dt∫source` after the step.
    pub fn mass_residual(&self) -> f64 {
        self.mass_after - self.mass_before - self.source_mass
    }
}

const STENCIL: usize = 6;
const STENCIL_OFFSET: isize = 2;

fn lagrange_weights(t: f64) -> [f64; STENCIL] {
    // Quintic Lagrange basis on nodes −2..=3.
    let mut w = [0.0; STENCIL];
    for (j, wj) in w.iter_mut().enumerate() {
        let xj = j as f64 - STENCIL_OFFSET as f64;
        let mut num = 1.0;
        let mut den = 1.0;
        for m in 0..STENCIL {
            if m != j {
                let xm = m as f64 - STENCIL_OFFSET as f64;
                num *= t - xm;
                den *= xj - xm;
            }
        }
        *wj = num / den;
    }
    w
}

/// Tensor quintic interpolation clamped to the range of its stencil values,
/// which keeps it bounded and non-negative.
pub fn clamped_interpolate(field: &ScalarField, x: &[f64]) -> f64 {
    let grid = &field.grid;
    let n = grid.n as isize;
    let h = grid.h();
    let dim = grid.dim;
    let mut base = [0isize; 3];
    let mut wts = [[1.0; STENCIL]; 3];
    for a in 0..dim {
        let s = grid.wrap(x[a]) / h;
        let i = s.floor();
        base[a] = i as isize - STENCIL_OFFSET;
        wts[a] = lagrange_weights(s - i);
    }
    let wrap = |a: usize, o: usize| (base[a] + o as isize).rem_euclid(n) as usize;
    let nk = if dim == 3 { STENCIL } else { 1 };
    let mut value = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..STENCIL {
        let ii = wrap(0, i);
        for j in 0..STENCIL {
            let jj = wrap(1, j);
            let wij = wts[0][i] * wts[1][j];
            for k in 0..nk {
                let kk = if dim == 3 { wrap(2, k) } else { 0 };
                let v = field.values[grid.flatten([ii, jj, kk])];
                value += wij * wts[2][k] * v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    value.clamp(lo, hi)
}

/// One semi-Lagrangian step
/// `ρ'(x) = clamp(interp(ρ, X(x))) + dt·source(x)` where `X` is the
/// foot of the characteristic found by one midpoint iteration.
pub fn density_step(
    sp: &Spectral,
    density: &mut DensityField,
    u: &VectorField,
    source: &ScalarField,
    dt: f64,
    opts: &DensityOptions,
) -> Result<DensityStepReport> {
    let grid = *sp.grid();
    grid.ensure_same(&density.rho.grid)?;
    grid.ensure_same(&u.grid)?;
    grid.ensure_same(&source.grid)?;
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be non-negative, got {dt}")));
    }
    if source.values.iter().any(|s| *s < 0.0) {
        return Err(Error::InvalidField("density source must be non-negative".into()));
    }
    let mass_before = density.mass();
    let source_mass = dt * source.integral();
    if dt == 0.0 {
        return Ok(DensityStepReport { mass_before, mass_after: mass_before, ..Default::default() });
    }
    check_cfl(u, dt)?;
    let advecting = match opts.mollifier_eps {
        Some(eps) => sp.mollify(u, eps)?,
        None => u.clone(),
    };
    let dim = grid.dim;
    let npts = grid.npts();

    let nodes: Vec<f64> = (0..npts).flat_map(|i| grid.node(i)[..dim].to_vec()).collect();
    let u_nodes = interpolate_velocity(&advecting, &nodes);
    let mid: Vec<f64> = nodes.iter().zip(&u_nodes).map(|(x, v)| x - 0.5 * dt * v).collect();
    let u_mid = interpolate_velocity(&advecting, &mid);
    let old = density.rho.clone();
    let mut new_values = Vec::with_capacity(npts);
    for p in 0..npts {
        let mut foot = [0.0; 3];
        for a in 0..dim {
            foot[a] = nodes[p * dim + a] - dt * u_mid[p * dim + a];
        }
        new_values.push(clamped_interpolate(&old, &foot[..dim]).max(0.0));
    }
    let mut advected = ScalarField { grid, values: new_values };
    let advection_mass_defect = advected.integral() - mass_before;
    if opts.conserve_mass {
        restore_mass(&mut advected, mass_before, old.max());
    }
    for (r, s) in advected.values.iter_mut().zip(&source.values) {
        *r += dt * s;
    }
    density.rho = advected;
    Ok(DensityStepReport { mass_before, mass_after: density.mass(), source_mass, advection_mass_defect })
}

/// Adjusts `field` so that `∫field = target` while keeping
/// `0 ≤ field ≤ max(cap, max field)`: excess mass is removed by uniform
/// scaling, missing mass is added in proportion to the headroom below `cap`.
pub fn restore_mass(field: &mut ScalarField, target: f64, cap: f64) {
    let current = field.integral();
    let delta = target - current;
    if delta == 0.0 || current <= 0.0 && delta < 0.0 {
        return;
    }
    let dv = field.grid.cell_volume();
    if delta < 0.0 {
        let s = target / current;
        for v in field.values.iter_mut() {
            *v *= s;
        }
        return;
    }
    let room = compensated_sum(field.values.iter().map(|v| (cap - v).max(0.0))) * dv;
    if room >= delta && room > 0.0 {
        let theta = delta / room;
        for v in field.values.iter_mut() {
            *v += theta * (cap - *v).max(0.0);
        }
    } else if current > 0.0 {
        let s = target / current;
        for v in field.values.iter_mut() {
            *v *= s;
        }
    }
}
