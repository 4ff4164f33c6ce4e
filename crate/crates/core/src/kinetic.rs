//! Particle (characteristics) solver for the droplet distribution.
//!
//! Each particle carries a number-weight `w`: it stands for `w` droplets
//! of its species. Species `Large` has radius 1, species `Small` has
//! radius `r2 < 1`. Grid transfer uses the multilinear cloud-in-cell
//! kernel in both directions, so `∫ u·m1 dx = Σ w ξ·u(x)` holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::DragField;
use crate::grid::{compensated_sum, GridSpec, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Species {
    /// Radius 1, subject to fragmentation/absorption.
    Large,
    /// Radius `r2`, produced by fragmentation.
    Small,
}

impl Species {
    pub fn radius(self, r2: f64) -> f64 {
        match self {
            Species::Large => 1.0,
            Species::Small => r2,
        }
    }

    pub fn tag(self) -> f64 {
        match self {
            Species::Large => 1.0,
            Species::Small => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub dim: usize,
    /// Positions, `dim` entries per particle.
    pub x: Vec<f64>,
    /// Velocities, `dim` entries per particle.
    pub xi: Vec<f64>,
    pub w: Vec<f64>,
    pub species: Vec<Species>,
}

impl ParticleCloud {
    pub fn new(dim: usize) -> Self {
        ParticleCloud { dim, x: Vec::new(), xi: Vec::new(), w: Vec::new(), species: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn push(&mut self, x: &[f64], xi: &[f64], w: f64, species: Species) {
        self.x.extend_from_slice(&x[..self.dim]);
        self.xi.extend_from_slice(&xi[..self.dim]);
        self.w.push(w);
        self.species.push(species);
    }

    pub fn extend(&mut self, other: &ParticleCloud) {
        self.x.extend_from_slice(&other.x);
        self.xi.extend_from_slice(&other.xi);
        self.w.extend_from_slice(&other.w);
        self.species.extend_from_slice(&other.species);
    }

    pub fn position(&self, p: usize) -> &[f64] {
        &self.x[p * self.dim..(p + 1) * self.dim]
    }

    pub fn velocity(&self, p: usize) -> &[f64] {
        &self.xi[p * self.dim..(p + 1) * self.dim]
    }

    pub fn speed_sq(&self, p: usize) -> f64 {
        self.velocity(p).iter().map(|v| v * v).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w.len();
        if self.x.len() != n * self.dim || self.xi.len() != n * self.dim || self.species.len() != n {
            return Err(Error::InvalidField("particle arrays have inconsistent lengths".into()));
        }
        if self.w.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidField("negative or NaN particle weight".into()));
        }
        Ok(())
    }

    /// `Σ w` over one species (or all when `None`).
    pub fn number(&self, species: Option<Species>) -> f64 {
        compensated_sum(self.iter_species(species).map(|p| self.w[p]))
    }

    /// `Σ w ξ`.
    pub fn momentum(&self, species: Option<Species>) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (a, slot) in m.iter_mut().enumerate().take(self.dim) {
            *slot = compensated_sum(self.iter_species(species).map(|p| self.w[p] * self.xi[p * self.dim + a]));
        }
        m
    }

    /// `Σ w |ξ|²`.
    pub fn second_moment(&self, species: Option<Species>) -> f64 {
        compensated_sum(self.iter_species(species).map(|p| self.w[p] * self.speed_sq(p)))
    }

    fn iter_species(&self, species: Option<Species>) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&p| species.map_or(true, |s| self.species[p] == s))
    }

    /// Keeps only particles of the given species.
    pub fn select(&self, species: Species) -> ParticleCloud {
        let mut out = ParticleCloud::new(self.dim);
        for p in self.iter_species(Some(species)) {
            out.push(self.position(p), self.velocity(p), self.w[p], species);
        }
        out
    }

    pub fn wrap_positions(&mut self, grid: &GridSpec) {
        for x in self.x.iter_mut() {
            *x = grid.wrap(*x);
        }
    }
}

/// Velocity-space cutoff parameter of the regularized system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSpec {
    pub eps: f64,
}

impl TruncationSpec {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Parameter(format!("truncation eps must be positive, got {eps}")));
        }
        Ok(TruncationSpec { eps })
    }

    pub fn weight(&self, xi: &[f64]) -> f64 {
        gamma_eps(xi, self.eps)
    }
}

/// Radial C² cutoff: 1 on `|ξ| ≤ 1/ε`, 0 on `|ξ| ≥ 2/ε`, quintic
/// smoothstep in between.
pub fn gamma_eps(xi: &[f64], eps: f64) -> f64 {
    let speed = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = (speed * eps - 1.0).clamp(0.0, 1.0);
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Drag relaxation time of a droplet of radius `r` (acceleration `(u−ξ)/r²`).
pub fn stokes_relax_time(r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Parameter(format!("radius must be positive, got {r}")));
    }
    Ok(r * r)
}

/// Cloud-in-cell stencil of a point: up to 8 node indices and weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
    pub len: usize,
}

pub fn cic_stencil(grid: &GridSpec, x: &[f64]) -> Stencil {
    let n = grid.n;
    let h = grid.h();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..grid.dim {
        let s = grid.wrap(x[a]) / h;
        let i = (s.floor() as usize).min(n - 1);
        base[a] = i;
        frac[a] = (s - i as f64).clamp(0.0, 1.0);
    }
    let len = 1usize << grid.dim;
    let mut st = Stencil { nodes: [0; 8], weights: [0.0; 8], len };
    for corner in 0..len {
        let mut ijk = [0usize; 3];
        let mut wgt = 1.0;
        for a in 0..grid.dim {
            let bit = (corner >> a) & 1;
            ijk[a] = (base[a] + bit) % n;
            wgt *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        st.nodes[corner] = grid.flatten(ijk);
        st.weights[corner] = wgt;
    }
    st
}

/// Multilinear interpolation of `u` at flat positions (`dim` per point).
pub fn interpolate_velocity(u: &VectorField, x: &[f64]) -> Vec<f64> {
    let dim = u.grid.dim;
    let np = x.len() / dim;
    let mut out = vec![0.0; np * dim];
    for p in 0..np {
        let st = cic_stencil(&u.grid, &x[p * dim..(p + 1) * dim]);
        for c in 0..st.len {
            for a in 0..dim {
                out[p * dim + a] += st.weights[c] * u.components[a][st.nodes[c]];
            }
        }
    }
    out
}

/// Exact drag update with `u` frozen at each particle:
/// `ξ' = u + (ξ−u)e^{−dt/r²}`, `x' = x + dt·u + r²(1−e^{−dt/r²})(ξ−u)`.
pub fn advance_particles(cloud: &mut ParticleCloud, u: &VectorField, dt: f64, r2: f64) -> Result<()> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be non-negative, got {dt}")));
    }
    let dim = cloud.dim;
    let up = interpolate_velocity(u, &cloud.x);
    if up.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidField("non-finite interpolated velocity".into()));
    }
    let grid = u.grid;
    for p in 0..cloud.len() {
        let tau = stokes_relax_time(cloud.species[p].radius(r2))?;
        let decay = (-dt / tau).exp();
        // τ(1 − e^{−dt/τ}) without cancellation for small dt/τ.
        let drift = -tau * (-dt / tau).exp_m1();
        for a in 0..dim {
            let k = p * dim + a;
            let rel = cloud.xi[k] - up[k];
            cloud.x[k] = grid.wrap(cloud.x[k] + dt * up[k] + drift * rel);
            cloud.xi[k] = up[k] + rel * decay;
        }
    }
    Ok(())
}

/// Fragmentation of the large species at rate `1/τ`: large weights decay by
/// `e^{−dt/τ}`; each parent spawns one small particle at its phase-space
/// point carrying `(w − w')/r2³` droplets.
pub fn absorb_and_fragment(cloud: &mut ParticleCloud, dt: f64, tau: f64, r2: f64) -> Result<ParticleCloud> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    if !(r2 > 0.0 && r2 < 1.0) {
        return Err(Error::Parameter(format!("r2 must lie in (0,1), got {r2}")));
    }
    if dt < 0.0 {
        return Err(Error::Parameter(format!("dt must be non-negative, got {dt}")));
    }
    let mut spawned = ParticleCloud::new(cloud.dim);
    if dt == 0.0 || tau.is_infinite() {
        return Ok(spawned);
    }
    let decay = (-dt / tau).exp();
    let volume = r2 * r2 * r2;
    for p in 0..cloud.len() {
        if cloud.species[p] != Species::Large || cloud.w[p] == 0.0 {
            continue;
        }
        let before = cloud.w[p];
        let after = before * decay;
        cloud.w[p] = after;
        let released = before - after;
        if released > 0.0 {
            let (x, xi) = (cloud.position(p).to_vec(), cloud.velocity(p).to_vec());
            spawned.push(&x, &xi, released / volume, Species::Small);
        }
    }
    Ok(spawned)
}

/// Absorption `−f` of the limit system: weights decay by `e^{−dt}` and the
/// released number is deposited on the grid as added density.
pub fn absorb_to_density(cloud: &mut ParticleCloud, grid: &GridSpec, dt: f64) -> Result<ScalarField> {
    absorb_to_density_with(cloud, grid, dt, |_| 1.0)
}

/// Like [`absorb_to_density`], but only the fraction `keep(ξ)` of the
/// released number reaches the grid.
pub fn absorb_to_density_with(
    cloud: &mut ParticleCloud,
    grid: &GridSpec,
    dt: f64,
    keep: impl Fn(&[f64]) -> f64,
) -> Result<ScalarField> {
    if dt < 0.0 {
        return Err(Error::Parameter(format!("dt must be non-negative, got {dt}")));
    }
    let mut released = ScalarField::zeros(*grid);
    if dt == 0.0 {
        return Ok(released);
    }
    let decay = (-dt).exp();
    let inv_dv = 1.0 / grid.cell_volume();
    for p in 0..cloud.len() {
        let before = cloud.w[p];
        let after = before * decay;
        cloud.w[p] = after;
        let st = cic_stencil(grid, cloud.position(p));
        let mass = (before - after) * keep(cloud.velocity(p)) * inv_dv;
        for c in 0..st.len {
            released.values[st.nodes[c]] += st.weights[c] * mass;
        }
    }
    Ok(released)
}

/// Gridded `m0`, `m1`, `m2` of one cloud with a per-particle factor.
#[derive(Debug, Clone)]
pub struct MomentFields {
    pub m0: ScalarField,
    pub m1: VectorField,
    pub m2: ScalarField,
}

impl MomentFields {
    pub fn into_drag(self) -> DragField {
        DragField { m0: self.m0, m1: self.m1 }
    }
}

/// Deposits `w·c(p)`, `w·c(p)·ξ` and `w·c(p)·|ξ|²` with the cloud-in-cell
/// kernel, where `c(p)` is `factor(p)`. Summation follows particle order.
pub fn deposit_with(cloud: &ParticleCloud, grid: &GridSpec, factor: impl Fn(usize) -> f64) -> MomentFields {
    let dim = grid.dim;
    let mut m0 = ScalarField::zeros(*grid);
    let mut m1 = VectorField::zeros(*grid);
    let mut m2 = ScalarField::zeros(*grid);
    let inv_dv = 1.0 / grid.cell_volume();
    for p in 0..cloud.len() {
        let wp = cloud.w[p] * factor(p) * inv_dv;
        if wp == 0.0 {
            continue;
        }
        let xi = cloud.velocity(p);
        let s2 = cloud.speed_sq(p);
        let st = cic_stencil(grid, cloud.position(p));
        for c in 0..st.len {
            let node = st.nodes[c];
            let q = st.weights[c] * wp;
            m0.values[node] += q;
            m2.values[node] += q * s2;
            for a in 0..dim {
                m1.components[a][node] += q * xi[a];
            }
        }
    }
    MomentFields { m0, m1, m2 }
}

/// `m0(fγ_ε)`, `m1(fγ_ε)` (or the untruncated moments).
pub fn deposit_moments(cloud: &ParticleCloud, grid: &GridSpec, truncation: Option<TruncationSpec>) -> DragField {
    deposit_moments_weighted(cloud, grid, truncation, [1.0, 1.0])
}

/// Like [`deposit_moments`], with per-species factors `[large, small]`.
pub fn deposit_moments_weighted(
    cloud: &ParticleCloud,
    grid: &GridSpec,
    truncation: Option<TruncationSpec>,
    species_factor: [f64; 2],
) -> DragField {
    deposit_with(cloud, grid, |p| {
        let s = match cloud.species[p] {
            Species::Large => species_factor[0],
            Species::Small => species_factor[1],
        };
        s * truncation.map_or(1.0, |t| t.weight(cloud.velocity(p)))
    })
    .into_drag()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MergeReport {
    pub merged_pairs: usize,
    pub passes: usize,
    /// Relative change of `Σ w|ξ|²` caused by merging (non-positive).
    pub m2_relative_change: f64,
}

/// Reduces the particle count to at most `budget` by merging pairs of
/// nearby particles of the same species and grid cell.
///
/// A merged particle carries the summed weight at the weighted mean of
/// positions (minimum image) and velocities, so `Σw` and `Σwξ` are kept.
/// Pairs are taken adjacent in velocity order within a cell, cheapest
/// `Σw|ξ|²` loss first.
pub fn merge_particles(cloud: &mut ParticleCloud, grid: &GridSpec, budget: usize) -> Result<MergeReport> {
    if budget == 0 {
        return Err(Error::Parameter("merge budget must be at least 1".into()));
    }
    let mut report = MergeReport::default();
    if cloud.len() <= budget {
        return Ok(report);
    }
    let m2_before = cloud.second_moment(None);
    let dim = cloud.dim;
    while cloud.len() > budget {
        let excess = cloud.len() - budget;
        let cell = |p: usize| -> usize {
            let st = cic_stencil(grid, cloud.position(p));
            st.nodes[0]
        };
        let mut order: Vec<(Species, usize, usize)> =
            (0..cloud.len()).map(|p| (cloud.species[p], cell(p), p)).collect();
        order.sort_by(|a, b| {
            (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| {
                let (va, vb) = (cloud.velocity(a.2), cloud.velocity(b.2));
                for k in 0..dim {
                    match va[k].total_cmp(&vb[k]) {
                        std::cmp::Ordering::Equal => continue,
                        o => return o,
                    }
                }
                a.2.cmp(&b.2)
            })
        });
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        let mut k = 0;
        while k + 1 < order.len() {
            let (sa, ca, pa) = order[k];
            let (sb, cb, pb) = order[k + 1];
            if sa == sb && ca == cb {
                let (wa, wb) = (cloud.w[pa], cloud.w[pb]);
                let dv2: f64 =
                    cloud.velocity(pa).iter().zip(cloud.velocity(pb)).map(|(a, b)| (a - b) * (a - b)).sum();
                let cost = if wa + wb > 0.0 { wa * wb / (wa + wb) * dv2 } else { 0.0 };
                pairs.push((cost, pa.min(pb), pa.max(pb)));
                k += 2;
            } else {
                k += 1;
            }
        }
        if pairs.is_empty() {
            // Every cell holds a single particle per species: coarsen by
            // merging across species-local neighbours in sorted order.
            let mut k = 0;
            while k + 1 < order.len() {
                if order[k].0 == order[k + 1].0 {
                    let (pa, pb) = (order[k].2, order[k + 1].2);
                    pairs.push((0.0, pa.min(pb), pa.max(pb)));
                    k += 2;
                } else {
                    k += 1;
                }
            }
            if pairs.is_empty() {
                break;
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pairs.truncate(excess);
        let mut remove = vec![false; cloud.len()];
        for &(_, a, b) in &pairs {
            let (wa, wb) = (cloud.w[a], cloud.w[b]);
            let wt = wa + wb;
            let (fa, fb) = if wt > 0.0 { (wa / wt, wb / wt) } else { (0.5, 0.5) };
            for c in 0..dim {
                let (ia, ib) = (a * dim + c, b * dim + c);
                let mut dx = cloud.x[ib] - cloud.x[ia];
                dx -= grid.length * (dx / grid.length).round();
                cloud.x[ia] = grid.wrap(cloud.x[ia] + fb * dx);
                cloud.xi[ia] = fa * cloud.xi[ia] + fb * cloud.xi[ib];
            }
            cloud.w[a] = wt;
            remove[b] = true;
        }
        report.merged_pairs += pairs.len();
        report.passes += 1;
        let mut kept = ParticleCloud::new(dim);
        for p in 0..cloud.len() {
            if !remove[p] {
                kept.push(cloud.position(p), cloud.velocity(p), cloud.w[p], cloud.species[p]);
            }
        }
        *cloud = kept;
    }
    let m2_after = cloud.second_moment(None);
    report.m2_relative_change = if m2_before > 0.0 { (m2_after - m2_before) / m2_before } else { 0.0 };
    Ok(report)
}

/// Value of `f` carried along one characteristic of
/// `∂ₜf + ξ·∇ₓf + ∇_ξ·((u−ξ)f/r²) = −a f` in `dim` velocity dimensions.
///
/// The particle weight decays like `e^{−a t}` while the phase-space volume
/// element contracts like `e^{−dim·t/r²}`; their ratio is the pointwise
/// value of `f`.
#[derive(Debug, Clone, Copy)]
pub struct CharacteristicValue {
    pub weight: f64,
    pub volume: f64,
    dim: usize,
    relax_time: f64,
    absorption: f64,
}

impl CharacteristicValue {
    pub fn new(f0: f64, dim: usize, radius: f64, absorption: f64) -> Result<Self> {
        Ok(CharacteristicValue {
            weight: f0,
            volume: 1.0,
            dim,
            relax_time: stokes_relax_time(radius)?,
            absorption,
        })
    }

    pub fn step(&mut self, dt: f64) {
        self.weight *= (-self.absorption * dt).exp();
        self.volume *= (-(self.dim as f64) * dt / self.relax_time).exp();
    }

    pub fn value(&self) -> f64 {
        self.weight / self.volume
    }
}
