//! Periodic grid bookkeeping and pseudo-spectral operators on the torus.
//!
//! Fields are stored as flat row-major arrays (last axis fastest). Vector
//! fields hold one such array per component. All spectral operators use
//! the wavenumber table with the Nyquist entry zeroed, so that the
//! discrete derivative is skew-adjoint and `divergence(gradient(s))`
//! agrees with `laplacian(s)` to rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated sum, accurate to a few ulps of the result even for
/// many terms of similar magnitude.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Periodic box `[0, length)^dim` sampled with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        let grid = GridSpec { dim, n, length };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid on the standard `2π` torus, where wavenumbers are integers.
    pub fn periodic(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, 2.0 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidGrid(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.n < 8 || !self.n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n must be a power of two >= 8, got {}",
                self.n
            )));
        }
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::InvalidGrid(format!("length must be positive, got {}", self.length)));
        }
        Ok(())
    }

    pub fn npts(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Quadrature weight of one node, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Multi-index of a flat index (axis 0 first).
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for axis in (0..self.dim).rev() {
            out[axis] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn flatten(&self, ijk: [usize; 3]) -> usize {
        let mut idx = 0;
        for &i in ijk.iter().take(self.dim) {
            idx = idx * self.n + i;
        }
        idx
    }

    /// Physical coordinates of a node.
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let ijk = self.unflatten(idx);
        let h = self.h();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = ijk[axis] as f64 * h;
        }
        x
    }

    /// Wraps a coordinate into `[0, length)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let y = x.rem_euclid(self.length);
        // rem_euclid can round up to `length` for tiny negative inputs.
        if y >= self.length {
            0.0
        } else {
            y
        }
    }

    pub(crate) fn describe(&self) -> String {
        format!("dim={} n={} length={}", self.dim, self.n, self.length)
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch { expected: self.describe(), got: other.describe() });
        }
        Ok(())
    }
}

/// Real scalar field sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField { grid, values: vec![0.0; grid.npts()] }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.npts()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.npts()).map(|i| f(grid.node(i))).collect();
        ScalarField { grid, values }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.npts() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.npts(),
                values.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidField("non-finite value in scalar field".into()))
        }
    }

    /// Trapezoidal (= spectral) quadrature over the torus.
    pub fn integral(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Real vector field with `grid.dim` components.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        VectorField { grid, components: vec![vec![0.0; grid.npts()]; grid.dim] }
    }

    pub fn constant(grid: GridSpec, c: &[f64]) -> Self {
        let components = (0..grid.dim).map(|a| vec![c[a]; grid.npts()]).collect();
        VectorField { grid, components }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.npts() {
            let v = f(grid.node(i));
            for a in 0..grid.dim {
                out.components[a][i] = v[a];
            }
        }
        out
    }

    pub fn from_components(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim || components.iter().any(|c| c.len() != grid.npts()) {
            return Err(Error::InvalidField(format!(
                "expected {} components of {} values",
                grid.dim,
                grid.npts()
            )));
        }
        Ok(VectorField { grid, components })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c[idx];
        }
        v
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.components.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidField("non-finite value in vector field".into()))
        }
    }

    pub fn integral(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        let dv = self.grid.cell_volume();
        for (a, c) in self.components.iter().enumerate() {
            out[a] = compensated_sum(c.iter().copied()) * dv;
        }
        out
    }

    pub fn mean(&self) -> [f64; 3] {
        let vol = self.grid.volume();
        let mut m = self.integral();
        for v in m.iter_mut() {
            *v /= vol;
        }
        m
    }

    /// `∫|v|²`.
    pub fn norm_sq(&self) -> f64 {
        self.components.iter().flatten().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `∫ a·b`.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        let npts = self.grid.npts();
        (0..npts)
            .map(|i| self.components.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn axpy(&mut self, alpha: f64, x: &VectorField) {
        for (c, xc) in self.components.iter_mut().zip(&x.components) {
            for (v, xv) in c.iter_mut().zip(xc) {
                *v += alpha * xv;
            }
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// FFT plans and wavenumber tables for one grid.
pub struct Spectral {
    grid: GridSpec,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Per-mode wavenumber vector, Nyquist entries zeroed.
    kvec: Vec<[f64; 3]>,
    k2: Vec<f64>,
    dealias: Vec<bool>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid.n);
        let ifft = planner.plan_fft_inverse(grid.n);
        let n = grid.n;
        let scale = 2.0 * PI / grid.length;
        let wave = |m: usize| -> f64 {
            if m < n / 2 {
                m as f64 * scale
            } else if m == n / 2 {
                0.0
            } else {
                (m as f64 - n as f64) * scale
            }
        };
        let cutoff = n / 3;
        let mut kvec = Vec::with_capacity(grid.npts());
        let mut k2 = Vec::with_capacity(grid.npts());
        let mut dealias = Vec::with_capacity(grid.npts());
        for idx in 0..grid.npts() {
            let ijk = grid.unflatten(idx);
            let mut k = [0.0; 3];
            let mut keep = true;
            for a in 0..grid.dim {
                k[a] = wave(ijk[a]);
                let m = if ijk[a] <= n / 2 { ijk[a] } else { n - ijk[a] };
                if m > cutoff {
                    keep = false;
                }
            }
            k2.push(k.iter().map(|v| v * v).sum());
            kvec.push(k);
            dealias.push(keep);
        }
        Ok(Spectral { grid, fft, ifft, kvec, k2, dealias })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn kvec(&self) -> &[[f64; 3]] {
        &self.kvec
    }

    /// `|k|²` per mode (Nyquist-zeroed wavenumbers).
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.ifft } else { &self.fft };
        let n = self.grid.n;
        let total = buf.len();
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // Last axis is contiguous: one batched call.
        fft.process_with_scratch(buf, &mut scratch);
        let mut lanes = Vec::new();
        for axis in 0..self.grid.dim - 1 {
            let stride = n.pow((self.grid.dim - 1 - axis) as u32);
            let block = stride * n;
            lanes.resize(block, Complex64::new(0.0, 0.0));
            for start in (0..total).step_by(block) {
                let chunk = &mut buf[start..start + block];
                for inner in 0..stride {
                    for j in 0..n {
                        lanes[inner * n + j] = chunk[j * stride + inner];
                    }
                }
                fft.process_with_scratch(&mut lanes, &mut scratch);
                for inner in 0..stride {
                    for j in 0..n {
                        chunk[j * stride + inner] = lanes[inner * n + j];
                    }
                }
            }
        }
    }

    /// Normalized forward transform: `c_k = N⁻¹ Σ_x v(x) e^{-ik·x}`.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.grid.npts());
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        let inv = 1.0 / buf.len() as f64;
        for c in buf.iter_mut() {
            *c *= inv;
        }
        buf
    }

    /// Inverse of [`Spectral::forward`]; the imaginary part is discarded.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.transform(&mut buf, true);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn apply_multiplier(&self, values: &[f64], mult: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut c = self.forward(values);
        for (i, v) in c.iter_mut().enumerate() {
            *v *= mult(i);
        }
        self.inverse(&c)
    }

    /// Spectral partial derivative along `axis`.
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut c = self.forward(values);
        for (i, v) in c.iter_mut().enumerate() {
            *v *= Complex64::new(0.0, self.kvec[i][axis]);
        }
        self.inverse(&c)
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        self.grid.ensure_same(grid)
    }

    pub fn gradient(&self, s: &ScalarField) -> Result<VectorField> {
        self.check_grid(&s.grid)?;
        s.check_finite()?;
        let c = self.forward(&s.values);
        let components = (0..self.grid.dim)
            .map(|a| {
                let d: Vec<Complex64> = c
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * Complex64::new(0.0, self.kvec[i][a]))
                    .collect();
                self.inverse(&d)
            })
            .collect();
        Ok(VectorField { grid: self.grid, components })
    }

    pub fn divergence(&self, v: &VectorField) -> Result<ScalarField> {
        self.check_grid(&v.grid)?;
        v.check_finite()?;
        let mut acc = vec![Complex64::new(0.0, 0.0); self.grid.npts()];
        for (a, comp) in v.components.iter().enumerate() {
            let c = self.forward(comp);
            for (i, ci) in c.iter().enumerate() {
                acc[i] += ci * Complex64::new(0.0, self.kvec[i][a]);
            }
        }
        Ok(ScalarField { grid: self.grid, values: self.inverse(&acc) })
    }

    pub fn laplacian(&self, s: &ScalarField) -> Result<ScalarField> {
        self.check_grid(&s.grid)?;
        s.check_finite()?;
        Ok(ScalarField { grid: self.grid, values: self.apply_multiplier(&s.values, |i| -self.k2[i]) })
    }

    pub fn vector_laplacian(&self, v: &VectorField) -> Result<VectorField> {
        self.check_grid(&v.grid)?;
        v.check_finite()?;
        let components =
            v.components.iter().map(|c| self.apply_multiplier(c, |i| -self.k2[i])).collect();
        Ok(VectorField { grid: self.grid, components })
    }

    /// Projects spectral coefficients of a vector field onto the
    /// divergence-free subspace in place; the zero mode is untouched.
    pub fn project_coeffs(&self, coeffs: &mut [Vec<Complex64>]) {
        let dim = self.grid.dim;
        for i in 0..self.grid.npts() {
            let k2 = self.k2[i];
            if k2 == 0.0 {
                continue;
            }
            let k = &self.kvec[i];
            let mut kdotv = Complex64::new(0.0, 0.0);
            for a in 0..dim {
                kdotv += coeffs[a][i] * k[a];
            }
            let f = kdotv / k2;
            for a in 0..dim {
                coeffs[a][i] -= f * k[a];
            }
        }
    }

    /// Leray projection `Id − ∇Δ⁻¹div`.
    pub fn leray_project(&self, v: &VectorField) -> Result<VectorField> {
        self.check_grid(&v.grid)?;
        v.check_finite()?;
        let mut coeffs: Vec<Vec<Complex64>> = v.components.iter().map(|c| self.forward(c)).collect();
        self.project_coeffs(&mut coeffs);
        let components = coeffs.iter().map(|c| self.inverse(c)).collect();
        Ok(VectorField { grid: self.grid, components })
    }

    /// Largest modal divergence `max_k |k·v̂_k|`, relative to the RMS of `v`.
    pub fn divergence_residual(&self, v: &VectorField) -> f64 {
        let coeffs: Vec<Vec<Complex64>> = v.components.iter().map(|c| self.forward(c)).collect();
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.npts() {
            let mut d = Complex64::new(0.0, 0.0);
            for (a, c) in coeffs.iter().enumerate() {
                d += c[i] * self.kvec[i][a];
            }
            worst = worst.max(d.norm());
        }
        let rms = (v.norm_sq() / self.grid.volume()).sqrt();
        if rms > 0.0 {
            worst / rms
        } else {
            worst
        }
    }

    /// Gaussian mollifier multiplier `exp(−ε²|k|²/2)`.
    pub fn mollifier_symbol(&self, eps: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Parameter(format!("mollifier width must be positive, got {eps}")));
        }
        Ok(self.k2.iter().map(|k2| (-0.5 * eps * eps * k2).exp()).collect())
    }

    pub fn mollify_scalar(&self, s: &ScalarField, eps: f64) -> Result<ScalarField> {
        self.check_grid(&s.grid)?;
        let sym = self.mollifier_symbol(eps)?;
        Ok(ScalarField { grid: self.grid, values: self.apply_multiplier(&s.values, |i| sym[i]) })
    }

    pub fn mollify(&self, v: &VectorField, eps: f64) -> Result<VectorField> {
        self.check_grid(&v.grid)?;
        let sym = self.mollifier_symbol(eps)?;
        let components = v.components.iter().map(|c| self.apply_multiplier(c, |i| sym[i])).collect();
        Ok(VectorField { grid: self.grid, components })
    }

    /// Zeroes modes outside the 2/3-rule band.
    pub fn dealias_coeffs(&self, coeffs: &mut [Complex64]) {
        for (c, keep) in coeffs.iter_mut().zip(&self.dealias) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn dealias(&self, v: &VectorField) -> VectorField {
        let components = v
            .components
            .iter()
            .map(|c| {
                let mut s = self.forward(c);
                self.dealias_coeffs(&mut s);
                self.inverse(&s)
            })
            .collect();
        VectorField { grid: self.grid, components }
    }

    /// Projection orthogonal in the `(1+ρ)`-weighted inner product:
    /// returns `a − β∇p` with `div(β∇p) = div a`, `β = 1/(1+ρ)`.
    ///
    /// The variable-coefficient Poisson problem is solved by conjugate
    /// gradients preconditioned with the constant-coefficient inverse
    /// Laplacian. Returns the projected field and the iteration count.
    pub fn weighted_project(
        &self,
        a: &VectorField,
        beta: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<(VectorField, usize)> {
        self.check_grid(&a.grid)?;
        let dim = self.grid.dim;
        let npts = self.grid.npts();
        let zero = Complex64::new(0.0, 0.0);
        let beta_mean = beta.iter().sum::<f64>() / npts as f64;

        let div_of = |comps: &[Vec<f64>]| -> Vec<Complex64> {
            let mut acc = vec![zero; npts];
            for (ax, comp) in comps.iter().enumerate() {
                let c = self.forward(comp);
                for i in 0..npts {
                    acc[i] += c[i] * Complex64::new(0.0, self.kvec[i][ax]);
                }
            }
            acc
        };
        let beta_grad = |p: &[Complex64]| -> Vec<Vec<f64>> {
            (0..dim)
                .map(|ax| {
                    let d: Vec<Complex64> = p
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * Complex64::new(0.0, self.kvec[i][ax]))
                        .collect();
                    let mut g = self.inverse(&d);
                    for (gv, b) in g.iter_mut().zip(beta) {
                        *gv *= b;
                    }
                    g
                })
                .collect()
        };
        // A p = −div(β∇p), symmetric positive semi-definite.
        let apply = |p: &[Complex64]| -> Vec<Complex64> {
            let g = beta_grad(p);
            div_of(&g).into_iter().map(|v| -v).collect()
        };
        let precond = |r: &[Complex64]| -> Vec<Complex64> {
            r.iter()
                .enumerate()
                .map(|(i, v)| if self.k2[i] > 0.0 { v / (beta_mean * self.k2[i]) } else { zero })
                .collect()
        };
        let inner = |x: &[Complex64], y: &[Complex64]| -> f64 {
            x.iter().zip(y).map(|(a, b)| (a.conj() * b).re).sum()
        };

        let b: Vec<Complex64> = div_of(&a.components).into_iter().map(|v| -v).collect();
        let bnorm = inner(&b, &b).sqrt();
        let mut p_sol = vec![zero; npts];
        let mut iters = 0;
        if bnorm > 0.0 {
            let mut r = b.clone();
            let mut z = precond(&r);
            let mut d = z.clone();
            let mut rz = inner(&r, &z);
            while iters < max_iter {
                if inner(&r, &r).sqrt() <= tol * bnorm {
                    break;
                }
                iters += 1;
                let ad = apply(&d);
                let dad = inner(&d, &ad);
                if dad <= 0.0 {
                    break;
                }
                let alpha = rz / dad;
                for i in 0..npts {
                    p_sol[i] += d[i] * alpha;
                    r[i] -= ad[i] * alpha;
                }
                z = precond(&r);
                let rz_new = inner(&r, &z);
                let beta_cg = rz_new / rz;
                rz = rz_new;
                for i in 0..npts {
                    d[i] = z[i] + d[i] * beta_cg;
                }
            }
        }
        let g = beta_grad(&p_sol);
        let mut out = a.clone();
        for (c, gc) in out.components.iter_mut().zip(&g) {
            for (v, gv) in c.iter_mut().zip(gc) {
                *v -= gv;
            }
        }
        Ok((out, iters))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(grid: GridSpec, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components =
            (0..grid.dim).map(|_| (0..grid.npts()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        VectorField { grid, components }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::periodic(3, 32).is_ok());
        assert!(GridSpec::periodic(4, 32).is_err());
        assert!(GridSpec::periodic(2, 4).is_err());
        assert!(GridSpec::periodic(2, 24).is_err());
        assert!(GridSpec::new(2, 16, 0.0).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let g = GridSpec::periodic(3, 8).unwrap();
        for idx in [0, 1, 7, 8, 63, 64, 511] {
            assert_eq!(g.flatten(g.unflatten(idx)), idx);
        }
    }

    #[test]
    fn transform_roundtrip() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let v = random_vector(g, 3);
        let back = sp.inverse(&sp.forward(&v.components[0]));
        let err = back.iter().zip(&v.components[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn gradient_of_sine() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let s = ScalarField::from_fn(g, |x| x[0].sin());
        let grad = sp.gradient(&s).unwrap();
        for i in 0..g.npts() {
            let x = g.node(i);
            assert!((grad.components[0][i] - x[0].cos()).abs() < 1e-12);
            assert!(grad.components[1][i].abs() < 1e-12);
            assert!(grad.components[2][i].abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let lap = sp.laplacian(&ScalarField::constant(g, 3.5)).unwrap();
        assert!(lap.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn div_grad_is_laplacian() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let s = ScalarField { grid: g, values: random_vector(g, 9).components[0].clone() };
        let lhs = sp.divergence(&sp.gradient(&s).unwrap()).unwrap();
        let rhs = sp.laplacian(&s).unwrap();
        let scale = rhs.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in lhs.values.iter().zip(&rhs.values) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn leray_keeps_constants_and_kills_gradients() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let c = VectorField::constant(g, &[1.0, 0.0, 0.0]);
        let pc = sp.leray_project(&c).unwrap();
        assert!(pc.sub(&c).max_abs() < 1e-14);
        let grad = VectorField::from_fn(g, |x| [x[0].cos(), 0.0, 0.0]);
        assert!(sp.leray_project(&grad).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn leray_rejects_non_finite() {
        let g = GridSpec::periodic(2, 8).unwrap();
        let sp = Spectral::new(g).unwrap();
        let mut v = VectorField::zeros(g);
        v.components[1][5] = f64::NAN;
        assert!(matches!(sp.leray_project(&v), Err(Error::InvalidField(_))));
    }

    #[test]
    fn leray_preserves_mean() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let v = random_vector(g, 1);
        let p = sp.leray_project(&v).unwrap();
        let (m0, m1) = (v.mean(), p.mean());
        assert!((m0[0] - m1[0]).abs() < 1e-14 && (m0[1] - m1[1]).abs() < 1e-14);
    }

    #[test]
    fn mollify_single_mode_amplitude() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let s = ScalarField::from_fn(g, |x| x[0].cos());
        let m = sp.mollify_scalar(&s, 1.0).unwrap();
        let factor = (-0.5f64).exp();
        assert!((factor - 0.6065306597).abs() < 1e-9);
        for (a, b) in m.values.iter().zip(&s.values) {
            assert!((a - factor * b).abs() < 1e-13);
        }
    }

    #[test]
    fn mollify_constant_and_bad_eps() {
        let g = GridSpec::periodic(2, 8).unwrap();
        let sp = Spectral::new(g).unwrap();
        let c = ScalarField::constant(g, 2.0);
        let m = sp.mollify_scalar(&c, 0.7).unwrap();
        assert!(m.values.iter().all(|v| (v - 2.0).abs() < 1e-14));
        assert!(sp.mollify_scalar(&c, 0.0).is_err());
        assert!(sp.mollify_scalar(&c, -1.0).is_err());
    }

    #[test]
    fn mollify_converges_monotonically() {
        let g = GridSpec::periodic(2, 32).unwrap();
        let sp = Spectral::new(g).unwrap();
        let v = random_vector(g, 17);
        let mut last = f64::INFINITY;
        for eps in [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125] {
            let d = sp.mollify(&v, eps).unwrap().sub(&v).l2_norm();
            assert!(d < last, "eps={eps} {d} !< {last}");
            last = d;
        }
        assert!(last < 0.25 * v.l2_norm());
    }

    #[test]
    fn weighted_projection_is_divergence_free_and_orthogonal() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let a = random_vector(g, 5);
        let rho = ScalarField::from_fn(g, |x| 0.5 + 0.4 * (x[0] + 2.0 * x[1]).sin() * x[2].cos());
        let beta: Vec<f64> = rho.values.iter().map(|r| 1.0 / (1.0 + r)).collect();
        let (pa, iters) = sp.weighted_project(&a, &beta, 1e-13, 500).unwrap();
        assert!(iters > 0);
        let div = sp.divergence(&pa).unwrap();
        let scale = a.l2_norm();
        assert!(div.l2_norm() < 1e-10 * scale, "{}", div.l2_norm());
        // ⟨(1+ρ) w, P a⟩ = ⟨(1+ρ) w, a⟩ for divergence-free w
        let w = sp.leray_project(&random_vector(g, 6)).unwrap();
        let mut rw = w.clone();
        for c in rw.components.iter_mut() {
            for (v, r) in c.iter_mut().zip(&rho.values) {
                *v *= 1.0 + r;
            }
        }
        let lhs = rw.dot(&pa);
        let rhs = rw.dot(&a);
        assert!((lhs - rhs).abs() < 1e-9 * rw.l2_norm() * a.l2_norm(), "{lhs} vs {rhs}");
    }

    #[test]
    fn weighted_projection_constant_density_matches_leray() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let sp = Spectral::new(g).unwrap();
        let a = random_vector(g, 8);
        let beta = vec![0.5; g.npts()];
        let (pa, _) = sp.weighted_project(&a, &beta, 1e-14, 100).unwrap();
        let pl = sp.leray_project(&a).unwrap();
        assert!(pa.sub(&pl).max_abs() < 1e-11);
    }
}
