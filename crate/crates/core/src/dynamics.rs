//! Wavepacket preparation and time evolution.
//!
//! Units: energies in E_R, times in ħ/E_R, ħ = 1. Both integrators are the
//! classical fixed-step RK4 applied to
//!
//! ```text
//! i dψ_i/dt = (Hψ)_i + λ J n_i ψ_i,      n_i = Σ_s |ψ_{i,s}|²
//! ```
//!
//! with `λ = 0` for the linear evolution. No renormalization is applied,
//! so norm drift is a direct measure of integration error.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::{FieldKind, HoppingMatrix};
use crate::lattice::{Lattice, LatticeKind};
use crate::observables::{density, DensityRecord};

const MODULE: &str = "dynamics";

/// Upper bound on `dt · max_row_sum(|H|)`.
pub const STEP_GUARD: f64 = 0.1;

/// Largest state dimension accepted by the dense oracle.
pub const ORACLE_MAX_DIM: usize = 512;

/// Matrix-vector products switch to rayon above this many rows.
const PARALLEL_ROWS: usize = 16_384;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    spin_dim: usize,
    /// Site-major: `amps[site * spin_dim + s]`.
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn new(spin_dim: usize, amps: Vec<Complex64>) -> Result<Self> {
        if spin_dim == 0 || !amps.len().is_multiple_of(spin_dim) {
            return Err(Error::invalid(MODULE, "amplitudes", format!("length {} is not a multiple of spin_dim {spin_dim}", amps.len())));
        }
        Ok(StateVector { spin_dim, amps })
    }

    pub fn spin_dim(&self) -> usize {
        self.spin_dim
    }

    pub fn n_sites(&self) -> usize {
        self.amps.len() / self.spin_dim
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, site: usize, spin: usize) -> Complex64 {
        self.amps[site * self.spin_dim + spin]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Multiply site `i` by `e^{iθ_i}` (all spin components).
    pub fn with_site_phases(&self, theta: &[f64]) -> StateVector {
        let d = self.spin_dim;
        let amps = self
            .amps
            .iter()
            .enumerate()
            .map(|(k, z)| z * Complex64::from_polar(1.0, theta[k / d]))
            .collect();
        StateVector { spin_dim: d, amps }
    }

    /// Largest componentwise `|ψ - φ|`.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Gaussian envelope `exp(-d²/2w²)` over hop distance `d` from
/// `center_site`, real and positive. `width == 0` gives a single-site packet.
/// `spin_weights` are amplitude weights for the two components (normalized;
/// equal by default) and are only used when `spin_dim == 2`.
pub fn prepare_packet(lattice: &Lattice, center_site: usize, width: f64, spin_dim: usize, spin_weights: Option<[f64; 2]>) -> Result<StateVector> {
    if center_site >= lattice.len() {
        return Err(Error::invalid(MODULE, "center_site", format!("site {center_site} out of range (lattice has {} sites)", lattice.len())));
    }
    if !(width.is_finite() && width >= 0.0) {
        return Err(Error::invalid(MODULE, "width", format!("must be finite and >= 0, got {width}")));
    }
    let weights = match spin_dim {
        1 => vec![1.0],
        2 => {
            let [a, b] = spin_weights.unwrap_or([1.0, 1.0]);
            let n = a.hypot(b);
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::invalid(MODULE, "spin_weights", "weights must be finite and not both zero"));
            }
            vec![a / n, b / n]
        }
        d => return Err(Error::invalid(MODULE, "spin_dim", format!("must be 1 or 2, got {d}"))),
    };
    let dist = lattice.graph_distances(center_site);
    let envelope: Vec<f64> = dist
        .iter()
        .map(|&d| {
            if d == usize::MAX {
                0.0
            } else if width == 0.0 {
                if d == 0 { 1.0 } else { 0.0 }
            } else {
                let d = d as f64;
                (-d * d / (2.0 * width * width)).exp()
            }
        })
        .collect();
    let norm = envelope.iter().map(|e| e * e).sum::<f64>().sqrt();
    let amps = envelope
        .iter()
        .flat_map(|e| weights.iter().map(move |w| Complex64::new(e / norm * w, 0.0)))
        .collect();
    Ok(StateVector { spin_dim, amps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolveParams {
    pub dt: f64,
    pub t_end: f64,
    /// `U<n>/2J`; ignored by [`evolve_linear`].
    pub lambda: f64,
    /// Steps between density snapshots.
    pub record_stride: usize,
}

impl Default for EvolveParams {
    fn default() -> Self {
        EvolveParams {
            dt: 0.05,
            t_end: 600.0,
            lambda: 0.0,
            record_stride: 20,
        }
    }
}

impl EvolveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(MODULE, "dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::invalid(MODULE, "t_end", format!("must be finite and >= 0, got {}", self.t_end)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(MODULE, "lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid(MODULE, "record_stride", "must be >= 1"));
        }
        Ok(())
    }

    /// Number of steps and the step actually taken, so that the last
    /// step lands exactly on `t_end`.
    pub fn schedule(&self) -> (usize, f64) {
        if self.t_end == 0.0 {
            return (0, self.dt);
        }
        let n = ((self.t_end / self.dt).round() as usize).max(1);
        (n, self.t_end / n as f64)
    }
}

/// Hamiltonian `H = -Σ (J_ij a_i† a_j + h.c.)` in compressed-row form with
/// spin blocks expanded.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseHamiltonian {
    pub fn new(h: &HoppingMatrix) -> Self {
        let d = h.spin_dim();
        let dim = h.dimension();
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); dim];
        for (&(i, j), hop) in h.entries() {
            for a in 0..d {
                for b in 0..d {
                    let z = hop.component(a, b);
                    if z != ZERO {
                        rows[i * d + a].push((j * d + b, -z));
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|&(c, _)| c);
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseHamiltonian { dim, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row_dot(&self, row: usize, x: &[Complex64]) -> Complex64 {
        let mut acc = ZERO;
        for k in self.row_ptr[row]..self.row_ptr[row + 1] {
            acc += self.vals[k] * x[self.cols[k]];
        }
        acc
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        if self.dim >= PARALLEL_ROWS {
            y.par_iter_mut().enumerate().for_each(|(r, out)| *out = self.row_dot(r, x));
        } else {
            for (r, out) in y.iter_mut().enumerate() {
                *out = self.row_dot(r, x);
            }
        }
    }

    /// `<x|H|x>`.
    pub fn expectation(&self, x: &[Complex64]) -> f64 {
        (0..self.dim).map(|r| (x[r].conj() * self.row_dot(r, x)).re).sum()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k])] += self.vals[k];
            }
        }
        m
    }
}

/// Total density per site, summed over spin components.
fn site_densities(psi: &[Complex64], d: usize) -> Vec<f64> {
    psi.chunks(d).map(|c| c.iter().map(|z| z.norm_sqr()).sum()).collect()
}

/// Conserved energy: `<ψ|H|ψ> + (λJ/2) Σ n_i²`.
pub fn energy(h: &HoppingMatrix, psi: &StateVector, lambda: f64) -> f64 {
    let op = SparseHamiltonian::new(h);
    energy_with(&op, psi.amplitudes(), psi.spin_dim(), lambda * h.hop_scale())
}

fn energy_with(op: &SparseHamiltonian, psi: &[Complex64], d: usize, g: f64) -> f64 {
    let kinetic = op.expectation(psi);
    if g == 0.0 {
        return kinetic;
    }
    let interaction: f64 = site_densities(psi, d).iter().map(|n| n * n).sum();
    kinetic + 0.5 * g * interaction
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub geometry: LatticeKind,
    pub field: FieldKind,
    pub spin_dim: usize,
    pub lambda: f64,
    /// Step actually used (`t_end / steps`).
    pub dt: f64,
    pub steps: usize,
}

/// Conservation checks gathered at every snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `max |Σ|ψ|² - Σ|ψ₀|²|`.
    pub max_norm_drift: f64,
    pub initial_energy: f64,
    /// `max |E(t) - E(0)| / |E(0)|`, absolute when `E(0) = 0`.
    pub max_energy_drift: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<DensityRecord>,
    pub meta: TrajectoryMeta,
    pub diagnostics: Diagnostics,
    pub final_state: StateVector,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.time)
    }
}

struct Rk4Buffers {
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
    hx: Vec<Complex64>,
}

/// `out = -i (Hψ + g n ψ)`.
fn rhs(op: &SparseHamiltonian, d: usize, g: f64, psi: &[Complex64], hx: &mut [Complex64], out: &mut [Complex64]) {
    op.apply(psi, hx);
    if g != 0.0 {
        for (block, hblock) in psi.chunks(d).zip(hx.chunks_mut(d)) {
            let n: f64 = block.iter().map(|z| z.norm_sqr()).sum();
            for (h, z) in hblock.iter_mut().zip(block) {
                *h += z * (g * n);
            }
        }
    }
    for (o, h) in out.iter_mut().zip(hx.iter()) {
        *o = Complex64::new(h.im, -h.re);
    }
}

fn rk4_step(op: &SparseHamiltonian, d: usize, g: f64, dt: f64, psi: &mut [Complex64], buf: &mut Rk4Buffers) {
    let Rk4Buffers { k, tmp, hx } = buf;
    let [k1, k2, k3, k4] = k;
    rhs(op, d, g, psi, hx, k1);
    for ((t, p), a) in tmp.iter_mut().zip(psi.iter()).zip(k1.iter()) {
        *t = p + a * (0.5 * dt);
    }
    rhs(op, d, g, tmp, hx, k2);
    for ((t, p), a) in tmp.iter_mut().zip(psi.iter()).zip(k2.iter()) {
        *t = p + a * (0.5 * dt);
    }
    rhs(op, d, g, tmp, hx, k3);
    for ((t, p), a) in tmp.iter_mut().zip(psi.iter()).zip(k3.iter()) {
        *t = p + a * dt;
    }
    rhs(op, d, g, tmp, hx, k4);
    let w = dt / 6.0;
    for (idx, p) in psi.iter_mut().enumerate() {
        *p += (k1[idx] + (k2[idx] + k3[idx]) * 2.0 + k4[idx]) * w;
    }
}

fn check_inputs(h: &HoppingMatrix, psi0: &StateVector, params: &EvolveParams) -> Result<()> {
    params.validate()?;
    if psi0.spin_dim != h.spin_dim() || psi0.amps.len() != h.dimension() {
        return Err(Error::invalid(
            MODULE,
            "psi0",
            format!(
                "state has {} sites x {} spins but the hopping matrix has {} x {}",
                psi0.n_sites(),
                psi0.spin_dim,
                h.n_sites(),
                h.spin_dim()
            ),
        ));
    }
    let row = h.max_row_sum();
    if params.dt * row > STEP_GUARD {
        return Err(Error::numerical(
            MODULE,
            format!(
                "time step dt = {} too large: dt * max_row_sum(|J|) = {:.4} exceeds {STEP_GUARD}; use dt <= {:.6}",
                params.dt,
                params.dt * row,
                STEP_GUARD / row
            ),
        ));
    }
    Ok(())
}

fn integrate(h: &HoppingMatrix, psi0: &StateVector, params: &EvolveParams, lambda: f64) -> Result<Trajectory> {
    check_inputs(h, psi0, params)?;
    let op = SparseHamiltonian::new(h);
    let d = h.spin_dim();
    let g = lambda * h.hop_scale();
    let (steps, dt) = params.schedule();
    let dim = op.dim();
    let mut buf = Rk4Buffers {
        k: [vec![ZERO; dim], vec![ZERO; dim], vec![ZERO; dim], vec![ZERO; dim]],
        tmp: vec![ZERO; dim],
        hx: vec![ZERO; dim],
    };
    let mut psi = psi0.amps.clone();
    let n0 = psi0.norm_sqr();
    let e0 = energy_with(&op, &psi, d, g);
    let mut diag = Diagnostics {
        max_norm_drift: 0.0,
        initial_energy: e0,
        max_energy_drift: 0.0,
    };
    let mut records = Vec::with_capacity(steps / params.record_stride + 2);
    let mut snapshot = |step: usize, psi: &[Complex64], diag: &mut Diagnostics| {
        let state = StateVector { spin_dim: d, amps: psi.to_vec() };
        let norm = state.norm_sqr();
        diag.max_norm_drift = diag.max_norm_drift.max((norm - n0).abs());
        let e = energy_with(&op, psi, d, g);
        let de = if e0 != 0.0 { (e - e0).abs() / e0.abs() } else { (e - e0).abs() };
        diag.max_energy_drift = diag.max_energy_drift.max(de);
        records.push(density(&state, step as f64 * dt));
    };
    snapshot(0, &psi, &mut diag);
    for step in 1..=steps {
        rk4_step(&op, d, g, dt, &mut psi, &mut buf);
        if step % params.record_stride == 0 || step == steps {
            snapshot(step, &psi, &mut diag);
        }
    }
    Ok(Trajectory {
        records,
        meta: TrajectoryMeta {
            geometry: h.geometry(),
            field: h.field(),
            spin_dim: d,
            lambda,
            dt,
            steps,
        },
        diagnostics: diag,
        final_state: StateVector { spin_dim: d, amps: psi },
    })
}

/// Linear evolution; `params.lambda` is ignored.
pub fn evolve_linear(h: &HoppingMatrix, psi0: &StateVector, params: &EvolveParams) -> Result<Trajectory> {
    integrate(h, psi0, params, 0.0)
}

/// Discrete Gross–Pitaevskii evolution with on-site term `λ J n_i ψ_i`,
/// `J = h.hop_scale()`. For two spin components `n_i` is the total site
/// density.
pub fn evolve_gpe(h: &HoppingMatrix, psi0: &StateVector, params: &EvolveParams) -> Result<Trajectory> {
    integrate(h, psi0, params, params.lambda)
}

/// Dense eigendecomposition of a small Hamiltonian, reusable across times.
pub struct SpectralPropagator {
    energies: Vec<f64>,
    vectors: DMatrix<Complex64>,
    spin_dim: usize,
}

impl SpectralPropagator {
    pub fn new(h: &HoppingMatrix) -> Result<Self> {
        let dim = h.dimension();
        if dim > ORACLE_MAX_DIM {
            return Err(Error::invalid(MODULE, "dimension", format!("dense oracle limited to dimension {ORACLE_MAX_DIM}, got {dim}")));
        }
        let dense = SparseHamiltonian::new(h).to_dense();
        let eig = dense.symmetric_eigen();
        Ok(SpectralPropagator {
            energies: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
            spin_dim: h.spin_dim(),
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `e^{-iHt} ψ₀`.
    pub fn evolve(&self, psi0: &StateVector, t: f64) -> Result<StateVector> {
        if psi0.amps.len() != self.energies.len() || psi0.spin_dim != self.spin_dim {
            return Err(Error::invalid(MODULE, "psi0", "state dimension does not match the Hamiltonian"));
        }
        let v = DVector::from_column_slice(&psi0.amps);
        let mut c = self.vectors.adjoint() * v;
        for (ck, e) in c.iter_mut().zip(&self.energies) {
            *ck *= Complex64::from_polar(1.0, -e * t);
        }
        let out = &self.vectors * c;
        Ok(StateVector {
            spin_dim: self.spin_dim,
            amps: out.iter().copied().collect(),
        })
    }
}

/// `e^{-iHt} ψ₀` by full diagonalization; dimension capped at
/// [`ORACLE_MAX_DIM`].
pub fn exact_evolve_small(h: &HoppingMatrix, psi0: &StateVector, t: f64) -> Result<StateVector> {
    SpectralPropagator::new(h)?.evolve(psi0, t)
}
