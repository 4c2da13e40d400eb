//! Truncated Fock-space operators, states, and transformations.
//!
//! Quadrature convention (ħ = 1):
//!
//! ```text
//! X̂ = (â + â†)/√2      P̂ = (â − â†)/(i√2)      [X̂, P̂] = i
//! ```
//!
//! Vacuum variance of either quadrature is 1/2. The rotated quadrature is
//! x̂_θ = x̂·cosθ + p̂·sinθ with eigenvector components ⟨n|x;x̂_θ⟩ = e^{iθn}ψ_n(x)
//! in terms of the Hermite functions ψ_n.
//!
//! All unitary factories exponentiate Hermitian generators through an
//! eigendecomposition, so the returned matrices are exactly unitary on the
//! truncated space; physical fidelity is guaranteed on the low-photon block
//! and guarded by explicit norm checks where displacements could leak
//! probability past the cutoff.

use ndarray::{Array1, Array2};
use ndarray::linalg::kron;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{dagger, unitary_exp_i};

/// Quadrature convention constant. The whole numeric layer assumes ħ = 1.
pub const HBAR: f64 = 1.0;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

// ── Configuration ────────────────────────────────────────────────────────────

/// Photon-number cutoff and quadrature convention for one mode.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FockConfig {
    /// Photon-number cutoff; the per-mode dimension is n_max + 1.
    pub n_max: usize,
    /// Must equal 1; kept in the config so serialized runs state their convention.
    #[serde(default = "default_hbar")]
    pub hbar: f64,
}

fn default_hbar() -> f64 {
    HBAR
}

impl FockConfig {
    pub fn new(n_max: usize) -> Self {
        FockConfig { n_max, hbar: HBAR }
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(SimError::InvalidConfig(format!(
                "n_max must be at least 1, got {}",
                self.n_max
            )));
        }
        if self.hbar != HBAR {
            return Err(SimError::InvalidConfig(format!(
                "hbar is fixed to 1 by the quadrature convention, got {}",
                self.hbar
            )));
        }
        Ok(())
    }
}

// ── Operator containers ──────────────────────────────────────────────────────

/// Dense single-mode operator in the Fock basis.
#[derive(Clone, Debug)]
pub struct FockOperator {
    pub dim: usize,
    pub mat: Array2<Complex64>,
}

impl FockOperator {
    pub fn from_matrix(mat: Array2<Complex64>) -> Self {
        let dim = mat.nrows();
        assert_eq!(dim, mat.ncols(), "operator matrix must be square");
        FockOperator { dim, mat }
    }

    pub fn identity(dim: usize) -> Self {
        FockOperator {
            dim,
            mat: Array2::eye(dim),
        }
    }

    pub fn dagger(&self) -> Self {
        FockOperator::from_matrix(dagger(&self.mat))
    }

    pub fn matmul(&self, rhs: &FockOperator) -> Self {
        FockOperator::from_matrix(self.mat.dot(&rhs.mat))
    }

    /// Tr[self · rho].
    pub fn expectation(&self, rho: &FockOperator) -> Complex64 {
        (self.mat.dot(&rho.mat)).diag().sum()
    }

    pub fn trace(&self) -> Complex64 {
        self.mat.diag().sum()
    }

    /// Checks Hermiticity, unit trace, and positive semidefiniteness.
    pub fn check_density(&self, tol: f64) -> Result<()> {
        let herm_defect = crate::linalg::frobenius_distance(&self.mat, &dagger(&self.mat));
        if herm_defect > tol {
            return Err(SimError::InvalidConfig(format!(
                "density operator not Hermitian (defect {herm_defect:.2e})"
            )));
        }
        let tr = self.trace();
        if (tr - c(1.0, 0.0)).norm() > tol {
            return Err(SimError::InvalidConfig(format!(
                "density operator trace {tr} is not 1"
            )));
        }
        let (lams, _) = crate::linalg::hermitian_eig(&self.mat);
        if let Some(&min) = lams.first() {
            if min < -tol {
                return Err(SimError::InvalidConfig(format!(
                    "density operator has negative eigenvalue {min:.2e}"
                )));
            }
        }
        Ok(())
    }
}

/// Two-mode state in the tensor basis |n₁⟩⊗|n₂⟩, flat index n₁·dim + n₂.
#[derive(Clone, Debug)]
pub struct TwoModeState {
    /// Per-mode dimension.
    pub dim: usize,
    /// dim² × dim² density matrix.
    pub mat: Array2<Complex64>,
}

impl TwoModeState {
    /// Tensor product ρ₁ ⊗ ρ₂.
    pub fn product(rho1: &FockOperator, rho2: &FockOperator) -> Self {
        assert_eq!(rho1.dim, rho2.dim, "modes must share one cutoff");
        TwoModeState {
            dim: rho1.dim,
            mat: kron(&rho1.mat, &rho2.mat),
        }
    }

    /// Traces out mode 2, returning the state of mode 1.
    pub fn partial_trace_mode2(&self) -> FockOperator {
        let d = self.dim;
        let mut out = Array2::<Complex64>::zeros((d, d));
        for n1 in 0..d {
            for m1 in 0..d {
                let mut s = c(0.0, 0.0);
                for k in 0..d {
                    s += self.mat[(n1 * d + k, m1 * d + k)];
                }
                out[(n1, m1)] = s;
            }
        }
        FockOperator::from_matrix(out)
    }

    /// Traces out mode 1, returning the state of mode 2.
    pub fn partial_trace_mode1(&self) -> FockOperator {
        let d = self.dim;
        let mut out = Array2::<Complex64>::zeros((d, d));
        for n2 in 0..d {
            for m2 in 0..d {
                let mut s = c(0.0, 0.0);
                for k in 0..d {
                    s += self.mat[(k * d + n2, k * d + m2)];
                }
                out[(n2, m2)] = s;
            }
        }
        FockOperator::from_matrix(out)
    }

    pub fn trace(&self) -> Complex64 {
        self.mat.diag().sum()
    }
}

// ── Ladder and quadrature operators ──────────────────────────────────────────

/// Annihilation operator â and the quadratures X̂, P̂ for the given cutoff.
pub fn ladder_and_quadratures(cfg: &FockConfig) -> Result<(FockOperator, FockOperator, FockOperator)> {
    cfg.validate()?;
    let d = cfg.dim();
    let mut a = Array2::<Complex64>::zeros((d, d));
    for n in 1..d {
        a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    let adag = dagger(&a);
    let s = (cfg.hbar / 2.0).sqrt();
    let x = (&a + &adag).mapv(|z| z * s);
    // P = (a − a†)/(i√2) = i(a† − a)/√2
    let p = (&adag - &a).mapv(|z| c(0.0, s) * z);
    Ok((
        FockOperator::from_matrix(a),
        FockOperator::from_matrix(x),
        FockOperator::from_matrix(p),
    ))
}

/// Photon-number operator n̂.
pub fn number_operator(dim: usize) -> FockOperator {
    let mut n = Array2::<Complex64>::zeros((dim, dim));
    for k in 0..dim {
        n[(k, k)] = c(k as f64, 0.0);
    }
    FockOperator::from_matrix(n)
}

/// Fock basis vector |n⟩.
pub fn basis_state(n: usize, dim: usize) -> Array1<Complex64> {
    let mut v = Array1::<Complex64>::zeros(dim);
    v[n] = c(1.0, 0.0);
    v
}

/// |ψ⟩⟨ψ| from an (unnormalized-tolerant) amplitude vector.
pub fn density_from_pure(psi: &Array1<Complex64>) -> FockOperator {
    let d = psi.len();
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut out = Array2::<Complex64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = psi[i] * psi[j].conj() / (norm * norm);
        }
    }
    FockOperator::from_matrix(out)
}

// ── Displacement ─────────────────────────────────────────────────────────────

/// Displacement unitary shifting ⟨X̂⟩ by dx and ⟨P̂⟩ by dp.
///
/// Built as exp(β↠− β*â) with β = (dx + i·dp)/√2 through an exact
/// eigendecomposition. Errors if the displaced vacuum would lose more than
/// 1e-6 of its norm past the cutoff (Poisson tail check on |β|²).
pub fn displacement(dx: f64, dp: f64, cfg: &FockConfig) -> Result<FockOperator> {
    cfg.validate()?;
    let beta = c(dx, dp) / 2f64.sqrt();
    displaced_vacuum_tail_check(beta.norm_sqr(), cfg.n_max)?;
    let d = cfg.dim();
    // H = −i(β↠− β*â) is Hermitian and exp(iH) = D(β).
    let mut h = Array2::<Complex64>::zeros((d, d));
    for n in 1..d {
        let root = (n as f64).sqrt();
        h[(n, n - 1)] = c(0.0, -1.0) * beta * root;
        h[(n - 1, n)] = c(0.0, 1.0) * beta.conj() * root;
    }
    Ok(FockOperator::from_matrix(unitary_exp_i(&h)))
}

fn displaced_vacuum_tail_check(lambda: f64, n_max: usize) -> Result<()> {
    // Captured Poisson mass Σ_{n≤n_max} e^{−λ} λⁿ/n!.
    let mut term = (-lambda).exp();
    let mut cum = term;
    for n in 1..=n_max {
        term *= lambda / n as f64;
        cum += term;
    }
    if cum < 1.0 - 1e-6 {
        return Err(SimError::Truncation(format!(
            "displaced vacuum keeps only {cum:.9} of its norm below the cutoff \
             (|β|² = {lambda:.3}, n_max = {n_max})"
        )));
    }
    Ok(())
}

/// Closed-form matrix elements ⟨m|D(β)|n⟩ of the displacement operator.
///
/// Uses the associated-Laguerre representation with log-scaled factorial
/// prefactors; this is the entrywise truncation of the exact infinite matrix,
/// independent of the exponential route, and remains finite for large |β|.
pub fn displacement_matrix(beta: Complex64, dim: usize) -> Array2<Complex64> {
    if beta.norm() < 1e-300 {
        return Array2::eye(dim);
    }
    let x = beta.norm_sqr();
    let ln_b = beta.norm().ln();
    let arg = beta.arg();
    let lnfact = ln_factorials(dim);
    let mut out = Array2::<Complex64>::zeros((dim, dim));
    for d_off in 0..dim {
        // Upper band m = n + d_off: √(n!/m!) β^{d} e^{−x/2} L_n^{(d)}(x).
        let mut l_prev = 0.0f64;
        let mut l_cur = 1.0f64;
        for n in 0..(dim - d_off) {
            let m = n + d_off;
            if n >= 1 {
                let nf = n as f64;
                let l_next = ((2.0 * (nf - 1.0) + 1.0 + d_off as f64 - x) * l_cur
                    - (nf - 1.0 + d_off as f64) * l_prev)
                    / nf;
                l_prev = l_cur;
                l_cur = l_next;
            }
            let log_mag = 0.5 * (lnfact[n] - lnfact[m]) + d_off as f64 * ln_b - 0.5 * x;
            let mag = log_mag.exp() * l_cur;
            let phase = Complex64::from_polar(1.0, d_off as f64 * arg);
            out[(m, n)] = phase * mag;
            if d_off > 0 {
                // Lower band via ⟨n|D(β)|m⟩ = (−1)^d conj-phase variant:
                // √(n!/m!)(−β*)^d e^{−x/2} L_n^{(d)}(x) at (row n, col m).
                let phase_low = Complex64::from_polar(1.0, -(d_off as f64) * arg)
                    * if d_off % 2 == 1 { -1.0 } else { 1.0 };
                out[(n, m)] = phase_low * mag;
            }
        }
    }
    out
}

fn ln_factorials(count: usize) -> Vec<f64> {
    let mut v = vec![0.0; count];
    for n in 1..count {
        v[n] = v[n - 1] + (n as f64).ln();
    }
    v
}

// ── Shear ────────────────────────────────────────────────────────────────────

/// Shear unitary P̂(k) = exp(i·k·X̂²), the nonlinear feedforward correction.
pub fn shear(k: f64, cfg: &FockConfig) -> Result<FockOperator> {
    cfg.validate()?;
    let (_, x, _) = ladder_and_quadratures(cfg)?;
    let h = x.mat.dot(&x.mat).mapv(|z| z * k);
    let u = unitary_exp_i(&h);
    // Exact unitarity comes from the eigendecomposition; guard anyway so a
    // future construction change cannot silently break the contract.
    let d = cfg.dim();
    let block = (2 * d) / 3;
    let prod = dagger(&u).dot(&u);
    let mut defect = 0.0f64;
    for i in 0..block {
        for j in 0..block {
            let want = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
            defect += (prod[(i, j)] - want).norm_sqr();
        }
    }
    if defect.sqrt() > 1e-6 {
        return Err(SimError::Truncation(format!(
            "shear unitarity defect {:.2e} on the low-photon block (k = {k})",
            defect.sqrt()
        )));
    }
    Ok(FockOperator::from_matrix(u))
}

// ── Beamsplitter ─────────────────────────────────────────────────────────────

/// Total-photon-number blocks of the beamsplitter unitary.
///
/// The generator ↠b̂ − â b̂† conserves n₁+n₂, so the unitary factorizes over
/// blocks of fixed total N. Each entry is (flat tensor indices, unitary block).
/// Convention: mode 1 transmits with +√T, so Heisenberg-picture
/// â → √T·â − √(1−T)·b̂ and b̂ → √(1−T)·â + √T·b̂; coherent inputs |α⟩⊗|β⟩ map
/// to |√T·α − √(1−T)·β⟩ ⊗ |√(1−T)·α + √T·β⟩.
pub fn beamsplitter_blocks(dim: usize, transmittance: f64) -> Vec<(Vec<usize>, Array2<Complex64>)> {
    let theta = -transmittance.sqrt().min(1.0).acos();
    let n_max = dim - 1;
    let mut blocks = Vec::with_capacity(2 * n_max + 1);
    for total in 0..=(2 * n_max) {
        let k_min = total.saturating_sub(n_max);
        let k_max = total.min(n_max);
        let size = k_max - k_min + 1;
        let idxs: Vec<usize> = (k_min..=k_max).map(|k| k * dim + (total - k)).collect();
        if size == 1 {
            blocks.push((idxs, Array2::eye(1)));
            continue;
        }
        // G|k, N−k⟩ = √((k+1)(N−k))|k+1, N−k−1⟩ − √(k(N−k+1))|k−1, N−k+1⟩;
        // H = −i·θ·G is Hermitian and the block unitary is exp(iH) = exp(θG).
        let mut h = Array2::<Complex64>::zeros((size, size));
        for (r, k) in (k_min..k_max).enumerate() {
            let g = (((k + 1) * (total - k)) as f64).sqrt();
            h[(r + 1, r)] = c(0.0, -theta * g);
            h[(r, r + 1)] = c(0.0, theta * g);
        }
        blocks.push((idxs, unitary_exp_i(&h)));
    }
    blocks
}

/// Applies the beamsplitter to a two-mode density matrix: ρ → B ρ B†.
pub fn beamsplitter(state: &TwoModeState, transmittance: f64) -> Result<TwoModeState> {
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(SimError::InvalidConfig(format!(
            "beamsplitter transmittance must lie in [0, 1], got {transmittance}"
        )));
    }
    let blocks = beamsplitter_blocks(state.dim, transmittance);
    let d2 = state.dim * state.dim;
    // tmp = B ρ (row mixing inside each block)
    let mut tmp = state.mat.clone();
    for (idxs, u) in &blocks {
        let s = idxs.len();
        if s == 1 {
            continue;
        }
        for col in 0..d2 {
            let gathered: Vec<Complex64> = idxs.iter().map(|&i| state.mat[(i, col)]).collect();
            for r in 0..s {
                let mut acc = c(0.0, 0.0);
                for cc in 0..s {
                    acc += u[(r, cc)] * gathered[cc];
                }
                tmp[(idxs[r], col)] = acc;
            }
        }
    }
    // out = tmp B† (column mixing inside each block)
    let mut out = tmp.clone();
    for (idxs, u) in &blocks {
        let s = idxs.len();
        if s == 1 {
            continue;
        }
        for row in 0..d2 {
            let gathered: Vec<Complex64> = idxs.iter().map(|&j| tmp[(row, j)]).collect();
            for cprime in 0..s {
                let mut acc = c(0.0, 0.0);
                for cc in 0..s {
                    acc += gathered[cc] * u[(cprime, cc)].conj();
                }
                out[(row, idxs[cprime])] = acc;
            }
        }
    }
    Ok(TwoModeState {
        dim: state.dim,
        mat: out,
    })
}

/// Applies the beamsplitter to a pure two-mode state vector.
pub fn beamsplitter_vec(
    psi: &Array1<Complex64>,
    blocks: &[(Vec<usize>, Array2<Complex64>)],
) -> Array1<Complex64> {
    let mut out = psi.clone();
    for (idxs, u) in blocks {
        let s = idxs.len();
        if s == 1 {
            continue;
        }
        let gathered: Vec<Complex64> = idxs.iter().map(|&i| psi[i]).collect();
        for r in 0..s {
            let mut acc = c(0.0, 0.0);
            for cc in 0..s {
                acc += u[(r, cc)] * gathered[cc];
            }
            out[idxs[r]] = acc;
        }
    }
    out
}

// ── Anti-unitary conjugation ─────────────────────────────────────────────────

/// Anti-unitary map x̂ → x̂, p̂ → −p̂: entrywise complex conjugation in the Fock
/// basis (Fock wavefunctions are real in the x representation).
pub fn anti_unitary_t(state: &FockOperator) -> FockOperator {
    FockOperator::from_matrix(state.mat.mapv(|z| z.conj()))
}

// ── Hermite functions and quadrature densities ───────────────────────────────

/// Normalized Hermite functions ψ₀..ψ_{n_max} at position x.
///
/// ψ₀ = π^{−1/4} e^{−x²/2}; ψ_{n+1} = x·√(2/(n+1))·ψ_n − √(n/(n+1))·ψ_{n−1}.
/// The normalized recurrence is stable upward for every x.
pub fn hermite_functions(x: f64, n_max: usize) -> Vec<f64> {
    let mut psi = vec![0.0; n_max + 1];
    psi[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if n_max >= 1 {
        psi[1] = x * 2f64.sqrt() * psi[0];
    }
    for n in 1..n_max {
        let nf = n as f64;
        psi[n + 1] =
            x * (2.0 / (nf + 1.0)).sqrt() * psi[n] - (nf / (nf + 1.0)).sqrt() * psi[n - 1];
    }
    psi
}

/// Components ⟨n|x;x̂_θ⟩ = e^{iθn}·ψ_n(x) of the rotated quadrature eigenvector.
pub fn rotated_position_vector(theta: f64, x: f64, dim: usize) -> Array1<Complex64> {
    let psi = hermite_functions(x, dim - 1);
    Array1::from_iter(
        (0..dim).map(|n| Complex64::from_polar(psi[n], theta * n as f64)),
    )
}

/// Normalized Hermite polynomials ψ_n(x)·e^{x²/2}, i.e. the Hermite functions
/// with the Gaussian stripped. Same stable recurrence; used when the Gaussian
/// is folded into quadrature weights instead (products ψ_m·ψ_n·e^{x²} are
/// then exact polynomials of degree m + n).
pub fn hermite_polys(x: f64, n_max: usize) -> Vec<f64> {
    let mut h = vec![0.0; n_max + 1];
    h[0] = std::f64::consts::PI.powf(-0.25);
    if n_max >= 1 {
        h[1] = x * 2f64.sqrt() * h[0];
    }
    for n in 1..n_max {
        let nf = n as f64;
        h[n + 1] = x * (2.0 / (nf + 1.0)).sqrt() * h[n] - (nf / (nf + 1.0)).sqrt() * h[n - 1];
    }
    h
}

/// Probability density of the rotated quadrature x̂_θ on the given grid.
///
/// Errors with GridTooNarrow when the grid captures less than 99.9% of the
/// probability (trapezoidal estimate).
pub fn quadrature_wavefunction(
    state: &FockOperator,
    theta: f64,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let d = state.dim;
    let dens: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let v = rotated_position_vector(theta, x, d);
            let mut s = c(0.0, 0.0);
            for m in 0..d {
                for n in 0..d {
                    s += v[m].conj() * state.mat[(m, n)] * v[n];
                }
            }
            s.re
        })
        .collect();
    let captured = trapezoid(grid, &dens);
    let total = state.trace().re;
    if captured < 0.999 * total {
        return Err(SimError::GridTooNarrow {
            captured,
            required: 0.999 * total,
        });
    }
    Ok(dens)
}

/// Trapezoidal integral of samples ys over the sorted grid xs.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 1..xs.len() {
        s += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    s
}

// ── Wigner function ──────────────────────────────────────────────────────────

/// Wigner function on the grid xs × ps, normalized so ∫∫ W dx dp = Tr[op].
///
/// Evaluated through the displaced-parity form W(x,p) = (1/π)·Tr[ρ D̂(2β) Π̂]
/// with β = (x + i·p)/√2 and parity Π̂|n⟩ = (−1)ⁿ|n⟩, using the closed-form
/// displacement matrix (stable at large phase-space radius).
pub fn wigner_grid(op: &FockOperator, xs: &[f64], ps: &[f64]) -> Array2<f64> {
    let d = op.dim;
    let inv_pi = 1.0 / std::f64::consts::PI;
    let mut w = Array2::<f64>::zeros((xs.len(), ps.len()));
    for (ix, &x) in xs.iter().enumerate() {
        for (ip, &p) in ps.iter().enumerate() {
            let beta = c(x, p) * 2f64.sqrt(); // 2·(x + i p)/√2
            let dmat = displacement_matrix(beta, d);
            // Tr[ρ D Π] = Σ_{n,m} ρ_{nm} D_{mn} (−1)ⁿ
            let mut s = c(0.0, 0.0);
            for n in 0..d {
                let parity = if n % 2 == 1 { -1.0 } else { 1.0 };
                for m in 0..d {
                    s += op.mat[(n, m)] * dmat[(m, n)] * parity;
                }
            }
            w[(ix, ip)] = inv_pi * s.re;
        }
    }
    w
}

/// Writes a Wigner grid as CSV rows (x, p, w).
pub fn write_wigner_csv<W: std::io::Write>(
    out: W,
    xs: &[f64],
    ps: &[f64],
    w: &Array2<f64>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["x", "p", "w"])?;
    for (ix, &x) in xs.iter().enumerate() {
        for (ip, &p) in ps.iter().enumerate() {
            wtr.write_record(&[format!("{x}"), format!("{p}"), format!("{}", w[(ix, ip)])])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

// ── JSON operator container ──────────────────────────────────────────────────

/// Serialization container: row-major [re, im] entry pairs.
#[derive(Serialize, Deserialize)]
pub struct OperatorJson {
    pub dim: usize,
    pub entries: Vec<[f64; 2]>,
}

impl OperatorJson {
    pub fn from_operator(op: &FockOperator) -> Self {
        OperatorJson {
            dim: op.dim,
            entries: op.mat.iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    pub fn to_operator(&self) -> Result<FockOperator> {
        if self.entries.len() != self.dim * self.dim {
            return Err(SimError::FileFormat(format!(
                "operator container has {} entries, expected {}",
                self.entries.len(),
                self.dim * self.dim
            )));
        }
        let mat = Array2::from_shape_vec(
            (self.dim, self.dim),
            self.entries.iter().map(|e| c(e[0], e[1])).collect(),
        )
        .expect("entry count checked above");
        Ok(FockOperator::from_matrix(mat))
    }

    pub fn save<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)
            .map_err(|e| SimError::FileFormat(format!("operator JSON write failed: {e}")))
    }

    pub fn load<R: std::io::Read>(input: R) -> Result<Self> {
        serde_json::from_reader(input)
            .map_err(|e| SimError::FileFormat(format!("operator JSON read failed: {e}")))
    }
}
