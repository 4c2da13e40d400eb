//! Input and ancilla states, the nonlinear-squeezing metric, loss channels,
//! and the Gaussian lower bound on var(p̂ + γx̂²).
//!
//! The canonical non-Gaussian ancilla is the 0/1 superposition
//! 0.8|0⟩ − 0.6i|1⟩; with γ = 0.52 it reaches
//! var(p̂ − γx̂²) = 0.69404416 − 0.179712·√2 ≈ 0.43989, well below both the
//! vacuum value 0.5·(1+γ²) = 0.6352 and the Gaussian-state bound
//! (3/8)·(16γ²)^(1/3) ≈ 0.61105.

use ndarray::Array1;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::error::{Result, SimError};
use crate::fock::{
    basis_state, density_from_pure, ladder_and_quadratures, FockConfig, FockOperator, OperatorJson,
};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

// ── Domain types ─────────────────────────────────────────────────────────────

/// Coherent probe amplitude, α = (α_x + i·α_p)/√2 so ⟨X̂⟩ = α_x, ⟨P̂⟩ = α_p.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherentProbe {
    pub alpha_x: f64,
    pub alpha_p: f64,
}

impl CoherentProbe {
    pub fn new(alpha_x: f64, alpha_p: f64) -> Self {
        CoherentProbe { alpha_x, alpha_p }
    }

    pub fn alpha(&self) -> Complex64 {
        c(self.alpha_x, self.alpha_p) / 2f64.sqrt()
    }

    /// Mean photon number |α|².
    pub fn mean_photons(&self) -> f64 {
        0.5 * (self.alpha_x * self.alpha_x + self.alpha_p * self.alpha_p)
    }
}

/// Ancilla preparation request.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AncillaSpec {
    /// |0⟩⟨0|.
    Vacuum,
    /// Pure superposition Σ cₙ|n⟩ with complex coefficients as [re, im] pairs.
    FockSuperposition { coefficients: Vec<(f64, f64)> },
    /// Density operator loaded from a JSON operator container.
    DensityFile { path: PathBuf },
}

impl AncillaSpec {
    /// The canonical non-Gaussian ancilla 0.8|0⟩ − 0.6i|1⟩.
    pub fn canonical() -> Self {
        AncillaSpec::FockSuperposition {
            coefficients: vec![(0.8, 0.0), (0.0, -0.6)],
        }
    }
}

/// Which nonlinear quadrature p̂ + sign·γ·x̂² to evaluate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NonlinearQuadratureSpec {
    pub gamma: f64,
    /// +1 or −1.
    pub sign: f64,
}

impl NonlinearQuadratureSpec {
    pub fn new(gamma: f64, sign: f64) -> Self {
        NonlinearQuadratureSpec { gamma, sign }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "gamma must be finite, got {}",
                self.gamma
            )));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(SimError::InvalidConfig(format!(
                "sign must be +1 or -1, got {}",
                self.sign
            )));
        }
        Ok(())
    }
}

impl Default for NonlinearQuadratureSpec {
    fn default() -> Self {
        NonlinearQuadratureSpec {
            gamma: 0.52,
            sign: 1.0,
        }
    }
}

/// Result of the Gaussian-state minimization of var(p̂ + γx̂²).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GaussianBound {
    pub value: f64,
    /// False when the value is an infimum approached only in a limit
    /// (unbounded squeezing at γ = 0).
    pub attained: bool,
}

// ── State constructors ───────────────────────────────────────────────────────

/// Coherent-state amplitudes e^{−|α|²/2} αⁿ/√(n!) up to the cutoff.
pub fn coherent_amplitudes(alpha: Complex64, dim: usize) -> Array1<Complex64> {
    let mut v = Array1::<Complex64>::zeros(dim);
    let mut term = c((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    v[0] = term;
    for n in 1..dim {
        term *= alpha / (n as f64).sqrt();
        v[n] = term;
    }
    v
}

/// Coherent probe state as a density operator.
///
/// Errors with TruncationError when the cutoff would keep less than 1−1e-6 of
/// the Poisson photon-number distribution.
pub fn coherent_state(probe: &CoherentProbe, cfg: &FockConfig) -> Result<FockOperator> {
    cfg.validate()?;
    let alpha = probe.alpha();
    let lambda = alpha.norm_sqr();
    let mut term = (-lambda).exp();
    let mut kept = term;
    for n in 1..=cfg.n_max {
        term *= lambda / n as f64;
        kept += term;
    }
    if kept < 1.0 - 1e-6 {
        return Err(SimError::Truncation(format!(
            "coherent state with |α|² = {lambda:.3} keeps only {kept:.9} of its \
             norm below n_max = {}",
            cfg.n_max
        )));
    }
    Ok(density_from_pure(&coherent_amplitudes(alpha, cfg.dim())))
}

/// Builds the requested ancilla as a density operator of the configured cutoff.
pub fn ancilla_state(spec: &AncillaSpec, cfg: &FockConfig) -> Result<FockOperator> {
    cfg.validate()?;
    match spec {
        AncillaSpec::Vacuum => Ok(density_from_pure(&basis_state(0, cfg.dim()))),
        AncillaSpec::FockSuperposition { coefficients } => {
            if coefficients.is_empty() || coefficients.len() > cfg.dim() {
                return Err(SimError::InvalidConfig(format!(
                    "superposition needs 1..={} coefficients, got {}",
                    cfg.dim(),
                    coefficients.len()
                )));
            }
            let norm_sq: f64 = coefficients.iter().map(|(re, im)| re * re + im * im).sum();
            if (norm_sq - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidConfig(format!(
                    "superposition coefficients have norm² = {norm_sq}, expected 1"
                )));
            }
            let mut psi = Array1::<Complex64>::zeros(cfg.dim());
            for (n, &(re, im)) in coefficients.iter().enumerate() {
                psi[n] = c(re, im);
            }
            Ok(density_from_pure(&psi))
        }
        AncillaSpec::DensityFile { path } => {
            let file = std::fs::File::open(path)?;
            let container = OperatorJson::load(std::io::BufReader::new(file))?;
            let op = container.to_operator()?;
            if op.dim != cfg.dim() {
                return Err(SimError::FileFormat(format!(
                    "density file has dim {} but the run uses dim {}",
                    op.dim,
                    cfg.dim()
                )));
            }
            op.check_density(1e-9)?;
            Ok(op)
        }
    }
}

// ── Nonlinear quadrature variance ────────────────────────────────────────────

/// The observable P̂ + sign·γ·X̂² as a matrix.
pub fn nonlinear_observable(spec: &NonlinearQuadratureSpec, cfg: &FockConfig) -> Result<FockOperator> {
    spec.validate()?;
    let (_, x, p) = ladder_and_quadratures(cfg)?;
    let x2 = x.mat.dot(&x.mat);
    Ok(FockOperator::from_matrix(
        &p.mat + &x2.mapv(|z| z * (spec.sign * spec.gamma)),
    ))
}

/// Variance of P̂ + sign·γ·X̂² under the (auto-normalized) operator.
pub fn nonlinear_variance(op: &FockOperator, spec: &NonlinearQuadratureSpec) -> Result<f64> {
    let tr = op.trace().re;
    if tr <= 0.0 {
        return Err(SimError::InvalidConfig(
            "nonlinear_variance needs an operator with positive trace".into(),
        ));
    }
    let cfg = FockConfig::new(op.dim - 1);
    let obs = nonlinear_observable(spec, &cfg)?;
    let mean = obs.expectation(op).re / tr;
    let obs2 = obs.matmul(&obs);
    let second = obs2.expectation(op).re / tr;
    Ok(second - mean * mean)
}

// ── Gaussian lower bound ─────────────────────────────────────────────────────

/// Variance of p̂ + γx̂² for a pure Gaussian state given in closed form.
///
/// Parameters: squeezing r ≥ 0 with phase φ_s (squeezed axis), means d (x) and
/// e (p). With the covariance V of the rotated squeezed vacuum,
///
/// ```text
/// var = v_pp + γ²(2v_xx² + 4d²v_xx) + 4γ·d·v_xp
/// ```
///
/// The p-mean e never appears, which the optimizer confirms numerically.
fn gaussian_variance(gamma: f64, r: f64, phi_s: f64, d: f64, _e: f64) -> f64 {
    let (sn, cs) = phi_s.sin_cos();
    let lo = 0.5 * (-2.0 * r).exp();
    let hi = 0.5 * (2.0 * r).exp();
    let v_xx = lo * cs * cs + hi * sn * sn;
    let v_pp = lo * sn * sn + hi * cs * cs;
    let v_xp = (lo - hi) * sn * cs;
    v_pp + gamma * gamma * (2.0 * v_xx * v_xx + 4.0 * d * d * v_xx) + 4.0 * gamma * d * v_xp
}

/// Minimum of var(p̂ + γx̂²) over Gaussian states.
///
/// Convexity of the variance functional over mixtures means the pure-state
/// minimum is the mixture bound. Coarse grid over (r, φ_s, d), then Nelder-Mead
/// refinement from the best grid points; restarts must agree to 1e-6.
pub fn gaussian_bound(gamma: f64) -> Result<GaussianBound> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(SimError::InvalidConfig(format!(
            "gaussian_bound needs gamma >= 0, got {gamma}"
        )));
    }
    if gamma == 0.0 {
        // var(p) → 0 under unbounded p-squeezing; infimum not attained.
        return Ok(GaussianBound {
            value: 0.0,
            attained: false,
        });
    }

    // Coarse grid.
    let mut seeds: Vec<(f64, [f64; 4])> = Vec::new();
    for ir in 0..=15 {
        let r = 3.0 * ir as f64 / 15.0;
        for iphi in 0..16 {
            let phi = std::f64::consts::PI * iphi as f64 / 16.0;
            for id in 0..=20 {
                let d = -5.0 + 10.0 * id as f64 / 20.0;
                let v = gaussian_variance(gamma, r, phi, d, 0.0);
                seeds.push((v, [r, phi, d, 0.0]));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut refined: Vec<f64> = Vec::new();
    for (_, start) in seeds.iter().take(4) {
        let best = nelder_mead(
            |p| gaussian_variance(gamma, p[0].abs(), p[1], p[2], p[3]),
            *start,
            0.15,
            2000,
        );
        refined.push(best);
    }
    let min = refined.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = refined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min > 1e-6 {
        return Err(SimError::OptimizationDidNotConverge(format!(
            "gaussian bound restarts span [{min:.9}, {max:.9}]"
        )));
    }
    Ok(GaussianBound {
        value: min,
        attained: true,
    })
}

/// Minimal 4-parameter Nelder-Mead returning the best function value found.
fn nelder_mead(f: impl Fn(&[f64; 4]) -> f64, start: [f64; 4], step: f64, iters: usize) -> f64 {
    const N: usize = 4;
    let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut p = start;
        p[i] += step;
        simplex.push((p, f(&p)));
    }
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if (simplex[N].1 - simplex[0].1).abs() < 1e-13 {
            break;
        }
        let mut centroid = [0.0; N];
        for v in &simplex[..N] {
            for k in 0..N {
                centroid[k] += v.0[k] / N as f64;
            }
        }
        let worst = simplex[N];
        let mut refl = [0.0; N];
        for k in 0..N {
            refl[k] = centroid[k] + (centroid[k] - worst.0[k]);
        }
        let fr = f(&refl);
        if fr < simplex[0].1 {
            let mut exp = [0.0; N];
            for k in 0..N {
                exp[k] = centroid[k] + 2.0 * (centroid[k] - worst.0[k]);
            }
            let fe = f(&exp);
            simplex[N] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (refl, fr);
        } else {
            let mut contr = [0.0; N];
            for k in 0..N {
                contr[k] = centroid[k] + 0.5 * (worst.0[k] - centroid[k]);
            }
            let fc = f(&contr);
            if fc < worst.1 {
                simplex[N] = (contr, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    for k in 0..N {
                        v.0[k] = best[k] + 0.5 * (v.0[k] - best[k]);
                    }
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0].1
}

// ── Loss channel ─────────────────────────────────────────────────────────────

/// Pure-loss channel of transmission η as an exact Kraus sum.
///
/// K_k has elements ⟨n−k|K_k|n⟩ = √(C(n,k)·η^{n−k}·(1−η)^k); the sum over
/// k = 0..n_max is exactly trace preserving on the truncated space.
pub fn apply_loss(op: &FockOperator, eta: f64, cfg: &FockConfig) -> Result<FockOperator> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(SimError::InvalidConfig(format!(
            "loss transmission must lie in [0, 1], got {eta}"
        )));
    }
    let d = cfg.dim();
    assert_eq!(op.dim, d, "operator dimension must match the cutoff");
    if eta == 1.0 {
        return Ok(op.clone());
    }
    if eta == 0.0 {
        let mut out = ndarray::Array2::<Complex64>::zeros((d, d));
        out[(0, 0)] = op.trace();
        return Ok(FockOperator::from_matrix(out));
    }
    let mut out = ndarray::Array2::<Complex64>::zeros((d, d));
    // ln C(n,k) table via ln-factorials.
    let lnf: Vec<f64> = {
        let mut v = vec![0.0; d];
        for n in 1..d {
            v[n] = v[n - 1] + (n as f64).ln();
        }
        v
    };
    let ln_eta = eta.ln();
    let ln_loss = (1.0 - eta).ln();
    for k in 0..d {
        // Kraus K_k applied as out += K_k op K_k†, using the diagonal-band
        // structure K_k[n-k, n].
        for n in k..d {
            for m in k..d {
                let ln_amp_n = 0.5
                    * (lnf[n] - lnf[k] - lnf[n - k] + (n - k) as f64 * ln_eta + k as f64 * ln_loss);
                let ln_amp_m = 0.5
                    * (lnf[m] - lnf[k] - lnf[m - k] + (m - k) as f64 * ln_eta + k as f64 * ln_loss);
                let amp = (ln_amp_n + ln_amp_m).exp();
                if amp > 0.0 {
                    out[(n - k, m - k)] += op.mat[(n, m)] * amp;
                }
            }
        }
    }
    Ok(FockOperator::from_matrix(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{anti_unitary_t, number_operator};
    use approx::assert_relative_eq;

    const GAMMA: f64 = 0.52;

    #[test]
    fn coherent_state_zero_is_vacuum() {
        let cfg = FockConfig::new(10);
        let rho = coherent_state(&CoherentProbe::new(0.0, 0.0), &cfg).unwrap();
        assert_relative_eq!(rho.mat[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coherent_state_means_and_photon_number() {
        let cfg = FockConfig::new(40);
        let probe = CoherentProbe::new(3.5, 0.0);
        let rho = coherent_state(&probe, &cfg).unwrap();
        let (_, x, p) = ladder_and_quadratures(&cfg).unwrap();
        assert_relative_eq!(x.expectation(&rho).re, 3.5, epsilon = 1e-6);
        assert_relative_eq!(p.expectation(&rho).re, 0.0, epsilon = 1e-6);
        let n = number_operator(cfg.dim());
        assert_relative_eq!(n.expectation(&rho).re, 3.5 * 3.5 / 2.0, epsilon = 1e-4);
        assert_relative_eq!(probe.mean_photons(), 6.125, epsilon = 1e-15);
    }

    #[test]
    fn coherent_state_truncation_guard() {
        let cfg = FockConfig::new(5);
        let err = coherent_state(&CoherentProbe::new(3.5, 0.0), &cfg);
        assert!(matches!(err, Err(SimError::Truncation(_))));
    }

    #[test]
    fn ancilla_vacuum_and_canonical() {
        let cfg = FockConfig::new(8);
        let vac = ancilla_state(&AncillaSpec::Vacuum, &cfg).unwrap();
        assert_relative_eq!(vac.mat[(0, 0)].re, 1.0, epsilon = 1e-15);

        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let n = number_operator(cfg.dim());
        assert_relative_eq!(n.expectation(&canon).re, 0.36, epsilon = 1e-12);
        // Purity Tr[ρ²] = 1 for the pure superposition.
        let purity = canon.matmul(&canon).trace().re;
        assert_relative_eq!(purity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ancilla_rejects_unnormalized_coefficients() {
        let cfg = FockConfig::new(4);
        let spec = AncillaSpec::FockSuperposition {
            coefficients: vec![(0.8, 0.0), (0.0, -0.7)],
        };
        assert!(matches!(
            ancilla_state(&spec, &cfg),
            Err(SimError::InvalidConfig(_))
        ));
    }

    #[test]
    fn ancilla_density_file_roundtrip() {
        let cfg = FockConfig::new(6);
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ancilla.json");
        let file = std::fs::File::create(&path).unwrap();
        OperatorJson::from_operator(&canon).save(file).unwrap();
        let back = ancilla_state(&AncillaSpec::DensityFile { path }, &cfg).unwrap();
        assert!(crate::linalg::frobenius_distance(&back.mat, &canon.mat) == 0.0);
    }

    #[test]
    fn vacuum_nonlinear_variance_both_signs() {
        let cfg = FockConfig::new(25);
        let vac = ancilla_state(&AncillaSpec::Vacuum, &cfg).unwrap();
        for sign in [1.0, -1.0] {
            let v = nonlinear_variance(&vac, &NonlinearQuadratureSpec::new(GAMMA, sign)).unwrap();
            // 0.5·(1 + γ²) exactly
            assert_relative_eq!(v, 0.6352, epsilon = 1e-12);
        }
        let plain = nonlinear_variance(&vac, &NonlinearQuadratureSpec::new(0.0, 1.0)).unwrap();
        assert_relative_eq!(plain, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn canonical_ancilla_squeezes_the_nonlinear_quadrature() {
        let cfg = FockConfig::new(25);
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let v = nonlinear_variance(&canon, &NonlinearQuadratureSpec::new(GAMMA, -1.0)).unwrap();
        // Exact: var(p) + γ²·var(x²) − 2γ·cov = 0.69404416 − 0.179712·√2
        let want = 0.69404416 - 0.179712 * 2f64.sqrt();
        assert_relative_eq!(v, want, epsilon = 1e-12);
        assert_relative_eq!(v, 0.4398930122788063, epsilon = 1e-12);
        // The mirrored superposition squeezes the opposite sign.
        let mirrored = ancilla_state(
            &AncillaSpec::FockSuperposition {
                coefficients: vec![(0.8, 0.0), (0.0, 0.6)],
            },
            &cfg,
        )
        .unwrap();
        let vm = nonlinear_variance(&mirrored, &NonlinearQuadratureSpec::new(GAMMA, 1.0)).unwrap();
        assert_relative_eq!(vm, want, epsilon = 1e-12);
    }

    #[test]
    fn conjugation_flips_the_sign_of_gamma() {
        let cfg = FockConfig::new(20);
        // Mildly structured test state: normalized (0.6, 0.5i, −0.4, 0.3i, ...).
        let mut psi = Array1::<Complex64>::zeros(cfg.dim());
        psi[0] = c(0.6, 0.1);
        psi[1] = c(0.0, 0.5);
        psi[2] = c(-0.4, 0.2);
        psi[3] = c(0.3, -0.3);
        let rho = density_from_pure(&psi);
        let flipped = anti_unitary_t(&rho);
        for sign in [1.0, -1.0] {
            let direct =
                nonlinear_variance(&rho, &NonlinearQuadratureSpec::new(GAMMA, sign)).unwrap();
            let conj =
                nonlinear_variance(&flipped, &NonlinearQuadratureSpec::new(GAMMA, -sign)).unwrap();
            assert_relative_eq!(direct, conj, epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_bound_matches_closed_form() {
        // Independent oracle: minimizing the closed-form Gaussian variance
        // analytically gives (3/8)·(16γ²)^(1/3).
        for gamma in [0.2, 0.52, 1.0] {
            let b = gaussian_bound(gamma).unwrap();
            assert!(b.attained);
            let want = 0.375 * (16.0 * gamma * gamma).powf(1.0 / 3.0);
            assert_relative_eq!(b.value, want, epsilon = 1e-6);
        }
        let b = gaussian_bound(0.52).unwrap();
        assert_relative_eq!(b.value, 0.6110461, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_bound_at_zero_gamma_is_unattained_infimum() {
        let b = gaussian_bound(0.0).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(!b.attained);
    }

    #[test]
    fn gaussian_bound_never_exceeds_vacuum_variance() {
        for i in 0..=10 {
            let gamma = i as f64 / 10.0;
            let b = gaussian_bound(gamma).unwrap();
            assert!(
                b.value <= 0.5 * (1.0 + gamma * gamma) + 1e-9,
                "bound {} above vacuum at γ = {gamma}",
                b.value
            );
        }
    }

    #[test]
    fn random_gaussian_states_respect_the_bound() {
        let cfg = FockConfig::new(64);
        let bound = gaussian_bound(GAMMA).unwrap().value;
        let (a, x, p) = ladder_and_quadratures(&cfg).unwrap();
        let mut seed = 7u64;
        let mut next = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..12 {
            let r = 0.9 * next();
            let phi = std::f64::consts::PI * next();
            let d = 2.0 * (next() - 0.5);
            let e = 2.0 * (next() - 0.5);
            // Squeeze then displace the vacuum by matrix exponentials.
            let xi = Complex64::from_polar(r, 2.0 * phi);
            let a2 = a.mat.dot(&a.mat);
            let gen = a2.mapv(|z| z * (0.5 * xi.conj())) - crate::linalg::dagger(&a2).mapv(|z| z * (0.5 * xi));
            let h = gen.mapv(|z| z * c(0.0, -1.0));
            let squeeze = crate::linalg::unitary_exp_i(&h);
            let disp = crate::fock::displacement(d, e, &cfg).unwrap();
            let psi0 = basis_state(0, cfg.dim());
            let psi = disp.mat.dot(&squeeze.dot(&psi0));
            let rho = density_from_pure(&psi);
            let v = nonlinear_variance(&rho, &NonlinearQuadratureSpec::new(GAMMA, 1.0)).unwrap();
            assert!(
                v >= bound - 1e-6,
                "Gaussian state with (r={r:.2}, φ={phi:.2}, d={d:.2}) dips to {v} < {bound}"
            );
            // Cross-check the closed-form Gaussian moment formula against the
            // matrix arithmetic using the state's own second moments.
            let mean_x = x.expectation(&rho).re;
            let mean_p = p.expectation(&rho).re;
            let xx = x.matmul(&x).expectation(&rho).re - mean_x * mean_x;
            let pp = p.matmul(&p).expectation(&rho).re - mean_p * mean_p;
            let sym_xp = 0.5
                * (x.matmul(&p).expectation(&rho).re + p.matmul(&x).expectation(&rho).re)
                - mean_x * mean_p;
            let closed = pp
                + GAMMA * GAMMA * (2.0 * xx * xx + 4.0 * mean_x * mean_x * xx)
                + 4.0 * GAMMA * mean_x * sym_xp;
            assert_relative_eq!(v, closed, epsilon = 1e-6);
        }
    }

    #[test]
    fn loss_identity_and_total_loss() {
        let cfg = FockConfig::new(12);
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let same = apply_loss(&canon, 1.0, &cfg).unwrap();
        assert!(crate::linalg::frobenius_distance(&same.mat, &canon.mat) == 0.0);
        let dead = apply_loss(&canon, 0.0, &cfg).unwrap();
        assert_relative_eq!(dead.mat[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(dead.trace().re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_on_single_photon_is_binomial() {
        let cfg = FockConfig::new(6);
        let one = density_from_pure(&basis_state(1, cfg.dim()));
        let out = apply_loss(&one, 0.91, &cfg).unwrap();
        assert_relative_eq!(out.mat[(0, 0)].re, 0.09, epsilon = 1e-12);
        assert_relative_eq!(out.mat[(1, 1)].re, 0.91, epsilon = 1e-12);
        assert_relative_eq!(out.trace().re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_scales_photon_number_and_preserves_coherence() {
        let cfg = FockConfig::new(30);
        let probe = CoherentProbe::new(1.4, -0.9);
        let rho = coherent_state(&probe, &cfg).unwrap();
        let eta = 0.73;
        let out = apply_loss(&rho, eta, &cfg).unwrap();
        assert_relative_eq!(out.trace().re, 1.0, epsilon = 1e-9);
        let n = number_operator(cfg.dim());
        assert_relative_eq!(
            n.expectation(&out).re,
            eta * probe.mean_photons(),
            epsilon = 1e-9
        );
        // Coherent states stay coherent with amplitude √η·α.
        let scaled = CoherentProbe::new(eta.sqrt() * 1.4, eta.sqrt() * (-0.9));
        let want = coherent_state(&scaled, &cfg).unwrap();
        assert!(crate::linalg::frobenius_distance(&out.mat, &want.mat) < 1e-9);
    }

    #[test]
    fn loss_channel_is_completely_positive() {
        // Choi matrix of the channel at small cutoff must be PSD.
        let cfg = FockConfig::new(3);
        let d = cfg.dim();
        let mut choi = ndarray::Array2::<Complex64>::zeros((d * d, d * d));
        for i in 0..d {
            for k in 0..d {
                // Λ(|i⟩⟨k|)
                let mut e = ndarray::Array2::<Complex64>::zeros((d, d));
                e[(i, k)] = c(1.0, 0.0);
                let img = apply_loss(&FockOperator::from_matrix(e), 0.91, &cfg).unwrap();
                for j in 0..d {
                    for l in 0..d {
                        choi[(i * d + j, k * d + l)] = img.mat[(j, l)];
                    }
                }
            }
        }
        let (lams, _) = crate::linalg::hermitian_eig(&choi);
        assert!(lams[0] > -1e-10, "Choi eigenvalue {}", lams[0]);
    }
}
