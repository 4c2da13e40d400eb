//! Analytic POVM elements of the nonlinear quadrature measurement.
//!
//! The two-homodyne scheme with nonlinear feedforward measures
//! m = √2·y / cosθ(q) with θ(q) = arctan(√2γq). Conditioned on both outcomes,
//! the back-projected element is a pure state of the input mode:
//!
//! ```text
//! Π(q,y) ∝ Û ρ̂_anc* Û†,   Û = P̂(−tanθ)·D̂(√2q, m + √2q·tanθ)
//! ```
//!
//! where * is Fock-basis conjugation (x̂ → x̂, p̂ → −p̂). The defining algebra is
//! Û†(p̂ + γx̂²)Û = p̂ + γx̂² + m: every element lies on the parabola p = m − γx²
//! and inherits the ancilla's var(p̂ − γx̂²) exactly. Imperfections enter
//! through Gaussian-smeared homodyne projectors and the beamsplitter-conjugated
//! partial trace over the ancilla mode.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::LossModel;
use crate::error::{Result, SimError};
use crate::fock::{
    anti_unitary_t, beamsplitter_blocks, displacement, shear, FockConfig, FockOperator,
};
use crate::linalg::{dagger, gauss_hermite, gauss_legendre, hermitian_eig};
use crate::states::{nonlinear_variance, NonlinearQuadratureSpec};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Feedforward angle θ(q) = arctan(√2·γ·q).
pub fn feedforward_angle(gamma: f64, q: f64) -> f64 {
    (2f64.sqrt() * gamma * q).atan()
}

// ── Domain types ─────────────────────────────────────────────────────────────

/// Outcome the element belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PovmLabel {
    /// Joint double-homodyne outcome.
    QY { q: f64, y: f64 },
    /// Rescaled nonlinear-quadrature outcome.
    MBin { m: f64 },
    /// Single lossy homodyne outcome at a fixed local-oscillator angle.
    Homodyne { q: f64, theta: f64 },
}

/// One POVM element with its prefactor bookkeeping.
///
/// `op` carries the paper-convention weight (2/|cosθ(q)| per unit q for the
/// pure elements); `weight` records that prefactor (integrated, for m-binned
/// elements) so normalized detector states are prefactor-independent.
#[derive(Clone, Debug)]
pub struct PovmElement {
    pub label: PovmLabel,
    pub op: FockOperator,
    pub weight: f64,
}

impl PovmElement {
    /// The element normalized to unit trace.
    pub fn normalized(&self) -> FockOperator {
        let tr = self.op.trace().re;
        FockOperator::from_matrix(self.op.mat.mapv(|z| z / tr))
    }

    /// var(p̂ + γx̂²) of the normalized element.
    pub fn normalized_variance(&self, gamma: f64) -> Result<f64> {
        nonlinear_variance(&self.normalized(), &NonlinearQuadratureSpec::new(gamma, 1.0))
    }
}

/// Normalized post-processed detector state with its variance summary.
#[derive(Clone, Debug)]
pub struct DetectorState {
    pub op: FockOperator,
    /// Source m-bin; None for an ensemble average.
    pub m_bin: Option<f64>,
    /// var(p̂ + γx̂²) of the state.
    pub variance: f64,
}

// ── Pure elements ────────────────────────────────────────────────────────────

/// Ideal POVM element for joint outcome (q, y).
///
/// Returns (2/|cosθ(q)|)·Û ρ̂_anc* Û† with Û = P̂(−tanθ)·D̂(√2q, m + √2q·tanθ),
/// m = √2y/cosθ. The weight field records the 2/|cosθ| prefactor.
pub fn povm_pure(
    q: f64,
    y: f64,
    ancilla: &FockOperator,
    gamma: f64,
    cfg: &FockConfig,
) -> Result<PovmElement> {
    cfg.validate()?;
    assert_eq!(ancilla.dim, cfg.dim(), "ancilla dimension must match cutoff");
    let theta = feedforward_angle(gamma, q);
    let tan = theta.tan();
    let cos = theta.cos();
    let m = 2f64.sqrt() * y / cos;
    let dx = 2f64.sqrt() * q;
    let dp = m + dx * tan;
    let u = shear(-tan, cfg)?.matmul(&displacement(dx, dp, cfg)?);
    let conj_anc = anti_unitary_t(ancilla);
    let weight = 2.0 / cos.abs();
    let core = u.mat.dot(&conj_anc.mat).dot(&dagger(&u.mat));
    Ok(PovmElement {
        label: PovmLabel::QY { q, y },
        op: FockOperator::from_matrix(core.mapv(|z| z * weight)),
        weight,
    })
}

/// Finite-range m-element: quadrature of the pure elements over q ∈ [−r, r]
/// along the outcome parabola y(q) = m·cosθ(q)/√2.
///
/// Evaluated at n_nodes and 2·n_nodes Gauss-Legendre nodes; errors with
/// QuadratureNotConverged when the normalized variance moves by more than 1e-4
/// between the two resolutions. The finer result is returned.
pub fn povm_m(
    m: f64,
    ancilla: &FockOperator,
    gamma: f64,
    q_radius: f64,
    n_nodes: usize,
    cfg: &FockConfig,
) -> Result<PovmElement> {
    if q_radius <= 0.0 {
        return Err(SimError::InvalidConfig(format!(
            "q radius must be positive, got {q_radius}"
        )));
    }
    if n_nodes < 64 {
        return Err(SimError::InvalidConfig(format!(
            "m-element quadrature needs at least 64 nodes, got {n_nodes}"
        )));
    }
    let coarse = povm_m_at_resolution(m, ancilla, gamma, q_radius, n_nodes, cfg)?;
    let fine = povm_m_at_resolution(m, ancilla, gamma, q_radius, 2 * n_nodes, cfg)?;
    let vc = coarse.normalized_variance(gamma)?;
    let vf = fine.normalized_variance(gamma)?;
    if (vc - vf).abs() > 1e-4 {
        return Err(SimError::QuadratureNotConverged(format!(
            "m-element variance moved {:.2e} when doubling {} nodes",
            (vc - vf).abs(),
            n_nodes
        )));
    }
    Ok(fine)
}

fn povm_m_at_resolution(
    m: f64,
    ancilla: &FockOperator,
    gamma: f64,
    q_radius: f64,
    n_nodes: usize,
    cfg: &FockConfig,
) -> Result<PovmElement> {
    let (qs, ws) = gauss_legendre(n_nodes, -q_radius, q_radius);
    let d = cfg.dim();
    let mut acc = Array2::<Complex64>::zeros((d, d));
    let mut weight = 0.0;
    for (&qi, &wi) in qs.iter().zip(ws.iter()) {
        let theta = feedforward_angle(gamma, qi);
        let yi = m * theta.cos() / 2f64.sqrt();
        let elem = povm_pure(qi, yi, ancilla, gamma, cfg)?;
        acc += &elem.op.mat.mapv(|z| z * wi);
        weight += wi * elem.weight;
    }
    Ok(PovmElement {
        label: PovmLabel::MBin { m },
        op: FockOperator::from_matrix(acc),
        weight,
    })
}

// ── Lossy homodyne ───────────────────────────────────────────────────────────

/// Pointwise decomposition Π_η(q|θ) = Σᵢ wᵢ·h(xᵢ)h(xᵢ)† in the polynomial
/// representation h_n(x) = ψ_n(x)·e^{x²/2}.
///
/// The projector Gaussian and the smearing kernel recombine as
/// e^{−x²}·e^{−(√η·x−q)²/(1−η)} = e^{−q²}·e^{−s²} with x = √η·q + √(1−η)·s,
/// so Gauss-Hermite nodes in s integrate the remaining polynomial exactly once
/// n ≥ dim, for every efficiency. Positions xᵢ = √η·q + √(1−η)·sᵢ, weights
/// wᵢ = ωᵢ·e^{−q²}/√π; at η = 1 the single node (q, e^{−q²}) is exact.
fn lossy_poly_nodes(center: f64, eta: f64, n: usize) -> Vec<(f64, f64)> {
    let pref = (-center * center).exp() / std::f64::consts::PI.sqrt();
    if eta >= 1.0 {
        return vec![(center, (-center * center).exp())];
    }
    let t = eta.sqrt();
    let r = (1.0 - eta).sqrt();
    let (ss, oms) = gauss_hermite(n);
    ss.iter()
        .zip(oms.iter())
        .map(|(&s, &om)| (center * t + r * s, om * pref))
        .collect()
}

/// Components e^{iθn}·h_n(x) of the rotated eigenvector with the Gaussian
/// stripped (it lives in the lossy_poly_nodes weights).
fn rotated_poly_vector(theta: f64, x: f64, dim: usize) -> Array1<Complex64> {
    let h = crate::fock::hermite_polys(x, dim - 1);
    Array1::from_iter((0..dim).map(|n| Complex64::from_polar(h[n], theta * n as f64)))
}

/// Homodyne POVM density at efficiency η and local-oscillator angle θ.
///
/// Satisfies Tr[ρ·Π_η(q|θ)] = (quadrature density of the η-attenuated state
/// at q), which is the Gaussian convolution of the ideal density, and
/// ∫ Π_η(q|θ) dq = I.
pub fn lossy_homodyne_povm(q: f64, theta: f64, eta: f64, cfg: &FockConfig) -> Result<PovmElement> {
    cfg.validate()?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(SimError::InvalidConfig(format!(
            "homodyne efficiency must lie in (0, 1], got {eta}"
        )));
    }
    let d = cfg.dim();
    let mut op = Array2::<Complex64>::zeros((d, d));
    for (x, w) in lossy_poly_nodes(q, eta, d + 8) {
        let v = rotated_poly_vector(theta, x, d);
        for i in 0..d {
            for j in 0..d {
                op[(i, j)] += v[i] * v[j].conj() * w;
            }
        }
    }
    Ok(PovmElement {
        label: PovmLabel::Homodyne { q, theta },
        op: FockOperator::from_matrix(op),
        weight: 1.0,
    })
}

// ── Imperfection-dressed elements ────────────────────────────────────────────

/// Precomputed machinery shared by all (q, y) points of one imperfect run.
struct ImperfectContext {
    dim: usize,
    /// Per ancilla spectral factor (λ > 1e-12): its weight λ and the
    /// contraction C[n, i·d+j] = Σ_k ⟨n,k|B̂†|i,j⟩·conj(φ(k)), so the joint
    /// amplitude at node pair (x₁, x₂) is c(n) = Σ_{ij} C[n,ij]·v₁(i)·v₂(j).
    factors: Vec<(f64, Array2<Complex64>)>,
    eta1: f64,
    eta2: f64,
    gamma: f64,
}

impl ImperfectContext {
    fn new(ancilla: &FockOperator, loss: &LossModel, gamma: f64, cfg: &FockConfig) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        assert_eq!(ancilla.dim, cfg.dim(), "ancilla dimension must match cutoff");
        let d = cfg.dim();
        let blocks = beamsplitter_blocks(d, 0.5);
        let (lams, vecs) = hermitian_eig(&ancilla.mat);
        let mut factors = Vec::new();
        for (l, &lam) in lams.iter().enumerate() {
            if lam <= 1e-12 {
                continue;
            }
            let phi = vecs.column(l);
            let mut ctel = Array2::<Complex64>::zeros((d, d * d));
            for (idxs, u) in &blocks {
                // u is the B block on this total-photon sector; B† entry
                // (row, col) is conj(u[col, row]).
                for (r, &fr) in idxs.iter().enumerate() {
                    let (n, k) = (fr / d, fr % d);
                    let pk = phi[k].conj();
                    for (s, &fc) in idxs.iter().enumerate() {
                        ctel[(n, fc)] += u[(s, r)].conj() * pk;
                    }
                }
            }
            factors.push((lam, ctel));
        }
        Ok(ImperfectContext {
            dim: d,
            factors,
            eta1: loss.eta1,
            eta2: loss.eta2,
            gamma,
        })
    }

    /// Tr_anc[(I⊗ρ_A)·B†(Π_{η₁}(q|0) ⊗ Π_{η₂}(y|π/2−θ(q)))B̂] as a matrix.
    ///
    /// Both lossy elements enter through their polynomial node decompositions
    /// and the element is bilinear in them, so the double quadrature is exact:
    /// the two-mode amplitudes ⟨n,k|B†|x₁,x₂⟩ are polynomials times
    /// e^{−(x₁²+x₂²)/2} and the Gaussian is rotation-invariant.
    fn element_op(&self, q: f64, y: f64) -> Array2<Complex64> {
        let d = self.dim;
        let theta = feedforward_angle(self.gamma, q);
        let phi2 = std::f64::consts::FRAC_PI_2 - theta;
        let nodes1 = lossy_poly_nodes(q, self.eta1, d + 8);
        let nodes2 = lossy_poly_nodes(y, self.eta2, d + 8);
        let mut op = Array2::<Complex64>::zeros((d, d));
        let mut half = Array2::<Complex64>::zeros((d, d));
        let mut cvec = Array1::<Complex64>::zeros(d);
        for &(x2, w2) in &nodes2 {
            let v2 = rotated_poly_vector(phi2, x2, d);
            for (lam, ctel) in &self.factors {
                // half[n, i] = Σ_j C[n, i·d+j]·v₂(j), then c(n) = Σ_i half·v₁.
                for n in 0..d {
                    for i in 0..d {
                        let mut s = c(0.0, 0.0);
                        for j in 0..d {
                            s += ctel[(n, i * d + j)] * v2[j];
                        }
                        half[(n, i)] = s;
                    }
                }
                for &(x1, w1) in &nodes1 {
                    let v1 = rotated_poly_vector(0.0, x1, d);
                    for n in 0..d {
                        let mut s = c(0.0, 0.0);
                        for i in 0..d {
                            s += half[(n, i)] * v1[i];
                        }
                        cvec[n] = s;
                    }
                    let scale = w1 * w2 * lam;
                    for i in 0..d {
                        let ci = cvec[i] * scale;
                        for j in 0..d {
                            op[(i, j)] += ci * cvec[j].conj();
                        }
                    }
                }
            }
        }
        op
    }
}

/// POVM element of the lossy adaptive measurement at joint outcome (q, y).
///
/// Partial trace over the ancilla mode of the beamsplitter-conjugated product
/// of lossy homodyne elements, the second at the adapted angle π/2 − θ(q).
/// At η₁ = η₂ = 1 this reproduces the pure element up to normalization.
pub fn povm_imperfect(
    q: f64,
    y: f64,
    ancilla: &FockOperator,
    loss: &LossModel,
    gamma: f64,
    cfg: &FockConfig,
) -> Result<PovmElement> {
    let ctx = ImperfectContext::new(ancilla, loss, gamma, cfg)?;
    Ok(PovmElement {
        label: PovmLabel::QY { q, y },
        op: FockOperator::from_matrix(ctx.element_op(q, y)),
        weight: 1.0,
    })
}

/// Imperfect m-element: ∫ dq (∂y/∂m)·Π(q, y(q,m)) over q ∈ [−r, r] with the
/// physical Jacobian ∂y/∂m = cosθ(q)/√2, so the result is a density in m.
pub fn povm_m_imperfect(
    m: f64,
    ancilla: &FockOperator,
    loss: &LossModel,
    gamma: f64,
    q_radius: f64,
    n_nodes: usize,
    cfg: &FockConfig,
) -> Result<PovmElement> {
    if q_radius <= 0.0 || n_nodes < 8 {
        return Err(SimError::InvalidConfig(format!(
            "imperfect m-element needs positive radius and >= 8 nodes, got r = {q_radius}, n = {n_nodes}"
        )));
    }
    let ctx = ImperfectContext::new(ancilla, loss, gamma, cfg)?;
    let (qs, ws) = gauss_legendre(n_nodes, -q_radius, q_radius);
    let d = cfg.dim();
    let mut acc = Array2::<Complex64>::zeros((d, d));
    for (&qi, &wi) in qs.iter().zip(ws.iter()) {
        let theta = feedforward_angle(gamma, qi);
        let jac = theta.cos() / 2f64.sqrt();
        let yi = m * theta.cos() / 2f64.sqrt();
        let op = ctx.element_op(qi, yi);
        acc += &op.mapv(|z| z * (wi * jac));
    }
    Ok(PovmElement {
        label: PovmLabel::MBin { m },
        op: FockOperator::from_matrix(acc),
        weight: 1.0,
    })
}

// ── Detector-state post-processing ───────────────────────────────────────────

/// Displaces each m-element by −m in p, sums, and renormalizes.
///
/// Every input must carry an MBin label. The variance summary is
/// var(p̂ + γx̂²) of the averaged state.
pub fn averaged_detector_state(
    elements: &[PovmElement],
    gamma: f64,
    cfg: &FockConfig,
) -> Result<DetectorState> {
    if elements.is_empty() {
        return Err(SimError::InvalidConfig(
            "averaged_detector_state needs at least one element".into(),
        ));
    }
    let d = cfg.dim();
    let mut acc = Array2::<Complex64>::zeros((d, d));
    for elem in elements {
        let m = match elem.label {
            PovmLabel::MBin { m } => m,
            other => {
                return Err(SimError::InvalidConfig(format!(
                    "averaged_detector_state needs m-binned elements, got {other:?}"
                )))
            }
        };
        let disp = displacement(0.0, -m, cfg)?;
        let moved = disp.mat.dot(&elem.op.mat).dot(&dagger(&disp.mat));
        acc += &moved;
    }
    let tr = acc.diag().sum().re;
    if tr <= 0.0 {
        return Err(SimError::InvalidConfig(
            "averaged detector state has nonpositive trace".into(),
        ));
    }
    let op = FockOperator::from_matrix(acc.mapv(|z| z / tr));
    let variance = nonlinear_variance(&op, &NonlinearQuadratureSpec::new(gamma, 1.0))?;
    Ok(DetectorState {
        op,
        m_bin: None,
        variance,
    })
}

/// Normalizes a single m-element into a detector state.
pub fn detector_state_from_element(elem: &PovmElement, gamma: f64) -> Result<DetectorState> {
    let m = match elem.label {
        PovmLabel::MBin { m } => Some(m),
        _ => None,
    };
    let op = elem.normalized();
    let variance = nonlinear_variance(&op, &NonlinearQuadratureSpec::new(gamma, 1.0))?;
    Ok(DetectorState {
        op,
        m_bin: m,
        variance,
    })
}

/// Writes per-bin variance summaries as CSV rows (m_bin, variance, trace).
pub fn write_detector_variance_csv<W: std::io::Write>(
    out: W,
    rows: &[(f64, f64, f64)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["m_bin", "variance", "trace"])?;
    for &(m, v, t) in rows {
        wtr.write_record(&[format!("{m}"), format!("{v}"), format!("{t}")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_distance;
    use crate::fock::{basis_state, density_from_pure, rotated_position_vector, wigner_grid};
    use crate::states::{
        ancilla_state, apply_loss, coherent_state, AncillaSpec, CoherentProbe,
    };
    use approx::assert_relative_eq;

    const GAMMA: f64 = 0.52;

    fn vacuum(cfg: &FockConfig) -> FockOperator {
        density_from_pure(&basis_state(0, cfg.dim()))
    }

    #[test]
    fn element_at_origin_is_twice_vacuum() {
        let cfg = FockConfig::new(20);
        let elem = povm_pure(0.0, 0.0, &vacuum(&cfg), GAMMA, &cfg).unwrap();
        assert_relative_eq!(elem.weight, 2.0, epsilon = 1e-12);
        assert_relative_eq!(elem.op.mat[(0, 0)].re, 2.0, epsilon = 1e-10);
        assert_relative_eq!(elem.op.trace().re, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn element_at_zero_q_is_pure_p_displacement() {
        let cfg = FockConfig::new(30);
        let elem = povm_pure(0.0, 1.0, &vacuum(&cfg), GAMMA, &cfg).unwrap();
        let disp = displacement(0.0, 2f64.sqrt(), &cfg).unwrap();
        let want = disp
            .mat
            .dot(&vacuum(&cfg).mat)
            .dot(&dagger(&disp.mat))
            .mapv(|z| z * 2.0);
        assert!(frobenius_distance(&elem.op.mat, &want) < 1e-10);
    }

    #[test]
    fn variance_and_mean_transfer_vacuum_ancilla() {
        let cfg = FockConfig::new(40);
        let vac = vacuum(&cfg);
        let spec_plus = NonlinearQuadratureSpec::new(GAMMA, 1.0);
        for &(q, y) in &[(0.0, 0.0), (0.45, -0.3), (-0.6, 0.5)] {
            let elem = povm_pure(q, y, &vac, GAMMA, &cfg).unwrap();
            let rho = elem.normalized();
            let var = nonlinear_variance(&rho, &spec_plus).unwrap();
            assert_relative_eq!(var, 0.6352, epsilon = 1e-6);
            // Mean of p̂+γx̂² is m − ⟨p̂−γx̂²⟩_anc = m + 0.26 for vacuum.
            let theta = feedforward_angle(GAMMA, q);
            let m = 2f64.sqrt() * y / theta.cos();
            let obs = crate::states::nonlinear_observable(&spec_plus, &cfg).unwrap();
            let mean = obs.expectation(&rho).re;
            assert_relative_eq!(mean, m + 0.26, epsilon = 1e-6);
        }
    }

    #[test]
    fn variance_transfer_for_canonical_and_mixed_ancilla() {
        let cfg = FockConfig::new(60);
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let mixed = apply_loss(&canon, 0.8, &cfg).unwrap();
        let spec_plus = NonlinearQuadratureSpec::new(GAMMA, 1.0);
        let spec_minus = NonlinearQuadratureSpec::new(GAMMA, -1.0);
        for anc in [&canon, &mixed] {
            let want = nonlinear_variance(anc, &spec_minus).unwrap();
            for &(q, y) in &[(0.35, 0.2), (-0.55, -0.4)] {
                let elem = povm_pure(q, y, anc, GAMMA, &cfg).unwrap();
                let var = nonlinear_variance(&elem.normalized(), &spec_plus).unwrap();
                assert_relative_eq!(var, want, epsilon = 1e-6);
            }
        }
        // Canonical value is the frozen oracle 0.69404416 − 0.179712·√2.
        let w = nonlinear_variance(&canon, &spec_minus).unwrap();
        assert_relative_eq!(w, 0.4398930122788063, epsilon = 1e-12);
    }

    #[test]
    fn element_positivity() {
        let cfg = FockConfig::new(30);
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let elem = povm_pure(0.5, -0.25, &canon, GAMMA, &cfg).unwrap();
        let (lams, _) = hermitian_eig(&elem.op.mat);
        assert!(lams[0] > -1e-8, "min eigenvalue {}", lams[0]);
    }

    #[test]
    fn m_element_variance_independent_of_m() {
        let cfg = FockConfig::new(40);
        let vac = vacuum(&cfg);
        for &m in &[-0.8, 0.0, 0.6] {
            let elem = povm_m(m, &vac, GAMMA, 0.6, 64, &cfg).unwrap();
            let var = elem.normalized_variance(GAMMA).unwrap();
            assert_relative_eq!(var, 0.6352, epsilon = 1e-6);
        }
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let elem = povm_m(0.3, &canon, GAMMA, 0.6, 64, &cfg).unwrap();
        assert_relative_eq!(
            elem.normalized_variance(GAMMA).unwrap(),
            0.4398930122788063,
            epsilon = 1e-6
        );
    }

    #[test]
    fn m_elements_differ_by_p_displacement() {
        let cfg = FockConfig::new(35);
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let base = povm_m_at_resolution(0.1, &canon, GAMMA, 0.6, 96, &cfg).unwrap();
        let shifted = povm_m_at_resolution(0.5, &canon, GAMMA, 0.6, 96, &cfg).unwrap();
        let disp = displacement(0.0, 0.4, &cfg).unwrap();
        let moved = disp.mat.dot(&base.op.mat).dot(&dagger(&disp.mat));
        assert!(
            frobenius_distance(&moved, &shifted.op.mat) < 1e-8,
            "displacement-structure defect {}",
            frobenius_distance(&moved, &shifted.op.mat)
        );
    }

    #[test]
    fn m_element_rejects_low_resolution() {
        let cfg = FockConfig::new(10);
        let err = povm_m(0.0, &vacuum(&cfg), GAMMA, 0.6, 32, &cfg);
        assert!(matches!(err, Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn lossy_homodyne_ideal_reproduces_quadrature_density() {
        let cfg = FockConfig::new(25);
        let vac = vacuum(&cfg);
        for &q in &[0.0, 0.7, -1.3] {
            let elem = lossy_homodyne_povm(q, 0.0, 1.0, &cfg).unwrap();
            let prob = elem.op.expectation(&vac).re;
            let want = (-q * q).exp() / std::f64::consts::PI.sqrt();
            assert_relative_eq!(prob, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn lossy_homodyne_equals_loss_channel_then_ideal_homodyne() {
        // Tr[ρ·Π_η(q|θ)] equals the rotated-quadrature density of the
        // η-attenuated state: same convolution, computed by binomial Kraus
        // damping instead of Gaussian smearing of projectors.
        let cfg = FockConfig::new(25);
        let one = density_from_pure(&basis_state(1, cfg.dim()));
        let eta = 0.91;
        let theta = 0.7;
        let lossy_state = apply_loss(&one, eta, &cfg).unwrap();
        for &q in &[0.0, 0.4, -0.9, 1.6] {
            let elem = lossy_homodyne_povm(q, theta, eta, &cfg).unwrap();
            let via_povm = elem.op.expectation(&one).re;
            let v = rotated_position_vector(theta, q, cfg.dim());
            let mut via_loss = c(0.0, 0.0);
            for i in 0..cfg.dim() {
                for j in 0..cfg.dim() {
                    via_loss += v[i].conj() * lossy_state.mat[(i, j)] * v[j];
                }
            }
            assert_relative_eq!(via_povm, via_loss.re, epsilon = 1e-10);
        }
    }

    #[test]
    fn lossy_homodyne_moments_for_single_photon() {
        // Convolution moments: total mass 1, mean 0, second moment
        // η·⟨x²⟩ + (1−η)/2 with ⟨x²⟩ = 3/2 for |1⟩.
        let cfg = FockConfig::new(20);
        let one = density_from_pure(&basis_state(1, cfg.dim()));
        let eta = 0.91;
        let qs: Vec<f64> = (0..601).map(|i| -6.0 + i as f64 * 0.02).collect();
        let dens: Vec<f64> = qs
            .iter()
            .map(|&q| {
                lossy_homodyne_povm(q, 0.0, eta, &cfg)
                    .unwrap()
                    .op
                    .expectation(&one)
                    .re
            })
            .collect();
        let total = crate::fock::trapezoid(&qs, &dens);
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
        let mean: f64 = crate::fock::trapezoid(
            &qs,
            &qs.iter().zip(&dens).map(|(&q, &p)| q * p).collect::<Vec<_>>(),
        );
        assert_relative_eq!(mean, 0.0, epsilon = 1e-9);
        let second: f64 = crate::fock::trapezoid(
            &qs,
            &qs.iter().zip(&dens).map(|(&q, &p)| q * q * p).collect::<Vec<_>>(),
        );
        assert_relative_eq!(second, eta * 1.5 + 0.5 * (1.0 - eta), epsilon = 1e-6);
    }

    #[test]
    fn nearly_dead_homodyne_forgets_the_state() {
        let cfg = FockConfig::new(15);
        let eta = 0.02;
        let p_vac = lossy_homodyne_povm(0.0, 0.0, eta, &cfg)
            .unwrap()
            .op
            .expectation(&vacuum(&cfg))
            .re;
        let one = density_from_pure(&basis_state(1, cfg.dim()));
        let p_one = lossy_homodyne_povm(0.0, 0.0, eta, &cfg)
            .unwrap()
            .op
            .expectation(&one)
            .re;
        assert!((p_vac - p_one).abs() < 0.05, "{p_vac} vs {p_one}");
    }

    #[test]
    fn imperfect_at_unit_efficiency_matches_pure_element() {
        // The partial-trace construction is exact per total-photon block; the
        // closed-form path truncates the shear, so the comparison needs the
        // high cutoff (full-matrix distance 1.3e-7 at n_max = 90, falling
        // roughly ×4 per 15 levels).
        let cfg = FockConfig::new(90);
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let loss = LossModel::new(1.0, 1.0);
        let (q, y) = (0.5, -0.3);
        let imp = povm_imperfect(q, y, &canon, &loss, GAMMA, &cfg).unwrap();
        let pure = povm_pure(q, y, &canon, GAMMA, &cfg).unwrap();
        let a = imp.normalized();
        let b = pure.normalized();
        let dist = frobenius_distance(&a.mat, &b.mat);
        assert!(dist < 1e-6, "normalized element distance {dist}");
        // Physical vs bookkeeping normalization: Π = (1/(π cosθ))·Uρ*U† while
        // the pure element carries 2/cosθ, so the traces differ by 1/(2π).
        let ratio = imp.op.trace().re / pure.op.trace().re;
        assert_relative_eq!(ratio, 0.5 / std::f64::consts::PI, epsilon = 1e-9);
    }

    #[test]
    fn imperfect_joint_density_matches_analytic_coherent_prediction() {
        // Coherent input ⊗ vacuum ancilla stays a product of coherent states
        // through the balanced beamsplitter, so the joint (q, y) density is a
        // product of two Gaussians with variance 1/2 and √η-scaled means.
        let cfg = FockConfig::new(30);
        let vac = vacuum(&cfg);
        let loss = LossModel::new(0.97, 0.91);
        let probe = CoherentProbe::new(1.2, 0.5);
        let rho = coherent_state(&probe, &cfg).unwrap();
        for &(q, y) in &[(0.4, 0.1), (0.9, -0.6), (-0.2, 0.3)] {
            let elem = povm_imperfect(q, y, &vac, &loss, GAMMA, &cfg).unwrap();
            let got = elem.op.expectation(&rho).re;
            let theta = feedforward_angle(GAMMA, q);
            let phi2 = std::f64::consts::FRAC_PI_2 - theta;
            let mean_q = loss.eta1.sqrt() * probe.alpha_x / 2f64.sqrt();
            let mean_y = loss.eta2.sqrt()
                * (probe.alpha_x / 2f64.sqrt() * phi2.cos()
                    + probe.alpha_p / 2f64.sqrt() * phi2.sin());
            let want = (-(q - mean_q) * (q - mean_q)).exp() / std::f64::consts::PI.sqrt()
                * ((-(y - mean_y) * (y - mean_y)).exp() / std::f64::consts::PI.sqrt());
            assert_relative_eq!(got, want, epsilon = 1e-7);
        }
    }

    #[test]
    fn averaged_state_keeps_variance_and_shows_negativity() {
        let cfg = FockConfig::new(30);
        let vac = vacuum(&cfg);
        // Vacuum-ancilla elements at m = ±0.5 average to the same variance.
        let e1 = povm_m_at_resolution(-0.5, &vac, GAMMA, 0.6, 64, &cfg).unwrap();
        let e2 = povm_m_at_resolution(0.5, &vac, GAMMA, 0.6, 64, &cfg).unwrap();
        let avg = averaged_detector_state(&[e1.clone(), e2], GAMMA, &cfg).unwrap();
        assert_relative_eq!(avg.variance, 0.6352, epsilon = 1e-6);
        assert_relative_eq!(avg.op.trace().re, 1.0, epsilon = 1e-10);
        let single = averaged_detector_state(&[e1.clone()], GAMMA, &cfg).unwrap();
        let direct = detector_state_from_element(&e1, GAMMA).unwrap();
        // Single element at m: average displaces to m = 0 but variance agrees.
        assert_relative_eq!(single.variance, direct.variance, epsilon = 1e-9);

        // Canonical-ancilla ensemble keeps its variance and Wigner negativity.
        let canon = ancilla_state(&AncillaSpec::canonical(), &cfg).unwrap();
        let elems: Vec<PovmElement> = [-0.5, 0.0, 0.5]
            .iter()
            .map(|&m| povm_m_at_resolution(m, &canon, GAMMA, 0.6, 64, &cfg).unwrap())
            .collect();
        let avg = averaged_detector_state(&elems, GAMMA, &cfg).unwrap();
        assert_relative_eq!(avg.variance, 0.4398930122788063, epsilon = 1e-6);
        let xs: Vec<f64> = (0..41).map(|i| -2.0 + i as f64 * 0.1).collect();
        let w = wigner_grid(&avg.op, &xs, &xs);
        let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min < -0.005, "averaged detector state min W = {min}");
    }
}
