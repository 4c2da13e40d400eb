//! Detector tomography: probe generation, calibration fitting, outcome
//! binning, safety-range analysis, iterative maximum-likelihood POVM
//! reconstruction, and bootstrap error bars.
//!
//! Probes are coherent states on a fixed amplitude grid with a fresh uniform
//! phase per shot. For reconstruction the phases are grouped into arcs, each
//! arc represented by its phase-averaged projector, so probe index j runs over
//! (amplitude, arc) pairs while the outcome index m runs over the m-bins plus
//! one overflow bin.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::MeasurementRecord;
use crate::error::{Result, SimError};
use crate::fock::{FockConfig, FockOperator, OperatorJson};
use crate::linalg::{hermitian_eig, hermitian_inv_sqrt};
use crate::rng::substream;
use crate::states::{nonlinear_variance, CoherentProbe, NonlinearQuadratureSpec};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

// ── Probe set ────────────────────────────────────────────────────────────────

/// Coherent probe ensemble: fixed amplitude grid, uniform random phase per
/// shot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSet {
    /// Sorted nonnegative amplitudes |α|.
    pub amplitudes: Vec<f64>,
    pub shots_per_amplitude: usize,
}

impl ProbeSet {
    /// 27 amplitudes equally spaced on [0, 3.5], 80000 shots each.
    pub fn paper_default() -> Self {
        ProbeSet {
            amplitudes: (0..27).map(|i| 3.5 * i as f64 / 26.0).collect(),
            shots_per_amplitude: 80_000,
        }
    }

    pub fn with_shots(mut self, shots: usize) -> Self {
        self.shots_per_amplitude = shots;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.is_empty() || self.shots_per_amplitude == 0 {
            return Err(SimError::InvalidConfig(
                "probe set needs amplitudes and a positive shot count".into(),
            ));
        }
        for w in self.amplitudes.windows(2) {
            if w[1] < w[0] {
                return Err(SimError::InvalidConfig(
                    "probe amplitudes must be sorted ascending".into(),
                ));
            }
        }
        if self.amplitudes[0] < 0.0 {
            return Err(SimError::InvalidConfig(
                "probe amplitudes must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn total_shots(&self) -> usize {
        self.amplitudes.len() * self.shots_per_amplitude
    }
}

/// Draws the probe stream: every shot gets α = |α|·e^{iφ} with φ uniform in
/// [0, 2π).
pub fn generate_probe_set(spec: &ProbeSet, rng: &mut impl Rng) -> Result<Vec<CoherentProbe>> {
    spec.validate()?;
    let mut probes = Vec::with_capacity(spec.total_shots());
    for &amp in &spec.amplitudes {
        for _ in 0..spec.shots_per_amplitude {
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            // α_x + iα_p = √2·α.
            probes.push(CoherentProbe::new(
                2f64.sqrt() * amp * phi.cos(),
                2f64.sqrt() * amp * phi.sin(),
            ));
        }
    }
    Ok(probes)
}

// ── Binning ──────────────────────────────────────────────────────────────────

/// How records map to (probe index, outcome bin) counts.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BinningScheme {
    /// Equal m-bins on [m_lo, m_hi); everything outside goes to one overflow
    /// bin.
    pub m_bins: usize,
    pub m_lo: f64,
    pub m_hi: f64,
    /// Records with |q| ≥ q_window are dropped.
    pub q_window: f64,
    /// Probe phases are grouped into this many equal arcs.
    pub phase_bins: usize,
}

impl Default for BinningScheme {
    fn default() -> Self {
        BinningScheme {
            m_bins: 20,
            m_lo: -1.0,
            m_hi: 1.0,
            q_window: 0.6,
            phase_bins: 30,
        }
    }
}

impl BinningScheme {
    pub fn validate(&self) -> Result<()> {
        if self.m_bins == 0 || self.phase_bins == 0 || !(self.q_window > 0.0) {
            return Err(SimError::InvalidConfig(
                "binning scheme needs positive bin counts and window".into(),
            ));
        }
        if !(self.m_hi > self.m_lo) {
            return Err(SimError::InvalidConfig(
                "binning scheme needs m_hi > m_lo".into(),
            ));
        }
        Ok(())
    }

    /// Total outcome bins including the overflow bin.
    pub fn outcome_bins(&self) -> usize {
        self.m_bins + 1
    }

    /// Outcome bin of a processed value; the last index is the overflow bin.
    pub fn m_bin(&self, m: f64) -> usize {
        if m >= self.m_lo && m < self.m_hi {
            let frac = (m - self.m_lo) / (self.m_hi - self.m_lo);
            ((frac * self.m_bins as f64) as usize).min(self.m_bins - 1)
        } else {
            self.m_bins
        }
    }

    /// Center of a regular m-bin.
    pub fn m_center(&self, bin: usize) -> f64 {
        let width = (self.m_hi - self.m_lo) / self.m_bins as f64;
        self.m_lo + (bin as f64 + 0.5) * width
    }

    pub fn phase_bin(&self, phi: f64) -> usize {
        let frac = phi.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
        ((frac * self.phase_bins as f64) as usize).min(self.phase_bins - 1)
    }
}

/// Counts per (probe index, outcome bin); probe index j = amplitude index ×
/// phase_bins + phase arc.
#[derive(Clone, Debug)]
pub struct FreqTable {
    pub scheme: BinningScheme,
    /// Sorted distinct probe amplitudes discovered in the records.
    pub amplitudes: Vec<f64>,
    /// (amplitudes × phase_bins) rows, outcome_bins columns.
    pub counts: Array2<f64>,
    /// Per-probe-row records outside the q-window.
    pub dropped_rows: Vec<f64>,
    /// Records outside the q-window in total.
    pub dropped: usize,
}

impl FreqTable {
    pub fn n_probes(&self) -> usize {
        self.amplitudes.len() * self.scheme.phase_bins
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.sum()
    }

    /// Counts in regular (non-overflow) bins.
    pub fn in_range_counts(&self) -> f64 {
        self.counts
            .columns()
            .into_iter()
            .take(self.scheme.m_bins)
            .map(|col| col.sum())
            .sum()
    }

    /// Counts widened by one complement column holding the window-dropped
    /// events, so every probe's outcomes form a full multinomial. Feeding
    /// this to the reconstruction lets the fixed point keep its completeness
    /// constraint while the reported bins sum to I minus the complement.
    pub fn counts_with_complement(&self) -> Array2<f64> {
        let (rows, cols) = self.counts.dim();
        let mut full = Array2::<f64>::zeros((rows, cols + 1));
        full.slice_mut(ndarray::s![.., ..cols]).assign(&self.counts);
        for (r, &d) in self.dropped_rows.iter().enumerate() {
            full[(r, cols)] = d;
        }
        full
    }
}

fn probe_amplitude(record: &MeasurementRecord) -> f64 {
    record.probe.alpha().norm()
}

fn probe_phase(record: &MeasurementRecord) -> f64 {
    record.probe.alpha_p.atan2(record.probe.alpha_x)
}

/// Bins records into the (probe, outcome) frequency table. Amplitudes are
/// discovered from the records themselves (grouped at 1e-9 resolution);
/// records with |q| outside the window are dropped.
pub fn bin_outcomes(records: &[MeasurementRecord], scheme: &BinningScheme) -> Result<FreqTable> {
    scheme.validate()?;
    let mut amplitudes: Vec<f64> = Vec::new();
    for r in records {
        let a = probe_amplitude(r);
        if !amplitudes.iter().any(|&b| (b - a).abs() < 1e-9) {
            amplitudes.push(a);
        }
    }
    amplitudes.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n_rows = amplitudes.len() * scheme.phase_bins;
    let mut counts = Array2::<f64>::zeros((n_rows, scheme.outcome_bins()));
    let mut dropped_rows = vec![0.0f64; n_rows];
    let mut dropped = 0usize;
    for r in records {
        let a = probe_amplitude(r);
        let ai = amplitudes
            .iter()
            .position(|&b| (b - a).abs() < 1e-9)
            .expect("amplitude was just registered");
        let row = ai * scheme.phase_bins + scheme.phase_bin(probe_phase(r));
        if r.q.abs() >= scheme.q_window {
            dropped_rows[row] += 1.0;
            dropped += 1;
            continue;
        }
        counts[(row, scheme.m_bin(r.m))] += 1.0;
    }
    Ok(FreqTable {
        scheme: *scheme,
        amplitudes,
        counts,
        dropped_rows,
        dropped,
    })
}

// ── Probe calibration fit ────────────────────────────────────────────────────

/// Least-squares calibration of dual-homodyne records against
/// A·e^{i(−φ+φ_offset)} + (x₀+ip₀), with φ the modulator scan phase.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeCalibration {
    pub amplitude: f64,
    pub phase_offset: f64,
    pub x0: f64,
    pub p0: f64,
    pub residual_rms: f64,
}

/// Fits the calibration model to heterodyne-mode records, reading the scan
/// phase from each record's probe and the measured point from (q, y). The
/// scan phase is minus the optical phase: the modulator sweep rotates the
/// sideband the opposite way, which is what makes the e^{−iφ} model land on
/// the measured mean |α|·e^{+iφ_optical}.
pub fn fit_probe_calibration(records: &[MeasurementRecord]) -> Result<ProbeCalibration> {
    if records.len() < 100 {
        return Err(SimError::InvalidConfig(format!(
            "calibration fit needs at least 100 records, got {}",
            records.len()
        )));
    }
    if records.iter().any(|r| r.theta_applied.abs() > 1e-9) {
        return Err(SimError::InvalidConfig(
            "calibration fit expects heterodyne-mode records (theta = 0)".into(),
        ));
    }
    let phases: Vec<f64> = records.iter().map(|r| -probe_phase(r)).collect();
    let mut sorted = phases.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let span = sorted[sorted.len() - 1] - sorted[0];
    if span < 0.1 * std::f64::consts::TAU {
        return Err(SimError::FitDegenerate(format!(
            "phase coverage {span:.3} rad is below 10% of a cycle"
        )));
    }
    // z_j = c·e^{−iφ_j} + d is linear in c = A·e^{iφ_offset} and d = x₀+ip₀;
    // solve the 2×2 normal equations.
    let n = records.len() as f64;
    let mut s_bb = c(0.0, 0.0);
    let mut s_bz = c(0.0, 0.0);
    let mut s_b = c(0.0, 0.0);
    let mut s_z = c(0.0, 0.0);
    for (r, &phi) in records.iter().zip(&phases) {
        let b = Complex64::from_polar(1.0, -phi);
        let z = c(r.q, r.y);
        s_bb += b.conj() * b;
        s_bz += b.conj() * z;
        s_b += b;
        s_z += z;
    }
    let det = s_bb * n - s_b.conj() * s_b;
    if det.norm() < 1e-12 * n * n {
        return Err(SimError::FitDegenerate(
            "calibration normal equations are singular".into(),
        ));
    }
    let cc = (s_bz * n - s_b.conj() * s_z) / det;
    let d = (s_z - cc * s_b) / n;
    let mut ss = 0.0;
    for (r, &phi) in records.iter().zip(&phases) {
        let fit = cc * Complex64::from_polar(1.0, -phi) + d;
        ss += (c(r.q, r.y) - fit).norm_sqr();
    }
    Ok(ProbeCalibration {
        amplitude: cc.norm(),
        phase_offset: cc.arg(),
        x0: d.re,
        p0: d.im,
        residual_rms: (ss / n).sqrt(),
    })
}

// ── Safety range ─────────────────────────────────────────────────────────────

/// Safe q-range of one m-bin against boundary-amplitude contamination.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SafetyRow {
    pub bin: usize,
    /// Largest r such that |q| < r includes at most the threshold number of
    /// boundary events.
    pub r: f64,
    /// No finite threshold constrains this bin.
    pub unbounded: bool,
}

/// For each outcome bin, the largest |q|-range containing at most `threshold`
/// events from the boundary-amplitude probes (None = no limit). Bins without
/// boundary events default to the q-window.
pub fn safety_range(
    records: &[MeasurementRecord],
    scheme: &BinningScheme,
    threshold: Option<usize>,
    boundary_amplitude: f64,
) -> Result<Vec<SafetyRow>> {
    scheme.validate()?;
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); scheme.outcome_bins()];
    for r in records {
        if (probe_amplitude(r) - boundary_amplitude).abs() < 1e-9 {
            per_bin[scheme.m_bin(r.m)].push(r.q.abs());
        }
    }
    let mut rows = Vec::with_capacity(per_bin.len());
    for (bin, qs) in per_bin.iter_mut().enumerate() {
        qs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (r, unbounded) = match threshold {
            None => (scheme.q_window, true),
            Some(n) if qs.len() <= n => (scheme.q_window, false),
            Some(n) => (qs[n], false),
        };
        rows.push(SafetyRow { bin, r, unbounded });
    }
    Ok(rows)
}

// ── Probe operators ──────────────────────────────────────────────────────────

/// Arc-averaged coherent projector: the phase average of |αe^{iφ}⟩⟨αe^{iφ}|
/// over one phase arc, truncated to the cutoff and renormalized to unit trace.
///
/// ⟨n|ρ|k⟩ ∝ e^{−α²}·αⁿ⁺ᵏ/√(n!k!) · e^{i(n−k)φ_c} · sinc((n−k)Δφ/2).
pub fn arc_probe_operator(
    amplitude: f64,
    phase_center: f64,
    phase_width: f64,
    cfg: &FockConfig,
) -> Result<FockOperator> {
    cfg.validate()?;
    let d = cfg.dim();
    // log(αⁿ/√n!) accumulated stably.
    let mut log_coeff = vec![0.0f64; d];
    for n in 1..d {
        log_coeff[n] =
            log_coeff[n - 1] + if amplitude > 0.0 { amplitude.ln() } else { f64::NEG_INFINITY }
                - 0.5 * (n as f64).ln();
    }
    let mut mat = Array2::<Complex64>::zeros((d, d));
    for n in 0..d {
        for k in 0..d {
            let log_mag = -amplitude * amplitude + log_coeff[n] + log_coeff[k];
            if log_mag == f64::NEG_INFINITY {
                continue;
            }
            let dn = n as f64 - k as f64;
            let arg = dn * phase_width / 2.0;
            let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
            mat[(n, k)] =
                Complex64::from_polar(log_mag.exp() * sinc, dn * phase_center);
        }
    }
    let tr: f64 = (0..d).map(|n| mat[(n, n)].re).sum();
    if !(tr.is_finite() && tr > 1e-300) {
        return Err(SimError::Truncation(format!(
            "probe amplitude {amplitude} has no support below the cutoff {}",
            cfg.n_max
        )));
    }
    mat.mapv_inplace(|z| z / tr);
    Ok(FockOperator::from_matrix(mat))
}

/// Probe operators for every (amplitude, phase arc) row of a frequency table,
/// in row order.
pub fn probe_operators(
    amplitudes: &[f64],
    scheme: &BinningScheme,
    cfg: &FockConfig,
) -> Result<Vec<FockOperator>> {
    let width = std::f64::consts::TAU / scheme.phase_bins as f64;
    let mut ops = Vec::with_capacity(amplitudes.len() * scheme.phase_bins);
    for &amp in amplitudes {
        for k in 0..scheme.phase_bins {
            let center = (k as f64 + 0.5) * width;
            ops.push(arc_probe_operator(amp, center, width, cfg)?);
        }
    }
    Ok(ops)
}

// ── Maximum-likelihood reconstruction ────────────────────────────────────────

/// Iteration controls for the fixed-point POVM reconstruction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MleConfig {
    pub n_max: usize,
    pub max_iterations: usize,
    /// Relative log-likelihood gain below which iteration stops.
    pub tolerance: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            n_max: 10,
            max_iterations: 2000,
            tolerance: 1e-9,
        }
    }
}

/// Reconstructed POVM with diagnostics.
#[derive(Clone, Debug)]
pub struct TomographyResult {
    /// One element per outcome column, in count-column order: the regular
    /// m-bins first, then overflow, then the complement column when the
    /// counts carried one.
    pub elements: Vec<FockOperator>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: Vec<f64>,
    /// Most negative eigenvalue encountered before flooring, across all
    /// iterations.
    pub psd_defect: f64,
}

/// Fixed-point maximum-likelihood POVM reconstruction.
///
/// Each step forms R_m = Σ_j (f_jm/p_jm)·ρ_j with p_jm = Tr[ρ_j Π_m], then
/// updates Π_m ← λ^{−1/2} R_m Π_m R_m λ^{−1/2} with λ = Σ_m R_m Π_m R_m, which
/// enforces Σ_m Π_m = I on the probed subspace. Elements are re-Hermitized and
/// eigenvalue-floored at zero every iteration; the worst defect is reported.
pub fn mle_reconstruct(
    counts: &Array2<f64>,
    probes: &[FockOperator],
    cfg: &MleConfig,
) -> Result<TomographyResult> {
    let (n_probes, n_bins) = counts.dim();
    if probes.len() != n_probes {
        return Err(SimError::InvalidConfig(format!(
            "{} probe operators for {} count rows",
            probes.len(),
            n_probes
        )));
    }
    if n_bins == 0 || counts.iter().any(|&f| !(f >= 0.0)) {
        return Err(SimError::InvalidConfig(
            "counts must be nonnegative with at least one bin".into(),
        ));
    }
    let d = cfg.n_max + 1;
    for p in probes {
        if p.dim != d {
            return Err(SimError::InvalidConfig(format!(
                "probe dimension {} does not match n_max {}",
                p.dim, cfg.n_max
            )));
        }
    }
    let init: Vec<Array2<Complex64>> = (0..n_bins)
        .map(|_| Array2::from_diag_elem(d, c(1.0 / n_bins as f64, 0.0)))
        .collect();
    mle_fixed_point(counts, probes, cfg, init)
}

/// Outcome probabilities p_jm = Tr[ρ_j Π_m], floored at 1e-300.
fn outcome_probs(probes: &[FockOperator], elements: &[Array2<Complex64>]) -> Array2<f64> {
    let n_probes = probes.len();
    let n_bins = elements.len();
    let d = elements[0].dim().0;
    let mut probs = Array2::<f64>::zeros((n_probes, n_bins));
    for j in 0..n_probes {
        for m in 0..n_bins {
            let mut p = 0.0;
            for a in 0..d {
                for b in 0..d {
                    p += (probes[j].mat[(a, b)] * elements[m][(b, a)]).re;
                }
            }
            probs[(j, m)] = p.max(1e-300);
        }
    }
    probs
}

fn log_likelihood_of(counts: &Array2<f64>, probs: &Array2<f64>) -> f64 {
    counts
        .iter()
        .zip(probs.iter())
        .filter(|(&f, _)| f > 0.0)
        .map(|(&f, &p)| f * p.ln())
        .sum()
}

/// One sandwich update Π_m ← λ^{−1/2} R_m Π_m R_m λ^{−1/2}, with each result
/// re-Hermitized and its spectrum floored at zero. Returns the elements and
/// the most negative eigenvalue met before flooring.
fn sandwich_update(
    elements: &[Array2<Complex64>],
    r_ops: &[Array2<Complex64>],
) -> Result<(Vec<Array2<Complex64>>, f64)> {
    let d = elements[0].dim().0;
    let mut lambda = Array2::<Complex64>::zeros((d, d));
    let rpr: Vec<Array2<Complex64>> = elements
        .iter()
        .zip(r_ops)
        .map(|(el, r)| {
            let rpr = r.dot(el).dot(r);
            lambda += &rpr;
            rpr
        })
        .collect();
    // λ scales with the squared count total; normalize to unit trace so the
    // eigenvalue floor acts relative to the matrix scale.
    let t: f64 = (0..d).map(|a| lambda[(a, a)].re).sum();
    if !(t > 0.0) {
        return Err(SimError::OptimizationDidNotConverge(
            "likelihood normalizer lost positivity".into(),
        ));
    }
    let lam_scaled = lambda.mapv(|z| z / t);
    let lam_inv_sqrt = hermitian_inv_sqrt(&lam_scaled, 1e-12).mapv(|z| z / t.sqrt());
    let mut worst = 0.0f64;
    let updated = rpr
        .into_iter()
        .map(|rpr| {
            let raw = lam_inv_sqrt.dot(&rpr).dot(&lam_inv_sqrt);
            let herm = (&raw + &crate::linalg::dagger(&raw)) / c(2.0, 0.0);
            let (lams, vecs) = hermitian_eig(&herm);
            worst = worst.min(lams.iter().cloned().fold(0.0f64, f64::min));
            let mut floored = Array2::<Complex64>::zeros((d, d));
            for (k, &lam) in lams.iter().enumerate() {
                if lam <= 0.0 {
                    continue;
                }
                for a in 0..d {
                    for b in 0..d {
                        floored[(a, b)] += vecs[(a, k)] * c(lam, 0.0) * vecs[(b, k)].conj();
                    }
                }
            }
            floored
        })
        .collect();
    Ok((updated, worst))
}

/// The fixed-point iteration itself, from an arbitrary starting POVM.
///
/// The full update can overshoot on noisy tables (the iteration is not an EM
/// step), so each iteration backtracks: the step uses R_m(ε) = ε·R_m +
/// (1−ε)·r̄·I with ε halved until the log-likelihood does not decrease. ε = 1
/// is the plain update and ε → 0 the identity map, so accepted steps keep the
/// likelihood monotone by construction.
fn mle_fixed_point(
    counts: &Array2<f64>,
    probes: &[FockOperator],
    cfg: &MleConfig,
    init: Vec<Array2<Complex64>>,
) -> Result<TomographyResult> {
    let (n_probes, n_bins) = counts.dim();
    let d = cfg.n_max + 1;
    let mut elements = init;
    let mut probs = outcome_probs(probes, &elements);
    let mut ll = log_likelihood_of(counts, &probs);
    let mut log_likelihood = vec![ll];
    let mut psd_defect = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let r_ops: Vec<Array2<Complex64>> = (0..n_bins)
            .map(|m| {
                let mut r = Array2::<Complex64>::zeros((d, d));
                for j in 0..n_probes {
                    let f = counts[(j, m)];
                    if f > 0.0 {
                        r.scaled_add(c(f / probs[(j, m)], 0.0), &probes[j].mat);
                    }
                }
                r
            })
            .collect();
        let r_mean = r_ops
            .iter()
            .map(|r| (0..d).map(|a| r[(a, a)].re).sum::<f64>())
            .sum::<f64>()
            / (n_bins * d) as f64;
        let mut eps = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let blended: Vec<Array2<Complex64>> = r_ops
                .iter()
                .map(|r| {
                    let mut b = r.mapv(|z| z * eps);
                    for a in 0..d {
                        b[(a, a)] += c((1.0 - eps) * r_mean, 0.0);
                    }
                    b
                })
                .collect();
            let (cand, worst) = sandwich_update(&elements, &blended)?;
            let cand_probs = outcome_probs(probes, &cand);
            let cand_ll = log_likelihood_of(counts, &cand_probs);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cand_probs, cand_ll, worst));
                break;
            }
            eps *= 0.5;
        }
        let Some((cand, cand_probs, cand_ll, worst)) = accepted else {
            // No step length improves the likelihood: stationary point.
            converged = true;
            break;
        };
        elements = cand;
        probs = cand_probs;
        psd_defect = psd_defect.min(worst);
        let gain = cand_ll - ll;
        ll = cand_ll;
        log_likelihood.push(ll);
        if gain.abs() <= cfg.tolerance * ll.abs() {
            converged = true;
            break;
        }
    }
    Ok(TomographyResult {
        elements: elements.into_iter().map(FockOperator::from_matrix).collect(),
        iterations,
        converged,
        log_likelihood,
        psd_defect: -psd_defect,
    })
}

impl TomographyResult {
    /// Per-bin variance of p̂+γx̂² under the normalized elements (overflow
    /// excluded); None for bins whose element vanished for lack of counts.
    pub fn bin_variances(&self, gamma: f64, m_bins: usize) -> Result<Vec<Option<f64>>> {
        let spec = NonlinearQuadratureSpec::new(gamma, 1.0);
        self.elements
            .iter()
            .take(m_bins)
            .map(|el| {
                if el.trace().re <= 1e-300 {
                    return Ok(None);
                }
                nonlinear_variance(el, &spec).map(Some)
            })
            .collect()
    }

    /// Σ_m Π_m deviation from identity over all elements, as the largest
    /// absolute entry; holds on the probed subspace by construction.
    pub fn completeness_defect(&self) -> f64 {
        let d = self.elements[0].dim;
        let mut sum = Array2::<Complex64>::zeros((d, d));
        for el in &self.elements {
            sum += &el.mat;
        }
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in 0..d {
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((sum[(a, b)] - c(want, 0.0)).norm());
            }
        }
        worst
    }

    /// Largest eigenvalue of (Σ over the first `bins` elements − I); at most
    /// ~0 when the binned set under-resolves the identity.
    pub fn binned_sum_excess(&self, bins: usize) -> f64 {
        let d = self.elements[0].dim;
        let mut sum = Array2::<Complex64>::zeros((d, d));
        for el in self.elements.iter().take(bins) {
            sum += &el.mat;
        }
        for a in 0..d {
            sum[(a, a)] -= c(1.0, 0.0);
        }
        let (lams, _) = hermitian_eig(&sum);
        lams.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn save<W: std::io::Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Doc<'a> {
            elements: Vec<OperatorJson>,
            iterations: usize,
            converged: bool,
            log_likelihood: &'a [f64],
            psd_defect: f64,
        }
        let doc = Doc {
            elements: self.elements.iter().map(OperatorJson::from_operator).collect(),
            iterations: self.iterations,
            converged: self.converged,
            log_likelihood: &self.log_likelihood,
            psd_defect: self.psd_defect,
        };
        serde_json::to_writer_pretty(out, &doc)
            .map_err(|e| SimError::FileFormat(format!("result serialization failed: {e}")))
    }
}

// ── Bootstrap ────────────────────────────────────────────────────────────────

/// Bootstrap controls: resample count and how each resample is re-estimated.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Re-run the full MLE per resample instead of a warm-started refinement.
    pub full_mle: bool,
    /// Iteration budget per resample in warm-started mode.
    pub warm_iterations: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 100,
            full_mle: false,
            warm_iterations: 50,
            seed: 0,
        }
    }
}

/// Per-bin variance with its bootstrap standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BinVariance {
    pub bin: usize,
    pub m_center: f64,
    pub variance: f64,
    pub std_error: f64,
}

/// Point estimate plus bootstrap error bars of the per-bin variances.
///
/// Records are resampled with replacement at the record level; each resample
/// is re-binned and re-estimated (warm-started from the point estimate by
/// default, full MLE on request), and the standard deviation across resamples
/// is reported per bin.
pub fn bootstrap_variance(
    records: &[MeasurementRecord],
    scheme: &BinningScheme,
    mle_cfg: &MleConfig,
    gamma: f64,
    boot: &BootstrapConfig,
) -> Result<Vec<BinVariance>> {
    if boot.resamples < 50 {
        return Err(SimError::InvalidConfig(format!(
            "bootstrap needs at least 50 resamples, got {}",
            boot.resamples
        )));
    }
    let table = bin_outcomes(records, scheme)?;
    let cfg = FockConfig::new(mle_cfg.n_max);
    let probes = probe_operators(&table.amplitudes, scheme, &cfg)?;
    let point = mle_reconstruct(&table.counts_with_complement(), &probes, mle_cfg)?;
    let point_vars = point.bin_variances(gamma, scheme.m_bins)?;

    // Cell index per record (window-dropped records map to the complement
    // column); resampling a record only matters through its cell, so the
    // histogram of resampled cells is sufficient.
    let n_rows = table.n_probes();
    let n_cols = scheme.outcome_bins() + 1;
    let mut cells = Vec::with_capacity(records.len());
    for r in records {
        let a = probe_amplitude(r);
        let ai = table
            .amplitudes
            .iter()
            .position(|&b| (b - a).abs() < 1e-9)
            .expect("amplitude registered during binning");
        let row = ai * scheme.phase_bins + scheme.phase_bin(probe_phase(r));
        let col = if r.q.abs() >= scheme.q_window {
            scheme.outcome_bins()
        } else {
            scheme.m_bin(r.m)
        };
        cells.push(row * n_cols + col);
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(boot.resamples); scheme.m_bins];
    for rs in 0..boot.resamples {
        let mut rng = substream(boot.seed, "bootstrap", rs as u64);
        let mut counts = Array2::<f64>::zeros((n_rows, n_cols));
        for _ in 0..cells.len() {
            let cell = cells[rng.gen_range(0..cells.len())];
            counts[(cell / n_cols, cell % n_cols)] += 1.0;
        }
        let result = if boot.full_mle {
            mle_reconstruct(&counts, &probes, mle_cfg)?
        } else {
            let warm = MleConfig {
                max_iterations: boot.warm_iterations,
                ..*mle_cfg
            };
            mle_fixed_point(
                &counts,
                &probes,
                &warm,
                point.elements.iter().map(|e| e.mat.clone()).collect(),
            )?
        };
        for (bin, v) in result
            .bin_variances(gamma, scheme.m_bins)?
            .into_iter()
            .enumerate()
        {
            if let Some(v) = v {
                samples[bin].push(v);
            }
        }
    }
    // Bins the point estimate could not populate produce no row; a resample
    // that empties a populated bin simply contributes no sample there.
    let mut rows = Vec::with_capacity(scheme.m_bins);
    for (bin, vs) in samples.into_iter().enumerate() {
        let point_var = match point_vars[bin] {
            Some(v) => v,
            None => continue,
        };
        if vs.len() < 2 {
            continue;
        }
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        rows.push(BinVariance {
            bin,
            m_center: scheme.m_center(bin),
            variance: point_var,
            std_error: var.sqrt(),
        });
    }
    Ok(rows)
}

/// Writes per-bin variances as CSV rows (bin, m_center, variance, error).
pub fn write_bin_variance_csv<W: std::io::Write>(out: W, rows: &[BinVariance]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["bin", "m_center", "variance", "error"])?;
    for r in rows {
        wtr.write_record(&[
            format!("{}", r.bin),
            format!("{}", r.m_center),
            format!("{}", r.variance),
            format!("{}", r.std_error),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::density_from_pure;
    use crate::states::coherent_amplitudes;
    use approx::assert_relative_eq;

    fn record(probe: CoherentProbe, q: f64, m: f64) -> MeasurementRecord {
        MeasurementRecord {
            probe,
            q,
            y: 0.0,
            m,
            theta_applied: 0.0,
        }
    }

    #[test]
    fn probe_set_defaults_and_counts() {
        let spec = ProbeSet::paper_default();
        spec.validate().unwrap();
        assert_eq!(spec.amplitudes.len(), 27);
        assert_relative_eq!(spec.amplitudes[0], 0.0);
        assert_relative_eq!(spec.amplitudes[26], 3.5);
        assert_eq!(spec.total_shots(), 2_160_000);
        let small = spec.with_shots(3);
        let mut rng = substream(1, "probes", 0);
        assert_eq!(generate_probe_set(&small, &mut rng).unwrap().len(), 81);
    }

    #[test]
    fn zero_amplitude_probes_are_vacuum() {
        let spec = ProbeSet {
            amplitudes: vec![0.0],
            shots_per_amplitude: 50,
        };
        let mut rng = substream(2, "probes", 0);
        for p in generate_probe_set(&spec, &mut rng).unwrap() {
            assert_eq!((p.alpha_x, p.alpha_p), (0.0, 0.0));
        }
    }

    #[test]
    fn probe_phases_uniform_by_chi_square() {
        let spec = ProbeSet {
            amplitudes: vec![1.0],
            shots_per_amplitude: 100_000,
        };
        let mut rng = substream(3, "probes", 0);
        let probes = generate_probe_set(&spec, &mut rng).unwrap();
        let bins = 20;
        let mut hist = vec![0.0f64; bins];
        for p in &probes {
            let phi = p.alpha_p.atan2(p.alpha_x).rem_euclid(std::f64::consts::TAU);
            hist[((phi / std::f64::consts::TAU * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let expected = probes.len() as f64 / bins as f64;
        let chi2: f64 = hist.iter().map(|&h| (h - expected) * (h - expected) / expected).sum();
        // 1% critical value for 19 degrees of freedom.
        assert!(chi2 < 36.19, "chi-square {chi2}");
    }

    #[test]
    fn binning_partition_and_window() {
        let scheme = BinningScheme::default();
        assert!(bin_outcomes(&[], &scheme).unwrap().counts.sum() == 0.0);
        let probe = CoherentProbe::new(1.0, 0.0);
        let records = vec![
            record(probe, 0.7, 0.0),   // dropped by the q-window
            record(probe, 0.0, -1.0),  // first bin edge
            record(probe, 0.0, 0.999), // last regular bin
            record(probe, 0.0, 1.0),   // overflow (m_hi exclusive)
            record(probe, 0.0, -3.0),  // overflow
        ];
        let table = bin_outcomes(&records, &scheme).unwrap();
        assert_eq!(table.dropped, 1);
        assert_relative_eq!(table.total_counts(), 4.0);
        assert_relative_eq!(table.in_range_counts(), 2.0);
        let overflow: f64 = table.counts.column(scheme.m_bins).sum();
        assert_relative_eq!(overflow, 2.0);
        // Every in-window record lands in exactly one bin.
        assert_eq!(scheme.m_bin(-1.0), 0);
        assert_eq!(scheme.m_bin(0.999), 19);
        assert_eq!(scheme.m_bin(1.0), 20);
        assert_eq!(scheme.m_bin(f64::NAN), 20);
    }

    #[test]
    fn calibration_recovers_synthetic_parameters() {
        let mut rng = substream(4, "calibration", 0);
        let (a_true, off_true, x0, p0) = (2.0, 0.3, 0.1, -0.05);
        let mut records = Vec::new();
        for _ in 0..10_000 {
            // Optical phase φ tags the probe; the offset is an extra optical
            // rotation the scan log does not know about.
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            let z = Complex64::from_polar(a_true, phi + off_true) + c(x0, p0);
            let noise = c(
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
            ) * 0.5;
            let zn = z + noise;
            records.push(MeasurementRecord {
                probe: CoherentProbe::new(
                    2f64.sqrt() * a_true * phi.cos(),
                    2f64.sqrt() * a_true * phi.sin(),
                ),
                q: zn.re,
                y: zn.im,
                m: 0.0,
                theta_applied: 0.0,
            });
        }
        let fit = fit_probe_calibration(&records).unwrap();
        assert!((fit.amplitude - a_true).abs() < 0.02, "A {}", fit.amplitude);
        assert!((fit.phase_offset - off_true).abs() < 0.01);
        assert!((fit.x0 - x0).abs() < 0.02);
        assert!((fit.p0 - p0).abs() < 0.02);
        assert!((fit.residual_rms - 0.5 * 2f64.sqrt()).abs() < 0.02);
    }

    #[test]
    fn calibration_zero_amplitude_and_degenerate_coverage() {
        let mut rng = substream(5, "calibration", 0);
        let mut records = Vec::new();
        for _ in 0..500 {
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            records.push(MeasurementRecord {
                probe: CoherentProbe::new(phi.cos() * 1e-12, phi.sin() * 1e-12),
                q: 0.25 + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal),
                y: -0.1 + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal),
                m: 0.0,
                theta_applied: 0.0,
            });
        }
        let fit = fit_probe_calibration(&records).unwrap();
        assert!(fit.amplitude < 0.01, "A {}", fit.amplitude);
        assert!((fit.x0 - 0.25).abs() < 0.01);
        assert!((fit.p0 + 0.1).abs() < 0.01);

        let narrow: Vec<MeasurementRecord> = (0..200)
            .map(|i| {
                let phi = 0.3 + 1e-4 * i as f64;
                record(CoherentProbe::new(phi.cos(), phi.sin()), 0.0, 0.0)
            })
            .collect();
        assert!(matches!(
            fit_probe_calibration(&narrow),
            Err(SimError::FitDegenerate(_))
        ));
    }

    #[test]
    fn safety_range_examples() {
        let scheme = BinningScheme::default();
        let boundary = CoherentProbe::new(3.5 * 2f64.sqrt(), 0.0);
        let records = vec![
            record(boundary, 0.8, 0.05),
            record(boundary, 0.3, 0.05),
            record(boundary, -0.5, 0.05),
            record(CoherentProbe::new(0.0, 0.0), 0.01, 0.05),
        ];
        let bin = scheme.m_bin(0.05);
        // Threshold None flags every bin unbounded.
        let rows = safety_range(&records, &scheme, None, 3.5).unwrap();
        assert!(rows.iter().all(|r| r.unbounded));
        // N = 0: r is the smallest boundary |q| in the bin.
        let rows = safety_range(&records, &scheme, Some(0), 3.5).unwrap();
        assert_relative_eq!(rows[bin].r, 0.3);
        assert!(!rows[bin].unbounded);
        // N = 1 admits one event, the next-larger |q| bounds the range.
        let rows = safety_range(&records, &scheme, Some(1), 3.5).unwrap();
        assert_relative_eq!(rows[bin].r, 0.5);
        // Bins without boundary events fall back to the window.
        assert_relative_eq!(rows[0].r, scheme.q_window);
    }

    #[test]
    fn arc_probe_operator_limits() {
        let cfg = FockConfig::new(8);
        // Zero amplitude: vacuum projector for any arc.
        let vac = arc_probe_operator(0.0, 1.0, 0.3, &cfg).unwrap();
        assert_relative_eq!(vac.mat[(0, 0)].re, 1.0, epsilon = 1e-12);
        // Full-circle average: diagonal Poisson weights.
        let full = arc_probe_operator(1.0, 0.0, std::f64::consts::TAU, &cfg).unwrap();
        for n in 0..cfg.dim() {
            for k in 0..cfg.dim() {
                if n != k {
                    assert!(full.mat[(n, k)].norm() < 1e-12);
                }
            }
        }
        assert_relative_eq!(full.trace().re, 1.0, epsilon = 1e-12);
        // Narrow arc at the cutoff-safe amplitude: matches the pure projector.
        let narrow = arc_probe_operator(0.8, 0.4, 1e-9, &cfg).unwrap();
        let alpha = Complex64::from_polar(0.8, 0.4);
        let pure = density_from_pure(&coherent_amplitudes(alpha, cfg.dim()));
        let tr = pure.trace().re;
        for n in 0..cfg.dim() {
            for k in 0..cfg.dim() {
                assert_relative_eq!(
                    narrow.mat[(n, k)].re,
                    pure.mat[(n, k)].re / tr,
                    epsilon = 1e-6
                );
                assert_relative_eq!(
                    narrow.mat[(n, k)].im,
                    pure.mat[(n, k)].im / tr,
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn mle_single_bin_gives_identity() {
        let cfg = MleConfig {
            n_max: 3,
            max_iterations: 50,
            tolerance: 1e-12,
        };
        let fock = FockConfig::new(3);
        let probes: Vec<FockOperator> = [0.5, 1.0, 1.5]
            .iter()
            .map(|&a| arc_probe_operator(a, 0.0, std::f64::consts::TAU, &fock).unwrap())
            .collect();
        let counts = Array2::from_shape_vec((3, 1), vec![100.0, 200.0, 300.0]).unwrap();
        let result = mle_reconstruct(&counts, &probes, &cfg).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_relative_eq!(result.elements[0].mat[(a, b)].re, want, epsilon = 1e-9);
                assert_relative_eq!(result.elements[0].mat[(a, b)].im, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn mle_recovers_known_two_level_povm() {
        // Informationally complete probes on n_max = 1 and exact frequencies
        // from a known two-element POVM: the fixed point must recover it.
        let d = 2;
        let mk = |v: [[f64; 2]; 2]| {
            let mut m = Array2::<Complex64>::zeros((d, d));
            for a in 0..d {
                for b in 0..d {
                    m[(a, b)] = c(v[a][b], 0.0);
                }
            }
            m
        };
        let pi0 = mk([[0.7, 0.1], [0.1, 0.2]]);
        let pi1 = mk([[0.3, -0.1], [-0.1, 0.8]]);
        let probes: Vec<FockOperator> = [
            mk([[1.0, 0.0], [0.0, 0.0]]),
            mk([[0.0, 0.0], [0.0, 1.0]]),
            mk([[0.5, 0.5], [0.5, 0.5]]),
        ]
        .into_iter()
        .map(FockOperator::from_matrix)
        .collect();
        let mut iy = Array2::<Complex64>::zeros((d, d));
        iy[(0, 0)] = c(0.5, 0.0);
        iy[(1, 1)] = c(0.5, 0.0);
        iy[(0, 1)] = c(0.0, -0.5);
        iy[(1, 0)] = c(0.0, 0.5);
        let mut probes = probes;
        probes.push(FockOperator::from_matrix(iy));
        let n = 1_000_000.0;
        let mut counts = Array2::<f64>::zeros((probes.len(), 2));
        for (j, p) in probes.iter().enumerate() {
            for (m, pi) in [&pi0, &pi1].iter().enumerate() {
                let mut prob = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        prob += (p.mat[(a, b)] * pi[(b, a)]).re;
                    }
                }
                counts[(j, m)] = n * prob;
            }
        }
        let cfg = MleConfig {
            n_max: 1,
            max_iterations: 2000,
            tolerance: 1e-14,
        };
        let result = mle_reconstruct(&counts, &probes, &cfg).unwrap();
        assert!(result.converged);
        for a in 0..d {
            for b in 0..d {
                assert_relative_eq!(
                    result.elements[0].mat[(a, b)].re,
                    pi0[(a, b)].re,
                    epsilon = 1e-5
                );
                assert_relative_eq!(
                    result.elements[1].mat[(a, b)].re,
                    pi1[(a, b)].re,
                    epsilon = 1e-5
                );
            }
        }
        // Log-likelihood is monotone nondecreasing along the trace.
        for w in result.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        assert!(result.completeness_defect() < 1e-6);
        assert!(result.psd_defect < 1e-8);
    }

    #[test]
    fn bootstrap_deterministic_dataset_has_zero_error() {
        let scheme = BinningScheme {
            m_bins: 4,
            phase_bins: 2,
            ..BinningScheme::default()
        };
        let probe = CoherentProbe::new(0.5, 0.0);
        let records: Vec<MeasurementRecord> =
            (0..400).map(|_| record(probe, 0.1, 0.35)).collect();
        let rows = bootstrap_variance(
            &records,
            &scheme,
            &MleConfig {
                n_max: 2,
                max_iterations: 100,
                tolerance: 1e-9,
            },
            0.52,
            &BootstrapConfig {
                resamples: 50,
                seed: 7,
                ..BootstrapConfig::default()
            },
        )
        .unwrap();
        // Only the single populated bin yields a variance row, and identical
        // resamples give it a vanishing error bar.
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].bin, scheme.m_bin(0.35));
        assert!(rows[0].std_error < 1e-12, "{}", rows[0].std_error);
        assert!(rows[0].variance.is_finite());
    }

    #[test]
    fn bin_variance_csv_shape() {
        let rows = vec![
            BinVariance {
                bin: 0,
                m_center: -0.95,
                variance: 0.7,
                std_error: 0.01,
            },
            BinVariance {
                bin: 1,
                m_center: -0.85,
                variance: 0.71,
                std_error: 0.012,
            },
        ];
        let mut buf = Vec::new();
        write_bin_variance_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "bin,m_center,variance,error");
        assert_eq!(text.lines().count(), 3);
    }
}
