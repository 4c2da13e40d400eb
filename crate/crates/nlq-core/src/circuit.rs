//! Monte-Carlo simulation of the adaptive double-homodyne circuit.
//!
//! One shot runs the full pipeline: the probe meets the ancilla on a 50:50
//! beamsplitter, HD1 samples x̂ on mode 1 with efficiency η₁, the feedforward
//! maps the outcome q to θ(q) = arctan(√2γq), HD2 samples the quadrature
//! rotated θ(q) away from p̂ on mode 2 with efficiency η₂, and post-processing
//! forms m = √2·y/cos θ(q).
//!
//! The probe displacement is handled analytically: the beamsplitter maps
//! D(α)⊗1 to D(α/√2)⊗D(α/√2), so sampling runs in the vacuum frame (probe
//! port in vacuum) and the outcomes are shifted afterwards. One prepared
//! engine therefore serves any probe amplitude at ancilla-sized cost.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fock::{
    beamsplitter_blocks, beamsplitter_vec, hermite_functions, rotated_position_vector,
    FockConfig, FockOperator, TwoModeState,
};
use crate::linalg::hermitian_eig;
use crate::lut::{lut_eval, LutTable};
use crate::povm::{feedforward_angle, lossy_homodyne_povm};
use crate::rng::substream;
use crate::states::CoherentProbe;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Homodyne efficiencies of the two detectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub eta1: f64,
    pub eta2: f64,
}

impl LossModel {
    pub fn new(eta1: f64, eta2: f64) -> Self {
        LossModel { eta1, eta2 }
    }

    /// Ideal detection.
    pub fn ideal() -> Self {
        LossModel::new(1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must lie in (0, 1], got {eta}"
                )));
            }
        }
        Ok(())
    }
}

// ── Feedforward policy ───────────────────────────────────────────────────────

/// How the HD2 basis angle is produced from the HD1 outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum FeedforwardMode {
    /// Full-precision θ(q) = arctan(√2γq).
    Exact,
    /// Fixed-point table emulating the FPGA path.
    Lut(LutTable),
    /// No feedforward: θ ≡ 0, the record doubles as a dual-homodyne sample.
    Disabled,
}

/// Feedforward law θ(q) and the post-processing gain g = √2/cos θ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedforwardPolicy {
    pub gamma: f64,
    pub mode: FeedforwardMode,
}

impl FeedforwardPolicy {
    pub fn exact(gamma: f64) -> Self {
        FeedforwardPolicy {
            gamma,
            mode: FeedforwardMode::Exact,
        }
    }

    pub fn with_lut(gamma: f64, table: LutTable) -> Self {
        FeedforwardPolicy {
            gamma,
            mode: FeedforwardMode::Lut(table),
        }
    }

    pub fn disabled(gamma: f64) -> Self {
        FeedforwardPolicy {
            gamma,
            mode: FeedforwardMode::Disabled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Basis angle applied for HD1 outcome q.
    pub fn theta(&self, q: f64) -> f64 {
        match &self.mode {
            FeedforwardMode::Exact => feedforward_angle(self.gamma, q),
            FeedforwardMode::Lut(table) => lut_eval(q, table).theta,
            FeedforwardMode::Disabled => 0.0,
        }
    }

    /// Post-processing gain g = √2/cos θ ≥ √2, always full precision.
    pub fn gain(theta: f64) -> f64 {
        2f64.sqrt() / theta.cos()
    }
}

// ── Records and offset parameters ────────────────────────────────────────────

/// One shot of the adaptive measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub probe: CoherentProbe,
    /// HD1 outcome in quadrature units.
    pub q: f64,
    /// HD2 outcome after loss and offset correction.
    pub y: f64,
    /// Processed outcome m = √2·y/cos θ.
    pub m: f64,
    pub theta_applied: f64,
}

/// Fitted residual offset of the phase-modulation path,
/// c(φ,Θ) = a·|α|·[sin(φ+Θ−b) − sin(φ−b)].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualOffsetParams {
    pub amplitude_coeff: f64,
    pub phase_bias: f64,
    pub enabled: bool,
}

impl ResidualOffsetParams {
    /// The fitted coefficients, correction active.
    pub fn fitted() -> Self {
        ResidualOffsetParams {
            amplitude_coeff: 0.161,
            phase_bias: 0.812,
            enabled: true,
        }
    }

    /// Same coefficients, correction off.
    pub fn disabled() -> Self {
        ResidualOffsetParams {
            enabled: false,
            ..ResidualOffsetParams::fitted()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude_coeff < 0.0 || self.phase_bias < 0.0 {
            return Err(SimError::InvalidConfig(
                "offset coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// The closed-form offset c(φ,Θ) for probe phase φ and applied angle Θ.
pub fn residual_offset(params: &ResidualOffsetParams, alpha_abs: f64, phi: f64, theta: f64) -> f64 {
    params.amplitude_coeff
        * alpha_abs
        * ((phi + theta - params.phase_bias).sin() - (phi - params.phase_bias).sin())
}

/// Subtracts the fitted offset from y and recomputes m; identity when the
/// correction is disabled.
pub fn residual_offset_correction(
    record: &MeasurementRecord,
    phi: f64,
    theta: f64,
    params: &ResidualOffsetParams,
) -> MeasurementRecord {
    if !params.enabled {
        return *record;
    }
    let off = residual_offset(params, record.probe.alpha().norm(), phi, theta);
    let y = record.y - off;
    MeasurementRecord {
        y,
        m: FeedforwardPolicy::gain(record.theta_applied) * y,
        ..*record
    }
}

// ── Quadrature sampling grids ────────────────────────────────────────────────

/// Uniform grid for inverse-CDF quadrature sampling.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SampleGrid {
    /// Half-width of the symmetric range.
    pub radius: f64,
    pub points: usize,
}

impl SampleGrid {
    pub fn new(radius: f64, points: usize) -> Self {
        SampleGrid { radius, points }
    }

    /// Default range reaching four vacuum standard deviations beyond the
    /// largest mean quadrature displacement √(α_x²+α_p²), at 4096 points.
    pub fn default_for_amplitude(max_displacement: f64) -> Self {
        SampleGrid::new(max_displacement.abs() + 4.0 * 0.5f64.sqrt(), 4096)
    }

    /// Vacuum-frame grid sized by the ancilla energy, ±(4 + 2√(2⟨n⟩+1))·√(1/2).
    pub fn default_for_ancilla(ancilla: &FockOperator) -> Self {
        let mean_n: f64 = (0..ancilla.dim).map(|n| n as f64 * ancilla.mat[(n, n)].re).sum();
        SampleGrid::new(
            (4.0 + 2.0 * (2.0 * mean_n.max(0.0) + 1.0).sqrt()) * 0.5f64.sqrt(),
            4096,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || self.points < 16 {
            return Err(SimError::InvalidConfig(format!(
                "sample grid needs positive radius and at least 16 points, got ±{} / {}",
                self.radius, self.points
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let step = 2.0 * self.radius / (self.points - 1) as f64;
        (0..self.points).map(|j| -self.radius + step * j as f64).collect()
    }
}

/// Minimum captured probability for a sampling grid. The default ±4σ-plus
/// range leaves a Gaussian tail of order 1e-5; anything below this threshold
/// signals a genuinely undersized grid rather than tail rounding.
const CAPTURE_REQUIRED: f64 = 1.0 - 1e-4;

/// Cumulative trapezoid of a density on a uniform grid; errors when the grid
/// captures less than `required` of the unit mass.
fn density_cdf(xs: &[f64], density: &[f64], required: f64) -> Result<Vec<f64>> {
    let step = xs[1] - xs[0];
    let mut cdf = vec![0.0; xs.len()];
    for j in 1..xs.len() {
        cdf[j] = cdf[j - 1] + 0.5 * (density[j - 1] + density[j]) * step;
    }
    let total = cdf[xs.len() - 1];
    if !(total.is_finite() && (total - 1.0).abs() <= 1.0 - required) {
        return Err(SimError::GridTooNarrow {
            captured: total,
            required,
        });
    }
    for v in cdf.iter_mut() {
        *v /= total;
    }
    Ok(cdf)
}

/// Inverse-CDF draw with linear interpolation inside grid bins.
fn invert_cdf(xs: &[f64], cdf: &[f64], u: f64) -> f64 {
    let hi = cdf.partition_point(|&v| v < u).min(xs.len() - 1).max(1);
    let (c0, c1) = (cdf[hi - 1], cdf[hi]);
    let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
    xs[hi - 1] + frac * (xs[hi] - xs[hi - 1])
}

// ── Single homodyne sampling ─────────────────────────────────────────────────

/// Reusable sampler of one lossy homodyne detector on one mode of a two-mode
/// state. Prepares the ideal rotated-quadrature marginal once; each draw is an
/// inverse-CDF lookup plus Gaussian detection noise.
pub struct HomodyneSampler {
    state: TwoModeState,
    mode: usize,
    theta: f64,
    eta: f64,
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl HomodyneSampler {
    pub fn new(
        state: &TwoModeState,
        mode: usize,
        theta: f64,
        eta: f64,
        grid: &SampleGrid,
    ) -> Result<Self> {
        if mode != 1 && mode != 2 {
            return Err(SimError::InvalidConfig(format!(
                "homodyne mode must be 1 or 2, got {mode}"
            )));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "efficiency must lie in (0, 1], got {eta}"
            )));
        }
        grid.validate()?;
        let rho = if mode == 1 {
            state.partial_trace_mode2()
        } else {
            state.partial_trace_mode1()
        };
        let xs = grid.nodes();
        let density: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let v = rotated_position_vector(theta, x, rho.dim);
                let mut p = c(0.0, 0.0);
                for n in 0..rho.dim {
                    for m in 0..rho.dim {
                        p += v[n].conj() * rho.mat[(n, m)] * v[m];
                    }
                }
                p.re.max(0.0)
            })
            .collect();
        let cdf = density_cdf(&xs, &density, CAPTURE_REQUIRED)?;
        Ok(HomodyneSampler {
            state: state.clone(),
            mode,
            theta,
            eta,
            xs,
            cdf,
        })
    }

    /// One outcome: ideal draw of x_θ, then √η scaling plus Gaussian noise of
    /// variance (1−η)/2.
    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        let ideal = invert_cdf(&self.xs, &self.cdf, rng.gen::<f64>());
        if self.eta >= 1.0 {
            ideal
        } else {
            let sigma = ((1.0 - self.eta) / 2.0).sqrt();
            self.eta.sqrt() * ideal + sigma * rng.sample::<f64, _>(StandardNormal)
        }
    }

    /// Normalized state of the unmeasured mode conditioned on the outcome.
    pub fn conditioned(&self, value: f64) -> Result<FockOperator> {
        let d = self.state.dim;
        let cfg = FockConfig::new(d - 1);
        let pi = lossy_homodyne_povm(value, self.theta, self.eta, &cfg)?.op;
        let mut out = Array2::<Complex64>::zeros((d, d));
        for n in 0..d {
            for m in 0..d {
                let mut s = c(0.0, 0.0);
                for a in 0..d {
                    for b in 0..d {
                        let rho_el = if self.mode == 1 {
                            self.state.mat[(b * d + n, a * d + m)]
                        } else {
                            self.state.mat[(n * d + b, m * d + a)]
                        };
                        s += pi.mat[(a, b)] * rho_el;
                    }
                }
                out[(n, m)] = s;
            }
        }
        let tr: f64 = (0..d).map(|n| out[(n, n)].re).sum();
        if !(tr.is_finite() && tr > 1e-300) {
            return Err(SimError::InvalidConfig(format!(
                "conditioning on zero-probability outcome {value}"
            )));
        }
        out.mapv_inplace(|z| z / tr);
        Ok(FockOperator::from_matrix(out))
    }
}

/// Samples one lossy homodyne outcome on the given mode and returns it with
/// the conditioned state of the unmeasured mode.
pub fn sample_homodyne(
    state: &TwoModeState,
    mode: usize,
    theta: f64,
    eta: f64,
    grid: &SampleGrid,
    rng: &mut impl Rng,
) -> Result<(f64, FockOperator)> {
    let sampler = HomodyneSampler::new(state, mode, theta, eta, grid)?;
    let value = sampler.draw(rng);
    let conditioned = sampler.conditioned(value)?;
    Ok((value, conditioned))
}

// ── Shot engine ──────────────────────────────────────────────────────────────

struct AncillaFactor {
    weight: f64,
    /// Beamsplitter output B(|0⟩⊗|φ⟩) as a dim×dim array, index (n₁, n₂).
    phi: Array2<Complex64>,
}

/// Prepared state of one probe/ancilla/policy combination; shots are cheap and
/// independently seeded.
pub struct ShotEngine {
    pub probe: CoherentProbe,
    pub policy: FeedforwardPolicy,
    pub loss: LossModel,
    pub offset: ResidualOffsetParams,
    dim: usize,
    factors: Vec<AncillaFactor>,
    /// Vacuum-frame grid for the HD1 ideal marginal.
    xs1: Vec<f64>,
    cdf1: Vec<f64>,
    /// Reduced vacuum-frame grid and ψ table for per-shot HD2 densities,
    /// layout psi2[j·dim + n] = ψ_n(xs2[j]).
    xs2: Vec<f64>,
    psi2: Vec<f64>,
}

impl ShotEngine {
    pub fn new(
        probe: CoherentProbe,
        ancilla: &FockOperator,
        policy: FeedforwardPolicy,
        loss: LossModel,
        offset: ResidualOffsetParams,
        grid: &SampleGrid,
    ) -> Result<Self> {
        policy.validate()?;
        loss.validate()?;
        offset.validate()?;
        grid.validate()?;
        ancilla.check_density(1e-8)?;
        let dim = ancilla.dim;
        let blocks = beamsplitter_blocks(dim, 0.5);
        let (lams, vecs) = hermitian_eig(&ancilla.mat);
        let mut factors = Vec::new();
        for (l, &lam) in lams.iter().enumerate() {
            if lam <= 1e-12 {
                continue;
            }
            let mut joint = ndarray::Array1::<Complex64>::zeros(dim * dim);
            for n2 in 0..dim {
                joint[n2] = vecs[(n2, l)];
            }
            let out = beamsplitter_vec(&joint, &blocks);
            let mut phi = Array2::<Complex64>::zeros((dim, dim));
            for n1 in 0..dim {
                for n2 in 0..dim {
                    phi[(n1, n2)] = out[n1 * dim + n2];
                }
            }
            factors.push(AncillaFactor { weight: lam, phi });
        }
        let xs1 = grid.nodes();
        let marginal: Vec<f64> = xs1
            .iter()
            .map(|&x| {
                let h = hermite_functions(x, dim - 1);
                factors
                    .iter()
                    .map(|f| {
                        let mut norm2 = 0.0;
                        for n2 in 0..dim {
                            let mut amp = c(0.0, 0.0);
                            for n1 in 0..dim {
                                amp += h[n1] * f.phi[(n1, n2)];
                            }
                            norm2 += amp.norm_sqr();
                        }
                        f.weight * norm2
                    })
                    .sum()
            })
            .collect();
        let cdf1 = density_cdf(&xs1, &marginal, CAPTURE_REQUIRED)?;
        let grid2 = SampleGrid::new(grid.radius, (grid.points / 4).max(512));
        let xs2 = grid2.nodes();
        let mut psi2 = vec![0.0; xs2.len() * dim];
        for (j, &x) in xs2.iter().enumerate() {
            let h = hermite_functions(x, dim - 1);
            psi2[j * dim..(j + 1) * dim].copy_from_slice(&h);
        }
        Ok(ShotEngine {
            probe,
            policy,
            loss,
            offset,
            dim,
            factors,
            xs1,
            cdf1,
            xs2,
            psi2,
        })
    }

    /// One full shot of the pipeline.
    pub fn shot(&self, rng: &mut impl Rng) -> Result<MeasurementRecord> {
        self.shot_for_probe(&self.probe, rng)
    }

    /// One shot with a different probe on the same engine. The vacuum-frame
    /// tables never depend on the probe (it enters as an analytic
    /// displacement), so any probe shares them exactly.
    pub fn shot_for_probe(
        &self,
        probe: &CoherentProbe,
        rng: &mut impl Rng,
    ) -> Result<MeasurementRecord> {
        let d = self.dim;
        let dx2 = probe.alpha_x / 2f64.sqrt();
        let dp2 = probe.alpha_p / 2f64.sqrt();
        // HD1: ideal vacuum-frame draw, analytic displacement, detection loss.
        let x10 = invert_cdf(&self.xs1, &self.cdf1, rng.gen::<f64>());
        let x1 = x10 + dx2;
        let q = if self.loss.eta1 >= 1.0 {
            x1
        } else {
            let sigma = ((1.0 - self.loss.eta1) / 2.0).sqrt();
            self.loss.eta1.sqrt() * x1 + sigma * rng.sample::<f64, _>(StandardNormal)
        };
        let theta = self.policy.theta(q);
        let phi2 = std::f64::consts::FRAC_PI_2 - theta;
        // Conditioned mode-2 state given the ideal HD1 position.
        let h1 = hermite_functions(x10, d - 1);
        let mut chis: Vec<Vec<Complex64>> = Vec::with_capacity(self.factors.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.factors.len());
        for f in &self.factors {
            let mut chi = vec![c(0.0, 0.0); d];
            let mut norm2 = 0.0;
            for n2 in 0..d {
                let mut amp = c(0.0, 0.0);
                for n1 in 0..d {
                    amp += h1[n1] * f.phi[(n1, n2)];
                }
                chi[n2] = amp;
                norm2 += amp.norm_sqr();
            }
            chis.push(chi);
            weights.push(f.weight * norm2);
        }
        let total: f64 = weights.iter().sum();
        let pick = if self.factors.len() == 1 {
            0
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        };
        let chi = &chis[pick];
        let norm = weights[pick] / self.factors[pick].weight;
        let scale = 1.0 / norm.sqrt().max(1e-300);
        // HD2 amplitude at angle φ₂ = π/2 − θ is ⟨x;φ₂|χ⟩ = Σ e^{−iφ₂n}ψ_n(x)χ_n.
        let rot: Vec<Complex64> = (0..d)
            .map(|n| Complex64::from_polar(scale, -phi2 * n as f64) * chi[n])
            .collect();
        let g2 = self.xs2.len();
        let mut density = vec![0.0; g2];
        for (j, slot) in density.iter_mut().enumerate() {
            let psis = &self.psi2[j * d..(j + 1) * d];
            let mut amp = c(0.0, 0.0);
            for n in 0..d {
                amp += psis[n] * rot[n];
            }
            *slot = amp.norm_sqr();
        }
        let cdf2 = density_cdf(&self.xs2, &density, CAPTURE_REQUIRED)?;
        let y0 = invert_cdf(&self.xs2, &cdf2, rng.gen::<f64>());
        // Analytic displacement of the rotated quadrature, then detection loss.
        let y_ideal = y0 + dx2 * phi2.cos() + dp2 * phi2.sin();
        let mut y = if self.loss.eta2 >= 1.0 {
            y_ideal
        } else {
            let sigma = ((1.0 - self.loss.eta2) / 2.0).sqrt();
            self.loss.eta2.sqrt() * y_ideal + sigma * rng.sample::<f64, _>(StandardNormal)
        };
        if self.offset.enabled {
            // Inject the modulation-path artifact, then apply the correction.
            let phi = probe.alpha_p.atan2(probe.alpha_x);
            let off = residual_offset(&self.offset, probe.alpha().norm(), phi, theta);
            y = (y + off) - off;
        }
        Ok(MeasurementRecord {
            probe: *probe,
            q,
            y,
            m: FeedforwardPolicy::gain(theta) * y,
            theta_applied: theta,
        })
    }
}

/// Runs independently seeded shots; shot i draws from substream (seed,
/// "shots", offset + i), so the records are bit-identical for any thread count.
pub fn run_shots(
    engine: &ShotEngine,
    shots: usize,
    seed: u64,
    index_offset: u64,
) -> Result<Vec<MeasurementRecord>> {
    (0..shots as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, "shots", index_offset + i);
            engine.shot(&mut rng)
        })
        .collect()
}

/// Runs one shot per probe on a shared engine; shot i draws from substream
/// (seed, "shots", i), so the stream replays bit-exactly.
pub fn run_probe_stream(
    engine: &ShotEngine,
    probes: &[CoherentProbe],
    seed: u64,
) -> Result<Vec<MeasurementRecord>> {
    probes
        .par_iter()
        .enumerate()
        .map(|(i, probe)| {
            let mut rng = substream(seed, "shots", i as u64);
            engine.shot_for_probe(probe, &mut rng)
        })
        .collect()
}

/// Builds a single-use engine and simulates one shot.
pub fn simulate_shot(
    input: CoherentProbe,
    ancilla: &FockOperator,
    policy: FeedforwardPolicy,
    loss: LossModel,
    offset: ResidualOffsetParams,
    grid: &SampleGrid,
    rng: &mut impl Rng,
) -> Result<MeasurementRecord> {
    ShotEngine::new(input, ancilla, policy, loss, offset, grid)?.shot(rng)
}

// ── Heterodyne baseline ──────────────────────────────────────────────────────

/// Nonlinear post-processing of a dual-homodyne record, m_het = √2·y + 2γ·q².
pub fn heterodyne_outcome(record: &MeasurementRecord, gamma: f64) -> f64 {
    2f64.sqrt() * record.y + 2.0 * gamma * record.q * record.q
}

/// One ideal dual-homodyne shot (θ ≡ 0) with the nonlinear post-processing.
pub fn heterodyne_baseline(
    input: CoherentProbe,
    ancilla: &FockOperator,
    gamma: f64,
    grid: &SampleGrid,
    rng: &mut impl Rng,
) -> Result<f64> {
    let record = simulate_shot(
        input,
        ancilla,
        FeedforwardPolicy::disabled(gamma),
        LossModel::ideal(),
        ResidualOffsetParams::disabled(),
        grid,
        rng,
    )?;
    Ok(heterodyne_outcome(&record, gamma))
}

// ── Moment scans ─────────────────────────────────────────────────────────────

/// Everything a probe sweep needs besides the probe list.
pub struct ScanConfig {
    pub ancilla: FockOperator,
    pub policy: FeedforwardPolicy,
    pub loss: LossModel,
    pub offset: ResidualOffsetParams,
    pub grid: SampleGrid,
    pub seed: u64,
    /// Post-process records as heterodyne outcomes (requires disabled mode).
    pub heterodyne_post: bool,
}

/// Sample moments of one probe.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MomentRow {
    pub alpha_x: f64,
    pub alpha_p: f64,
    pub mean_m: f64,
    pub var_m: f64,
    /// var(m) minus the coherent input's intrinsic 1/2 + 2γ²α_x² + γ²/2.
    pub excess_noise: f64,
}

/// Sweeps probes at fixed shot count, reporting mean, variance, and the noise
/// in excess of the input's intrinsic nonlinear-quadrature variance.
pub fn moment_scan(
    probes: &[CoherentProbe],
    shots_per_probe: usize,
    config: &ScanConfig,
) -> Result<Vec<MomentRow>> {
    if shots_per_probe < 1000 {
        return Err(SimError::InvalidConfig(format!(
            "moment scan needs at least 1000 shots per probe, got {shots_per_probe}"
        )));
    }
    if config.heterodyne_post && !matches!(config.policy.mode, FeedforwardMode::Disabled) {
        return Err(SimError::InvalidConfig(
            "heterodyne post-processing requires the disabled feedforward mode".into(),
        ));
    }
    let gamma = config.policy.gamma;
    let mut rows = Vec::with_capacity(probes.len());
    for (pi, &probe) in probes.iter().enumerate() {
        let engine = ShotEngine::new(
            probe,
            &config.ancilla,
            config.policy.clone(),
            config.loss,
            config.offset,
            &config.grid,
        )?;
        let records = run_shots(
            &engine,
            shots_per_probe,
            config.seed,
            (pi * shots_per_probe) as u64,
        )?;
        let values: Vec<f64> = records
            .iter()
            .map(|r| {
                if config.heterodyne_post {
                    heterodyne_outcome(r, gamma)
                } else {
                    r.m
                }
            })
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let intrinsic = 0.5 + 2.0 * gamma * gamma * probe.alpha_x * probe.alpha_x
            + 0.5 * gamma * gamma;
        rows.push(MomentRow {
            alpha_x: probe.alpha_x,
            alpha_p: probe.alpha_p,
            mean_m: mean,
            var_m: var,
            excess_noise: var - intrinsic,
        });
    }
    Ok(rows)
}

// ── Record I/O ───────────────────────────────────────────────────────────────

/// Sidecar metadata identifying a record stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub n_max: usize,
    pub shots: usize,
}

/// Streams records as CSV rows probe_ax, probe_ap, q, y, m, theta.
pub fn write_records_csv<W: std::io::Write>(
    out: W,
    records: &[MeasurementRecord],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["probe_ax", "probe_ap", "q", "y", "m", "theta"])?;
    for r in records {
        wtr.write_record(&[
            format!("{}", r.probe.alpha_x),
            format!("{}", r.probe.alpha_p),
            format!("{}", r.q),
            format!("{}", r.y),
            format!("{}", r.m),
            format!("{}", r.theta_applied),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<MeasurementRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| SimError::FileFormat(format!("record row too short: {row:?}")))?
                .parse::<f64>()
                .map_err(|e| SimError::FileFormat(format!("bad record field: {e}")))
        };
        records.push(MeasurementRecord {
            probe: CoherentProbe::new(field(0)?, field(1)?),
            q: field(2)?,
            y: field(3)?,
            m: field(4)?,
            theta_applied: field(5)?,
        });
    }
    Ok(records)
}

pub fn write_metadata<W: std::io::Write>(out: W, meta: &RunMetadata) -> Result<()> {
    serde_json::to_writer_pretty(out, meta)
        .map_err(|e| SimError::FileFormat(format!("metadata serialization failed: {e}")))
}

pub fn read_metadata<R: std::io::Read>(input: R) -> Result<RunMetadata> {
    serde_json::from_reader(input)
        .map_err(|e| SimError::FileFormat(format!("metadata parse failed: {e}")))
}
