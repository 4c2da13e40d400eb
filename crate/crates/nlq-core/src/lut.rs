//! Fixed-point emulation of the FPGA feedforward path.
//!
//! The arctangent θ(q) = arctan(√2γq) is realized as a precomputed lookup
//! table between ADC input codes and DAC output codes, both mid-tread
//! quantizers. The gain g(q) stays full-precision: the hardware only rotates
//! the measurement basis; gain multiplication happens in post-processing.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::povm::feedforward_angle;

/// 375 MHz processing clock period in ns.
pub const PROCESSING_CLOCK_NS: f64 = 8.0 / 3.0;
/// 3 GHz converter sampling clock period in ns.
pub const SAMPLING_CLOCK_NS: f64 = 1.0 / 3.0;

/// Quantizer geometry of the feedforward table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LutGeometry {
    pub input_bits: u32,
    pub output_bits: u32,
    /// Input full-scale range ±full_scale in quadrature units.
    pub full_scale: f64,
    /// Largest probe mean used for the clipping check of the input range.
    pub max_probe_alpha_x: f64,
}

impl Default for LutGeometry {
    fn default() -> Self {
        LutGeometry {
            input_bits: 10,
            output_bits: 10,
            full_scale: 6.0,
            max_probe_alpha_x: 3.5,
        }
    }
}

/// Precomputed map from ADC codes to DAC codes realizing θ(q).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LutTable {
    pub gamma: f64,
    pub input_bits: u32,
    pub output_bits: u32,
    pub full_scale: f64,
    /// Radians spanned by the full DAC swing (phase-modulator half-wave
    /// scaling); one output step is half_wave_scale / 2^output_bits.
    pub half_wave_scale: f64,
    pub entries: Vec<u32>,
}

impl LutTable {
    pub fn input_step(&self) -> f64 {
        2.0 * self.full_scale / (1u64 << self.input_bits) as f64
    }

    pub fn output_step(&self) -> f64 {
        self.half_wave_scale / (1u64 << self.output_bits) as f64
    }

    /// Code-center quadrature value of an input code.
    pub fn input_center(&self, code: u32) -> f64 {
        (code as i64 - (1i64 << (self.input_bits - 1))) as f64 * self.input_step()
    }

    /// Angle encoded by an output code.
    pub fn output_angle(&self, code: u32) -> f64 {
        (code as i64 - (1i64 << (self.output_bits - 1))) as f64 * self.output_step()
    }

    fn output_code(&self, theta: f64) -> u32 {
        let mid = 1i64 << (self.output_bits - 1);
        let code = (theta / self.output_step()).round() as i64 + mid;
        // Code 0 would encode exactly −π/2 at the default scaling; clamping to
        // 1 keeps the output range symmetric and |θ| < π/2 strict.
        code.clamp(1, (1i64 << self.output_bits) - 1) as u32
    }
}

/// One fixed-point evaluation: quantized angle and the code pair behind it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LutEval {
    pub theta: f64,
    pub input_code: u32,
    pub output_code: u32,
    /// Input fell outside the ADC full scale and saturated at an end code.
    pub clipped: bool,
}

/// Builds the feedforward table for θ(q) = arctan(√2γq).
///
/// Entry i holds the nearest output code of θ evaluated at code i's center.
/// Errors with RangeTooNarrow when more than 0.1% of a deterministic
/// reference sample (quadrature Gaussians of variance 1/2 centered at
/// ±max_probe_alpha_x/√2) would clip.
pub fn build_lut(gamma: f64, geometry: &LutGeometry) -> Result<LutTable> {
    if geometry.input_bits == 0
        || geometry.input_bits > 24
        || geometry.output_bits == 0
        || geometry.output_bits > 24
    {
        return Err(SimError::InvalidConfig(format!(
            "lut bit widths must lie in 1..=24, got {}/{}",
            geometry.input_bits, geometry.output_bits
        )));
    }
    if geometry.full_scale <= 0.0 {
        return Err(SimError::InvalidConfig(format!(
            "lut full scale must be positive, got {}",
            geometry.full_scale
        )));
    }
    let clip = reference_clip_fraction(geometry);
    if clip > 1e-3 {
        return Err(SimError::RangeTooNarrow(format!(
            "{:.2}% of the reference q sample clips at full scale ±{}",
            100.0 * clip,
            geometry.full_scale
        )));
    }
    let mut table = LutTable {
        gamma,
        input_bits: geometry.input_bits,
        output_bits: geometry.output_bits,
        full_scale: geometry.full_scale,
        half_wave_scale: std::f64::consts::PI,
        entries: Vec::with_capacity(1 << geometry.input_bits),
    };
    for code in 0..(1u32 << geometry.input_bits) {
        let q = table.input_center(code);
        let theta = feedforward_angle(gamma, q);
        table.entries.push(table.output_code(theta));
    }
    Ok(table)
}

/// Fraction of the worst-case probe quadrature distribution outside ±FS,
/// from deterministic quantiles of N(±max_probe_alpha_x/√2, 1/2).
fn reference_clip_fraction(geometry: &LutGeometry) -> f64 {
    let mu = geometry.max_probe_alpha_x / 2f64.sqrt();
    let sigma = 0.5f64.sqrt();
    // Two-sided tail beyond the full scale for the worse-centered Gaussian.
    let z = (geometry.full_scale - mu.abs()) / sigma;
    let far = (geometry.full_scale + mu.abs()) / sigma;
    0.5 * erfc_scalar(z / 2f64.sqrt()) + 0.5 * erfc_scalar(far / 2f64.sqrt())
}

/// Abramowitz-Stegun 7.1.26 complementary error function (|err| < 1.5e-7).
fn erfc_scalar(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_scalar(-x);
    }
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}

/// Evaluates the fixed-point feedforward path at quadrature value q.
pub fn lut_eval(q: f64, table: &LutTable) -> LutEval {
    let mid = 1i64 << (table.input_bits - 1);
    let max_code = (1i64 << table.input_bits) - 1;
    let raw = (q / table.input_step()).round() as i64 + mid;
    let clipped = raw < 0 || raw > max_code;
    let input_code = raw.clamp(0, max_code) as u32;
    let output_code = table.entries[input_code as usize];
    LutEval {
        theta: table.output_angle(output_code),
        input_code,
        output_code,
        clipped,
    }
}

/// Worst-case |θ_lut(q) − θ(q)| over the full scale: half an output step for
/// the code-center rounding plus the input-quantization slope bound
/// (max|dθ/dq| = √2γ at q = 0).
pub fn lut_error_bound(table: &LutTable) -> f64 {
    0.5 * table.output_step() + 2f64.sqrt() * table.gamma * 0.5 * table.input_step()
}

/// Writes the table as CSV rows (input_code, q_center, output_code, theta).
pub fn write_lut_csv<W: std::io::Write>(out: W, table: &LutTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["input_code", "q_center", "output_code", "theta"])?;
    for (code, &oc) in table.entries.iter().enumerate() {
        wtr.write_record(&[
            format!("{code}"),
            format!("{}", table.input_center(code as u32)),
            format!("{oc}"),
            format!("{}", table.output_angle(oc)),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

// ── Latency accounting ───────────────────────────────────────────────────────

/// One pipeline stage: a cycle count at a given clock period.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyStage {
    pub name: String,
    pub cycles: f64,
    pub ns_per_cycle: f64,
}

/// Named feedforward pipeline stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyBudget {
    pub stages: Vec<LatencyStage>,
}

impl LatencyBudget {
    /// The measured 26.8 ns feedforward latency: converter pipelines at the
    /// 3 GHz sampling clock, one table cycle at the 375 MHz processing clock,
    /// and the serialization/analog remainder making up the measured total.
    pub fn feedforward_default() -> Self {
        let stage = |name: &str, cycles: f64, ns: f64| LatencyStage {
            name: name.into(),
            cycles,
            ns_per_cycle: ns,
        };
        let adc = 7.5 * SAMPLING_CLOCK_NS;
        let lut = PROCESSING_CLOCK_NS;
        let dac = 4.5 * SAMPLING_CLOCK_NS;
        LatencyBudget {
            stages: vec![
                stage("adc_pipeline", 7.5, SAMPLING_CLOCK_NS),
                stage("lut", 1.0, PROCESSING_CLOCK_NS),
                stage("dac_pipeline", 4.5, SAMPLING_CLOCK_NS),
                stage("serialization_and_analog", 1.0, 26.8 - adc - lut - dac),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.stages {
            if s.cycles <= 0.0 || s.ns_per_cycle <= 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "latency stage {} must have positive duration",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

/// Per-stage durations, total, and the equivalent optical path length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyReport {
    pub stages: Vec<(String, f64)>,
    pub total_ns: f64,
    /// Informational: free-space path covered by light during the latency.
    pub optical_path_m: f64,
}

const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299792458;

pub fn latency_report(budget: &LatencyBudget) -> Result<LatencyReport> {
    budget.validate()?;
    let stages: Vec<(String, f64)> = budget
        .stages
        .iter()
        .map(|s| (s.name.clone(), s.cycles * s.ns_per_cycle))
        .collect();
    let total_ns = stages.iter().map(|(_, ns)| ns).sum();
    Ok(LatencyReport {
        stages,
        total_ns,
        optical_path_m: total_ns * SPEED_OF_LIGHT_M_PER_NS,
    })
}
