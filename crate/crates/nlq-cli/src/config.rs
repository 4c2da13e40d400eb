//! Run configuration: one TOML tree covering every pipeline stage, with the
//! seed mandatory so no run ever depends on wall-clock entropy.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nlq_core::circuit::{FeedforwardPolicy, LossModel, ResidualOffsetParams};
use nlq_core::error::{Result, SimError};
use nlq_core::fock::{FockConfig, FockOperator, OperatorJson};
use nlq_core::lut::{build_lut, LutGeometry};
use nlq_core::states::{ancilla_state, AncillaSpec};
use nlq_core::tomography::{BinningScheme, MleConfig, ProbeSet};

/// Complete description of a reproducible run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gamma: f64,
    /// Base RNG seed; every stochastic stage derives a named substream.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_ancilla")]
    pub ancilla: AncillaSpec,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub probes: ProbeConfig,
    #[serde(default)]
    pub binning: BinningConfig,
    #[serde(default)]
    pub feedforward: FeedforwardConfig,
    #[serde(default)]
    pub offset: OffsetConfig,
    #[serde(default)]
    pub n_max: NMaxConfig,
    #[serde(default)]
    pub tomography: TomographyConfig,
    #[serde(default)]
    pub lut: LutConfig,
    #[serde(default)]
    pub wigner: WignerConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("nlq-run")
}

fn default_ancilla() -> AncillaSpec {
    AncillaSpec::Vacuum
}

/// Homodyne efficiencies; 1.0 on both arms is the ideal circuit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub eta1: f64,
    pub eta2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { eta1: 1.0, eta2: 1.0 }
    }
}

impl LossConfig {
    pub fn model(&self) -> LossModel {
        LossModel::new(self.eta1, self.eta2)
    }

    pub fn is_ideal(&self) -> bool {
        self.eta1 == 1.0 && self.eta2 == 1.0
    }
}

/// Coherent probe grid; defaults to 27 amplitudes on [0, 3.5] at 80000 shots.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub amplitudes: Vec<f64>,
    pub shots_per_amplitude: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let set = ProbeSet::paper_default();
        ProbeConfig {
            amplitudes: set.amplitudes,
            shots_per_amplitude: set.shots_per_amplitude,
        }
    }
}

impl ProbeConfig {
    pub fn set(&self) -> ProbeSet {
        ProbeSet {
            amplitudes: self.amplitudes.clone(),
            shots_per_amplitude: self.shots_per_amplitude,
        }
    }

    pub fn max_amplitude(&self) -> f64 {
        self.amplitudes.iter().cloned().fold(0.0, f64::max)
    }
}

/// Outcome binning for tomography.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningConfig {
    pub m_bins: usize,
    pub m_lo: f64,
    pub m_hi: f64,
    pub q_window: f64,
    pub phase_bins: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        let s = BinningScheme::default();
        BinningConfig {
            m_bins: s.m_bins,
            m_lo: s.m_lo,
            m_hi: s.m_hi,
            q_window: s.q_window,
            phase_bins: s.phase_bins,
        }
    }
}

impl BinningConfig {
    pub fn scheme(&self) -> BinningScheme {
        BinningScheme {
            m_bins: self.m_bins,
            m_lo: self.m_lo,
            m_hi: self.m_hi,
            q_window: self.q_window,
            phase_bins: self.phase_bins,
        }
    }
}

/// Feedforward angle source for simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardModeConfig {
    Exact,
    Lut,
    Disabled,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedforwardConfig {
    pub mode: FeedforwardModeConfig,
}

impl Default for FeedforwardConfig {
    fn default() -> Self {
        FeedforwardConfig {
            mode: FeedforwardModeConfig::Exact,
        }
    }
}

/// Residual modulator offset model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetModeConfig {
    Disabled,
    Fitted,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetConfig {
    pub mode: OffsetModeConfig,
}

impl Default for OffsetConfig {
    fn default() -> Self {
        OffsetConfig {
            mode: OffsetModeConfig::Disabled,
        }
    }
}

impl OffsetConfig {
    pub fn params(&self) -> ResidualOffsetParams {
        match self.mode {
            OffsetModeConfig::Disabled => ResidualOffsetParams::disabled(),
            OffsetModeConfig::Fitted => ResidualOffsetParams::fitted(),
        }
    }
}

/// Photon-number cutoffs per analysis stage.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NMaxConfig {
    pub povm: usize,
    pub tomo: usize,
}

impl Default for NMaxConfig {
    fn default() -> Self {
        NMaxConfig { povm: 30, tomo: 10 }
    }
}

/// Reconstruction iteration controls.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// 0 skips the bootstrap; otherwise at least 50 resamples.
    pub bootstrap_resamples: usize,
    pub bootstrap_warm_iterations: usize,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        let m = MleConfig::default();
        TomographyConfig {
            max_iterations: m.max_iterations,
            tolerance: m.tolerance,
            bootstrap_resamples: 0,
            bootstrap_warm_iterations: 50,
        }
    }
}

/// Converter geometry for the lookup table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutConfig {
    pub input_bits: u32,
    pub output_bits: u32,
    pub full_scale: f64,
}

impl Default for LutConfig {
    fn default() -> Self {
        let g = LutGeometry::default();
        LutConfig {
            input_bits: g.input_bits,
            output_bits: g.output_bits,
            full_scale: g.full_scale,
        }
    }
}

impl LutConfig {
    /// Geometry with the clipping check tied to the largest configured probe.
    pub fn geometry(&self, max_probe_alpha_x: f64) -> LutGeometry {
        LutGeometry {
            input_bits: self.input_bits,
            output_bits: self.output_bits,
            full_scale: self.full_scale,
            max_probe_alpha_x,
        }
    }
}

/// Phase-space raster for the wigner command.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerConfig {
    pub radius: f64,
    pub points: usize,
}

impl Default for WignerConfig {
    fn default() -> Self {
        WignerConfig {
            radius: 4.0,
            points: 81,
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML run file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SimError::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| SimError::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Field-level validation of every sub-config.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        self.loss.model().validate()?;
        self.probes.set().validate()?;
        let scheme = self.binning.scheme();
        if scheme.m_bins == 0 || scheme.phase_bins == 0 {
            return Err(SimError::InvalidConfig(
                "binning.m_bins and binning.phase_bins must be positive".into(),
            ));
        }
        if !(scheme.m_lo < scheme.m_hi) || scheme.q_window <= 0.0 {
            return Err(SimError::InvalidConfig(
                "binning needs m_lo < m_hi and q_window > 0".into(),
            ));
        }
        if self.n_max.povm < 1 || self.n_max.tomo < 1 {
            return Err(SimError::InvalidConfig(
                "n_max.povm and n_max.tomo must be at least 1".into(),
            ));
        }
        if self.tomography.max_iterations == 0 || self.tomography.tolerance <= 0.0 {
            return Err(SimError::InvalidConfig(
                "tomography.max_iterations and tomography.tolerance must be positive".into(),
            ));
        }
        if self.tomography.bootstrap_resamples != 0 && self.tomography.bootstrap_resamples < 50 {
            return Err(SimError::InvalidConfig(format!(
                "tomography.bootstrap_resamples must be 0 (skip) or >= 50, got {}",
                self.tomography.bootstrap_resamples
            )));
        }
        if self.lut.input_bits == 0
            || self.lut.input_bits > 24
            || self.lut.output_bits == 0
            || self.lut.output_bits > 24
            || self.lut.full_scale <= 0.0
        {
            return Err(SimError::InvalidConfig(
                "lut bits must be in 1..=24 and full_scale positive".into(),
            ));
        }
        if self.wigner.points < 2 || self.wigner.radius <= 0.0 {
            return Err(SimError::InvalidConfig(
                "wigner.points must be >= 2 and wigner.radius positive".into(),
            ));
        }
        // The ancilla spec itself is validated where a density is built; the
        // superposition norm check needs no cutoff.
        if let AncillaSpec::FockSuperposition { coefficients } = &self.ancilla {
            if coefficients.is_empty() {
                return Err(SimError::InvalidConfig(
                    "ancilla.coefficients must not be empty".into(),
                ));
            }
        }
        Ok(())
    }

    /// Canonical serialized form; hashed into manifests.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| SimError::InvalidConfig(format!("config serialization failed: {e}")))
    }

    /// Ancilla density at the smallest cutoff that represents the spec.
    pub fn engine_ancilla(&self) -> Result<FockOperator> {
        match &self.ancilla {
            AncillaSpec::Vacuum => ancilla_state(&self.ancilla, &FockConfig::new(1)),
            AncillaSpec::FockSuperposition { coefficients } => {
                let n_max = coefficients.len().saturating_sub(1).max(1);
                ancilla_state(&self.ancilla, &FockConfig::new(n_max))
            }
            AncillaSpec::DensityFile { path } => {
                let file = std::fs::File::open(path)?;
                let container = OperatorJson::load(std::io::BufReader::new(file))?;
                let op = container.to_operator()?;
                op.check_density(1e-9)?;
                Ok(op)
            }
        }
    }

    /// Feedforward policy for simulation, building the table in lut mode.
    pub fn policy(&self) -> Result<FeedforwardPolicy> {
        match self.feedforward.mode {
            FeedforwardModeConfig::Exact => Ok(FeedforwardPolicy::exact(self.gamma)),
            FeedforwardModeConfig::Disabled => Ok(FeedforwardPolicy::disabled(self.gamma)),
            FeedforwardModeConfig::Lut => {
                let geometry = self.lut.geometry(self.probes.max_amplitude() * 2f64.sqrt());
                let table = build_lut(self.gamma, &geometry)?;
                Ok(FeedforwardPolicy::with_lut(self.gamma, table))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str("gamma = 0.52\nseed = 7\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.probes.amplitudes.len(), 27);
        assert_eq!(cfg.probes.shots_per_amplitude, 80_000);
        assert_eq!(cfg.binning.m_bins, 20);
        assert_eq!(cfg.n_max.povm, 30);
        assert!(matches!(cfg.ancilla, AncillaSpec::Vacuum));
        assert!(cfg.loss.is_ideal());
    }

    #[test]
    fn missing_seed_is_rejected() {
        let err = toml::from_str::<RunConfig>("gamma = 0.52\n").unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn unknown_field_is_rejected_with_its_name() {
        let err = toml::from_str::<RunConfig>("gamma = 0.52\nseed = 1\nbananas = 3\n").unwrap_err();
        assert!(err.to_string().contains("bananas"));
    }

    #[test]
    fn invalid_sub_config_reports_field() {
        let cfg: RunConfig =
            toml::from_str("gamma = 0.52\nseed = 1\n[loss]\neta1 = 1.4\neta2 = 1.0\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("eta"));
    }

    #[test]
    fn canonical_form_roundtrips() {
        let cfg: RunConfig = toml::from_str("gamma = 0.3\nseed = 9\n").unwrap();
        let text = cfg.canonical_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.canonical_toml().unwrap(), text);
    }

    #[test]
    fn ancilla_superposition_builds_engine_state() {
        let cfg: RunConfig = toml::from_str(
            "gamma = 0.52\nseed = 1\n[ancilla]\nkind = \"fock_superposition\"\ncoefficients = [[0.8, 0.0], [0.0, -0.6]]\n",
        )
        .unwrap();
        let anc = cfg.engine_ancilla().unwrap();
        assert_eq!(anc.dim, 2);
        approx::assert_relative_eq!(anc.mat[(0, 0)].re, 0.64, max_relative = 1e-12);
        approx::assert_relative_eq!(anc.mat[(1, 1)].re, 0.36, max_relative = 1e-12);
    }
}
