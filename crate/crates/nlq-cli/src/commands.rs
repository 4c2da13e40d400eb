//! Command implementations: each is a pure function of (config, input files)
//! writing artifacts plus a checksummed manifest into the output directory.

use std::path::{Path, PathBuf};

use serde::Serialize;

use nlq_core::circuit::{run_probe_stream, SampleGrid, ShotEngine};
use nlq_core::error::{Result, SimError};
use nlq_core::fock::{FockConfig, OperatorJson};
use nlq_core::lut::{
    build_lut, latency_report, lut_error_bound, write_lut_csv, LatencyBudget, LatencyReport,
};
use nlq_core::povm::{
    averaged_detector_state, detector_state_from_element, feedforward_angle, povm_m,
    povm_m_imperfect, write_detector_variance_csv, PovmElement,
};
use nlq_core::rng::substream;
use nlq_core::states::{ancilla_state, gaussian_bound, CoherentProbe};
use nlq_core::tomography::{
    bin_outcomes, bootstrap_variance, generate_probe_set, mle_reconstruct, probe_operators,
    write_bin_variance_csv, BootstrapConfig, MleConfig,
};

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::records::{read_records_csv, write_records_csv};

/// Everything a command needs besides its own inputs.
pub struct CommandContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub replay: bool,
    /// Canonical serialized effective config, hashed into the manifest.
    pub canonical: String,
}

impl CommandContext {
    fn builder(&self, command: &str) -> ManifestBuilder {
        ManifestBuilder::new(command, &self.out_dir, &self.canonical, self.replay)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Monte-Carlo record generation per the configured probe grid.
pub fn cmd_simulate(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let mut mb = ctx.builder("simulate");
    mb.stage("generate");
    let set = cfg.probes.set();
    let mut rng = substream(cfg.seed, "probes", 0);
    let probes = generate_probe_set(&set, &mut rng)?;
    let ancilla = cfg.engine_ancilla()?;
    let grid = SampleGrid::default_for_ancilla(&ancilla);
    let engine = ShotEngine::new(
        CoherentProbe::new(0.0, 0.0),
        &ancilla,
        cfg.policy()?,
        cfg.loss.model(),
        cfg.offset.params(),
        &grid,
    )?;
    let records = run_probe_stream(&engine, &probes, cfg.seed)?;

    mb.stage("write");
    write_records_csv(&ctx.path("records.csv"), &records)?;
    mb.add_artifact("records.csv")?;
    mb.write()?;
    let mean_m = records.iter().map(|r| r.m).sum::<f64>() / records.len() as f64;
    println!(
        "simulate: {} records over {} amplitudes, mean m = {mean_m:.4}",
        records.len(),
        set.amplitudes.len()
    );
    Ok(())
}

/// Maximum-likelihood reconstruction from a record file.
pub fn cmd_tomo(ctx: &CommandContext, input: Option<&Path>) -> Result<()> {
    let cfg = &ctx.config;
    let default_input = ctx.path("records.csv");
    let input = input.unwrap_or(&default_input);
    let mut mb = ctx.builder("tomo");

    mb.stage("bin");
    let records = read_records_csv(input)?;
    let scheme = cfg.binning.scheme();
    let table = bin_outcomes(&records, &scheme)?;
    let counts = table.counts_with_complement();

    mb.stage("reconstruct");
    let fock = FockConfig::new(cfg.n_max.tomo);
    let ops = probe_operators(&table.amplitudes, &scheme, &fock)?;
    let mle = MleConfig {
        n_max: cfg.n_max.tomo,
        max_iterations: cfg.tomography.max_iterations,
        tolerance: cfg.tomography.tolerance,
    };
    let result = mle_reconstruct(&counts, &ops, &mle)?;
    let variances = result.bin_variances(cfg.gamma, scheme.m_bins)?;

    mb.stage("write");
    {
        let file = std::fs::File::create(ctx.path("tomo_variances.csv"))?;
        let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
        wtr.write_record(["bin", "m_center", "variance"])?;
        for (bin, var) in variances.iter().enumerate() {
            if let Some(v) = var {
                wtr.write_record(&[
                    format!("{bin}"),
                    format!("{}", scheme.m_center(bin)),
                    format!("{v}"),
                ])?;
            }
        }
        wtr.flush()?;
    }
    mb.add_artifact("tomo_variances.csv")?;
    {
        let file = std::fs::File::create(ctx.path("tomo_elements.json"))?;
        result.save(std::io::BufWriter::new(file))?;
    }
    mb.add_artifact("tomo_elements.json")?;

    if cfg.tomography.bootstrap_resamples > 0 {
        mb.stage("bootstrap");
        let boot = BootstrapConfig {
            resamples: cfg.tomography.bootstrap_resamples,
            full_mle: false,
            warm_iterations: cfg.tomography.bootstrap_warm_iterations,
            seed: cfg.seed,
        };
        let bars = bootstrap_variance(&records, &scheme, &mle, cfg.gamma, &boot)?;
        let file = std::fs::File::create(ctx.path("tomo_bootstrap.csv"))?;
        write_bin_variance_csv(std::io::BufWriter::new(file), &bars)?;
        mb.add_artifact("tomo_bootstrap.csv")?;
    }
    mb.write()?;

    let ll = result.log_likelihood.last().copied().unwrap_or(f64::NAN);
    println!(
        "tomo: {} records, {} iterations, converged = {}, log-likelihood = {ll:.3}",
        records.len(),
        result.iterations,
        result.converged
    );
    if !result.converged {
        return Err(SimError::OptimizationDidNotConverge(format!(
            "fixed point still moving after {} iterations (artifacts were written)",
            result.iterations
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct DetectorStateJson {
    m: Option<f64>,
    variance: f64,
    op: OperatorJson,
}

fn write_states_json(
    path: &Path,
    elements: &[PovmElement],
    gamma: f64,
) -> Result<()> {
    let mut states = Vec::with_capacity(elements.len());
    for elem in elements {
        let ds = detector_state_from_element(elem, gamma)?;
        states.push(DetectorStateJson {
            m: ds.m_bin,
            variance: ds.variance,
            op: OperatorJson::from_operator(&ds.op),
        });
    }
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &states)
        .map_err(|e| SimError::InvalidConfig(format!("state serialization failed: {e}")))?;
    Ok(())
}

/// Theoretical detector states and variance tables at the bin centers.
pub fn cmd_povm(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let mut mb = ctx.builder("povm");
    let fock = FockConfig::new(cfg.n_max.povm);
    let ancilla = ancilla_state(&cfg.ancilla, &fock)?;
    let scheme = cfg.binning.scheme();
    let centers: Vec<f64> = (0..scheme.m_bins).map(|b| scheme.m_center(b)).collect();

    mb.stage("ideal");
    let mut ideal = Vec::with_capacity(centers.len());
    for &m in &centers {
        ideal.push(povm_m(m, &ancilla, cfg.gamma, scheme.q_window, 64, &fock)?);
    }
    let rows: Vec<(f64, f64, f64)> = ideal
        .iter()
        .zip(&centers)
        .map(|(e, &m)| {
            Ok((m, e.normalized_variance(cfg.gamma)?, e.op.trace().re))
        })
        .collect::<Result<_>>()?;
    {
        let file = std::fs::File::create(ctx.path("povm_variances_ideal.csv"))?;
        write_detector_variance_csv(std::io::BufWriter::new(file), &rows)?;
    }
    mb.add_artifact("povm_variances_ideal.csv")?;
    write_states_json(&ctx.path("povm_states_ideal.json"), &ideal, cfg.gamma)?;
    mb.add_artifact("povm_states_ideal.json")?;
    let averaged = averaged_detector_state(&ideal, cfg.gamma, &fock)?;
    {
        let file = std::fs::File::create(ctx.path("povm_averaged_ideal.json"))?;
        serde_json::to_writer_pretty(
            std::io::BufWriter::new(file),
            &DetectorStateJson {
                m: None,
                variance: averaged.variance,
                op: OperatorJson::from_operator(&averaged.op),
            },
        )
        .map_err(|e| SimError::InvalidConfig(format!("state serialization failed: {e}")))?;
    }
    mb.add_artifact("povm_averaged_ideal.json")?;
    println!("povm: ideal averaged variance = {:.4}", averaged.variance);

    if !cfg.loss.is_ideal() {
        mb.stage("imperfect");
        let loss = cfg.loss.model();
        let mut imperfect = Vec::with_capacity(centers.len());
        for &m in &centers {
            imperfect.push(povm_m_imperfect(
                m,
                &ancilla,
                &loss,
                cfg.gamma,
                scheme.q_window,
                64,
                &fock,
            )?);
        }
        let rows: Vec<(f64, f64, f64)> = imperfect
            .iter()
            .zip(&centers)
            .map(|(e, &m)| {
                Ok((m, e.normalized_variance(cfg.gamma)?, e.op.trace().re))
            })
            .collect::<Result<_>>()?;
        {
            let file = std::fs::File::create(ctx.path("povm_variances_imperfect.csv"))?;
            write_detector_variance_csv(std::io::BufWriter::new(file), &rows)?;
        }
        mb.add_artifact("povm_variances_imperfect.csv")?;
        write_states_json(&ctx.path("povm_states_imperfect.json"), &imperfect, cfg.gamma)?;
        mb.add_artifact("povm_states_imperfect.json")?;
        let averaged = averaged_detector_state(&imperfect, cfg.gamma, &fock)?;
        {
            let file = std::fs::File::create(ctx.path("povm_averaged_imperfect.json"))?;
            serde_json::to_writer_pretty(
                std::io::BufWriter::new(file),
                &DetectorStateJson {
                    m: None,
                    variance: averaged.variance,
                    op: OperatorJson::from_operator(&averaged.op),
                },
            )
            .map_err(|e| SimError::InvalidConfig(format!("state serialization failed: {e}")))?;
        }
        mb.add_artifact("povm_averaged_imperfect.json")?;
        println!("povm: imperfect averaged variance = {:.4}", averaged.variance);
    }
    mb.write()?;
    Ok(())
}

/// Pulls an operator out of any artifact: a bare serialized operator, a
/// detector-state wrapper, or a reconstruction element list (via `element`).
fn load_operator(input: &Path, element: Option<usize>) -> Result<nlq_core::fock::FockOperator> {
    let file = std::fs::File::open(input).map_err(|e| {
        SimError::InvalidConfig(format!("cannot open operator {}: {e}", input.display()))
    })?;
    let value: serde_json::Value = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| SimError::FileFormat(format!("{}: {e}", input.display())))?;
    let container = if value.get("dim").is_some() {
        value
    } else if let Some(op) = value.get("op") {
        op.clone()
    } else if let Some(elements) = value.get("elements").and_then(|e| e.as_array()) {
        let idx = element.ok_or_else(|| {
            SimError::InvalidConfig(format!(
                "{} holds {} elements; pick one with --element",
                input.display(),
                elements.len()
            ))
        })?;
        elements
            .get(idx)
            .ok_or_else(|| {
                SimError::InvalidConfig(format!(
                    "--element {idx} out of range for {} elements",
                    elements.len()
                ))
            })?
            .clone()
    } else {
        return Err(SimError::FileFormat(format!(
            "{} holds no recognizable operator",
            input.display()
        )));
    };
    let op_json: OperatorJson = serde_json::from_value(container)
        .map_err(|e| SimError::FileFormat(format!("operator JSON read failed: {e}")))?;
    op_json.to_operator()
}

/// Rasterizes a stored operator as a Wigner-function CSV grid.
pub fn cmd_wigner(ctx: &CommandContext, input: &Path, element: Option<usize>) -> Result<()> {
    let cfg = &ctx.config;
    let mut mb = ctx.builder("wigner");
    mb.stage("raster");
    let op = load_operator(input, element)?;
    let r = cfg.wigner.radius;
    let n = cfg.wigner.points;
    let axis: Vec<f64> = (0..n)
        .map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64)
        .collect();
    let grid = nlq_core::fock::wigner_grid(&op, &axis, &axis);
    {
        let out = std::fs::File::create(ctx.path("wigner.csv"))?;
        nlq_core::fock::write_wigner_csv(std::io::BufWriter::new(out), &axis, &axis, &grid)?;
    }
    mb.add_artifact("wigner.csv")?;
    mb.write()?;
    println!("wigner: {n}x{n} grid over ±{r} for dim {}", op.dim);
    Ok(())
}

#[derive(Serialize)]
struct BoundJson {
    gamma: f64,
    value: f64,
    attained: bool,
}

/// Prints and stores the Gaussian-state variance bound for the configured γ.
pub fn cmd_bound(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let mut mb = ctx.builder("bound");
    mb.stage("solve");
    let bound = gaussian_bound(cfg.gamma)?;
    {
        let file = std::fs::File::create(ctx.path("bound.json"))?;
        serde_json::to_writer_pretty(
            std::io::BufWriter::new(file),
            &BoundJson {
                gamma: cfg.gamma,
                value: bound.value,
                attained: bound.attained,
            },
        )
        .map_err(|e| SimError::InvalidConfig(format!("bound serialization failed: {e}")))?;
    }
    mb.add_artifact("bound.json")?;
    mb.write()?;
    let kind = if bound.attained { "attained" } else { "infimum" };
    println!("bound: gamma = {}, value = {:.7} ({kind})", cfg.gamma, bound.value);
    Ok(())
}

#[derive(Serialize)]
struct LutCheckJson {
    input_bits: u32,
    output_bits: u32,
    full_scale: f64,
    max_angle_error: f64,
    error_bound: f64,
    within_bound: bool,
    latency: LatencyReport,
}

/// Exhaustive table sweep against the exact angle, plus the latency budget.
pub fn cmd_lut_check(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let mut mb = ctx.builder("lut-check");
    mb.stage("sweep");
    let geometry = cfg
        .lut
        .geometry(cfg.probes.max_amplitude() * 2f64.sqrt());
    let table = build_lut(cfg.gamma, &geometry)?;
    {
        let file = std::fs::File::create(ctx.path("lut_table.csv"))?;
        write_lut_csv(std::io::BufWriter::new(file), &table)?;
    }
    mb.add_artifact("lut_table.csv")?;
    let mut max_err = 0.0f64;
    for (code, &out_code) in table.entries.iter().enumerate() {
        let q = table.input_center(code as u32);
        let exact = feedforward_angle(cfg.gamma, q);
        let err = (table.output_angle(out_code) - exact).abs();
        max_err = max_err.max(err);
    }
    let bound = lut_error_bound(&table);
    let report = latency_report(&LatencyBudget::feedforward_default())?;
    {
        let file = std::fs::File::create(ctx.path("lut_check.json"))?;
        serde_json::to_writer_pretty(
            std::io::BufWriter::new(file),
            &LutCheckJson {
                input_bits: table.input_bits,
                output_bits: table.output_bits,
                full_scale: table.full_scale,
                max_angle_error: max_err,
                error_bound: bound,
                within_bound: max_err <= bound,
                latency: report.clone(),
            },
        )
        .map_err(|e| SimError::InvalidConfig(format!("lut serialization failed: {e}")))?;
    }
    mb.add_artifact("lut_check.json")?;
    mb.write()?;
    println!(
        "lut-check: max angle error {max_err:.3e} (bound {bound:.3e}), latency {:.1} ns ≈ {:.3} m",
        report.total_ns, report.optical_path_m
    );
    Ok(())
}
