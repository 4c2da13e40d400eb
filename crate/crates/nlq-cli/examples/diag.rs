use nlq_core::circuit::*;
use nlq_core::fock::{wigner_grid, FockConfig, FockOperator};
use nlq_core::povm::povm_pure;
use nlq_core::rng::substream;
use nlq_core::states::{ancilla_state, AncillaSpec, NonlinearQuadratureSpec};
use nlq_core::tomography::*;
use rand::Rng;
use std::time::Instant;

const GAMMA: f64 = 0.52;

fn c6_scan(n_max: usize) {
    let t0 = Instant::now();
    let cfg = FockConfig::new(n_max);
    let mut rng = substream(606, "transfer", 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let q = rng.gen_range(-1.2..1.2);
        let y = rng.gen_range(-1.2..1.2);
        let dim = rng.gen_range(2..=4usize);
        let mut coeffs: Vec<(f64, f64)> = (0..dim)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = coeffs.iter().map(|(re, im)| re * re + im * im).sum::<f64>().sqrt();
        for c in &mut coeffs {
            c.0 /= norm;
            c.1 /= norm;
        }
        let spec = AncillaSpec::FockSuperposition { coefficients: coeffs };
        let ancilla = ancilla_state(&spec, &cfg).unwrap();
        let elem = povm_pure(q, y, &ancilla, GAMMA, &cfg).unwrap();
        let v_plus = nlq_core::states::nonlinear_variance(&elem.op, &NonlinearQuadratureSpec::new(GAMMA, 1.0)).unwrap();
        let v_minus = nlq_core::states::nonlinear_variance(&ancilla, &NonlinearQuadratureSpec::new(GAMMA, -1.0)).unwrap();
        worst = worst.max((v_plus - v_minus).abs());
    }
    println!("c6 n_max {n_max}: worst {worst:.3e} in {:.1}s", t0.elapsed().as_secs_f64());
}

fn simulate_corpus(spec: &AncillaSpec, shots: usize, seed: u64) -> Vec<MeasurementRecord> {
    let set = ProbeSet::paper_default().with_shots(shots);
    let mut rng = substream(seed, "probes", 0);
    let probes = generate_probe_set(&set, &mut rng).unwrap();
    let ancilla = ancilla_state(spec, &FockConfig::new(1)).unwrap();
    let grid = SampleGrid::default_for_ancilla(&ancilla);
    let engine = ShotEngine::new(
        nlq_core::states::CoherentProbe::new(0.0, 0.0), &ancilla,
        FeedforwardPolicy::exact(GAMMA), LossModel::new(0.97, 0.91),
        ResidualOffsetParams::disabled(), &grid).unwrap();
    run_probe_stream(&engine, &probes, seed).unwrap()
}

fn reconstruct(records: &[MeasurementRecord], n_max: usize) -> FockOperator {
    let scheme = BinningScheme { phase_bins: 12, ..BinningScheme::default() };
    let table = bin_outcomes(records, &scheme).unwrap();
    let counts = table.counts_with_complement();
    let fock = FockConfig::new(n_max);
    let ops = probe_operators(&table.amplitudes, &scheme, &fock).unwrap();
    let mle = MleConfig { n_max, max_iterations: 3000, tolerance: 1e-9 };
    let r = mle_reconstruct(&counts, &ops, &mle).unwrap();
    let elem = r.elements[10].clone();
    let tr = elem.trace().re;
    FockOperator::from_matrix(elem.mat.mapv(|z| z / tr))
}

fn annulus_stats(op: &FockOperator, lo: f64, hi: f64) -> (f64, f64) {
    let n = 121;
    let xs: Vec<f64> = (0..n).map(|i| -6.5 + 13.0 * i as f64 / (n - 1) as f64).collect();
    let w = wigner_grid(op, &xs, &xs);
    let mut max_abs = 0.0f64;
    let mut min_w = f64::INFINITY;
    for (i, x) in xs.iter().enumerate() {
        for (j, p) in xs.iter().enumerate() {
            let r = (x * x + p * p).sqrt();
            if r >= lo && r <= hi {
                max_abs = max_abs.max(w[(i, j)].abs());
                min_w = min_w.min(w[(i, j)]);
            }
        }
    }
    (max_abs, min_w)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("c6");
    match which {
        "c6" => {
            c6_scan(65);
            c6_scan(80);
            c6_scan(90);
            c6_scan(100);
        }
        "c8" => {
            let vac_full = simulate_corpus(&AncillaSpec::Vacuum, 80_000, 101);
            let vac_reduced = simulate_corpus(&AncillaSpec::Vacuum, 8_000, 103);
            let red10 = reconstruct(&vac_reduced, 10);
            let red15 = reconstruct(&vac_reduced, 15);
            let full15 = reconstruct(&vac_full, 15);
            for (lo, hi) in [(4.5, 5.5), (5.0, 6.0), (5.0, 6.5), (5.5, 6.5)] {
                let a = annulus_stats(&red10, lo, hi);
                let b = annulus_stats(&red15, lo, hi);
                let c = annulus_stats(&full15, lo, hi);
                println!(
                    "annulus [{lo},{hi}]: red10 max {:.3e} min {:+.3e} | red15 max {:.3e} min {:+.3e} | full15 max {:.3e} min {:+.3e}",
                    a.0, a.1, b.0, b.1, c.0, c.1
                );
            }
        }
        _ => eprintln!("unknown"),
    }
}
