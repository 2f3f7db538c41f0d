//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use mcf_qkd::keyrate::{
    entropy_hd, key_rate_from_rates, key_rate_with_measured_qber, optimize_params, photon_bounds, BlockCounts,
    DecoySource, Optimum, SearchBounds, SecurityParams,
};
use mcf_qkd::linksim::{
    expected_rates, max_qber_deviation, run_sessions, stability_trace, Intensity, LinkConfig, PhaseStatistics,
    StabilityConfig,
};
use mcf_qkd::reference::{reference_point, REFERENCE_POINTS};
use mcf_qkd::states::{detection_distribution, overlap, state_vector, Basis, Dimension, PhaseError};
use mcf_qkd::Execution;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_rel(x: f64, target: f64, tol: f64) -> bool {
    (x / target - 1.0).abs() <= tol
}

fn at_loss(loss: f64) -> LinkConfig {
    let mut c = LinkConfig::default();
    c.channel = c.channel.with_channel_loss(loss).unwrap();
    c
}

fn key_rate_reproduction() -> Outcome {
    let start = Instant::now();
    let params = SecurityParams::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, p) in REFERENCE_POINTS.iter().enumerate() {
        let link = LinkConfig::default().at_reference(p).unwrap();
        let rates = expected_rates(&link, PhaseStatistics::stationary(&link));
        let r = key_rate_with_measured_qber(&link, &rates, p.qber, &params).unwrap().r_sk;
        let tol = if i < 4 { 0.15 } else { 0.20 };
        let ok = within_rel(r, p.r_sk, tol);
        pass &= ok;
        parts.push(format!(
            "{}dB {:.0}/{:.0} kbit/s ({:+.1}%, tol {:.0}%){}",
            p.loss_db,
            r / 1e3,
            p.r_sk / 1e3,
            100.0 * (r / p.r_sk - 1.0),
            100.0 * tol,
            if ok { "" } else { " OUT" }
        ));
    }
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(10);
    parts.push(format!("runtime {:.2?}", elapsed));
    outcome(pass && fast, parts.join("; "))
}

fn block_time() -> Outcome {
    let p = reference_point(5.8).unwrap();
    let link = LinkConfig::default().at_reference(p).unwrap();
    let rates = expected_rates(&link, PhaseStatistics::stationary(&link));
    let t = key_rate_from_rates(&link, &rates, &SecurityParams::default()).unwrap().block_time;
    outcome(within_rel(t, 93.0, 0.15), format!("T = {t:.2} s for 1e9 sifted Z detections (93 s +- 15%)"))
}

fn optimizer() -> Outcome {
    let params = SecurityParams::default();
    let bounds = SearchBounds::default();
    let near = optimize_params(&at_loss(5.8), &params, &bounds, Execution::Parallel).unwrap();
    let far = optimize_params(&at_loss(25.8), &params, &bounds, Execution::Parallel).unwrap();
    let (Optimum::Key { point: a, .. }, Optimum::Key { point: b, .. }) = (&near, &far) else {
        return outcome(false, "no key at one of the losses");
    };
    let checks = [
        ("mu1", a.mu1, 0.19, 0.03),
        ("mu2", a.mu2, 0.15, 0.03),
        ("p_mu1", a.p_mu1, 0.62, 0.05),
        ("p_z", a.p_z, 0.90, 0.03),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, got, want, tol) in checks {
        let ok = (got - want).abs() <= tol;
        pass &= ok;
        parts.push(format!("{name} {got:.3} (want {want} +- {tol}){}", if ok { "" } else { " OUT" }));
    }
    let far_ok = b.p_z <= 0.88;
    pass &= far_ok;
    parts.push(format!("p_z at 25.8 dB {:.3} (want <= 0.88){}", b.p_z, if far_ok { "" } else { " OUT" }));
    parts.push(format!("rate at 5.8 dB {:.0} kbit/s", near.rate() / 1e3));
    outcome(pass, parts.join("; "))
}

/// Explicit propagation through a receiver basis: a phase shifter on the
/// second core of each pair, then a 50:50 coupler per pair, as one 4x4
/// unitary acting on the core amplitudes.
fn propagate(amplitudes: &[Complex64; 4], basis: Basis, deltas: [f64; 2]) -> [f64; 4] {
    let zero = Complex64::new(0.0, 0.0);
    let mut u = [[zero; 4]; 4];
    for (p, pair) in basis.pairs().iter().enumerate() {
        let (a, b) = (pair.first.slot(), pair.second.slot());
        let shift = Complex64::from_polar(1.0, deltas[p]);
        u[2 * p][a] = Complex64::new(FRAC_1_SQRT_2, 0.0);
        u[2 * p][b] = shift * FRAC_1_SQRT_2;
        u[2 * p + 1][a] = Complex64::new(FRAC_1_SQRT_2, 0.0);
        u[2 * p + 1][b] = -shift * FRAC_1_SQRT_2;
    }
    let mut out = [0.0; 4];
    for (row, o) in u.iter().zip(out.iter_mut()) {
        let amp: Complex64 = row.iter().zip(amplitudes).map(|(x, y)| x * y).sum();
        *o = amp.norm_sqr();
    }
    out
}

fn mub_algebra() -> Outcome {
    let start = Instant::now();
    let mut worst_overlap: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let z = state_vector(Basis::Z, i).unwrap();
            let x = state_vector(Basis::X, j).unwrap();
            worst_overlap = worst_overlap.max((overlap(&z, &x).norm_sqr() - 0.25).abs());
        }
    }
    let mut worst_error: f64 = 0.0;
    for k in 0..9 {
        let delta = -PI + 2.0 * PI * k as f64 / 8.0;
        let expected = (delta / 2.0).sin().powi(2);
        for basis in Basis::BOTH {
            for idx in 0..4 {
                let s = state_vector(basis, idx).unwrap();
                let oracle = propagate(s.amplitudes(), basis, [delta; 2]);
                let lib = detection_distribution(&s, basis, &PhaseError::uniform(delta));
                let oracle_err = 1.0 - oracle[idx];
                let lib_err = 1.0 - lib[idx];
                for (a, b) in oracle.iter().zip(&lib) {
                    worst_error = worst_error.max((a - b).abs());
                }
                worst_error = worst_error.max((lib_err - expected).abs()).max((oracle_err - expected).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_overlap < 1e-12 && worst_error < 1e-12 && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!("max |overlap - 1/4| {worst_overlap:.1e}; max error-probability deviation {worst_error:.1e}; runtime {elapsed:.2?}"),
    )
}

fn decoy_soundness() -> Outcome {
    let start = Instant::now();
    let link = LinkConfig::default().at_reference(reference_point(5.8).unwrap()).unwrap();
    let params = SecurityParams::default();
    let src = DecoySource {
        mu1: link.source.mu1,
        mu2: link.source.mu2,
        p_mu1: link.source.p_mu1,
    };
    let seeds: Vec<u64> = (1000..1500).collect();
    let sessions = run_sessions(&link, 1_000_000, &seeds, Execution::Parallel).unwrap();
    let mut sound = 0;
    let mut nontrivial = 0;
    for s in &sessions {
        let counts = BlockCounts::from_tally(&s.tally);
        let b = photon_bounds(&counts.z, &src, &params).unwrap();
        let truth = |n: usize| -> f64 {
            Intensity::BOTH
                .iter()
                .map(|&k| s.tally.cell(Basis::Z, k).detected_by_photons[n] as f64)
                .sum()
        };
        if b.single_lower > 0.0 {
            nontrivial += 1;
        }
        if b.single_lower <= truth(1) && b.vacuum_lower <= truth(0) {
            sound += 1;
        }
    }
    let frac = sound as f64 / sessions.len() as f64;
    let elapsed = start.elapsed();
    outcome(
        frac >= 0.99 && elapsed < Duration::from_secs(300),
        format!(
            "{sound}/{} sessions sound ({nontrivial} with a positive single-photon bound); runtime {elapsed:.2?}",
            sessions.len()
        ),
    )
}

fn stability() -> Outcome {
    let start = Instant::now();
    let link = LinkConfig::default();
    let stab = StabilityConfig::default();
    let t = stability_trace(&link, &stab, 2).unwrap();
    let elapsed = start.elapsed();
    let checks = [
        ("mean QBER", t.mean_qber, 0.049, 0.010),
        ("phase contribution", t.mean_phase_qber, 0.028, 0.007),
        ("switch contribution", t.mean_switch_qber, 0.021, 0.003),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, got, want, tol) in checks {
        let ok = (got - want).abs() <= tol;
        pass &= ok;
        parts.push(format!("{name} {:.2}% (want {:.1} +- {:.1} pp)", 100.0 * got, 100.0 * want, 100.0 * tol));
    }
    let recovered = !t.disturbances.is_empty() && t.all_recovered_within(link.pll.reacquire_timeout);
    pass &= recovered && elapsed < Duration::from_secs(120);
    parts.push(format!(
        "{} disturbances all recovered within {} s: {recovered}",
        t.disturbances.len(),
        link.pll.reacquire_timeout
    ));
    parts.push(format!("runtime {elapsed:.2?}"));
    outcome(pass, parts.join("; "))
}

fn qber_curve() -> Outcome {
    let base = LinkConfig::default();
    let dev = max_qber_deviation(&base).unwrap();
    let mut monotone = true;
    // published operating points
    let cols: Vec<_> = REFERENCE_POINTS.iter().filter(|p| p.loss_db >= 13.8).collect();
    let qbers: Vec<[f64; 4]> = cols
        .iter()
        .map(|p| {
            let l = base.at_reference(p).unwrap();
            let r = expected_rates(&l, PhaseStatistics::stationary(&l));
            [
                r.cell(Basis::Z, Intensity::Signal).qber,
                r.cell(Basis::Z, Intensity::Decoy).qber,
                r.cell(Basis::X, Intensity::Signal).qber,
                r.cell(Basis::X, Intensity::Decoy).qber,
            ]
        })
        .collect();
    for w in qbers.windows(2) {
        monotone &= (0..4).all(|i| w[1][i] > w[0][i]);
    }
    // fixed source settings on a fine grid
    let fixed = base.at_reference(reference_point(13.8).unwrap()).unwrap();
    let mut prev = [0.0; 4];
    for step in 0..=48 {
        let loss = 13.8 + 0.25 * step as f64;
        let mut l = fixed.clone();
        l.channel = l.channel.with_channel_loss(loss).unwrap();
        let r = expected_rates(&l, PhaseStatistics::stationary(&l));
        let q = [
            r.cell(Basis::Z, Intensity::Signal).qber,
            r.cell(Basis::Z, Intensity::Decoy).qber,
            r.cell(Basis::X, Intensity::Signal).qber,
            r.cell(Basis::X, Intensity::Decoy).qber,
        ];
        monotone &= (0..4).all(|i| q[i] > prev[i]);
        prev = q;
    }
    outcome(
        dev <= 0.008 && monotone,
        format!("max |model - measured| {:.2} pp over 24 entries (tol 0.8 pp); monotone above 13.8 dB: {monotone}", 100.0 * dev),
    )
}

fn dimension_advantage() -> Outcome {
    let bounds = SearchBounds::default();
    let link4 = at_loss(5.8);
    let r4 = optimize_params(&link4, &SecurityParams::default(), &bounds, Execution::Parallel)
        .unwrap()
        .rate();
    let mut link2 = link4.clone();
    link2.dimension = Dimension::Two;
    let params2 = SecurityParams {
        d: Dimension::Two,
        ..Default::default()
    };
    let r2 = optimize_params(&link2, &params2, &bounds, Execution::Parallel).unwrap().rate();
    let ratio = r4 / r2;
    let target = 6.3 / 3.7;
    outcome(
        r4 > r2 && within_rel(ratio, target, 0.25),
        format!(
            "4D {:.0} kbit/s, 2D {:.0} kbit/s, ratio {ratio:.3} (want {target:.3} +- 25%)",
            r4 / 1e3,
            r2 / 1e3
        ),
    )
}

fn entropy_and_epsilon() -> Outcome {
    let h = entropy_hd(0.75, Dimension::Four).unwrap();
    let cost = SecurityParams {
        eps_sec: 1e-15,
        eps_cor: 1e-15,
        ..Default::default()
    }
    .epsilon_cost();
    let h_ok = (h - 2.0).abs() < 1e-12;
    let cost_ok = (cost - 387.2).abs() <= 0.1;
    outcome(
        h_ok && cost_ok,
        format!("H_4(3/4) = {h:.15}; epsilon terms = {cost:.4} bits (want 387.2 +- 0.1)"),
    )
}

fn run_cli(args: &[&str], out: &Path) -> Vec<u8> {
    let mut full = vec!["mcf-qkd"];
    full.extend_from_slice(args);
    let out_s = out.to_str().unwrap();
    full.extend_from_slice(&["--out", out_s]);
    let code = mcf_qkd::cli::run(full.iter().copied());
    assert_eq!(code, 0, "{args:?} exited with {code}");
    std::fs::read(out).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let tallies = dir.path().join("tallies");
    let tallies_s = tallies.to_str().unwrap().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["table1"],
        vec!["table1", "--mode", "montecarlo", "--pulses", "2e6", "--seed", "7", "--tallies", &tallies_s],
        vec!["sweep", "--from", "5.8", "--to", "13.8", "--step", "4"],
        vec!["stability", "--duration", "120", "--seed", "3"],
        vec!["fringes", "--seed", "5"],
        vec!["optimize", "--loss", "9.8", "--json"],
    ];
    let mut mismatched = Vec::new();
    for (i, cmd) in commands.iter().enumerate() {
        let a = run_cli(cmd, &dir.path().join(format!("a{i}.out")));
        let b = run_cli(cmd, &dir.path().join(format!("b{i}.out")));
        if a != b || a.is_empty() {
            mismatched.push(cmd[0].to_string());
        }
    }
    let tally = tallies.join("tally_5.8dB.csv");
    let tally_s = tally.to_str().unwrap();
    let a = run_cli(&["keyrate", "--tally", tally_s], &dir.path().join("ka.out"));
    let b = run_cli(&["keyrate", "--tally", tally_s], &dir.path().join("kb.out"));
    if a != b {
        mismatched.push("keyrate".into());
    }
    outcome(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} commands byte-identical on re-run", commands.len() + 1)
        } else {
            format!("differing output: {}", mismatched.join(", "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("key-rate reproduction", key_rate_reproduction),
        ("block time", block_time),
        ("optimizer", optimizer),
        ("MUB and measurement algebra", mub_algebra),
        ("decoy-bound soundness", decoy_soundness),
        ("stability trace", stability),
        ("QBER versus loss", qber_curve),
        ("dimension advantage", dimension_advantage),
        ("entropy and epsilon terms", entropy_and_epsilon),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
