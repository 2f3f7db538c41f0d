use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::output::{destination, open, Table, Value};
use super::{resolve_config, Cli, Command, GlobalArgs, Polarization};
use crate::config::{ExperimentConfig, Mode};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::keyrate::{
    key_rate_from_rates, key_rate_from_tally, key_rate_with_measured_qber, optimize_params, KeyRateResult,
    Optimum, SearchBounds,
};
use crate::linksim::{
    expected_rates, run_pulses, stability_trace, stability_trace_with_telemetry, Intensity, LinkConfig,
    PhaseStatistics, Tally,
};
use crate::reference::REFERENCE_POINTS;
use crate::stabilizer::{fringe_trace, fringe_visibility};
use crate::states::Basis;

const MAX_SWEEP_LOSS: f64 = 40.0;
const FRINGE_RAMP: f64 = 2.0 * PI * 5.0;
const FRINGE_BIN: f64 = 1e-3;
const FRINGE_PHASE_BINS: usize = 16;

struct Context<'a> {
    global: &'a GlobalArgs,
    cfg: ExperimentConfig,
    command: &'static str,
    failures: Vec<String>,
}

impl Context<'_> {
    fn comment(&self) -> String {
        format!(
            "mcf-qkd {} config_sha256={} seed={}",
            self.command,
            self.cfg.sha256(),
            self.cfg.seed
        )
    }

    fn emit(&self, table: &Table, default_name: &str) -> Result<()> {
        let path = destination(self.global.out.as_deref(), self.global.out_dir.as_deref(), default_name);
        let mut w = open(path.as_deref())?;
        table.write(&mut w, &self.comment(), self.global.pretty)?;
        w.flush()?;
        Ok(())
    }

    fn emit_json<T: Serialize>(&self, value: &T, default_name: &str) -> Result<()> {
        let path = destination(self.global.out.as_deref(), self.global.out_dir.as_deref(), default_name);
        let mut w = open(path.as_deref())?;
        let doc = serde_json::json!({
            "command": self.command,
            "config_sha256": self.cfg.sha256(),
            "seed": self.cfg.seed,
            "result": value,
        });
        serde_json::to_writer_pretty(&mut w, &doc).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if self.global.check && !ok {
            self.failures.push(what.into());
        }
    }
}

/// Runs the selected command. Returns the failed checks, empty when all
/// passed or none were requested.
pub(super) fn dispatch(cli: &Cli) -> Result<Vec<String>> {
    let mut ctx = Context {
        global: &cli.global,
        cfg: resolve_config(&cli.global)?,
        command: cli.command.name(),
        failures: Vec::new(),
    };
    match &cli.command {
        Command::Table1 { loss, tallies } => table1(&mut ctx, loss, tallies.as_deref())?,
        Command::Sweep { from, to, step } => sweep(&mut ctx, *from, *to, *step)?,
        Command::Stability { duration, telemetry } => stability(&mut ctx, *duration, telemetry.as_deref())?,
        Command::Fringes { polarization, duration } => fringes(&mut ctx, *polarization, *duration)?,
        Command::Optimize { loss, json } => optimize(&mut ctx, *loss, *json)?,
        Command::Keyrate { tally, json } => keyrate(&mut ctx, tally, *json)?,
    }
    Ok(ctx.failures)
}

/// The link with total channel loss `loss_db`. Losses below the fiber's own
/// loss shorten the fiber instead of adding attenuation.
fn link_at_loss(base: &LinkConfig, loss_db: f64) -> Result<LinkConfig> {
    let mut link = base.clone();
    if loss_db < link.channel.core_loss_db {
        link.channel.core_loss_db = loss_db;
        link.channel.extra_attenuation_db = 0.0;
    } else {
        link.channel = link.channel.with_channel_loss(loss_db)?;
    }
    link.validate()?;
    Ok(link)
}

fn qber_cells() -> [(Basis, Intensity); 4] {
    [
        (Basis::Z, Intensity::Signal),
        (Basis::Z, Intensity::Decoy),
        (Basis::X, Intensity::Signal),
        (Basis::X, Intensity::Decoy),
    ]
}

const QBER_COLUMNS: [&str; 4] = ["qber_z_mu1", "qber_z_mu2", "qber_x_mu1", "qber_x_mu2"];

fn table1(ctx: &mut Context, losses: &[f64], tallies: Option<&Path>) -> Result<()> {
    let points: Vec<_> = if losses.is_empty() {
        REFERENCE_POINTS.iter().collect()
    } else {
        losses
            .iter()
            .map(|&l| {
                REFERENCE_POINTS
                    .iter()
                    .find(|p| (p.loss_db - l).abs() < 1e-9)
                    .map_or_else(|| invalid(format!("no published operating point at {l} dB")), Ok)
            })
            .collect::<Result<_>>()?
    };
    let base = ctx.cfg.link();
    let params = ctx.cfg.security.clone();
    let links: Vec<LinkConfig> = points.iter().map(|p| base.at_reference(p)).collect::<Result<_>>()?;
    let montecarlo = ctx.cfg.mode == Mode::Montecarlo;

    let mut headers = vec!["loss_db", "mu1", "mu2", "p_mu1", "p_z"];
    headers.extend(QBER_COLUMNS);
    if montecarlo {
        headers.extend(["qber_z_mu1_err", "qber_z_mu2_err", "qber_x_mu1_err", "qber_x_mu2_err"]);
    }
    headers.extend(["r_sk_bits_per_s", "r_sk_measured_qber_bits_per_s", "r_sk_reference_bits_per_s"]);
    let mut table = Table::new(&headers);

    let sessions = if montecarlo {
        let jobs: Vec<(usize, &LinkConfig)> = links.iter().enumerate().collect();
        let seed = ctx.cfg.seed;
        let pulses = ctx.cfg.pulses;
        let out = Execution::default().map(&jobs, |&(i, link)| run_pulses(link, pulses, seed.wrapping_add(i as u64)));
        Some(out.into_iter().collect::<Result<Vec<_>>>()?)
    } else {
        if tallies.is_some() {
            return invalid("--tallies needs --mode montecarlo");
        }
        None
    };
    if let (Some(dir), Some(sessions)) = (tallies, &sessions) {
        let dir = destination(Some(dir), ctx.global.out_dir.as_deref(), "").expect("path given");
        std::fs::create_dir_all(&dir)?;
        for (point, s) in points.iter().zip(sessions) {
            let f = File::create(dir.join(format!("tally_{}dB.csv", point.loss_db)))?;
            s.tally.write_csv(BufWriter::new(f))?;
        }
    }

    for (i, (point, link)) in points.iter().zip(&links).enumerate() {
        let (phase, qber, errs) = match &sessions {
            Some(s) => {
                let t = &s[i].tally;
                ctx.check(t.is_consistent(), format!("tally at {} dB is inconsistent", point.loss_db));
                let q = qber_cells().map(|(b, k)| t.cell(b, k).qber());
                let e = qber_cells().map(|(b, k)| {
                    let c = t.cell(b, k);
                    let n = c.n_detected as f64;
                    let q = c.qber();
                    if n > 0.0 {
                        (q * (1.0 - q) / n).sqrt()
                    } else {
                        0.0
                    }
                });
                (s[i].phase, q, Some(e))
            }
            None => {
                let phase = PhaseStatistics::stationary(link);
                let rates = expected_rates(link, phase);
                (phase, qber_cells().map(|(b, k)| rates.cell(b, k).qber), None)
            }
        };
        let rates = expected_rates(link, phase);
        let model = match &sessions {
            Some(_) => key_rate_with_measured_qber(link, &rates, qber, &params)?,
            None => key_rate_from_rates(link, &rates, &params)?,
        };
        let measured = key_rate_with_measured_qber(link, &rates, point.qber, &params)?;
        ctx.check(
            model.r_sk.is_finite() && model.r_sk >= 0.0,
            format!("key rate at {} dB is not a finite non-negative number", point.loss_db),
        );
        ctx.check(
            qber.iter().all(|q| (0.0..=1.0).contains(q)),
            format!("QBER outside [0, 1] at {} dB", point.loss_db),
        );

        let mut row: Vec<Value> = vec![
            point.loss_db.into(),
            point.mu1.into(),
            point.mu2.into(),
            point.p_mu1.into(),
            point.p_z.into(),
        ];
        row.extend(qber.map(Value::from));
        if let Some(e) = errs {
            row.extend(e.map(Value::from));
        }
        row.extend([model.r_sk.into(), measured.r_sk.into(), point.r_sk.into()]);
        table.push(row);
    }
    ctx.emit(&table, "table1.csv")
}

fn sweep_points(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    for (name, v) in [("from", from), ("to", to)] {
        if !(0.0..=MAX_SWEEP_LOSS).contains(&v) {
            return invalid(format!("--{name} must lie in [0, {MAX_SWEEP_LOSS}] dB, got {v}"));
        }
    }
    if !(step > 0.0 && step.is_finite()) {
        return invalid(format!("--step must be positive, got {step}"));
    }
    if to < from {
        return invalid(format!("empty loss range {from}..{to}"));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| from + step * i as f64).collect())
}

fn sweep(ctx: &mut Context, from: f64, to: f64, step: f64) -> Result<()> {
    let losses = sweep_points(from, to, step)?;
    let base = ctx.cfg.link();
    let params = ctx.cfg.security.clone();
    let links: Vec<LinkConfig> = losses.iter().map(|&l| link_at_loss(&base, l)).collect::<Result<_>>()?;
    let bounds = SearchBounds::default();
    let results: Vec<Result<Optimum>> = Execution::default().map(&links, |link| {
        optimize_params(link, &params, &bounds, Execution::Sequential)
    });

    let mut table = Table::new(&[
        "loss_db",
        "mu1",
        "mu2",
        "p_mu1",
        "p_z",
        "qber_z",
        "qber_x",
        "r_sk_bits_per_s",
    ]);
    let mut previous = f64::INFINITY;
    for ((loss, link), opt) in losses.iter().zip(&links).zip(results) {
        let opt = opt?;
        let rate = opt.rate();
        ctx.check(
            rate <= previous * (1.0 + 1e-9),
            format!("key rate increases with loss at {loss} dB"),
        );
        previous = rate;
        let row: Vec<Value> = match &opt {
            Optimum::Key { point, .. } => {
                let mut at = link.clone();
                at.source = at.source.with_operating_point(*point);
                let rates = expected_rates(&at, PhaseStatistics::stationary(&at));
                vec![
                    (*loss).into(),
                    point.mu1.into(),
                    point.mu2.into(),
                    point.p_mu1.into(),
                    point.p_z.into(),
                    rates.qber(Basis::Z).into(),
                    rates.qber(Basis::X).into(),
                    rate.into(),
                ]
            }
            Optimum::NoKey => {
                let rates = expected_rates(link, PhaseStatistics::stationary(link));
                vec![
                    (*loss).into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    rates.qber(Basis::Z).into(),
                    rates.qber(Basis::X).into(),
                    0.0.into(),
                ]
            }
        };
        table.push(row);
    }
    ctx.emit(&table, "sweep.csv")
}

fn stability(ctx: &mut Context, duration: Option<f64>, telemetry: Option<&Path>) -> Result<()> {
    let mut stab = ctx.cfg.stability.clone();
    if let Some(d) = duration {
        stab.duration = d;
    }
    stab.validate()?;
    let link = ctx.cfg.link();
    let trace = if telemetry.is_some() {
        stability_trace_with_telemetry(&link, &stab, ctx.cfg.seed)?
    } else {
        stability_trace(&link, &stab, ctx.cfg.seed)?
    };

    let mut table = Table::new(&[
        "t_start_s",
        "t_end_s",
        "detections",
        "qber",
        "phase_qber",
        "switch_qber",
        "lock_lost",
    ]);
    for w in &trace.windows {
        table.push(vec![
            w.t_start_s.into(),
            w.t_end_s.into(),
            w.detections.into(),
            w.qber.into(),
            w.phase_qber.into(),
            w.switch_qber.into(),
            w.lock_lost.into(),
        ]);
    }
    table.trailer = vec![
        format!("mean_qber={}", trace.mean_qber),
        format!("mean_phase_qber={}", trace.mean_phase_qber),
        format!("mean_switch_qber={}", trace.mean_switch_qber),
        format!("lock_losses={}", trace.lock_losses),
        format!("disturbances={}", trace.disturbances.len()),
    ];
    for d in &trace.disturbances {
        table.trailer.push(match d.recovery_time() {
            Some(r) => format!("disturbance t={} core={} recovered_after_s={}", d.time, d.core.label(), r),
            None => format!("disturbance t={} core={} recovered_after_s=never", d.time, d.core.label()),
        });
    }
    let timeout = ctx.cfg.pll.reacquire_timeout;
    ctx.check(
        trace.all_recovered_within(timeout),
        format!("a disturbance was not recovered within {timeout} s"),
    );

    if let Some(path) = telemetry {
        let path = destination(Some(path), ctx.global.out_dir.as_deref(), "telemetry.csv").expect("path given");
        if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "# {}", ctx.comment())?;
        let mut csv = csv::Writer::from_writer(&mut w);
        for row in &trace.telemetry {
            csv.serialize(row).map_err(super::output::csv_io)?;
        }
        csv.flush()?;
        drop(csv);
        w.flush()?;
    }
    ctx.emit(&table, "stability.csv")
}

fn fringes(ctx: &mut Context, polarization: Option<Polarization>, duration: f64) -> Result<()> {
    let modes = match polarization {
        Some(p) => vec![p],
        None => vec![Polarization::Aligned, Polarization::Orthogonal],
    };
    let mut table = Table::new(&["polarization", "time_s", "modulator_on", "phase_rad", "counts"]);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    for mode in modes {
        let mut pll = ctx.cfg.pll.clone();
        pll.polarization = mode.into();
        let samples = fringe_trace(&pll, duration, FRINGE_RAMP, FRINGE_BIN, &mut rng)?;
        let name = pll.polarization.name();
        for s in &samples {
            table.push(vec![
                name.into(),
                s.time_s.into(),
                s.modulator_on.into(),
                s.phase_rad.into(),
                s.counts.into(),
            ]);
        }
        let on = fringe_visibility(&samples, true, FRINGE_PHASE_BINS)?;
        let off = fringe_visibility(&samples, false, FRINGE_PHASE_BINS)?;
        table.trailer.push(format!("{name} visibility_modulator_on={on}"));
        table.trailer.push(format!("{name} visibility_modulator_off={off}"));
        match mode {
            Polarization::Orthogonal => ctx.check(on > 0.9, format!("orthogonal fringe visibility {on} <= 0.9")),
            Polarization::Aligned => ctx.check(on < 0.2, format!("aligned fringe visibility {on} >= 0.2")),
        }
    }
    ctx.emit(&table, "fringes.csv")
}

const RESULT_COLUMNS: [&str; 14] = [
    "ell_bits",
    "r_sk_bits_per_s",
    "lambda_ec_bits",
    "block_time_s",
    "qber_z",
    "d0_z",
    "d1_z",
    "phi_z",
    "tau0",
    "tau1",
    "s1_x",
    "v1_x",
    "clamped",
    "epsilon_cost_bits",
];

fn result_row(r: &KeyRateResult, eps_cost: f64) -> Vec<Value> {
    let b = &r.bounds;
    vec![
        r.ell.into(),
        r.r_sk.into(),
        r.lambda_ec.into(),
        r.block_time.into(),
        r.qber_z.into(),
        b.d0_z.into(),
        b.d1_z.into(),
        b.phi_z.into(),
        b.tau0.into(),
        b.tau1.into(),
        b.s1_x.into(),
        b.v1_x.into(),
        b.clamped.into(),
        eps_cost.into(),
    ]
}

fn optimize(ctx: &mut Context, loss: Option<f64>, json: bool) -> Result<()> {
    let base = ctx.cfg.link();
    let link = match loss {
        Some(l) => {
            if !(0.0..=MAX_SWEEP_LOSS).contains(&l) {
                return invalid(format!("--loss must lie in [0, {MAX_SWEEP_LOSS}] dB, got {l}"));
            }
            link_at_loss(&base, l)?
        }
        None => base,
    };
    let params = ctx.cfg.security.clone();
    let opt = optimize_params(&link, &params, &SearchBounds::default(), Execution::default())?;
    ctx.check(opt.rate().is_finite(), "optimized key rate is not finite");
    if json {
        return ctx.emit_json(&opt, "optimize.json");
    }
    let mut headers = vec!["loss_db", "mu1", "mu2", "p_mu1", "p_z"];
    headers.extend(RESULT_COLUMNS);
    let mut table = Table::new(&headers);
    let loss_db = link.channel.channel_loss_db();
    match &opt {
        Optimum::Key { point, result, .. } => {
            let mut row: Vec<Value> = vec![
                loss_db.into(),
                point.mu1.into(),
                point.mu2.into(),
                point.p_mu1.into(),
                point.p_z.into(),
            ];
            row.extend(result_row(result, params.epsilon_cost()));
            table.push(row);
        }
        Optimum::NoKey => table.trailer.push(format!("no positive key at {loss_db} dB")),
    }
    ctx.emit(&table, "optimize.csv")
}

fn keyrate(ctx: &mut Context, tally_path: &Path, json: bool) -> Result<()> {
    let file = File::open(tally_path)
        .map_err(|e| crate::Error::Config(format!("cannot read {}: {e}", tally_path.display())))?;
    let tally = Tally::read_csv(BufReader::new(file))?;
    ctx.check(tally.is_consistent(), "tally counts are inconsistent");
    let params = ctx.cfg.security.clone();
    let result = key_rate_from_tally(&tally, &ctx.cfg.source, &params)?;
    if json {
        return ctx.emit_json(&result, "keyrate.json");
    }
    let mut table = Table::new(&RESULT_COLUMNS);
    table.push(result_row(&result, params.epsilon_cost()));
    ctx.emit(&table, "keyrate.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid() {
        assert_eq!(sweep_points(5.8, 25.8, 4.0).unwrap().len(), 6);
        assert_eq!(sweep_points(5.0, 6.0, 10.0).unwrap(), vec![5.0]);
        assert!(sweep_points(10.0, 5.0, 1.0).is_err());
        assert!(sweep_points(0.0, 41.0, 1.0).is_err());
        assert!(sweep_points(0.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn short_links_shorten_the_fiber() {
        let l = link_at_loss(&LinkConfig::default(), 2.0).unwrap();
        assert_eq!(l.channel.channel_loss_db(), 2.0);
        let l = link_at_loss(&LinkConfig::default(), 9.8).unwrap();
        assert!((l.channel.extra_attenuation_db - 4.0).abs() < 1e-12);
    }
}
