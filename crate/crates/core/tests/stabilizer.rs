use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcf_qkd::linksim::{LinkConfig, StabilizedLink};
use mcf_qkd::stabilizer::{setpoint_phase, stationary_stats, PllConfig, PllState};
use mcf_qkd::states::{Basis, CoreIndex};

fn quiet() -> LinkConfig {
    let mut c = LinkConfig::default();
    c.pll.disturbance_rate = 0.0;
    c
}

#[test]
fn small_step_decays_geometrically() {
    let mut c = quiet();
    c.channel.drift_rate = 0.0;
    c.pll.max_fringe_rate = 1e8;
    c.pll.dead_time = 0.0;
    let bias = stationary_stats(&c.pll, 0.0).lock_bias;
    let mut link = StabilizedLink::new(&c, 1);
    for _ in 0..100 {
        link.tick().unwrap();
    }
    link.inject(CoreIndex::C5, 0.2);
    let mut trace = Vec::new();
    for _ in 0..40 {
        link.tick().unwrap();
        trace.push((link.residuals()[0] - bias).abs());
    }
    assert!(link.basis_locked(Basis::Z));
    assert_eq!(link.lock_losses(), 0);
    assert!(trace[3] < 0.5 * 0.2, "{trace:?}");
    assert!(trace[39] < 0.005, "{trace:?}");
    // untouched pairs stay at the lock point
    assert!((link.residuals()[1] - bias).abs() < 0.005);
}

#[test]
fn reacquires_after_random_jumps() {
    let c = quiet();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let trials = 300;
    let mut recovered = 0;
    for t in 0..trials {
        let mut link = StabilizedLink::new(&c, 1000 + t);
        for _ in 0..20 {
            link.tick().unwrap();
        }
        let core = CoreIndex::ALL[rng.random_range(0..4)];
        link.inject(core, rng.random_range(-PI..PI));
        let start = link.time();
        let mut ok = false;
        while link.time() - start <= c.pll.reacquire_timeout {
            link.tick().unwrap();
            let r = link.residuals();
            if Basis::BOTH.iter().all(|&b| link.basis_locked(b)) && r.iter().all(|x| x.abs() < 0.1) {
                ok = true;
                break;
            }
        }
        recovered += ok as u32;
    }
    assert!(recovered as f64 >= 0.99 * trials as f64, "{recovered}/{trials}");
}

#[test]
fn residual_spread_matches_linear_prediction() {
    let c = quiet();
    let mut link = StabilizedLink::new(&c, 5);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let n = 100_000;
    for _ in 0..1000 {
        link.tick().unwrap();
    }
    for _ in 0..n {
        link.tick().unwrap();
        let r = link.residuals()[2];
        sum += r;
        sum2 += r * r;
    }
    let mean = sum / n as f64;
    let var = sum2 / n as f64 - mean * mean;
    let s = stationary_stats(&c.pll, 2.0 * c.channel.drift_rate);
    assert!((mean - s.lock_bias).abs() < 0.01, "mean {mean} vs {}", s.lock_bias);
    assert!((var / s.residual_variance - 1.0).abs() < 0.2, "var {var} vs {}", s.residual_variance);
}

#[test]
fn scan_lands_on_the_setpoint() {
    let cfg = PllConfig {
        dead_time: 0.0,
        max_fringe_rate: 1e9,
        ..Default::default()
    };
    for fiber in [-2.5, -1.0, 0.3, 2.9] {
        let mut s = PllState::locked_at(0.0);
        s.mode = mcf_qkd::stabilizer::LoopMode::Scanning {
            step: 0,
            sum_re: 0.0,
            sum_im: 0.0,
        };
        for _ in 0..cfg.scan_steps {
            let theta: f64 = fiber + s.actuator_phase;
            let c = (theta / 2.0).cos();
            let counts = (cfg.max_fringe_rate * c * c * cfg.update_interval).round() as u64;
            s.step(counts, &cfg);
        }
        assert!(!s.is_scanning());
        let residual = mcf_qkd::states::wrap_phase(fiber + s.actuator_phase - setpoint_phase(&cfg));
        assert!(residual.abs() < 1e-6, "fiber {fiber}: residual {residual}");
    }
}
