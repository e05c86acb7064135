//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Criterion 12 is slow and runs only with `--include-ignored` (or
//! `VFC_SLOW=1`); every other criterion runs by default. Criteria with
//! derived reference values (2, 8, 11, 14) are also checked against oracles
//! defined here, independent of the library's own check code.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;

use nalgebra::DMatrix;
use vfc_core::analysis::ltv::{decay_bounds, ltv_generator, state_transition};
use vfc_core::analysis::pe::pe_gram;
use vfc_core::experiments::config::load_config;
use vfc_core::experiments::criteria::{run_criterion, Context, CriterionResult, ReproOptions, COUNT, NAMES};
use vfc_core::simulation::{reference_trajectory, simulate, IntegratorConfig};
use vfc_core::{spectral_norm, CouplingGains, ScalarLinearSine};

use common::{dense_transformed_rhs, rk4, Coords};

type Oracle = Result<String, String>;

/// Criterion 2: direct integration mapped through the transforms against the
/// dense-Kronecker transformed system, 10 s, sup-norm 1e-6.
fn oracle_2() -> Oracle {
    let cfg = load_config("fig2").map_err(|e| e.to_string())?;
    let dec = cfg.graph.decompose().map_err(|e| e.to_string())?;
    let (k, g) = (10.0, 10f64.sqrt().recip());
    let (h, steps, every) = (0.002, 5000, 10);
    let direct = simulate(
        &ScalarLinearSine,
        &cfg.graph,
        &cfg.initial_state().map_err(|e| e.to_string())?,
        CouplingGains::new(k, g).map_err(|e| e.to_string())?,
        &IntegratorConfig::new(h, h * steps as f64).record_every(every),
    )
    .map_err(|e| e.to_string())?;
    let flat = |j: usize| {
        let d = &direct.derived[j];
        [
            &d.sync.chi_o[..],
            &d.sync.chi_tilde,
            &d.params.vartheta_o,
            &d.params.vartheta_tilde,
        ]
        .concat()
    };
    let (n, p, m) = (1, 2, 2);
    let mut worst = 0.0f64;
    rk4(
        |t, y| {
            let c = Coords::from_flat(y, n, p, m);
            dense_transformed_rhs(&ScalarLinearSine, &dec, k, g, t, &c).flat()
        },
        flat(0),
        h,
        steps,
        |s, y| {
            if s % every == 0 {
                let d = flat(s / every);
                worst = worst.max(y.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
        },
    );
    if worst <= 1e-6 {
        Ok(format!("dense oracle distance {worst:.3e}"))
    } else {
        Err(format!("dense oracle distance {worst:.3e} > 1e-6"))
    }
}

/// Criterion 8: closed forms for `(c1, c2, tau, M_psi) = (pi, pi, 2 pi, 1)`
/// and the bound on a 20 x 20 grid.
fn oracle_8() -> Oracle {
    let d = decay_bounds(PI, PI, 2.0 * PI, 1.0, 1.0, 0.0, 1.0).map_err(|e| e.to_string())?;
    // kappa2 = (2 (2 pi^2)^2 + 2 pi^2) / pi
    let kappa2 = (2.0 * (2.0 * PI * PI).powi(2) + 2.0 * PI * PI) / PI;
    let kappa1 = kappa2 + 2.0 * PI * PI;
    let m_hat = (1.0 + PI / (2.0 * (4.0 * PI * PI).sqrt())).sqrt();
    let b_hat = PI / (4.0 * kappa1);
    for (name, got, want) in [
        ("kappa1", d.kappa1, kappa1),
        ("kappa2", d.kappa2, kappa2),
        ("m_hat", d.m_hat, m_hat),
        ("b_hat", d.b_hat, b_hat),
    ] {
        if ((got - want) / want).abs() > 1e-10 {
            return Err(format!("{name} = {got}, expected {want}"));
        }
    }
    let psi = |t: f64| DMatrix::from_row_slice(1, 2, &[t.cos(), t.sin()]);
    let f = ltv_generator(&psi, 1.0);
    let mut violations = 0;
    for i in 0..20 {
        for j in 0..20 {
            let (t0, span) = (1.5 * i as f64, 3.0 * j as f64);
            let phi = state_transition(&f, t0, t0 + span, 0.01).map_err(|e| e.to_string())?;
            let bound = (kappa1 / kappa2).sqrt() * (-PI * span / (4.0 * kappa1)).exp();
            if spectral_norm(&phi) > bound {
                violations += 1;
            }
        }
    }
    if violations == 0 {
        Ok("closed forms match, 0 violations".into())
    } else {
        Err(format!("{violations} grid violations"))
    }
}

/// Criterion 11: every full-period window of `[cos t, sin t]` has Gram `pi I`.
fn oracle_11() -> Oracle {
    let dt = 2.0 * PI / 400.0;
    let series: Vec<DMatrix<f64>> = (0..=1600)
        .map(|i| {
            let t = i as f64 * dt;
            DMatrix::from_row_slice(1, 2, &[t.cos(), t.sin()])
        })
        .collect();
    let est = pe_gram(&series, 0.0, dt, 2.0 * PI).map_err(|e| e.to_string())?;
    let flat = vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.0]); 1601];
    let c1_flat = pe_gram(&flat, 0.0, dt, 2.0 * PI).map_err(|e| e.to_string())?.c1;
    if (est.c1 - PI).abs() <= 1e-6 && (est.c2 - PI).abs() <= 1e-6 && c1_flat.abs() <= 1e-12 {
        Ok(format!("c1 = {:.12}, c2 = {:.12}", est.c1, est.c2))
    } else {
        Err(format!("c1 = {}, c2 = {}, constant c1 = {c1_flat}", est.c1, est.c2))
    }
}

/// Criterion 14: error ratio against `s(t) = (sin t - cos t + e^{-t})/2`.
fn oracle_14() -> Oracle {
    let exact = |t: f64| (t.sin() - t.cos() + (-t).exp()) / 2.0;
    if (exact(PI) - 0.5216).abs() > 1e-4 {
        return Err("analytic solution check".into());
    }
    let err = |dt: f64| -> Result<f64, String> {
        let s = reference_trajectory(&ScalarLinearSine, &[1.0, 1.0], &[0.0], &IntegratorConfig::new(dt, 5.0))
            .map_err(|e| e.to_string())?;
        Ok((s.values.last().unwrap()[0] - exact(5.0)).abs())
    };
    let ratio = err(0.1)? / err(0.05)?;
    if (12.0..=20.0).contains(&ratio) {
        Ok(format!("ratio {ratio:.3} at t = 5"))
    } else {
        Err(format!("ratio {ratio:.3} outside [12, 20]"))
    }
}

fn report(r: &CriterionResult, oracle: Option<&Oracle>) -> bool {
    let pass = r.pass && oracle.is_none_or(|o| o.is_ok());
    println!(
        "criterion {:>2}: {}  {}  (margin {:.3e}, {:.1}s)",
        r.id,
        if pass { "PASS" } else { "FAIL" },
        r.name,
        r.margin(),
        r.seconds
    );
    for c in r.checks.iter().filter(|c| !c.pass) {
        println!(
            "    failed: {}: value {:.4e}, limit {:.4e}",
            c.name, c.value, c.threshold
        );
    }
    if !r.note.is_empty() {
        println!("    {}", r.note);
    }
    match oracle {
        Some(Ok(msg)) => println!("    oracle: {msg}"),
        Some(Err(msg)) => println!("    oracle FAILED: {msg}"),
        None => {}
    }
    pass
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for id in 1..=COUNT {
            println!("criterion_{id:02}: test");
        }
        return ExitCode::SUCCESS;
    }
    let slow = args.iter().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("VFC_SLOW").is_ok_and(|v| v == "1");
    let only_slow = args.iter().any(|a| a == "--ignored");

    let ctx = Context::new(ReproOptions::default());
    let mut failed = Vec::new();
    let mut skipped = 0;
    println!(
        "acceptance: {COUNT} criteria{}",
        if slow { " (slow criterion enabled)" } else { "" }
    );
    for id in 1..=COUNT {
        let is_slow = id == 12;
        if is_slow && !slow {
            println!(
                "criterion {id:>2}: SKIP  {}  (slow; run with --include-ignored)",
                NAMES[id - 1]
            );
            skipped += 1;
            continue;
        }
        if only_slow && !is_slow {
            println!(
                "criterion {id:>2}: SKIP  {}  (--ignored runs only the slow criterion)",
                NAMES[id - 1]
            );
            skipped += 1;
            continue;
        }
        let result = run_criterion(id, &ctx);
        let oracle = match id {
            2 => Some(oracle_2()),
            8 => Some(oracle_8()),
            11 => Some(oracle_11()),
            14 => Some(oracle_14()),
            _ => None,
        };
        if !report(&result, oracle.as_ref()) {
            failed.push(id);
        }
    }
    let ran = COUNT - skipped;
    println!(
        "acceptance: {} passed, {} failed, {skipped} skipped",
        ran - failed.len(),
        failed.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
