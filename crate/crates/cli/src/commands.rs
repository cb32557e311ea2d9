//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use fibred::analysis::{
    ac_bound_report, c_t_lip, calibrate_c_d, d_big, fit_rate, graphon_field_variation,
    measure_variation, moment_bound_report, particle_bound_report, quantitative_bound, r_big,
    stability_envelope, support_bound_report, BoundReport, ConvergenceRecord,
};
use fibred::discretize::{equipartition, sample_initial};
use fibred::dynamics::{curve_distance, empirical_curve, solve_particles, TimeGrid};
use fibred::error::{Error, Result};
use fibred::fields::hypotheses_check;
use fibred::io::{
    curve_to_json, summary_to_json, write_records_csv, write_trajectory_csv, ConstantsSummary,
    FitSummary, Summary,
};
use fibred::measures::FibredMeasure;
use fibred::transport::{classical_w_product, fibred_w};

use crate::config::ExperimentConfig;

// ---------------------------------------------------------------------------
// metric
// ---------------------------------------------------------------------------

pub enum MetricKind {
    Fibred,
    Classical,
}

pub fn cmd_metric(
    file_a: &str,
    file_b: &str,
    p: u32,
    metric: MetricKind,
    plan_out: Option<&str>,
) -> Result<()> {
    let a: FibredMeasure<f64> = fibred::io::load_measure(file_a)?;
    let b: FibredMeasure<f64> = fibred::io::load_measure(file_b)?;
    let d = match metric {
        MetricKind::Fibred => fibred_w(&a, &b, p)?,
        MetricKind::Classical => classical_w_product(&a, &b, p)?,
    };
    println!("{d:.11e}");
    if let Some(path) = plan_out {
        let doc = match metric {
            MetricKind::Fibred => {
                // per-cell distance breakdown
                let cells = fibred::measures::common_refinement(&a, &b)?;
                let breakdown: Vec<serde_json::Value> = cells
                    .iter()
                    .map(|rc| {
                        let fa = &a.fibres()[rc.left].as_discrete(a.dim());
                        let fb = &b.fibres()[rc.right].as_discrete(b.dim());
                        let w = fibred::transport::w_discrete(
                            fa,
                            fb,
                            &fibred::transport::CostKind::EuclideanPow,
                            p,
                        )?;
                        Ok(serde_json::json!({
                            "mass": rc.mass,
                            "distance": w.distance(p),
                            "plan": w.plan,
                        }))
                    })
                    .collect::<Result<_>>()?;
                serde_json::json!({ "metric": "fibred", "p": p, "cells": breakdown })
            }
            MetricKind::Classical => serde_json::json!({
                "metric": "classical",
                "p": p,
                "distance": d,
            }),
        };
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let pi = cfg.marginal()?;
    let field = cfg.field(&pi)?;
    let mu0 = cfg.initial_measure(&pi)?;
    let particles = cfg
        .particles
        .ok_or_else(|| Error::Config("simulate needs a `particles` block".into()))?;
    let grid = TimeGrid::new(cfg.t_end, cfg.steps)?;
    let (coarse, fine) = crate::config::coarse_and_fine(&pi, particles.n, particles.m)?;
    let master = seed.unwrap_or(cfg.master_seed);
    let x0 = sample_initial(&mu0, &coarse, particles.m, master)?;
    let traj = solve_particles(
        &field,
        &pi,
        &fine,
        &coarse,
        &x0,
        grid,
        cfg.integrator(),
        cfg.quad,
    )?;
    let curve = empirical_curve(&traj)?;

    std::fs::create_dir_all(out_dir)?;
    let csv = std::fs::File::create(out_dir.join("trajectory.csv"))?;
    write_trajectory_csv(std::io::BufWriter::new(csv), &traj)?;
    std::fs::write(out_dir.join("curve.json"), curve_to_json(&curve)?)?;
    println!(
        "simulated N = {} particles over {} nodes -> {}",
        traj.n_particles(),
        traj.grid.n_nodes(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

pub fn cmd_converge(cfg: &ExperimentConfig, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let pi = cfg.marginal()?;
    let field = cfg.field(&pi)?;
    let mu0 = cfg.initial_measure(&pi)?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("converge needs a `sweep` block".into()))?;
    let reference = cfg.reference.as_ref().unwrap();
    let grid = TimeGrid::new(cfg.t_end, cfg.steps)?;
    let master = seed.unwrap_or(cfg.master_seed);
    let metric = cfg.curve_metric();

    // reference curve: one high-resolution self-run
    let ref_seed = reference.seed.unwrap_or(master ^ 0x5eed_0f0f);
    let (ref_coarse, ref_fine) =
        crate::config::coarse_and_fine(&pi, reference.n_ref, reference.m_ref)?;
    let ref_x0 = sample_initial(&mu0, &ref_coarse, reference.m_ref, ref_seed)?;
    let ref_traj = solve_particles(
        &field,
        &pi,
        &ref_fine,
        &ref_coarse,
        &ref_x0,
        grid,
        cfg.integrator(),
        cfg.quad,
    )?;
    let ref_curve = empirical_curve(&ref_traj)?;

    // sweep points run in parallel; each is internally deterministic
    let points: Vec<(usize, u64)> = sweep
        .n
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let mut records: Vec<ConvergenceRecord> = points
        .par_iter()
        .map(|&(n, run_seed)| -> Result<ConvergenceRecord> {
            let started = Instant::now();
            let m = cfg.m_of(n);
            let (coarse, fine) = crate::config::coarse_and_fine(&pi, n, m)?;
            let x0 = sample_initial(&mu0, &coarse, m, master ^ run_seed)?;
            let traj = solve_particles(
                &field,
                &pi,
                &fine,
                &coarse,
                &x0,
                grid,
                cfg.integrator(),
                cfg.quad,
            )?;
            let curve = empirical_curve(&traj)?;
            let (sup, _) = curve_distance(&curve, &ref_curve, metric)?;
            Ok(ConvergenceRecord {
                n_total: n * m,
                n,
                m,
                seed: run_seed,
                sup_error: sup,
                runtime_seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| (r.n_total, r.seed));

    let fit = fit_rate(&records).ok().map(|(slope, intercept, residual)| FitSummary {
        slope,
        intercept,
        residual,
    });

    // explicit constants and the quantitative envelope
    let r0 = mu0.support_radius();
    let m_l1 = field.growth().m_l1(cfg.t_end);
    let rr = r_big(r0, m_l1);
    let l_l1 = field.growth().l_r_l1(rr, cfg.t_end);
    let ct = c_t_lip(l_l1);
    let dr = d_big(l_l1);
    let cal_coarse = equipartition(&pi, sweep.n[0])?;
    let c_d = calibrate_c_d(
        &mu0,
        &cal_coarse,
        &[64, 256, 1024],
        &[master ^ 101, master ^ 202, master ^ 303],
        r0,
    )?;
    let var_mu0 = measure_variation(&mu0)?;
    let var_field = graphon_field_variation(&field, rr, cfg.t_end).unwrap_or(f64::NAN);

    let mut bounds = Vec::new();
    if var_field.is_finite() {
        let mut by_n: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        for r in &records {
            let e = by_n.entry(r.n_total).or_insert((0.0, 0));
            e.0 += r.sup_error;
            e.1 += 1;
        }
        for (&n_total, &(sum, cnt)) in &by_n {
            let mean = sum / cnt as f64;
            let envelope =
                quantitative_bound(var_mu0, var_field, r0, mu0.dim(), n_total, dr, c_d);
            bounds.push(BoundReport::new(
                format!("quantitative_envelope[N={n_total}]"),
                mean,
                envelope,
            ));
        }
    }

    let summary = Summary {
        experiment: serde_json::json!({
            "kind": "converge",
            "T": cfg.t_end,
            "steps": cfg.steps,
            "substeps": cfg.substeps,
            "sweep_n": sweep.n,
            "seeds": cfg.seeds,
            "reference": { "n_ref": reference.n_ref, "m_ref": reference.m_ref },
            "master_seed": master,
        }),
        records: records.clone(),
        fit,
        bounds,
        constants: Some(ConstantsSummary { r_r: rr, c_t: ct, d_r: dr, c_d_fitted: c_d }),
    };

    std::fs::create_dir_all(out_dir)?;
    let csv = std::fs::File::create(out_dir.join("records.csv"))?;
    write_records_csv(std::io::BufWriter::new(csv), &records)?;
    std::fs::write(out_dir.join("summary.json"), summary_to_json(&summary)?)?;
    if let Some(f) = &summary.fit {
        println!(
            "fitted rate: slope {:.4}, intercept {:.4}, residual {:.3e}",
            f.slope, f.intercept, f.residual
        );
    }
    println!("{} records -> {}", records.len(), out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub fn cmd_validate(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<()> {
    let pi = cfg.marginal()?;
    let field = cfg.field(&pi)?;
    let mu0 = cfg.initial_measure(&pi)?;
    let particles = cfg
        .particles
        .ok_or_else(|| Error::Config("validate needs a `particles` block".into()))?;
    let grid = TimeGrid::new(cfg.t_end, cfg.steps)?;
    let master = seed.unwrap_or(cfg.master_seed);

    let (coarse, fine) = crate::config::coarse_and_fine(&pi, particles.n, particles.m)?;
    let x0 = sample_initial(&mu0, &coarse, particles.m, master)?;
    let traj = solve_particles(
        &field,
        &pi,
        &fine,
        &coarse,
        &x0,
        grid,
        cfg.integrator(),
        cfg.quad,
    )?;
    let curve = empirical_curve(&traj)?;

    let m_l1 = field.growth().m_l1(cfg.t_end);
    let mut reports = vec![
        particle_bound_report(&traj, m_l1),
        support_bound_report(&curve, m_l1),
        moment_bound_report(&curve, &field.growth().m),
        ac_bound_report(&curve, &field.growth().m, m_l1)?,
    ];

    // marginal invariance (labels never move)
    reports.push(BoundReport::new(
        "marginal_invariance",
        if curve.marginal_invariant() { 0.0 } else { 1.0 },
        0.0,
    ));

    // declared growth profile spot check
    let radius = curve
        .measures
        .iter()
        .map(|m| m.support_radius())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let hyp = hypotheses_check(&field, &pi, 40, radius, cfg.t_end, master ^ 0xc0de)?;
    reports.push(BoundReport::new(
        "hypotheses_sublinearity",
        hyp.sublinearity_worst,
        1.0 + 1e-7,
    ));
    reports.push(BoundReport::new(
        "hypotheses_lipschitz",
        hyp.lipschitz_worst,
        1.0 + 1e-7,
    ));

    // self-stability: the Grönwall envelope of the curve against itself
    let l_norm = field.growth().l_r_l1(r_big(mu0.support_radius(), m_l1), cfg.t_end);
    if let Ok(series) = stability_envelope(&curve, &curve, &field, &field, l_norm) {
        let worst = series
            .into_iter()
            .min_by(|a, b| a.slack.partial_cmp(&b.slack).unwrap());
        if let Some(mut r) = worst {
            r.name = "stability_envelope(worst node)".into();
            reports.push(r);
        }
    }

    let mut all_pass = true;
    println!("{:<34} {:>14} {:>14} {:>12}  status", "check", "lhs", "rhs", "slack");
    for r in &reports {
        all_pass &= r.pass;
        println!(
            "{:<34} {:>14.6e} {:>14.6e} {:>12.3e}  {}",
            r.name,
            r.lhs,
            r.rhs,
            r.slack,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    if all_pass {
        Ok(())
    } else {
        Err(Error::Precondition("one or more validation checks failed".into()))
    }
}

// ---------------------------------------------------------------------------
// shared
// ---------------------------------------------------------------------------

pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from("out"))
}
