//! Dispatch a parsed experiment to the library modules and write artifacts.

use std::path::PathBuf;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multiks::criticality::{self, classify, CriticalityClass, InteractionSpec};
use multiks::dynamics::{self, EvolveOptions, EvolveOutcome};
use multiks::energy;
use multiks::field::{DensityField, Grid2D};
use multiks::minimizer::{self, MinimizeOptions, MinimizeReport, MinimizerError, Verdict};
use multiks::radial::{self, RadialError};
use multiks::Vec2;

use crate::config::{Command, ExperimentConfig, SweepAxis};
use crate::output::{cell, dump_fields, minimize_trace, ResultDoc, TraceTable};

/// Exit codes: 0 success, 2 config/domain error, 3 convergence failure,
/// 4 blow-up or concentration (an expected scientific outcome).
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_SIGNAL: i32 = 4;

pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub dump: bool,
}

pub fn run(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<i32> {
    std::fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    match cfg.command {
        Command::Classify => run_classify(cfg, ctx),
        Command::Minimize => run_minimize(cfg, ctx),
        Command::Radial => run_radial(cfg, ctx),
        Command::Evolve => run_evolve(cfg, ctx),
        Command::Inequality => run_inequality(cfg, ctx),
        Command::Sweep => run_sweep(cfg, ctx),
    }
}

fn subset_label(mask: u32, n: usize) -> String {
    let indices: Vec<String> = (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| (i + 1).to_string())
        .collect();
    format!("{{{}}}", indices.join(","))
}

fn base_doc(cfg: &ExperimentConfig, ctx: &RunContext) -> ResultDoc {
    let mut doc = ResultDoc::default();
    doc.push("command", cfg.command.as_str());
    doc.push("n", cfg.n);
    doc.push("seed", ctx.seed);
    doc
}

fn run_classify(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<i32> {
    let spec = cfg.spec()?;
    let verdict = classify(&spec)?;
    let mut doc = base_doc(cfg, ctx);
    doc.push("class", verdict.class.as_str());
    let full = (1u32 << spec.n()) - 1;
    for mask in 1..=full {
        doc.push_f64(
            &format!("lambda_{}", subset_label(mask, spec.n())),
            verdict.lambda_table[mask as usize - 1],
        );
    }
    let witnesses: Vec<String> = verdict
        .witnesses
        .iter()
        .map(|m| subset_label(*m, spec.n()))
        .collect();
    doc.push("witnesses", witnesses.join(" "));
    let (var, centroid) = criticality::drift_variance(spec.drifts());
    doc.push_f64("drift_variance", var);
    doc.push_f64("drift_variance_minimizer_x", centroid.x);
    doc.push_f64("drift_variance_minimizer_y", centroid.y);
    let (wmin, wcent) = criticality::weighted_drift_min(&spec);
    doc.push_f64("weighted_drift_min", wmin);
    doc.push_f64("weighted_drift_min_x", wcent.x);
    doc.push_f64("weighted_drift_min_y", wcent.y);
    doc.write(&ctx.out_dir.join("result.txt"))?;

    let mut table = TraceTable::new(&["subset_mask", "subset", "lambda"]);
    for mask in 1..=full {
        table.push_row(vec![
            mask.to_string(),
            subset_label(mask, spec.n()),
            cell(verdict.lambda_table[mask as usize - 1]),
        ]);
    }
    table.write(&ctx.out_dir.join("trace.csv"))?;
    Ok(EXIT_OK)
}

fn initial_field(
    cfg: &ExperimentConfig,
    spec: &InteractionSpec,
    grid: Grid2D,
    seed: u64,
) -> Result<DensityField> {
    let base = DensityField::gaussian_tuple(
        grid,
        spec.beta().to_vec(),
        spec.drifts(),
        cfg.init_sigma,
    )?;
    if !cfg.random_init {
        return Ok(base);
    }
    // seeded multiplicative noise, deterministic cell order
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = base.values().clone();
    for v in noisy.iter_mut() {
        *v *= 1.0 + 0.2 * (rng.random::<f64>() - 0.5);
    }
    Ok(DensityField::from_values(
        grid,
        noisy,
        spec.beta().to_vec(),
    )?)
}

fn minimize_options(cfg: &ExperimentConfig) -> MinimizeOptions {
    MinimizeOptions {
        theta0: cfg.theta0,
        theta_floor: cfg.theta_floor,
        max_iters: cfg.max_iters,
        tol_fp: cfg.tol_fp,
    }
}

fn minimize_once(
    cfg: &ExperimentConfig,
    spec: &InteractionSpec,
    seed: u64,
) -> Result<std::result::Result<MinimizeReport, String>> {
    let grid = Grid2D::new(cfg.half_width, cfg.cells_per_side)?;
    let init = initial_field(cfg, spec, grid, seed)?;
    match minimizer::minimize(spec, init, &minimize_options(cfg)) {
        Ok(report) => Ok(Ok(report)),
        Err(MinimizerError::UnsupportedClass(c)) => Ok(Err(format!("refused-{}", c.as_str()))),
        Err(e) => Err(e.into()),
    }
}

fn push_minimize_summary(doc: &mut ResultDoc, spec: &InteractionSpec, report: &MinimizeReport) {
    doc.push("verdict", report.verdict.as_str());
    doc.push("iterations", report.diagnostics.len());
    doc.push_f64("free_energy", report.final_energy());
    if let Some(last) = report.energy_trace.last() {
        doc.push_f64("entropy_total", last.entropy_terms.iter().sum::<f64>());
        doc.push_f64("interaction_term", last.interaction_term);
        doc.push_f64(
            "confinement_total",
            last.confinement_terms.iter().sum::<f64>(),
        );
    }
    if let Some(d) = report.diagnostics.last() {
        doc.push_f64("residual", d.residual);
        doc.push_f64("max_density", d.max_density);
        for (i, m) in d.second_moments.iter().enumerate() {
            doc.push_f64(&format!("second_moment_{i}"), *m);
        }
    }
    let _ = spec;
    doc.push_f64("mass_defect", report.final_field.mass_defect());
}

fn run_minimize(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<i32> {
    let spec = cfg.spec()?;
    let outcome = minimize_once(cfg, &spec, ctx.seed)?;
    let mut doc = base_doc(cfg, ctx);
    let code = match &outcome {
        Ok(report) => {
            push_minimize_summary(&mut doc, &spec, report);
            minimize_trace(report).write(&ctx.out_dir.join("trace.csv"))?;
            if ctx.dump {
                dump_fields(&report.final_field, &ctx.out_dir.join("fields"))?;
            }
            match report.verdict {
                Verdict::Minimizer => EXIT_OK,
                Verdict::Concentration => EXIT_SIGNAL,
                Verdict::BudgetExhausted => EXIT_CONVERGENCE,
            }
        }
        Err(refusal) => {
            doc.push("verdict", refusal.as_str());
            EXIT_CONFIG
        }
    };
    doc.write(&ctx.out_dir.join("result.txt"))?;
    Ok(code)
}

fn run_radial(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<i32> {
    let spec = cfg.spec()?;
    let mut doc = base_doc(cfg, ctx);
    match radial::solve_radial(&spec) {
        Ok(profile) => {
            doc.push("status", "converged");
            let (lhs, rhs) = radial::mass_balance(&profile, &spec);
            doc.push_f64("mass_balance_lhs", lhs);
            doc.push_f64("mass_balance_rhs", rhs);
            doc.push_f64("ode_residual_max", profile.ode_residual_max(&spec));
            doc.push_f64("max_mass_flux", profile.max_dw());
            for (i, diag) in radial::asymptotics_check(&profile).iter().enumerate() {
                doc.push_f64(&format!("asymptotics_{i}"), *diag);
            }
            for i in 0..spec.n() {
                doc.push_f64(&format!("u0_{i}"), profile.u0()[i]);
                doc.push_f64(&format!("center_density_{i}"), profile.center_density(i));
                let last = profile.s_grid().len() - 1;
                doc.push_f64(&format!("terminal_mass_{i}"), profile.w()[(i, last)]);
            }
            doc.write(&ctx.out_dir.join("result.txt"))?;

            let mut columns = vec!["s".to_string()];
            for i in 0..spec.n() {
                columns.push(format!("w_{i}"));
            }
            for i in 0..spec.n() {
                columns.push(format!("dw_{i}"));
            }
            let refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
            let mut table = TraceTable::new(&refs);
            for (j, &s) in profile.s_grid().iter().enumerate() {
                let mut row = vec![cell(s)];
                for i in 0..spec.n() {
                    row.push(cell(profile.w()[(i, j)]));
                }
                for i in 0..spec.n() {
                    row.push(cell(profile.dw()[(i, j)]));
                }
                table.push_row(row);
            }
            table.write(&ctx.out_dir.join("trace.csv"))?;
            Ok(EXIT_OK)
        }
        Err(RadialError::Convergence {
            iterations,
            best_residual,
        }) => {
            doc.push("status", "convergence-failure");
            doc.push("newton_iterations", iterations);
            doc.push_f64("best_residual", best_residual);
            doc.write(&ctx.out_dir.join("result.txt"))?;
            Ok(EXIT_CONVERGENCE)
        }
        Err(e @ (RadialError::NonZeroDrift | RadialError::NotSubCritical(_))) => {
            doc.push("status", "refused");
            doc.push("reason", e.to_string());
            doc.write(&ctx.out_dir.join("result.txt"))?;
            Ok(EXIT_CONFIG)
        }
        Err(e) => Err(e.into()),
    }
}

fn run_evolve(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<i32> {
    let spec = cfg.spec()?;
    let grid = Grid2D::new(cfg.half_width, cfg.cells_per_side)?;
    let init = initial_field(cfg, &spec, grid, ctx.seed)?;
    let residual_initial = minimizer::residual(&spec, &init);
    let options = EvolveOptions {
        cfl: cfg.cfl,
        ..EvolveOptions::default()
    };
    let report = dynamics::evolve(&spec, init, cfg.t_end, &options)?;

    let mut doc = base_doc(cfg, ctx);
    let code = match report.outcome {
        EvolveOutcome::ReachedEnd => {
            doc.push("outcome", "completed");
            EXIT_OK
        }
        EvolveOutcome::BlowUp { time, max_density } => {
            doc.push("outcome", "blow-up");
            doc.push_f64("blowup_time", time);
            doc.push_f64("blowup_max_density", max_density);
            EXIT_SIGNAL
        }
    };
    doc.push_f64("final_time", report.state.time);
    if let Some(last) = report.state.dissipation_trace.last() {
        doc.push_f64("final_free_energy", last.free_energy);
    }
    if let Ok(r0) = residual_initial {
        doc.push_f64("residual_initial", r0);
    }
    if let Ok(r1) = minimizer::residual(&spec, &report.state.field) {
        doc.push_f64("residual_final", r1);
    }
    doc.push_f64("max_density", report.state.field.max_density_all());
    doc.push_f64("mass_defect", report.state.field.mass_defect());
    doc.write(&ctx.out_dir.join("result.txt"))?;

    let mut table = TraceTable::new(&["time", "f_v", "dissipation"]);
    for p in &report.state.dissipation_trace {
        table.push_row(vec![cell(p.time), cell(p.free_energy), cell(p.dissipation)]);
    }
    table.write(&ctx.out_dir.join("trace.csv"))?;

    if ctx.dump {
        dump_fields(&report.state.field, &ctx.out_dir.join("fields"))?;
    }
    Ok(code)
}

fn run_inequality(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<i32> {
    let spec = cfg.spec()?;
    let fv = minimize_once(cfg, &spec, ctx.seed)?;
    let spec0 = spec.zero_drift();
    let f0 = minimize_once(cfg, &spec0, ctx.seed)?;

    let mut doc = base_doc(cfg, ctx);
    let (wmin, _) = criticality::weighted_drift_min(&spec);
    doc.push_f64("weighted_drift_min", wmin);
    let mut gap = f64::NAN;
    match (&fv, &f0) {
        (Ok(rv), Ok(r0)) => {
            doc.push("fv_verdict", rv.verdict.as_str());
            doc.push_f64("fv_best", rv.final_energy());
            doc.push("f0_verdict", r0.verdict.as_str());
            doc.push_f64("f0_best", r0.final_energy());
            gap = energy::inequality_gap(&spec, rv.final_energy(), r0.final_energy());
        }
        _ => {
            if let Err(refusal) = &fv {
                doc.push("fv_verdict", refusal.as_str());
            }
            if let Err(refusal) = &f0 {
                doc.push("f0_verdict", refusal.as_str());
            }
        }
    }
    doc.push_f64("gap", gap);
    doc.write(&ctx.out_dir.join("result.txt"))?;
    if gap.is_nan() {
        Ok(EXIT_CONFIG)
    } else {
        Ok(EXIT_OK)
    }
}

fn run_sweep(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<i32> {
    let base_spec = cfg.spec()?;
    let axis = cfg.sweep_axis.expect("validated");
    let mut table = TraceTable::new(&[
        "value",
        "class",
        "verdict",
        "f_v",
        "min_second_moment",
        "max_density",
        "residual",
    ]);

    for &value in &cfg.sweep_values {
        let spec = match axis {
            SweepAxis::MassScale => base_spec
                .with_mass_scale(value)
                .map_err(|e| anyhow::anyhow!("mass scale {value}: {e}"))?,
            SweepAxis::Separation => {
                let v = vec![
                    Vec2::new(-value / 2.0, 0.0),
                    Vec2::new(value / 2.0, 0.0),
                ];
                base_spec
                    .with_drifts(v)
                    .map_err(|e| anyhow::anyhow!("separation {value}: {e}"))?
            }
        };
        let class = classify(&spec)?.class;
        let mut row = vec![cell(value), class.as_str().to_string()];
        if class == CriticalityClass::SubCritical || class == CriticalityClass::Critical {
            match minimize_once(cfg, &spec, ctx.seed)? {
                Ok(report) => {
                    row.push(report.verdict.as_str().to_string());
                    row.push(cell(report.final_energy()));
                    let (m2, rho, res) = report
                        .diagnostics
                        .last()
                        .map(|d| {
                            (
                                d.second_moments.iter().fold(f64::INFINITY, |m, &v| m.min(v)),
                                d.max_density,
                                d.residual,
                            )
                        })
                        .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
                    row.push(cell(m2));
                    row.push(cell(rho));
                    row.push(cell(res));
                }
                Err(refusal) => {
                    row.extend([refusal, String::new(), String::new(), String::new(), String::new()]);
                }
            }
        } else {
            row.extend([
                format!("refused-{}", class.as_str()),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
        table.push_row(row);
    }
    table.write(&ctx.out_dir.join("trace.csv"))?;

    let mut doc = base_doc(cfg, ctx);
    doc.push("axis", axis.as_str());
    doc.push("points", cfg.sweep_values.len());
    if axis == SweepAxis::MassScale {
        if let Some(t) = criticality::critical_mass_scale(&base_spec)? {
            doc.push_f64("critical_mass_scale", t);
        }
    }
    doc.write(&ctx.out_dir.join("result.txt"))?;
    Ok(EXIT_OK)
}
