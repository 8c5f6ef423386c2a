//! Subcommand implementations. Each writes `result.json` plus CSV tables
//! into the output directory and returns the exit outcome.

use asymrisk::criterion::{self, standard_axiom_family};
use asymrisk::lattice::{self, Payoff};
use asymrisk::lq::{self, ValidationStatus};
use asymrisk::portfolio::{self, StrategyKind};
use asymrisk::riccati::{self, Wellposedness};
use asymrisk::sde::{self, SimulationOptions};
use asymrisk::smp::{self, SmpSampling};
use asymrisk::{FactorMarketModelF64, GammaMatrix, LqModelF64, TimeGridF64};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::{Command, Settings};
use crate::error::{CliError, Outcome};
use crate::model_file::LoadedModel;
use crate::output::{matrix_columns, matrix_entries, matrix_rows, num, vector_columns, ArtifactWriter, ModelProvenance, Provenance};
use crate::payoff::PayoffChoice;

pub const DEFAULT_SIM_PATHS: usize = 10_000;
pub const DEFAULT_SMP_PATHS: usize = 20;
pub const DEFAULT_LATTICE_STEPS: usize = 200;
pub const DEFAULT_LEVELS: usize = 4;
pub const DEFAULT_SCALES: [f64; 4] = [0.04, 0.02, 0.01, 0.005];
pub const DEFAULT_GAIN_SHIFTS: [f64; 3] = [-0.25, 0.25, 0.5];
pub const AXIOM_TOLERANCE: f64 = 1e-9;
/// Paths recorded by `lq-sim` for the trajectory table.
const LQ_SIM_RECORD: usize = 5;

pub struct Context {
    pub command: Command,
    pub settings: Settings,
}

impl Context {
    fn model(&self) -> Result<LoadedModel, CliError> {
        let path = self
            .settings
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("`{}` needs --model", self.command.name())))?;
        LoadedModel::load(path)
    }

    fn writer(&self, grid: Option<&TimeGridF64>, model: Option<&LoadedModel>, config: Value) -> Result<ArtifactWriter, CliError> {
        let mut config = config;
        config["options"] = serde_json::to_value(&self.settings)?;
        let mut p = Provenance::new(self.command.name(), self.settings.seed(), config);
        p.grid = grid.map(|g| g.summary());
        p.model = model.map(|m| ModelProvenance {
            label: m.label.clone(),
            sha256: m.sha256.clone(),
            source: m.source.clone(),
        });
        ArtifactWriter::create(&self.settings.out_dir(), p)
    }

    /// LQ model with grid and Γ overrides applied; `--theta` means Γ = (θ/2)I.
    fn lq_model(&self, lm: &LoadedModel) -> Result<LqModelF64, CliError> {
        let s = &self.settings;
        let mut model = lm.lq_model(s.steps, s.horizon)?;
        let d = model.noise_dim();
        if let Some(theta) = s.theta {
            model = model.with_gamma(GammaMatrix::unchecked(DMatrix::identity(d, d) * (theta / 2.0)));
        } else if let Some(g) = s.gamma_override(d)? {
            model = model.with_gamma(GammaMatrix::unchecked(g));
        }
        model.validate().into_result()?;
        Ok(model)
    }

    /// Factor model with overrides applied; `--theta` means Γ = (θ/4)I.
    fn factor_model(&self, lm: &LoadedModel) -> Result<FactorMarketModelF64, CliError> {
        let s = &self.settings;
        let mut model = lm.factor_model(s.steps, s.horizon)?;
        let d = model.noise_dim();
        if let Some(theta) = s.theta {
            model = model.with_gamma(GammaMatrix::unchecked(DMatrix::identity(d, d) * (theta / 4.0)));
        } else if let Some(g) = s.gamma_override(d)? {
            model = model.with_gamma(GammaMatrix::unchecked(g));
        }
        model.validate().into_result()?;
        Ok(model)
    }

    fn lattice_grid(&self) -> Result<TimeGridF64, CliError> {
        let s = &self.settings;
        Ok(TimeGridF64::new(s.horizon.unwrap_or(1.0), s.steps.unwrap_or(DEFAULT_LATTICE_STEPS))?)
    }

    fn payoff(&self) -> Result<PayoffChoice, CliError> {
        PayoffChoice::resolve(self.settings.payoff.as_deref(), &self.settings.params)
    }

    fn sim_options(&self, default_paths: usize) -> SimulationOptions {
        SimulationOptions::new(self.settings.paths.unwrap_or(default_paths), self.settings.seed())
    }
}

pub fn dispatch(ctx: &Context) -> Result<Outcome, CliError> {
    match ctx.command {
        Command::Riccati => run_riccati(ctx),
        Command::Lq => run_lq(ctx),
        Command::LqSim => run_lq_sim(ctx),
        Command::Bsde => run_bsde(ctx),
        Command::Criterion => run_criterion(ctx),
        Command::Taylor => run_taylor(ctx),
        Command::Vardecomp => run_vardecomp(ctx),
        Command::Portfolio => run_portfolio(ctx),
        Command::PortfolioSim => run_portfolio_sim(ctx),
        Command::VerifySmp => run_verify_smp(ctx),
        Command::Acceptance => crate::acceptance::run_command(ctx),
    }
}

fn matrix_path_rows(grid: &TimeGridF64, from: usize, values: &[&DMatrix<f64>]) -> Vec<Vec<String>> {
    (from..grid.len())
        .map(|i| {
            let mut row = vec![num(grid.time(i))];
            row.extend(matrix_entries(values[i]).into_iter().map(num));
            row
        })
        .collect()
}

fn run_riccati(ctx: &Context) -> Result<Outcome, CliError> {
    let lm = ctx.model()?;
    let model = ctx.lq_model(&lm)?;
    let ric = riccati::solve_riccati_lq(&model)?;
    let w = ctx.writer(Some(&model.grid), Some(&lm), json!({}))?;
    let n = model.state_dim();
    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("p", n, n));
    let values: Vec<&DMatrix<f64>> = ric.p.values().iter().collect();
    w.write_csv("riccati.csv", "riccati", &header, matrix_path_rows(&model.grid, ric.valid_from, &values))?;

    if let Err(e) = ric.ensure_complete() {
        let (i, norm) = ric.blowup_at.expect("blow-up recorded");
        w.write_json(
            "result.json",
            &json!({
                "status": "blowup",
                "message": e.to_string(),
                "blowup_time": model.grid.time(i),
                "blowup_norm": norm,
                "threshold": ric.threshold,
                "valid_from_time": model.grid.time(ric.valid_from),
                "wellposedness": ric.wellposedness,
            }),
        )?;
        eprintln!("{e}");
        return Ok(Outcome::NumericalFailure);
    }
    let bounds = riccati::riccati_bounds_check(&model, &ric)?;
    let comparison = riccati::solve_comparison_ode(&model)?;
    let outcome = if bounds.applicable && !bounds.holds() { Outcome::ValidationFailure } else { Outcome::Success };
    w.write_json(
        "result.json",
        &json!({
            "status": "ok",
            "p0": matrix_rows(ric.initial()),
            "comparison_p0": matrix_rows(comparison.initial()),
            "max_norm": ric.max_norm,
            "threshold": ric.threshold,
            "max_asymmetry": ric.max_asymmetry(),
            "wellposedness": ric.wellposedness,
            "bounds": bounds,
        }),
    )?;
    Ok(outcome)
}

fn run_lq(ctx: &Context) -> Result<Outcome, CliError> {
    let lm = ctx.model()?;
    let model = ctx.lq_model(&lm)?;
    let sol = lq::solve_lq(&model)?;
    let w = ctx.writer(Some(&model.grid), Some(&lm), json!({}))?;
    let (k, n) = (model.control_dim(), model.state_dim());
    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("k", k, n));
    let gains: Vec<&DMatrix<f64>> = sol.gain.values().iter().collect();
    w.write_csv("gain.csv", "lq-gain", &header, matrix_path_rows(&model.grid, 0, &gains))?;
    let outcome = match &sol.bounds {
        Some(b) if !b.holds() => Outcome::ValidationFailure,
        _ => Outcome::Success,
    };
    w.write_json(
        "result.json",
        &json!({
            "optimal_value": sol.optimal_value,
            "quadratic_part": sol.quadratic_part,
            "trace_part": sol.trace_part,
            "risk_neutral_value": lq::risk_neutral_value(&model)?,
            "p0": matrix_rows(sol.riccati.initial()),
            "gain0": matrix_rows(sol.gain.first()),
            "wellposedness": sol.wellposedness,
            "bounds": sol.bounds,
        }),
    )?;
    Ok(outcome)
}

fn run_lq_sim(ctx: &Context) -> Result<Outcome, CliError> {
    let lm = ctx.model()?;
    let model = ctx.lq_model(&lm)?;
    let opts = ctx.sim_options(DEFAULT_SIM_PATHS);
    let config = json!({ "n_paths": opts.n_paths, "gain_shifts": DEFAULT_GAIN_SHIFTS, "recorded_paths": LQ_SIM_RECORD });
    let w = ctx.writer(Some(&model.grid), Some(&lm), config)?;

    let sol = lq::solve_lq(&model)?;
    let bundle = sde::simulate_lq_with_gain(&model, &sol.gain, opts.recording(LQ_SIM_RECORD.min(opts.n_paths)))?;
    write_recorded_lq_paths(&w, &model, &bundle)?;
    let costs: Vec<f64> = bundle.total_costs();
    let (mean, se) = mean_and_stderr(&costs);

    if model.gamma.scalar_value(1e-12).is_none() {
        // no closed form to compare against for a non-scalar Γ
        w.write_json(
            "result.json",
            &json!({
                "status": "not_applicable",
                "reason": "Monte Carlo validation needs Gamma = (theta/2) I",
                "optimal_value": sol.optimal_value,
                "mean_cost": mean,
                "mean_cost_stderr": se,
            }),
        )?;
        return Ok(Outcome::Success);
    }
    let shifts = DEFAULT_GAIN_SHIFTS;
    let v = lq::validate_symmetric_case(&model, opts, &shifts)?;
    let rows = v.perturbations.iter().map(|p| {
        vec![num(p.shift), num(p.estimate.estimate), num(p.estimate.stderr), p.not_better.to_string()]
    });
    let header = ["shift", "estimate", "stderr", "not_better"].map(String::from);
    w.write_csv("perturbations.csv", "lq-perturbations", &header, rows)?;
    let outcome = match v.status {
        ValidationStatus::Inconclusive => Outcome::Inconclusive,
        ValidationStatus::Fail => Outcome::ValidationFailure,
        ValidationStatus::Pass if v.passed() => Outcome::Success,
        ValidationStatus::Pass => Outcome::ValidationFailure,
    };
    w.write_json(
        "result.json",
        &json!({
            "status": v.status,
            "min_paths_for_decision": lq::MIN_VALIDATION_PATHS,
            "z_threshold": lq::Z_THRESHOLD,
            "validation": v,
            "mean_cost": mean,
            "mean_cost_stderr": se,
        }),
    )?;
    Ok(outcome)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn write_recorded_lq_paths(w: &ArtifactWriter, model: &LqModelF64, bundle: &sde::PathBundle<f64>) -> Result<(), CliError> {
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend(vector_columns("x", model.state_dim()));
    header.extend(vector_columns("u", model.control_dim()));
    let mut rows = Vec::new();
    for rec in &bundle.recorded {
        for (i, (x, u)) in rec.states.iter().zip(&rec.controls).enumerate() {
            let mut row = vec![rec.index.to_string(), num(model.grid.time(i))];
            row.extend(x.iter().map(|v| num(*v)));
            row.extend(u.iter().map(|v| num(*v)));
            rows.push(row);
        }
    }
    w.write_csv("paths.csv", "lq-paths", &header, rows)?;
    Ok(())
}

fn step_counts(finest: usize, levels: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..levels.max(1)).rev().map(|k| finest >> k).filter(|&n| n > 0).collect();
    out.dedup();
    out
}

fn gamma_pair(s: &Settings, default: (f64, f64)) -> (f64, f64) {
    (s.gamma1.unwrap_or(default.0), s.gamma2.unwrap_or(default.1))
}

fn run_bsde(ctx: &Context) -> Result<Outcome, CliError> {
    let s = &ctx.settings;
    let payoff = ctx.payoff()?;
    let xi = payoff.payoff();
    let grid = ctx.lattice_grid()?;
    let (g1, g2) = gamma_pair(s, (0.25, 0.25));
    let counts = step_counts(grid.steps(), s.levels.unwrap_or(DEFAULT_LEVELS));
    let exact = payoff.exact_value(g1, g2, grid.horizon());
    let config = json!({ "payoff": &payoff, "gamma": [g1, g2], "step_counts": &counts });
    let w = ctx.writer(Some(&grid), None, config)?;
    let table = lattice::convergence_probe(&xi, g1, g2, grid.horizon(), &counts, exact)?;
    let finest = lattice::lattice_solve(&xi, g1, g2, &grid)?;
    let header = ["steps", "y0", "error", "increment"].map(String::from);
    let rows = table.rows.iter().map(|r| {
        vec![r.steps.to_string(), num(r.y0), num(r.error), r.increment.map(num).unwrap_or_default()]
    });
    w.write_csv("convergence.csv", "bsde-convergence", &header, rows)?;
    w.write_json(
        "result.json",
        &json!({
            "payoff": xi.name(),
            "y0": finest.y0,
            "z0": [finest.z1_0, finest.z2_0],
            "exact": exact,
            "max_driver_increment": finest.max_driver_increment,
            "stability_warning": finest.stability_warning(),
            "within_wellposedness_regime": finest.within_regime,
            "convergence": table,
        }),
    )?;
    Ok(Outcome::Success)
}

fn run_criterion(ctx: &Context) -> Result<Outcome, CliError> {
    let s = &ctx.settings;
    let payoff = ctx.payoff()?;
    let grid = ctx.lattice_grid()?;
    let direction = gamma_pair(s, (1.0, 1.0));
    let scales = s.scales.clone().unwrap_or_else(|| DEFAULT_SCALES.to_vec());
    let config = json!({ "payoff": &payoff, "direction": [direction.0, direction.1], "scales": &scales });
    let w = ctx.writer(Some(&grid), None, config)?;
    let report = criterion::mean_variance_check(&payoff.payoff(), direction, &scales, &grid)?;
    let header = ["h", "criterion", "prediction", "remainder", "ratio"].map(String::from);
    let rows = report.remainders.iter().map(|r| {
        vec![num(r.h), num(r.criterion), num(r.prediction), num(r.remainder), r.ratio.map(num).unwrap_or_default()]
    });
    w.write_csv("remainders.csv", "criterion-remainders", &header, rows)?;
    w.write_json("result.json", &report)?;
    Ok(Outcome::Success)
}

fn run_taylor(ctx: &Context) -> Result<Outcome, CliError> {
    let s = &ctx.settings;
    let payoff = ctx.payoff()?;
    let xi = payoff.payoff();
    let grid = ctx.lattice_grid()?;
    let (g1, g2) = gamma_pair(s, (0.05, 0.05));
    let config = json!({ "payoff": &payoff, "gamma": [g1, g2] });
    let w = ctx.writer(Some(&grid), None, config)?;
    let t = criterion::taylor_terms(&xi, &grid)?;
    let value = lattice::lattice_solve(&xi, g1, g2, &grid)?.y0;
    let prediction = t.mean + g1 * t.d1 + g2 * t.d2;
    w.write_json(
        "result.json",
        &json!({
            "mean": t.mean,
            "d1": t.d1,
            "d2": t.d2,
            "gamma": [g1, g2],
            "criterion": value,
            "first_order_prediction": prediction,
            "remainder": value - prediction,
        }),
    )?;
    Ok(Outcome::Success)
}

fn run_vardecomp(ctx: &Context) -> Result<Outcome, CliError> {
    let payoff = ctx.payoff()?;
    let xi = payoff.payoff();
    let grid = ctx.lattice_grid()?;
    let config = json!({ "payoff": &payoff, "axiom_tolerance": AXIOM_TOLERANCE });
    let w = ctx.writer(Some(&grid), None, config)?;
    let d = criterion::variance_decomposition(&xi, &grid)?;
    let mut family: Vec<Payoff<f64>> = standard_axiom_family();
    family.push(xi);
    let axioms = criterion::check_axioms(&family, &grid, AXIOM_TOLERANCE)?;
    let header = ["axiom", "payoff", "error", "passed", "detail"].map(String::from);
    let rows = axioms.checks.iter().map(|c| {
        vec![c.axiom.to_string(), c.payoff.clone(), num(c.error), c.passed.to_string(), c.detail.clone()]
    });
    w.write_csv("axioms.csv", "vardecomp-axioms", &header, rows)?;
    let passed = axioms.all_passed();
    w.write_json("result.json", &json!({ "decomposition": d, "axioms_passed": passed, "axioms": axioms }))?;
    Ok(if passed { Outcome::Success } else { Outcome::ValidationFailure })
}

fn run_portfolio(ctx: &Context) -> Result<Outcome, CliError> {
    let lm = ctx.model()?;
    let model = ctx.factor_model(&lm)?;
    let sol = portfolio::solve_portfolio(&model)?;
    let w = ctx.writer(Some(&model.grid), Some(&lm), json!({}))?;
    let (m, n) = (model.assets(), model.factors());
    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("pi", n, n));
    header.extend(vector_columns("phi", n));
    header.push("kappa".into());
    header.extend(matrix_columns("slope", m, n));
    header.extend(vector_columns("intercept", m));
    let rows = (0..model.grid.len()).map(|i| {
        let mut row = vec![num(model.grid.time(i))];
        row.extend(matrix_entries(sol.pi.at(i)).into_iter().map(num));
        row.extend(sol.phi.at(i).iter().map(|v| num(*v)));
        row.push(num(*sol.kappa.at(i)));
        row.extend(matrix_entries(&sol.strategy.slopes[i]).into_iter().map(num));
        row.extend(sol.strategy.intercepts[i].iter().map(|v| num(*v)));
        row
    });
    w.write_csv("coefficients.csv", "portfolio-coefficients", &header, rows)?;
    let residuals = match model.gamma.scalar_value(1e-12) {
        Some(g) => Some(portfolio::kuroda_nagai_residuals(&model, &sol, 4.0 * g)?),
        None => None,
    };
    let u0 = sol.strategy.eval(0, &model.x0);
    w.write_json(
        "result.json",
        &json!({
            "optimal_growth": sol.optimal_growth,
            "pi0": matrix_rows(sol.pi.initial()),
            "phi0": sol.phi.first().iter().collect::<Vec<_>>(),
            "kappa0": sol.kappa.first(),
            "u0": u0.iter().collect::<Vec<_>>(),
            "schur_min_eigenvalue": sol.coefficients.schur_min_eigenvalue,
            "bound_hypothesis": sol.coefficients.schur_positive(),
            "pi_bound": sol.pi_bound,
            "pi_bounds_hold": sol.pi_bounds_hold(),
            "wellposedness": sol.pi.wellposedness,
            "symmetric_residuals": residuals,
        }),
    )?;
    let failed = sol.pi.wellposedness == Wellposedness::Verified && !sol.pi_bounds_hold();
    Ok(if failed { Outcome::ValidationFailure } else { Outcome::Success })
}

pub fn reference_strategies() -> Vec<StrategyKind> {
    vec![
        StrategyKind::Optimal,
        StrategyKind::Zero,
        StrategyKind::Scaled { factor: 0.5 },
        StrategyKind::Scaled { factor: 1.5 },
    ]
}

fn run_portfolio_sim(ctx: &Context) -> Result<Outcome, CliError> {
    let lm = ctx.model()?;
    let model = ctx.factor_model(&lm)?;
    let theta = match (ctx.settings.theta, model.gamma.scalar_value(1e-12)) {
        (Some(t), _) => t,
        (None, Some(g)) => 4.0 * g,
        (None, None) => {
            return Err(CliError::Config(
                "portfolio-sim needs Gamma = (theta/4) I; pass --theta or a scalar Gamma".into(),
            ))
        }
    };
    let opts = ctx.sim_options(DEFAULT_SIM_PATHS);
    let kinds = reference_strategies();
    let config = json!({ "theta": theta, "n_paths": opts.n_paths, "strategies": &kinds });
    let w = ctx.writer(Some(&model.grid), Some(&lm), config)?;
    let cmp = portfolio::compare_strategies(&model, &kinds, opts, theta)?;
    let header = ["strategy", "estimate", "stderr", "n_used", "excluded", "top_weight_share", "heavy_tail", "control_bound_exceeded"]
        .map(String::from);
    let rows = cmp.rows.iter().map(|r| {
        let e = &r.estimate;
        vec![
            r.strategy.clone(),
            num(e.estimate),
            num(e.stderr),
            e.n_used.to_string(),
            e.excluded.to_string(),
            num(e.top_weight_share),
            e.heavy_tail.to_string(),
            r.control_bound_exceeded.to_string(),
        ]
    });
    w.write_csv("strategies.csv", "portfolio-strategies", &header, rows)?;
    let z = cmp.rows[0].estimate.z_score(cmp.formula_growth);
    let outcome = if cmp.inconclusive || opts.n_paths < lq::MIN_VALIDATION_PATHS {
        Outcome::Inconclusive
    } else if z.abs() > lq::Z_THRESHOLD || !cmp.optimal_within_top {
        Outcome::ValidationFailure
    } else {
        Outcome::Success
    };
    w.write_json("result.json", &json!({ "formula_z_score": z, "comparison": cmp }))?;
    Ok(outcome)
}

fn run_verify_smp(ctx: &Context) -> Result<Outcome, CliError> {
    let lm = ctx.model()?;
    let model = ctx.lq_model(&lm)?;
    let n_paths = ctx.settings.paths.unwrap_or(DEFAULT_SMP_PATHS);
    let sampling = SmpSampling { seed: ctx.settings.seed(), ..SmpSampling::default() };
    let config = json!({ "n_paths": n_paths, "sampling": sampling });
    let w = ctx.writer(Some(&model.grid), Some(&lm), config)?;
    let sol = lq::solve_lq(&model)?;
    let opts = SimulationOptions::new(n_paths, ctx.settings.seed()).recording(n_paths);
    let bundle = sde::simulate_lq_with_gain(&model, &sol.gain, opts)?;
    let report = smp::check_smp_inequality(&model, &sol.riccati, &bundle, sampling)?;
    let second = smp::second_order_adjoint_report(&model, &sol.riccati)?;
    let residual = smp::adjoint_residual(&model, &sol.riccati.p)?.max_value();
    let header = ["kind", "path", "t", "value"].map(String::from);
    let rows = report
        .gap_violations
        .iter()
        .map(|v| ("gap", v))
        .chain(report.gradient_violations.iter().map(|v| ("gradient", v)))
        .map(|(kind, v)| vec![kind.to_string(), v.path.to_string(), num(v.time), num(v.value)]);
    w.write_csv("violations.csv", "smp-violations", &header, rows)?;
    let passed = report.passed() && (!second.psd_expected || second.psd_holds);
    w.write_json(
        "result.json",
        &json!({ "passed": passed, "smp": report, "second_order": second, "riccati_residual": residual }),
    )?;
    Ok(if passed { Outcome::Success } else { Outcome::ValidationFailure })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_sequence() {
        assert_eq!(step_counts(200, 4), [25, 50, 100, 200]);
        assert_eq!(step_counts(3, 4), [1, 3]);
        assert_eq!(step_counts(10, 0), [10]);
    }
}
