//! The acceptance suite: ten criteria run against the bundled models and
//! independent oracles. Every criterion writes `criterion_NN.json`; the run
//! ends with `summary.csv`. Criterion 10 repeats criteria 1 to 9 on a
//! single worker and compares the two output trees byte for byte.
//!
//! Wall-clock times are printed but never written, so the artifacts of two
//! runs with the same seed are identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use asymrisk::criterion::{self, standard_axiom_family};
use asymrisk::lattice::{self, Payoff};
use asymrisk::linalg::{self, symmetrize};
use asymrisk::lq::{self, ValidationStatus};
use asymrisk::portfolio;
use asymrisk::riccati::{self, Wellposedness};
use asymrisk::sde::{self, SimulationOptions};
use asymrisk::smp::{self, SmpSampling};
use asymrisk::{GammaMatrix, LqModelF64, RandomSource, TimeGridF64};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::commands::{reference_strategies, Context, DEFAULT_GAIN_SHIFTS};
use crate::error::{CliError, Outcome};
use crate::model_file::{bundled, sha256_hex, LoadedModel};
use crate::output::{num, ArtifactWriter, ModelProvenance, Provenance};

/// Workers used for the main run when `--threads` is not given.
pub const DEFAULT_WORKERS: usize = 4;
const RERUN_DIR: &str = ".rerun";

/// Verdict of one criterion as printed by the runner.
#[derive(Debug, Clone)]
pub struct CriterionLine {
    pub id: u8,
    pub name: &'static str,
    /// Numerical verdict, the one recorded in the artifacts.
    pub passed: bool,
    pub summary: String,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
}

impl CriterionLine {
    pub fn within_budget(&self) -> bool {
        self.budget.is_none_or(|b| self.elapsed <= b)
    }

    pub fn ok(&self) -> bool {
        self.passed && self.within_budget()
    }

    pub fn render(&self) -> String {
        let budget = match self.budget {
            Some(b) => format!("{:.2} s of {} s", self.elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.2} s", self.elapsed.as_secs_f64()),
        };
        let verdict = if self.ok() { "PASS" } else { "FAIL" };
        let slow = if self.passed && !self.within_budget() { " [over budget]" } else { "" };
        format!("{verdict} criterion {:>2} {}: {} ({budget}){slow}", self.id, self.name, self.summary)
    }
}

/// What a criterion function reports: numerical verdict, a one-line
/// summary and the full result document.
struct Verdict {
    passed: bool,
    summary: String,
    result: Value,
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget_secs: u64,
    run: fn(&Suite) -> Result<(Verdict, Provenance), CliError>,
}

const CRITERIA: [Criterion; 9] = [
    Criterion { id: 1, name: "scalar Riccati closed form", budget_secs: 1, run: riccati_closed_form },
    Criterion { id: 2, name: "Riccati bounds on random models", budget_secs: 30, run: riccati_bounds_suite },
    Criterion { id: 3, name: "lattice exactness", budget_secs: 10, run: lattice_exactness },
    Criterion { id: 4, name: "mean-variance expansion", budget_secs: 30, run: mean_variance },
    Criterion { id: 5, name: "variance decomposition", budget_secs: 30, run: variance_decomposition },
    Criterion { id: 6, name: "symmetric LQ Monte Carlo", budget_secs: 120, run: symmetric_lq_mc },
    Criterion { id: 7, name: "maximum principle consistency", budget_secs: 60, run: smp_consistency },
    Criterion { id: 8, name: "portfolio closed form and Monte Carlo", budget_secs: 120, run: portfolio_check },
    Criterion { id: 9, name: "symmetric portfolio residuals", budget_secs: 5, run: degeneration_residuals },
];

struct Suite {
    seed: u64,
}

impl Suite {
    fn provenance(&self, id: u8, grid: Option<&TimeGridF64>, model: Option<&LoadedModel>, config: Value) -> Provenance {
        let mut p = Provenance::new("acceptance", self.seed, json!({ "criterion": id, "parameters": config }));
        p.grid = grid.map(|g| g.summary());
        p.model = model.map(|m| ModelProvenance {
            label: m.label.clone(),
            sha256: m.sha256.clone(),
            source: m.source.clone(),
        });
        p
    }
}

fn bundled_model(name: &str, src: &str) -> Result<LoadedModel, CliError> {
    LoadedModel::parse(&format!("bundled:{name}"), src)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Runs criteria 1 to 9 into `out` on a pool of `workers` threads.
fn run_criteria(out: &Path, seed: u64, workers: usize) -> Result<Vec<CriterionLine>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let suite = Suite { seed };
    pool.install(|| {
        CRITERIA
            .iter()
            .map(|c| {
                let start = Instant::now();
                let (verdict, prov) = match (c.run)(&suite) {
                    Ok(v) => v,
                    Err(e) => (
                        Verdict { passed: false, summary: format!("error: {e}"), result: json!({ "error": e.to_string() }) },
                        suite.provenance(c.id, None, None, json!({})),
                    ),
                };
                let elapsed = start.elapsed();
                let w = ArtifactWriter::create(out, prov)?;
                w.write_json(
                    &format!("criterion_{:02}.json", c.id),
                    &json!({ "id": c.id, "name": c.name, "passed": verdict.passed, "detail": verdict.result }),
                )?;
                Ok(CriterionLine {
                    id: c.id,
                    name: c.name,
                    passed: verdict.passed,
                    summary: verdict.summary,
                    elapsed,
                    budget: Some(Duration::from_secs(c.budget_secs)),
                })
            })
            .collect()
    })
}

/// Relative path and contents of every file below `root`, skipping `skip`.
fn file_tree(root: &Path, skip: Option<&Path>) -> Result<BTreeMap<String, Vec<u8>>, CliError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if Some(path.as_path()) == skip {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("below root").to_string_lossy().replace('\\', "/");
                let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                out.insert(rel, bytes);
            }
        }
    }
    Ok(out)
}

/// Runs the whole suite into `out`. The main pass uses `workers` threads, the
/// determinism rerun one thread.
pub fn run_acceptance(out: &Path, seed: u64, workers: usize) -> Result<Vec<CriterionLine>, CliError> {
    let rerun: PathBuf = out.join(RERUN_DIR);
    if rerun.is_dir() {
        // left over from an interrupted run
        fs::remove_dir_all(&rerun).map_err(|e| CliError::io(&rerun, e))?;
    }
    let mut lines = run_criteria(out, seed, workers)?;

    let start = Instant::now();
    run_criteria(&rerun, seed, 1)?;
    let first = file_tree(out, Some(&rerun))?;
    let second = file_tree(&rerun, None)?;
    fs::remove_dir_all(&rerun).map_err(|e| CliError::io(&rerun, e))?;
    let first: BTreeMap<_, _> = first.into_iter().filter(|(k, _)| k.starts_with("criterion_")).collect();
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let digests: BTreeMap<&String, String> = first.iter().map(|(k, v)| (k, sha256_hex(v))).collect();
    let passed = differing.is_empty() && first.len() == CRITERIA.len();
    let prov = Suite { seed }.provenance(10, None, None, json!({ "rerun_workers": 1 }));
    let w = ArtifactWriter::create(out, prov)?;
    w.write_json(
        "criterion_10.json",
        &json!({
            "id": 10,
            "name": "determinism",
            "passed": passed,
            "detail": { "files": digests, "differing": differing },
        }),
    )?;
    lines.push(CriterionLine {
        id: 10,
        name: "determinism",
        passed,
        summary: format!("{} files compared against a 1-worker rerun, {} differ", first.len(), differing.len()),
        elapsed: start.elapsed(),
        budget: None,
    });

    let header = ["criterion", "name", "passed"].map(String::from);
    let rows = lines.iter().map(|l| vec![l.id.to_string(), l.name.to_string(), l.passed.to_string()]);
    w.write_csv("summary.csv", "acceptance-summary", &header, rows)?;
    Ok(lines)
}

pub fn run_command(ctx: &Context) -> Result<Outcome, CliError> {
    let s = &ctx.settings;
    let lines = run_acceptance(&s.out_dir(), s.seed(), s.threads.unwrap_or(DEFAULT_WORKERS))?;
    for l in &lines {
        println!("{}", l.render());
    }
    let failed = lines.iter().filter(|l| !l.ok()).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    Ok(if failed == 0 { Outcome::Success } else { Outcome::ValidationFailure })
}

// 1 ---------------------------------------------------------------------

/// `1/P(t) = 1/h + (b²/n − 2γσ²)(T − t)` for the scalar model.
fn scalar_riccati_oracle(b: f64, n: f64, h: f64, gamma: f64, sigma: f64, tau: f64) -> f64 {
    1.0 / (1.0 / h + (b * b / n - 2.0 * gamma * sigma * sigma) * tau)
}

fn riccati_closed_form(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let lm = bundled_model("scalar_lq.toml", bundled::SCALAR_LQ)?;
    let model = lm.lq_model(None, None)?;
    let exact = scalar_riccati_oracle(1.0, 1.0, 1.0, 0.25, 1.0, 1.0);
    let p0 = |steps: usize| -> Result<f64, CliError> {
        let m = lm.lq_model(Some(steps), None)?;
        let sol = riccati::solve_riccati_lq(&m)?;
        sol.ensure_complete()?;
        Ok(sol.initial()[(0, 0)])
    };
    let fine = p0(model.grid.steps())?;
    let err = (fine - exact).abs();
    // at Δt = 1e-3 the error sits at roundoff, so the order is read on coarse grids
    let coarse = [8usize, 16, 32];
    let errors: Vec<f64> = coarse.iter().map(|&n| Ok((p0(n)? - exact).abs())).collect::<Result<_, CliError>>()?;
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let passed = err < 1e-8 && ratios.iter().all(|r| (12.0..=20.0).contains(r));
    let summary = format!(
        "|P(0) - 2/3| = {err:.2e} at N={}; halving ratios {}",
        model.grid.steps(),
        ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
    );
    let result = json!({
        "exact": exact,
        "p0": fine,
        "error": err,
        "tolerance": 1e-8,
        "coarse_steps": coarse,
        "coarse_errors": errors,
        "ratios": ratios,
        "ratio_range": [12.0, 20.0],
    });
    let prov = suite.provenance(1, Some(&model.grid), Some(&lm), json!({ "coarse_steps": coarse }));
    Ok((Verdict { passed, summary, result }, prov))
}

// 2 ---------------------------------------------------------------------

pub const RANDOM_MODELS: usize = 100;
const RANDOM_MODEL_STEPS: usize = 500;

fn normal_matrix(z: &mut asymrisk::random::NormalStream, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * z.next::<f64>())
}

fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(m * m.transpose()))
}

/// A random constant-coefficient model with `n ≤ 3` states, `k = n` controls
/// and `d ∈ {n, n + 1}` noise components, whose Γ is
/// scaled so that `2ΣΓΣᵀ ≤ BN⁻¹Bᵀ` holds with a 10% margin.
pub fn random_wellposed_model(source: RandomSource) -> Result<LqModelF64, CliError> {
    let mut z = source.normals();
    let n = 1 + (z.uniform() * 3.0) as usize % 3;
    // ΣΣᵀ must be nonsingular, so d ≥ n
    let d = n + (z.uniform() * 2.0) as usize % 2;
    let a = normal_matrix(&mut z, n, n, 0.5);
    let mut b = DMatrix::identity(n, n) + normal_matrix(&mut z, n, n, 0.3);
    while b.determinant().abs() < 0.1 {
        b += DMatrix::identity(n, n);
    }
    let sigma = normal_matrix(&mut z, n, d, 0.5);
    let m = gram(&normal_matrix(&mut z, n, n, 0.5));
    let n_cost = DMatrix::identity(n, n) + gram(&normal_matrix(&mut z, n, n, 0.3));
    let h = gram(&normal_matrix(&mut z, n, n, 0.5)) + DMatrix::identity(n, n) * 0.1;
    let g_raw = gram(&normal_matrix(&mut z, d, d, 1.0)) + DMatrix::identity(d, d) * 0.1;
    let x0 = DVector::from_fn(n, |_, _| z.next::<f64>());

    let n_inv = linalg::inverse(&n_cost, "N")?;
    let control = symmetrize(&(&b * n_inv * b.transpose()));
    let noise = symmetrize(&(&sigma * &g_raw * sigma.transpose() * 2.0));
    let top = linalg::max_eigenvalue(&noise);
    let scale = if top > 0.0 { 0.9 * linalg::min_eigenvalue(&control) / top } else { 1.0 };
    let gamma = GammaMatrix::new(symmetrize(&(g_raw * scale)))?;
    Ok(LqModelF64::constant(
        TimeGridF64::new(1.0, RANDOM_MODEL_STEPS)?,
        a,
        b,
        sigma,
        m,
        n_cost,
        h,
        gamma,
        x0,
    ))
}

fn riccati_bounds_suite(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let root = RandomSource::new(suite.seed, 0);
    let mut rows = Vec::with_capacity(RANDOM_MODELS);
    let mut failures = 0usize;
    let mut violations = 0usize;
    for k in 0..RANDOM_MODELS {
        let model = random_wellposed_model(root.substream(k as u64))?;
        let sol = riccati::solve_riccati_lq(&model)?;
        let report = riccati::riccati_bounds_check(&model, &sol)?;
        violations += report.violations.len();
        let ok = sol.wellposedness == Wellposedness::Verified && report.holds();
        failures += usize::from(!ok);
        rows.push(json!({
            "model": k,
            "state_dim": model.state_dim(),
            "noise_dim": model.noise_dim(),
            "applicable": report.applicable,
            "max_norm": report.max_norm,
            "bound": report.bound,
            "min_eigenvalue": report.min_eigenvalue,
            "min_comparison_gap": report.min_comparison_gap,
            "violations": report.violations.len(),
        }));
    }
    let passed = failures == 0;
    let summary = format!("{RANDOM_MODELS} models, {failures} not certified, {violations} bound violations");
    let result = json!({ "models": rows, "failures": failures, "violations": violations });
    let config = json!({ "models": RANDOM_MODELS, "steps": RANDOM_MODEL_STEPS, "horizon": 1.0 });
    Ok((Verdict { passed, summary, result }, suite.provenance(2, None, None, config)))
}

// 3 ---------------------------------------------------------------------

const LATTICE_STEPS: usize = 200;

fn lattice_exactness(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let grid = TimeGridF64::new(1.0, LATTICE_STEPS)?;
    let mut pairs = vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
    let mut u = RandomSource::new(suite.seed, 3).normals();
    pairs.extend((0..16).map(|_| (u.uniform(), u.uniform())));
    let (c, a, b, c_lin) = (1.7, 0.7, -1.3, 0.4);
    let constant = Payoff::constant(c);
    let linear = Payoff::linear(a, b, c_lin);
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for &(g1, g2) in &pairs {
        let yc = lattice::lattice_solve(&constant, g1, g2, &grid)?.y0;
        let yl = lattice::lattice_solve(&linear, g1, g2, &grid)?.y0;
        let exact_l = c_lin + g1 * a * a + g2 * b * b;
        let (ec, el) = (rel_err(yc, c), rel_err(yl, exact_l));
        worst = worst.max(ec).max(el);
        rows.push(json!({ "gamma": [g1, g2], "constant_error": ec, "linear_error": el }));
    }
    let gaussian = lattice::lattice_solve(&Payoff::linear(1.0, 0.0, 0.0), 0.25, 0.25, &grid)?.y0;
    let g_err = (gaussian - 0.25).abs();
    let passed = worst <= 1e-12 && g_err <= 1e-3;
    let summary = format!("worst relative error {worst:.1e} over {} pairs; W1 case error {g_err:.1e}", pairs.len());
    let result = json!({
        "pairs": rows,
        "worst_relative_error": worst,
        "exact_tolerance": 1e-12,
        "gaussian_value": gaussian,
        "gaussian_error": g_err,
        "gaussian_tolerance": 1e-3,
    });
    let config = json!({ "constant": c, "linear": [a, b, c_lin], "random_pairs": 16 });
    Ok((Verdict { passed, summary, result }, suite.provenance(3, Some(&grid), None, config)))
}

// 4 ---------------------------------------------------------------------

fn mean_variance(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let grid = TimeGridF64::new(1.0, LATTICE_STEPS)?;
    let scales = crate::commands::DEFAULT_SCALES;
    let square = criterion::mean_variance_check(&Payoff::quadratic(1.0, 0.0), (1.0, 1.0), &scales, &grid)?;
    let linear = criterion::mean_variance_check(&Payoff::linear(1.0, -0.5, 0.2), (1.0, 1.0), &scales, &grid)?;
    let ratios = square.ratios();
    let lin_max = linear.max_abs_remainder();
    let passed = ratios.len() == 3 && ratios.iter().all(|r| (3.0..=5.0).contains(r)) && lin_max <= 1e-12;
    let summary = format!(
        "W1^2 ratios {}; linear max remainder {lin_max:.1e}",
        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
    );
    let result = json!({ "square": square, "linear": linear, "ratio_range": [3.0, 5.0], "linear_tolerance": 1e-12 });
    let config = json!({ "scales": scales, "direction": [1.0, 1.0] });
    Ok((Verdict { passed, summary, result }, suite.provenance(4, Some(&grid), None, config)))
}

// 5 ---------------------------------------------------------------------

fn variance_decomposition(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let grid = TimeGridF64::new(1.0, LATTICE_STEPS)?;
    // Itô isometry: W1W2 has integrands (W2, W1); sin(W1) has variance (1 − e⁻²)/2
    let cases = [
        (Payoff::product(1.0), [0.5, 0.5]),
        (Payoff::linear(1.0, 1.0, 0.0), [1.0, 1.0]),
        (Payoff::sin_first(), [0.5 * (1.0 - (-2.0f64).exp()), 0.0]),
    ];
    let mut rows = Vec::new();
    let mut worst_oracle = 0.0f64;
    let mut worst_identity = 0.0f64;
    for (xi, oracle) in &cases {
        let d = criterion::variance_decomposition(xi, &grid)?;
        let err = (d.d1 - oracle[0]).abs().max((d.d2 - oracle[1]).abs());
        let identity = d.identity_error / d.lattice_variance.abs().max(1.0);
        worst_oracle = worst_oracle.max(err);
        worst_identity = worst_identity.max(identity);
        rows.push(json!({ "payoff": xi.name(), "oracle": oracle, "oracle_error": err, "decomposition": d }));
    }
    let mut family = standard_axiom_family();
    family.extend(cases.iter().map(|(xi, _)| xi.clone()));
    let axioms = criterion::check_axioms(&family, &grid, crate::commands::AXIOM_TOLERANCE)?;
    let passed = worst_oracle <= 1e-3 && worst_identity <= 1e-12 && axioms.all_passed();
    let summary = format!(
        "oracle error {worst_oracle:.1e}, identity error {worst_identity:.1e}, {} axiom checks {}",
        axioms.checks.len(),
        if axioms.all_passed() { "passed" } else { "with failures" }
    );
    let result = json!({
        "cases": rows,
        "oracle_tolerance": 1e-3,
        "identity_tolerance": 1e-12,
        "axioms": axioms,
    });
    Ok((Verdict { passed, summary, result }, suite.provenance(5, Some(&grid), None, json!({}))))
}

// 6 ---------------------------------------------------------------------

pub const MC_PATHS: usize = 100_000;

fn symmetric_lq_mc(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let lm = bundled_model("scalar_lq.toml", bundled::SCALAR_LQ)?;
    let model = lm.lq_model(None, None)?;
    let opts = SimulationOptions::new(MC_PATHS, suite.seed);
    let v = lq::validate_symmetric_case(&model, opts, &DEFAULT_GAIN_SHIFTS)?;
    let passed = v.passed();
    let worst_margin = v
        .perturbations
        .iter()
        .map(|p| (p.estimate.estimate - v.formula) / p.estimate.stderr)
        .fold(f64::INFINITY, f64::min);
    let summary = format!(
        "formula {:.6}, estimate {:.6} ± {:.1e}, z = {:.2}, status {:?}; perturbations {}/{} not better (min margin {worst_margin:.1} se)",
        v.formula,
        v.estimate.estimate,
        v.estimate.stderr,
        v.z_score,
        v.status,
        v.perturbations.iter().filter(|p| p.not_better).count(),
        v.perturbations.len(),
    );
    let inconclusive = v.status == ValidationStatus::Inconclusive;
    let result = json!({ "validation": v, "inconclusive": inconclusive });
    let config = json!({ "n_paths": MC_PATHS, "gain_shifts": DEFAULT_GAIN_SHIFTS });
    Ok((Verdict { passed, summary, result }, suite.provenance(6, Some(&model.grid), Some(&lm), config)))
}

// 7 ---------------------------------------------------------------------

const SMP_PATHS: usize = 20;

fn smp_consistency(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let lm = bundled_model("scalar_lq.toml", bundled::SCALAR_LQ)?;
    let model = lm.lq_model(None, None)?;
    let sol = lq::solve_lq(&model)?;
    let opts = SimulationOptions::new(SMP_PATHS, suite.seed).recording(SMP_PATHS);
    let bundle = sde::simulate_lq_with_gain(&model, &sol.gain, opts)?;
    let sampling = SmpSampling { seed: suite.seed, ..SmpSampling::default() };
    let report = smp::check_smp_inequality(&model, &sol.riccati, &bundle, sampling)?;
    let passed = report.passed()
        && report.min_gap >= -smp::GAP_TOLERANCE
        && report.max_gradient <= smp::GRADIENT_TOLERANCE;
    let summary = format!(
        "{} points x {} draws: min gap {:.2e}, max |H_u| {:.1e}, {} reduction mismatches",
        report.checked_points, report.draws_per_point, report.min_gap, report.max_gradient, report.reduction_mismatches
    );
    let config = json!({ "n_paths": SMP_PATHS, "sampling": sampling });
    let result = json!({ "smp": report });
    Ok((Verdict { passed, summary, result }, suite.provenance(7, Some(&model.grid), Some(&lm), config)))
}

// 8 ---------------------------------------------------------------------

/// `Θ = Σ(I + 2Γ)Σᵀ`, `ū = Θ⁻¹â` and `g = r + ½âᵀΘ⁻¹â` for a market whose
/// returns do not load on the factor.
fn flat_market_oracle(sigma: &DMatrix<f64>, gamma: &DMatrix<f64>, excess: &DVector<f64>, rate: f64) -> Option<(DVector<f64>, f64)> {
    let d = gamma.nrows();
    let theta = sigma * (DMatrix::identity(d, d) + gamma * 2.0) * sigma.transpose();
    let u = theta.lu().solve(excess)?;
    let growth = rate + 0.5 * excess.dot(&u);
    Some((u, growth))
}

fn portfolio_check(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let flat_lm = bundled_model("flat_market.toml", bundled::FLAT_MARKET)?;
    let flat = flat_lm.factor_model(None, None)?;
    let sol = portfolio::solve_portfolio(&flat)?;
    let rate = *flat.rate.first();
    let excess = flat.excess_intercept(rate);
    let (u_oracle, g_oracle) = flat_market_oracle(&flat.sigma, flat.gamma.matrix(), &excess, rate)
        .ok_or_else(|| CliError::Config("flat market oracle: singular Theta".into()))?;
    let u0 = sol.strategy.eval(0, &flat.x0);
    let u_err = (&u0 - &u_oracle).amax();
    let g_err = (sol.optimal_growth - g_oracle).abs();
    let closed_ok = u_err <= 1e-8 && g_err <= 1e-8;

    let mixed_lm = bundled_model("mixed_market.toml", bundled::MIXED_MARKET)?;
    let mixed = mixed_lm.factor_model(None, None)?;
    let theta = 0.4;
    let opts = SimulationOptions::new(MC_PATHS, suite.seed);
    let cmp = portfolio::compare_strategies(&mixed, &reference_strategies(), opts, theta)?;
    let z = cmp.rows[0].estimate.z_score(cmp.formula_growth);
    let mc_ok = z.abs() <= lq::Z_THRESHOLD && cmp.optimal_within_top && !cmp.inconclusive;

    let summary = format!(
        "u = {} (oracle {}), growth {:.8} (oracle {:.8}); MC z = {z:.2}, optimal within top: {}",
        num(u0[0]),
        num(u_oracle[0]),
        sol.optimal_growth,
        g_oracle,
        cmp.optimal_within_top
    );
    let result = json!({
        "flat": {
            "u0": u0.iter().collect::<Vec<_>>(),
            "u_oracle": u_oracle.iter().collect::<Vec<_>>(),
            "growth": sol.optimal_growth,
            "growth_oracle": g_oracle,
            "u_error": u_err,
            "growth_error": g_err,
            "tolerance": 1e-8,
        },
        "mixed": { "formula_z_score": z, "comparison": cmp },
    });
    let config = json!({
        "flat_model_sha256": flat_lm.sha256,
        "theta": theta,
        "n_paths": MC_PATHS,
        "strategies": reference_strategies(),
    });
    let prov = suite.provenance(8, Some(&mixed.grid), Some(&mixed_lm), config);
    Ok((Verdict { passed: closed_ok && mc_ok, summary, result }, prov))
}

// 9 ---------------------------------------------------------------------

fn degeneration_residuals(suite: &Suite) -> Result<(Verdict, Provenance), CliError> {
    let lm = bundled_model("mixed_market.toml", bundled::MIXED_MARKET)?;
    let model = lm.factor_model(None, None)?;
    let theta = 0.4;
    let sol = portfolio::solve_portfolio(&model)?;
    let r = portfolio::kuroda_nagai_residuals(&model, &sol, theta)?;
    let passed = r.max() < 1e-8;
    let summary = format!("max residual {:.1e} (Pi {:.1e}, phi {:.1e}, kappa {:.1e})", r.max(), r.pi, r.phi, r.kappa);
    let result = json!({ "residuals": r, "tolerance": 1e-8 });
    Ok((Verdict { passed, summary, result }, suite.provenance(9, Some(&model.grid), Some(&lm), json!({ "theta": theta }))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_scalar_example() {
        assert!((scalar_riccati_oracle(1.0, 1.0, 1.0, 0.25, 1.0, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        let (u, g) = flat_market_oracle(
            &DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            &DMatrix::from_diagonal(&nalgebra::dvector![0.1, 0.3]),
            &nalgebra::dvector![0.04],
            0.02,
        )
        .unwrap();
        assert!((u[0] - 0.04 / 0.048).abs() < 1e-14);
        assert!((g - (0.02 + 0.5 * 0.04 * 0.04 / 0.048)).abs() < 1e-15);
    }

    #[test]
    fn random_models_are_wellposed() {
        let root = RandomSource::new(7, 0);
        for k in 0..20 {
            let m = random_wellposed_model(root.substream(k)).unwrap();
            let ind = asymrisk::model::riccati_wellposedness_indicator(&m).unwrap();
            assert!(ind.max_value() < 0.0, "model {k}");
            assert!(m.validate().is_valid(), "model {k}");
            assert_eq!(m.control_dim(), m.state_dim());
        }
    }
}
