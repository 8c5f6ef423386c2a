//! Model coefficient bundles and their validation.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{self, DEFINITENESS_TOL};
use crate::path::{MatrixPath, ScalarPath};
use crate::scalar::Real;

/// Symmetric positive-definite risk-sensitivity matrix Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix<T: Real> {
    matrix: DMatrix<T>,
    min_eig: T,
    max_eig: T,
}

impl<T: Real> GammaMatrix<T> {
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        let g = Self::unchecked(matrix);
        if !g.is_symmetric() {
            return Err(Error::Precondition("Gamma is not symmetric".into()));
        }
        if !g.is_positive_definite() {
            return Err(Error::Precondition(format!(
                "Gamma is not positive definite (min eigenvalue {})",
                g.min_eig
            )));
        }
        Ok(g)
    }

    /// Stores `matrix` without checking definiteness; [`validate_lq_model`]
    /// reports the problem instead.
    pub fn unchecked(matrix: DMatrix<T>) -> Self {
        let (min_eig, max_eig) = linalg::eigen_extremes(&matrix);
        Self { matrix, min_eig, max_eig }
    }

    pub fn scalar(dim: usize, s: T) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * s)
    }

    pub fn diagonal(entries: &[T]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    #[inline]
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn gamma_min(&self) -> T {
        self.min_eig
    }

    pub fn gamma_max(&self) -> T {
        self.max_eig
    }

    pub fn is_symmetric(&self) -> bool {
        self.matrix.is_square()
            && linalg::asymmetry(&self.matrix) <= T::lit(DEFINITENESS_TOL)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.matrix.is_square() && self.min_eig > T::lit(DEFINITENESS_TOL)
    }

    /// `Some(s)` when Γ equals `s·I` entrywise within `tol`.
    pub fn scalar_value(&self, tol: T) -> Option<T> {
        let d = self.dim();
        if d == 0 {
            return None;
        }
        let s = self.matrix[(0, 0)];
        let scaled = DMatrix::<T>::identity(d, d) * s;
        let dev = (&self.matrix - scaled).iter().fold(T::zero(), |a, &x| a.max(x.abs()));
        (dev <= tol).then_some(s)
    }
}

/// Coefficients of the asymmetric LQ problem
/// `dX = (AX + Bu)dt + Σ dW`, running cost `½XᵀMX + ½uᵀNu`, terminal `½XᵀHX`.
#[derive(Debug, Clone)]
pub struct LqModel<T: Real> {
    pub a: MatrixPath<T>,
    pub b: MatrixPath<T>,
    pub sigma: MatrixPath<T>,
    pub m: MatrixPath<T>,
    pub n: MatrixPath<T>,
    pub h: DMatrix<T>,
    pub gamma: GammaMatrix<T>,
    pub x0: DVector<T>,
    pub grid: TimeGrid<T>,
}

impl<T: Real> LqModel<T> {
    /// Model with time-constant coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        grid: TimeGrid<T>,
        a: DMatrix<T>,
        b: DMatrix<T>,
        sigma: DMatrix<T>,
        m: DMatrix<T>,
        n: DMatrix<T>,
        h: DMatrix<T>,
        gamma: GammaMatrix<T>,
        x0: DVector<T>,
    ) -> Self {
        Self {
            a: MatrixPath::constant(grid, a),
            b: MatrixPath::constant(grid, b),
            sigma: MatrixPath::constant(grid, sigma),
            m: MatrixPath::constant(grid, m),
            n: MatrixPath::constant(grid, n),
            h,
            gamma,
            x0,
            grid,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.n.first().nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.gamma.dim()
    }

    /// Same model on another grid; coefficient paths are resampled by interpolation.
    pub fn on_grid(&self, grid: TimeGrid<T>) -> Self {
        let re = |p: &MatrixPath<T>| MatrixPath::from_fn(grid, |t| p.eval(t));
        Self {
            a: re(&self.a),
            b: re(&self.b),
            sigma: re(&self.sigma),
            m: re(&self.m),
            n: re(&self.n),
            h: self.h.clone(),
            gamma: self.gamma.clone(),
            x0: self.x0.clone(),
            grid,
        }
    }

    pub fn with_gamma(&self, gamma: GammaMatrix<T>) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn with_x0(&self, x0: DVector<T>) -> Self {
        Self { x0, ..self.clone() }
    }

    /// `sup_t ‖A(t)‖_F`.
    pub fn sup_norm_a(&self) -> T {
        sup_norm(&self.a)
    }

    pub fn sup_norm_m(&self) -> T {
        sup_norm(&self.m)
    }

    /// `e^{2‖A‖∞T}(‖H‖ + ‖M‖∞T)`, the a-priori bound on the Riccati solution.
    pub fn riccati_bound(&self) -> T {
        let t = self.grid.horizon();
        (T::lit(2.0) * self.sup_norm_a() * t).exp() * (self.h.norm() + self.sup_norm_m() * t)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_lq_model(self)
    }
}

pub(crate) fn sup_norm<T: Real>(p: &MatrixPath<T>) -> T {
    p.values().iter().fold(T::zero(), |a, m| a.max(m.norm()))
}

/// Coefficients of the factor-driven market: factor `dX = (b + BX)dt + Λ dW`,
/// excess returns `a + AX − r𝟏`, asset volatility `Σ`.
#[derive(Debug, Clone)]
pub struct FactorMarketModel<T: Real> {
    /// Excess-return intercept (m).
    pub a: DVector<T>,
    /// Factor drift intercept (n).
    pub b: DVector<T>,
    /// Factor loading A (m×n).
    pub loading: DMatrix<T>,
    /// Factor mean reversion B (n×n).
    pub mean_reversion: DMatrix<T>,
    /// Factor volatility Λ (n×d).
    pub lambda: DMatrix<T>,
    /// Asset volatility Σ (m×d).
    pub sigma: DMatrix<T>,
    /// Risk-free rate r(t).
    pub rate: ScalarPath<T>,
    pub gamma: GammaMatrix<T>,
    pub x0: DVector<T>,
    pub grid: TimeGrid<T>,
}

impl<T: Real> FactorMarketModel<T> {
    pub fn assets(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn factors(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn with_gamma(&self, gamma: GammaMatrix<T>) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn on_grid(&self, grid: TimeGrid<T>) -> Self {
        Self {
            rate: ScalarPath::from_fn(grid, |t| self.rate.eval(t)),
            grid,
            ..self.clone()
        }
    }

    /// `a − r(t)𝟏`.
    pub fn excess_intercept(&self, r: T) -> DVector<T> {
        self.a.map(|ai| ai - r)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_factor_model(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Dimension,
    GammaNotSymmetric,
    GammaNotPositiveDefinite,
    TerminalNotPsd,
    RunningStateCostNotPsd,
    ControlCostNotUniformlyPd,
    NoiseCovarianceNotPd,
    NegativeRate,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    /// Offending grid indices (empty for time-independent quantities).
    pub time_indices: Vec<usize>,
    pub message: String,
}

/// Outcome of model validation; an empty issue list means the model is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    /// Uniform lower bound δ with `N(t) ≥ δI` (minimum eigenvalue over the grid minus tolerance).
    pub delta: Option<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self))
        }
    }

    fn push(&mut self, kind: IssueKind, time_indices: Vec<usize>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            kind,
            time_indices,
            message: message.into(),
        });
    }

    fn push_timed(&mut self, kind: IssueKind, bad: Vec<usize>, total: usize, what: &str) {
        if bad.is_empty() {
            return;
        }
        let when = if bad.len() == total {
            "at all t".to_string()
        } else {
            let shown: Vec<String> = bad.iter().take(8).map(|i| i.to_string()).collect();
            let more = if bad.len() > 8 { ", ..." } else { "" };
            format!("at time indices [{}{}]", shown.join(", "), more)
        };
        self.push(kind, bad, format!("{what} fails {when}"));
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "valid");
        }
        let msgs: Vec<&str> = self.issues.iter().map(|i| i.message.as_str()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

fn check_shape<T: Real>(
    report: &mut ValidationReport,
    name: &str,
    m: &DMatrix<T>,
    rows: usize,
    cols: usize,
) -> bool {
    if m.shape() != (rows, cols) {
        report.push(
            IssueKind::Dimension,
            vec![],
            format!("{name} has shape {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols()),
        );
        return false;
    }
    true
}

fn check_path_shape<T: Real>(
    report: &mut ValidationReport,
    name: &str,
    p: &MatrixPath<T>,
    rows: usize,
    cols: usize,
) -> bool {
    if p.grid().steps() != p.values().len() - 1 {
        report.push(IssueKind::Dimension, vec![], format!("{name} path length mismatch"));
        return false;
    }
    if p.values().iter().all(|m| m.shape() == (rows, cols)) {
        return true;
    }
    let m = p.first();
    check_shape(report, name, m, rows, cols);
    if m.shape() == (rows, cols) {
        report.push(IssueKind::Dimension, vec![], format!("{name} changes shape over time"));
    }
    false
}

fn check_gamma<T: Real>(report: &mut ValidationReport, gamma: &GammaMatrix<T>) {
    if !gamma.matrix().is_square() {
        report.push(IssueKind::Dimension, vec![], "Gamma is not square");
        return;
    }
    if !gamma.is_symmetric() {
        report.push(IssueKind::GammaNotSymmetric, vec![], "Gamma not symmetric");
    }
    if !gamma.is_positive_definite() {
        report.push(
            IssueKind::GammaNotPositiveDefinite,
            vec![],
            format!("Gamma not positive definite (min eigenvalue {})", gamma.gamma_min()),
        );
    }
}

/// Checks `H ≥ 0`, `M(t) ≥ 0`, `N(t) ≥ δI`, `ΣΣᵀ(t) > 0` and `Γ > 0`, plus shapes.
pub fn validate_lq_model<T: Real>(model: &LqModel<T>) -> ValidationReport {
    let mut r = ValidationReport::default();
    let tol = T::lit(DEFINITENESS_TOL);
    let n = model.h.nrows();
    let k = model.control_dim();
    let d = model.gamma.dim();
    let nodes = model.grid.len();

    let mut shapes_ok = check_shape(&mut r, "H", &model.h, n, n);
    shapes_ok &= check_path_shape(&mut r, "A", &model.a, n, n);
    shapes_ok &= check_path_shape(&mut r, "B", &model.b, n, k);
    shapes_ok &= check_path_shape(&mut r, "Sigma", &model.sigma, n, d);
    shapes_ok &= check_path_shape(&mut r, "M", &model.m, n, n);
    shapes_ok &= check_path_shape(&mut r, "N", &model.n, k, k);
    if model.x0.len() != n {
        r.push(IssueKind::Dimension, vec![], format!("x0 has length {}, expected {n}", model.x0.len()));
        shapes_ok = false;
    }
    for (name, p) in [("A", &model.a), ("B", &model.b), ("Sigma", &model.sigma), ("M", &model.m), ("N", &model.n)] {
        if p.grid().steps() != model.grid.steps() {
            r.push(IssueKind::Dimension, vec![], format!("{name} is sampled on a different grid"));
            shapes_ok = false;
        }
    }
    check_gamma(&mut r, &model.gamma);
    if !shapes_ok {
        return r;
    }

    let finite = |m: &DMatrix<T>| m.iter().all(|x| x.finite());
    let nonfinite: Vec<usize> = (0..nodes)
        .filter(|&i| {
            ![model.a.at(i), model.b.at(i), model.sigma.at(i), model.m.at(i), model.n.at(i)]
                .iter()
                .all(|m| finite(m))
        })
        .collect();
    if !nonfinite.is_empty() || !finite(&model.h) || !model.x0.iter().all(|x| x.finite()) {
        r.push(IssueKind::NonFinite, nonfinite, "non-finite coefficient");
        return r;
    }

    if !linalg::is_psd(&model.h, tol) || linalg::asymmetry(&model.h) > tol {
        r.push(IssueKind::TerminalNotPsd, vec![], "H >= 0 fails");
    }
    let bad_m: Vec<usize> = (0..nodes)
        .filter(|&i| !linalg::is_psd(model.m.at(i), tol) || linalg::asymmetry(model.m.at(i)) > tol)
        .collect();
    r.push_timed(IssueKind::RunningStateCostNotPsd, bad_m, nodes, "M(t) >= 0");

    let n_mins: Vec<T> = model.n.values().iter().map(linalg::min_eigenvalue).collect();
    let bad_n: Vec<usize> = n_mins
        .iter()
        .enumerate()
        .filter(|(i, &v)| !(v > tol) || linalg::asymmetry(model.n.at(*i)) > tol)
        .map(|(i, _)| i)
        .collect();
    let delta = n_mins.iter().copied().fold(T::lit(f64::INFINITY), |a, b| a.min(b)) - tol;
    if bad_n.is_empty() {
        r.delta = Some(delta.as_f64());
    }
    r.push_timed(IssueKind::ControlCostNotUniformlyPd, bad_n, nodes, "N(t) >= delta*I");

    let bad_s: Vec<usize> = (0..nodes)
        .filter(|&i| {
            let s = model.sigma.at(i);
            !linalg::is_pd(&(s * s.transpose()), tol)
        })
        .collect();
    r.push_timed(IssueKind::NoiseCovarianceNotPd, bad_s, nodes, "Sigma*Sigma^T > 0");
    r
}

/// Checks shapes, `ΣΣᵀ > 0`, `r(t) ≥ 0` and `Γ > 0`.
pub fn validate_factor_model<T: Real>(model: &FactorMarketModel<T>) -> ValidationReport {
    let mut r = ValidationReport::default();
    let tol = T::lit(DEFINITENESS_TOL);
    let m = model.a.len();
    let n = model.b.len();
    let d = model.gamma.dim();
    let mut ok = check_shape(&mut r, "A (loading)", &model.loading, m, n);
    ok &= check_shape(&mut r, "B (mean reversion)", &model.mean_reversion, n, n);
    ok &= check_shape(&mut r, "Lambda", &model.lambda, n, d);
    ok &= check_shape(&mut r, "Sigma", &model.sigma, m, d);
    if model.x0.len() != n {
        r.push(IssueKind::Dimension, vec![], format!("x0 has length {}, expected {n}", model.x0.len()));
        ok = false;
    }
    if model.rate.grid().steps() != model.grid.steps() {
        r.push(IssueKind::Dimension, vec![], "rate is sampled on a different grid");
        ok = false;
    }
    check_gamma(&mut r, &model.gamma);
    if !ok {
        return r;
    }
    let all_finite = [&model.loading, &model.mean_reversion, &model.lambda, &model.sigma]
        .iter()
        .all(|x| x.iter().all(|v| v.finite()))
        && model.a.iter().chain(model.b.iter()).chain(model.x0.iter()).all(|v| v.finite());
    if !all_finite {
        r.push(IssueKind::NonFinite, vec![], "non-finite coefficient");
        return r;
    }
    if !linalg::is_pd(&(&model.sigma * model.sigma.transpose()), tol) {
        r.push(IssueKind::NoiseCovarianceNotPd, vec![], "Sigma*Sigma^T > 0 fails");
    }
    let bad_r: Vec<usize> = model
        .rate
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < T::zero())
        .map(|(i, _)| i)
        .collect();
    r.push_timed(IssueKind::NegativeRate, bad_r, model.grid.len(), "r(t) >= 0");
    r
}

/// Largest eigenvalue of `2ΣΓΣᵀ − BN⁻¹Bᵀ` at every grid time. An all-negative
/// path certifies the sufficient condition for a global, bounded Riccati solution.
pub fn riccati_wellposedness_indicator<T: Real>(model: &LqModel<T>) -> Result<ScalarPath<T>> {
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(model.grid.len());
    for i in 0..model.grid.len() {
        let s = model.sigma.at(i);
        let b = model.b.at(i);
        let n_inv = linalg::inverse(model.n.at(i), "N(t)")?;
        let g = s * model.gamma.matrix() * s.transpose() * two - b * n_inv * b.transpose();
        out.push(linalg::max_eigenvalue(&g));
    }
    Ok(ScalarPath::from_raw(model.grid, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dmat;

    fn scalar_model(n_cost: f64) -> LqModel<f64> {
        let g = TimeGrid::new(1.0, 10).unwrap();
        LqModel::constant(
            g,
            dmat(1, 1, &[0.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[0.0]),
            dmat(1, 1, &[n_cost]),
            dmat(1, 1, &[1.0]),
            GammaMatrix::scalar(1, 0.25).unwrap(),
            DVector::from_element(1, 1.0),
        )
    }

    #[test]
    fn valid_scalar_model_has_empty_report() {
        let r = validate_lq_model(&scalar_model(1.0));
        assert!(r.is_valid(), "{r}");
        assert!((r.delta.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_control_cost_flagged_at_all_times() {
        let r = validate_lq_model(&scalar_model(0.0));
        assert!(r.has(IssueKind::ControlCostNotUniformlyPd));
        let issue = &r.issues[0];
        assert_eq!(issue.time_indices.len(), 11);
        assert!(issue.message.contains("fails at all t"), "{}", issue.message);
    }

    #[test]
    fn indefinite_gamma_flagged() {
        let mut model = scalar_model(1.0);
        model.sigma = MatrixPath::constant(model.grid, dmat(1, 2, &[1.0, 0.0]));
        model.gamma = GammaMatrix::unchecked(dmat(2, 2, &[0.1, 0.0, 0.0, -0.1]));
        let r = validate_lq_model(&model);
        assert!(r.has(IssueKind::GammaNotPositiveDefinite));
        assert!(r.issues.iter().any(|i| i.message.contains("Gamma not positive definite")));
        assert!(GammaMatrix::new(dmat::<f64>(2, 2, &[0.1, 0.0, 0.0, -0.1])).is_err());
    }

    #[test]
    fn validation_is_idempotent() {
        let model = scalar_model(0.0);
        assert_eq!(validate_lq_model(&model), validate_lq_model(&model));
    }

    #[test]
    fn wellposedness_indicator_examples() {
        let ind = riccati_wellposedness_indicator(&scalar_model(1.0)).unwrap();
        assert!(ind.values().iter().all(|&v| (v + 0.5).abs() < 1e-15));

        let mut m = scalar_model(1.0);
        m.b = MatrixPath::constant(m.grid, dmat(1, 1, &[0.0]));
        let ind = riccati_wellposedness_indicator(&m).unwrap();
        assert!(ind.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let m = scalar_model(1.0).with_gamma(GammaMatrix::scalar(1, 1e-6).unwrap());
        let ind = riccati_wellposedness_indicator(&m).unwrap();
        assert!(ind.values().iter().all(|&v| (v - (2e-6 - 1.0)).abs() < 1e-15));

        assert!(riccati_wellposedness_indicator(&scalar_model(0.0)).is_err());
    }

    #[test]
    fn scalar_gamma_detection() {
        let g = GammaMatrix::<f64>::scalar(3, 0.1).unwrap();
        assert_eq!(g.scalar_value(1e-12), Some(0.1));
        let g = GammaMatrix::<f64>::diagonal(&[0.1, 0.3]).unwrap();
        assert_eq!(g.scalar_value(1e-12), None);
        assert_eq!(g.gamma_min(), 0.1);
        assert_eq!(g.gamma_max(), 0.3);
    }
}
