//! Early-warning indicators.
//!
//! The main indicator is a non-negative auto-regression over NMF encodings:
//!
//! ```text
//! eta(t) = sum_{j < k} sum_{l < delta} c[j, l] * H[j, t - l],   c >= 0
//! ```
//!
//! fitted so that `eta(t)` tracks next-day volatility. Two baselines are
//! provided: the raw daily volume, and ridge regression over lagged SVD
//! projections.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SolverOptions};
use crate::volatility::VolatilitySeries;

/// Iteration control for [`nnls_sparse`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnlsOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub denom_floor: f64,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self { max_iters: 20_000, rel_tol: 1e-12, seed: 42, denom_floor: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsFit {
    pub coef: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// `0.5 * ||A c - b||^2 + lambda * sum(c)`.
pub fn nnls_objective(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (a * c - b).norm_squared() + lambda * c.sum()
}

/// Sparse non-negative least squares by multiplicative updates
/// `c <- c * (A'b)+ / (A'A c + lambda)`.
///
/// Coordinates with a non-positive `A'b` entry are driven to zero at the
/// first step. The design is expected to be non-negative, which keeps `A'A`
/// non-negative and the updates monotone.
pub fn nnls_sparse(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, opts: &NnlsOptions) -> Result<NnlsFit> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!("design has {} rows, target has {}", a.nrows(), b.len())));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("design and target must be finite".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda_c must be finite and >= 0, got {lambda}")));
    }
    if opts.max_iters == 0 || !(opts.denom_floor > 0.0) || !(opts.rel_tol > 0.0) {
        return Err(Error::InvalidInput("invalid NNLS options".into()));
    }
    let p = a.ncols();
    let gram = a.tr_mul(a);
    let atb = a.tr_mul(b);
    let half_bb = 0.5 * b.norm_squared();
    let numer = atb.map(|v| v.max(0.0));
    let objective = |c: &DVector<f64>| 0.5 * c.dot(&(&gram * c)) - atb.dot(c) + half_bb + lambda * c.sum();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut c = DVector::from_iterator(p, (0..p).map(|_| 1.0 - rng.random::<f64>()));
    // best scalar multiple of the random start
    let curvature = c.dot(&(&gram * &c));
    let slope = atb.dot(&c) - lambda * c.sum();
    if curvature > 0.0 && slope > 0.0 {
        c *= slope / curvature;
    }

    let mut obj = objective(&c);
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let gc = &gram * &c;
        for j in 0..p {
            c[j] *= numer[j] / (gc[j] + lambda).max(opts.denom_floor);
        }
        iterations += 1;
        let next = objective(&c);
        let change = (obj - next).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = next;
        if change < opts.rel_tol {
            break;
        }
    }
    Ok(NnlsFit { objective: nnls_objective(a, b, &c, lambda), coef: c, iterations })
}

/// Row `r` holds `[H[j, t - l]]` for `t = columns[r]`, ordered `j * delta + l`.
pub fn lagged_design(h: &DMatrix<f64>, delta: usize, columns: &[usize]) -> Result<DMatrix<f64>> {
    let k = h.nrows();
    if let Some(&t) = columns.iter().find(|&&t| t + 1 < delta || t >= h.ncols()) {
        return Err(Error::InsufficientHistory(format!("column {t} lacks {delta} days of lags")));
    }
    Ok(DMatrix::from_fn(columns.len(), k * delta, |r, idx| {
        let (j, l) = (idx / delta, idx % delta);
        h[(j, columns[r] - l)]
    }))
}

/// Hyperparameters of the auto-regressive NMF indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EwiParams {
    pub k: usize,
    pub delta: usize,
    pub lambda_enc: f64,
    pub lambda_c: f64,
}

impl Default for EwiParams {
    fn default() -> Self {
        Self { k: 10, delta: 5, lambda_enc: 1.0, lambda_c: 1e-3 }
    }
}

/// Fitted indicator for one training window.
#[derive(Debug, Clone, PartialEq)]
pub struct EwiModel {
    pub params: EwiParams,
    /// Basis from the training window (M×k).
    pub w: DMatrix<f64>,
    /// Non-negative coefficients (k×delta), `coef[(j, l)]` weighs lag `l`.
    pub coef: DMatrix<f64>,
    /// Last `delta - 1` training encodings, lent to the first holdout days.
    pub history: DMatrix<f64>,
    /// Training window `[start, end)` in days.
    pub train_days: (i64, i64),
}

/// Training-side instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Latest day of any matrix column or volatility value read.
    pub max_day_touched: i64,
    pub rows: usize,
    pub factor_iterations: usize,
    pub reconstruction: f64,
}

/// Training rows: columns `t` with full lags whose next-day volatility lies
/// inside the window.
fn training_rows(n: usize, delta: usize, first_day: i64, sigma: &VolatilitySeries) -> (Vec<usize>, Vec<f64>) {
    (delta.saturating_sub(1)..n.saturating_sub(1))
        .filter_map(|t| sigma.get(first_day + t as i64 + 1).map(|s| (t, s)))
        .unzip()
}

fn check_window(n: usize, k: usize, delta: usize) -> Result<()> {
    if delta == 0 {
        return Err(Error::InvalidInput("delta must be >= 1".into()));
    }
    if n <= delta {
        return Err(Error::InsufficientHistory(format!("training window of {n} days needs more than delta = {delta}")));
    }
    if k == 0 {
        return Err(Error::RankOutOfRange { k, max: n });
    }
    Ok(())
}

fn tail_columns(h: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    h.columns(h.ncols() - count, count).into_owned()
}

/// Fits NMF on the training window, then non-negative coefficients mapping
/// lagged encodings to next-day volatility.
pub fn train_ewi(
    segment: &DMatrix<f64>,
    first_day: i64,
    sigma: &VolatilitySeries,
    params: &EwiParams,
    nmf_opts: &SolverOptions,
    nnls_opts: &NnlsOptions,
) -> Result<(EwiModel, TrainReport)> {
    let n = segment.ncols();
    check_window(n, params.k, params.delta)?;
    let (rows, targets) = training_rows(n, params.delta, first_day, sigma);
    if rows.is_empty() {
        return Err(Error::InsufficientHistory("no training day has next-day volatility".into()));
    }

    let factors = linalg::robust_nmf(segment, params.k, params.lambda_enc, nmf_opts)?;
    let design = lagged_design(&factors.h, params.delta, &rows)?;
    let fit = nnls_sparse(&design, &DVector::from_vec(targets), params.lambda_c, nnls_opts)?;
    let coef = DMatrix::from_row_slice(params.k, params.delta, fit.coef.as_slice());

    let report = TrainReport {
        max_day_touched: first_day + n as i64 - 1,
        rows: rows.len(),
        factor_iterations: factors.iterations,
        reconstruction: linalg::reconstruction_score(segment, &factors.w, &factors.h).unwrap_or(0.0),
    };
    let model = EwiModel {
        params: *params,
        history: tail_columns(&factors.h, params.delta - 1),
        w: factors.w,
        coef,
        train_days: (first_day, first_day + n as i64),
    };
    Ok((model, report))
}

/// `eta(t)` over encodings `h` (k×n); needs `delta - 1` earlier columns.
pub fn eta(coef: &DMatrix<f64>, h: &DMatrix<f64>, t: usize) -> Result<f64> {
    let (k, delta) = coef.shape();
    if h.nrows() != k {
        return Err(Error::Dimension(format!("encodings have {} rows, model has k = {k}", h.nrows())));
    }
    if t + 1 < delta || t >= h.ncols() {
        return Err(Error::InsufficientHistory(format!("day {t} lacks {delta} days of encodings")));
    }
    let mut total = 0.0;
    for j in 0..k {
        for l in 0..delta {
            total += coef[(j, l)] * h[(j, t - l)];
        }
    }
    Ok(total)
}

/// Thresholded prediction: extreme iff `eta >= theta`.
pub fn predict(eta: f64, theta: f64) -> bool {
    eta >= theta
}

impl EwiModel {
    /// Encodes holdout columns against the fixed training basis.
    pub fn encode(&self, v: &DMatrix<f64>, opts: &SolverOptions) -> Result<DMatrix<f64>> {
        linalg::encode_fixed_basis(v, &self.w, self.params.lambda_enc, opts)
    }

    /// Indicator for every column of `h`, borrowing the training tail for
    /// the first `delta - 1` lags.
    pub fn score(&self, h: &DMatrix<f64>) -> Result<Vec<f64>> {
        score_with_history(&self.history, h, |ext, t| eta(&self.coef, ext, t))
    }
}

fn score_with_history(
    history: &DMatrix<f64>,
    h: &DMatrix<f64>,
    f: impl Fn(&DMatrix<f64>, usize) -> Result<f64>,
) -> Result<Vec<f64>> {
    if history.nrows() != h.nrows() {
        return Err(Error::Dimension("history and encodings differ in rank".into()));
    }
    let lead = history.ncols();
    let mut ext = DMatrix::zeros(h.nrows(), lead + h.ncols());
    ext.columns_mut(0, lead).copy_from(history);
    ext.columns_mut(lead, h.ncols()).copy_from(h);
    (0..h.ncols()).map(|t| f(&ext, lead + t)).collect()
}

/// Volume baseline: the daily volume itself is the score.
pub fn baseline_volume(volume: &[f64]) -> Vec<f64> {
    volume.to_vec()
}

/// Hyperparameters of the SVD + ridge baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvdLrParams {
    pub k: usize,
    pub delta: usize,
    pub ridge: f64,
}

impl Default for SvdLrParams {
    fn default() -> Self {
        Self { k: 10, delta: 5, ridge: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdLrModel {
    pub params: SvdLrParams,
    /// Leading left singular vectors of the training window (M×k).
    pub basis: DMatrix<f64>,
    pub coef: DVector<f64>,
    pub intercept: f64,
    pub feature_mean: DVector<f64>,
    pub feature_scale: DVector<f64>,
    pub history: DMatrix<f64>,
    pub train_days: (i64, i64),
}

/// Solves `(Z'Z + ridge I) beta = Z'y`.
pub fn ridge_solve(z: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    if z.nrows() != y.len() {
        return Err(Error::Dimension(format!("design has {} rows, target has {}", z.nrows(), y.len())));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidInput("ridge must be >= 0".into()));
    }
    let mut gram = z.tr_mul(z);
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let rhs = z.tr_mul(y);
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    // singular normal equations: minimum-norm solution
    gram.svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Numerical(format!("ridge solve failed: {e}")))
}

impl SvdLrModel {
    /// Projections `U_k' v` of snapshot columns.
    pub fn represent(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.basis.nrows() {
            return Err(Error::Dimension(format!("V has {} rows, basis has {}", v.nrows(), self.basis.nrows())));
        }
        Ok(self.basis.tr_mul(v))
    }

    fn score_at(&self, reps: &DMatrix<f64>, t: usize) -> Result<f64> {
        let delta = self.params.delta;
        let design = lagged_design(reps, delta, &[t])?;
        let mut s = self.intercept;
        for i in 0..design.ncols() {
            s += self.coef[i] * (design[(0, i)] - self.feature_mean[i]) / self.feature_scale[i];
        }
        Ok(s)
    }

    pub fn score(&self, reps: &DMatrix<f64>) -> Result<Vec<f64>> {
        score_with_history(&self.history, reps, |ext, t| self.score_at(ext, t))
    }
}

/// Ridge regression of next-day volatility on lagged rank-k SVD projections
/// of the training window, with features standardized on training data and
/// an unpenalized intercept.
pub fn baseline_svd_lr(
    segment: &DMatrix<f64>,
    first_day: i64,
    sigma: &VolatilitySeries,
    params: &SvdLrParams,
) -> Result<(SvdLrModel, TrainReport)> {
    let n = segment.ncols();
    check_window(n, params.k, params.delta)?;
    let max_k = segment.nrows().min(n);
    if params.k > max_k {
        return Err(Error::RankOutOfRange { k: params.k, max: max_k });
    }
    let (rows, targets) = training_rows(n, params.delta, first_day, sigma);
    if rows.is_empty() {
        return Err(Error::InsufficientHistory("no training day has next-day volatility".into()));
    }

    let dec = linalg::svd(segment)?;
    let basis = dec.u.columns(0, params.k).into_owned();
    let reps = basis.tr_mul(segment);
    let features = lagged_design(&reps, params.delta, &rows)?;
    let p = features.ncols();

    let feature_mean = DVector::from_iterator(p, features.column_iter().map(|c| c.mean()));
    let feature_scale = DVector::from_iterator(
        p,
        features.column_iter().zip(feature_mean.iter()).map(|(c, &m)| {
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64).sqrt();
            if sd > 0.0 { sd } else { 1.0 }
        }),
    );
    let z = DMatrix::from_fn(features.nrows(), p, |r, c| (features[(r, c)] - feature_mean[c]) / feature_scale[c]);
    let y = DVector::from_vec(targets);
    let intercept = y.mean();
    let coef = ridge_solve(&z, &y.add_scalar(-intercept), params.ridge)?;

    let report = TrainReport {
        max_day_touched: first_day + n as i64 - 1,
        rows: rows.len(),
        factor_iterations: 0,
        reconstruction: 0.0,
    };
    let model = SvdLrModel {
        params: *params,
        history: tail_columns(&reps, params.delta - 1),
        basis,
        coef,
        intercept,
        feature_mean,
        feature_scale,
        train_days: (first_day, first_day + n as i64),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    #[test]
    fn identity_design_returns_target() {
        let a = DMatrix::identity(4, 4);
        let b = DVector::from_vec(vec![0.5, 2.0, 0.0, 3.0]);
        let fit = nnls_sparse(&a, &b, 0.0, &NnlsOptions::default()).unwrap();
        assert!((fit.coef - b).amax() < 1e-6);
    }

    #[test]
    fn negatively_correlated_column_is_zeroed() {
        // column 2 has A'b < 0 so its coefficient must vanish
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, -3.0]);
        let fit = nnls_sparse(&a, &b, 0.0, &NnlsOptions::default()).unwrap();
        assert_eq!(fit.coef[2], 0.0);
        // active set {0, 1}: unconstrained solution is exact
        assert!((fit.coef[0] - 1.0).abs() < 1e-6 && (fit.coef[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_target_gives_zero_coefficients() {
        let a = random(10, 3, 1);
        let fit = nnls_sparse(&a, &DVector::zeros(10), 0.1, &NnlsOptions::default()).unwrap();
        assert!(fit.coef.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn nnls_objective_never_increases() {
        for seed in 0..50 {
            let a = random(20, 5, seed);
            let b = random(20, 1, 1000 + seed).column(0).into_owned();
            let gram = a.tr_mul(&a);
            let atb = a.tr_mul(&b);
            let mut c = DVector::from_element(5, 0.7);
            let mut prev = nnls_objective(&a, &b, &c, 0.05);
            for _ in 0..200 {
                let gc = &gram * &c;
                for j in 0..5 {
                    c[j] *= atb[j].max(0.0) / (gc[j] + 0.05).max(1e-12);
                }
                let cur = nnls_objective(&a, &b, &c, 0.05);
                assert!(cur <= prev + 1e-12 * prev.abs());
                prev = cur;
            }
        }
    }

    #[test]
    fn lag_layout_and_eta() {
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        let d = lagged_design(&h, 2, &[2]).unwrap();
        assert_eq!(d.row(0).iter().copied().collect::<Vec<_>>(), vec![3.0, 2.0, 30.0, 20.0]);
        assert!(lagged_design(&h, 2, &[0]).is_err());

        let c = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.1, 0.0]);
        let expected = 0.5 * 3.0 + 0.25 * 2.0 + 0.1 * 30.0 + 0.0 * 20.0;
        assert_eq!(eta(&c, &h, 2).unwrap(), expected);
        assert!(eta(&c, &h, 0).is_err());
    }

    #[test]
    fn eta_single_term_and_zero() {
        let h = DMatrix::from_element(1, 1, 3.0);
        assert_eq!(eta(&DMatrix::from_element(1, 1, 2.0), &h, 0).unwrap(), 6.0);
        assert_eq!(eta(&DMatrix::zeros(1, 1), &h, 0).unwrap(), 0.0);
    }

    #[test]
    fn eta_matches_double_sum() {
        let h = random(2, 6, 3);
        let c = random(2, 2, 4);
        for t in 1..6 {
            let expected = c[(0, 0)] * h[(0, t)] + c[(0, 1)] * h[(0, t - 1)] + c[(1, 0)] * h[(1, t)] + c[(1, 1)] * h[(1, t - 1)];
            assert!((eta(&c, &h, t).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn prediction_threshold_is_inclusive() {
        assert!(predict(0.3, 0.3));
        assert!(!predict(0.29, 0.3));
        assert!([0.0, 0.1, 5.0].iter().all(|&e| predict(e, 0.0)));
    }

    #[test]
    fn volume_baseline_passes_through() {
        let v = vec![3.0, 1.0, 2.0];
        assert_eq!(baseline_volume(&v), v);
        assert_eq!(baseline_volume(&[4.0; 3]), vec![4.0; 3]);
    }

    #[test]
    fn zero_volatility_trains_zero_coefficients() {
        let x = random(12, 40, 5);
        let sigma = VolatilitySeries::from_values(0, vec![0.0; 41]).unwrap();
        let params = EwiParams { k: 2, delta: 3, lambda_enc: 0.1, lambda_c: 0.01 };
        let (model, report) = train_ewi(&x, 0, &sigma, &params, &Default::default(), &Default::default()).unwrap();
        assert!(model.coef.iter().all(|&c| c == 0.0));
        assert_eq!(report.max_day_touched, 39);
        assert_eq!(report.rows, 40 - 3);
        assert_eq!(model.history.ncols(), 2);
    }

    #[test]
    fn scalar_case_is_one_dimensional_regression() {
        let x = random(6, 30, 8);
        let sigma = VolatilitySeries::from_values(0, (0..31).map(|i| 0.1 + 0.01 * (i % 5) as f64).collect()).unwrap();
        let params = EwiParams { k: 1, delta: 1, lambda_enc: 0.0, lambda_c: 0.0 };
        let nmf = SolverOptions::default();
        let (model, _) = train_ewi(&x, 0, &sigma, &params, &nmf, &Default::default()).unwrap();
        let f = linalg::robust_nmf(&x, 1, 0.0, &nmf).unwrap();
        let (num, den) = (0..29).fold((0.0, 0.0), |(n, d), t| {
            let hv = f.h[(0, t)];
            (n + hv * sigma.get(t as i64 + 1).unwrap(), d + hv * hv)
        });
        assert!((model.coef[(0, 0)] - num / den).abs() < 1e-6 * (num / den));
        assert!(model.history.ncols() == 0);
    }

    #[test]
    fn training_rejects_short_windows() {
        let x = random(5, 4, 1);
        let sigma = VolatilitySeries::from_values(0, vec![0.1; 5]).unwrap();
        let params = EwiParams { k: 2, delta: 4, ..Default::default() };
        assert!(matches!(
            train_ewi(&x, 0, &sigma, &params, &Default::default(), &Default::default()),
            Err(Error::InsufficientHistory(_))
        ));
    }

    #[test]
    fn ridge_matches_normal_equations() {
        for seed in 0..10 {
            let z = random(25, 6, seed) * 2.0 - DMatrix::from_element(25, 6, 1.0);
            let y = random(25, 1, 50 + seed).column(0).into_owned();
            for ridge in [0.0, 0.3, 5.0] {
                let got = ridge_solve(&z, &y, ridge).unwrap();
                let inv = (z.tr_mul(&z) + DMatrix::identity(6, 6) * ridge).try_inverse().unwrap();
                let expected = inv * z.tr_mul(&y);
                assert!((got - expected).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn huge_ridge_collapses_to_intercept() {
        let x = random(10, 40, 2);
        let sigma = VolatilitySeries::from_values(0, (0..41).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let params = SvdLrParams { k: 3, delta: 2, ridge: 1e12 };
        let (model, _) = baseline_svd_lr(&x, 0, &sigma, &params).unwrap();
        assert!(model.coef.amax() < 1e-9);
        let reps = model.represent(&x).unwrap();
        let scores = model.score(&reps).unwrap();
        assert!(scores.iter().all(|s| (s - model.intercept).abs() < 1e-8));
    }
}
