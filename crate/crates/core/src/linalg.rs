//! Dense matrix core.
//!
//! The L2,1 norm used throughout is column-oriented: the sum over columns of
//! each column's Euclidean norm. A column is one day's snapshot, so the
//! reconstruction term weighs every day by the size of its residual rather
//! than its square, and the sparsity term shrinks whole daily encodings.
//!
//! Robust NMF minimizes `||X - WH||_{2,1} + lambda * ||H||_{2,1}` over
//! non-negative `W`, `H` with reweighted multiplicative updates. Each update
//! is a majorize-minimize step, so the objective never increases (up to the
//! effect of the denominator floor).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration control shared by the multiplicative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the relative objective change drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Lower clamp for update denominators and for the squared norms inside
    /// the reweighting matrices.
    pub denom_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iters: 500, rel_tol: 1e-4, seed: 42, denom_floor: 1e-12 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("rel_tol must be > 0".into()));
        }
        if !(self.denom_floor > 0.0) {
            return Err(Error::InvalidInput("denom_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Non-negative basis `w` (M×k) and encodings `h` (k×T).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub objective: f64,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }
}

/// Sum of the Euclidean norms of the columns.
pub fn norm_l21(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.norm()).sum()
}

fn check_product_dims(x: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != x.nrows() || h.ncols() != x.ncols() || w.ncols() != h.nrows() {
        return Err(Error::Dimension(format!(
            "X is {}x{}, W is {}x{}, H is {}x{}",
            x.nrows(),
            x.ncols(),
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

/// `||X - WH||_{2,1} + lambda * ||H||_{2,1}`.
pub fn nmf_objective(x: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    check_product_dims(x, w, h)?;
    Ok(norm_l21(&(x - w * h)) + lambda * norm_l21(h))
}

/// Diagonal of the reweighting matrix: `1 / sqrt(max(sum_j a_ji^2, floor))`.
fn column_weights(a: &DMatrix<f64>, floor: f64) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| 1.0 / c.norm_squared().max(floor).sqrt()))
}

/// One multiplicative update of `H` with `W` held fixed.
pub fn update_h(x: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64, floor: f64) -> DMatrix<f64> {
    let d1 = column_weights(&(x - w * h), floor);
    let d2 = column_weights(h, floor);
    let wtx = w.tr_mul(x);
    let wtwh = w.tr_mul(w) * h;
    let mut out = h.clone();
    for i in 0..h.ncols() {
        for r in 0..h.nrows() {
            let num = (wtx[(r, i)] * d1[i]).max(0.0);
            let den = wtwh[(r, i)] * d1[i] + lambda * h[(r, i)] * d2[i];
            out[(r, i)] = h[(r, i)] * num / den.max(floor);
        }
    }
    out
}

/// One multiplicative update of `W` with `H` held fixed.
pub fn update_w(x: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let wh = w * h;
    let d1 = column_weights(&(x - &wh), floor);
    let ht_scaled = {
        let mut ht = h.transpose();
        for (mut row, &d) in ht.row_iter_mut().zip(d1.iter()) {
            row *= d;
        }
        ht
    };
    let num = x * &ht_scaled;
    let den = wh * &ht_scaled;
    w.zip_zip_map(&num, &den, |wv, n, d| wv * n.max(0.0) / d.max(floor))
}

/// One round of updates: `H` first, then `W` against the new `H`.
pub fn nmf_step(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    lambda: f64,
    floor: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let h_next = update_h(x, w, h, lambda, floor);
    let w_next = update_w(x, w, &h_next, floor);
    (w_next, h_next)
}

fn check_nonnegative(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} contains non-finite values")));
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput(format!("{what} contains negative values")));
    }
    Ok(())
}

fn uniform_open_closed(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    // column-major fill, so column j only depends on the seed and j
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| (1.0 - rng.random::<f64>()) * scale))
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev == 0.0 {
        return if cur == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (prev - cur).abs() / prev.abs()
}

/// Robust L2,1 NMF of a non-negative matrix.
///
/// Factors start from seeded uniform (0, 1] entries scaled by
/// `sqrt(mean(X) / k)`, so identical inputs give bit-identical factors.
pub fn robust_nmf(x: &DMatrix<f64>, k: usize, lambda: f64, opts: &SolverOptions) -> Result<FactorPair> {
    opts.validate()?;
    check_nonnegative(x, "X")?;
    let max_k = x.nrows().min(x.ncols());
    if k == 0 || k > max_k {
        return Err(Error::RankOutOfRange { k, max: max_k });
    }
    let mean = x.mean();
    let scale = if mean > 0.0 { (mean / k as f64).sqrt() } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let w = uniform_open_closed(&mut rng, x.nrows(), k, scale);
    let h = uniform_open_closed(&mut rng, k, x.ncols(), scale);
    robust_nmf_from(x, w, h, lambda, opts)
}

/// [`robust_nmf`] from given starting factors (a warm start).
pub fn robust_nmf_from(
    x: &DMatrix<f64>,
    mut w: DMatrix<f64>,
    mut h: DMatrix<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FactorPair> {
    opts.validate()?;
    check_nonnegative(x, "X")?;
    check_nonnegative(&w, "W")?;
    check_nonnegative(&h, "H")?;
    check_product_dims(x, &w, &h)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }

    let mut objective = nmf_objective(x, &w, &h, lambda)?;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let (w_next, h_next) = nmf_step(x, &w, &h, lambda, opts.denom_floor);
        w = w_next;
        h = h_next;
        iterations += 1;
        let next = nmf_objective(x, &w, &h, lambda)?;
        if !next.is_finite() {
            return Err(Error::Numerical(format!("objective diverged at iteration {iterations}")));
        }
        let change = relative_change(objective, next);
        objective = next;
        if objective == 0.0 || change < opts.rel_tol {
            break;
        }
    }
    Ok(FactorPair { w, h, lambda, iterations, objective })
}

/// Encodes the columns of `v` against a fixed basis `w`.
///
/// Minimizes `||V - WH||_{2,1} + lambda * ||H||_{2,1}` over `H >= 0` with the
/// `H` update alone. The problem separates over columns, and each column runs
/// its own stopping test, so an encoding never depends on other columns.
pub fn encode_fixed_basis(v: &DMatrix<f64>, w: &DMatrix<f64>, lambda: f64, opts: &SolverOptions) -> Result<DMatrix<f64>> {
    opts.validate()?;
    if v.nrows() != w.nrows() {
        return Err(Error::Dimension(format!("V has {} rows but W has {}", v.nrows(), w.nrows())));
    }
    check_nonnegative(v, "V")?;
    check_nonnegative(w, "W")?;
    let k = w.ncols();
    let floor = opts.denom_floor;

    let mean_w = w.mean();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut h = uniform_open_closed(&mut rng, k, v.ncols(), 1.0);

    let wtw = w.tr_mul(w);
    let wtv = w.tr_mul(v);
    for i in 0..v.ncols() {
        let vi = v.column(i);
        let wtvi = wtv.column(i);
        let mean_v = vi.mean();
        let scale = if mean_v > 0.0 && mean_w > 0.0 { mean_v / (k as f64 * mean_w) } else { 1.0 };
        let mut hi: DVector<f64> = h.column(i) * scale;
        let column_objective = |hi: &DVector<f64>| (vi - w * hi).norm() + lambda * hi.norm();
        let mut objective = column_objective(&hi);
        for _ in 0..opts.max_iters {
            let r2 = (vi - w * &hi).norm_squared();
            let d1 = 1.0 / r2.max(floor).sqrt();
            let d2 = 1.0 / hi.norm_squared().max(floor).sqrt();
            let wtwh = &wtw * &hi;
            for r in 0..k {
                let num = (wtvi[r] * d1).max(0.0);
                let den = wtwh[r] * d1 + lambda * hi[r] * d2;
                hi[r] *= num / den.max(floor);
            }
            let next = column_objective(&hi);
            let change = relative_change(objective, next);
            objective = next;
            if objective == 0.0 || change < opts.rel_tol {
                break;
            }
        }
        h.set_column(i, &hi);
    }
    Ok(h)
}

/// Thin singular value decomposition `A = U diag(S) Vt`, `S` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub vt: DMatrix<f64>,
}

impl Svd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * &self.vt
    }
}

const SVD_MAX_ITERS: usize = 100_000;

fn check_finite(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix contains non-finite values".into()));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("matrix is empty".into()));
    }
    Ok(())
}

pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    check_finite(a)?;
    let dec = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let (u, vt) = match (dec.u, dec.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD did not produce singular vectors".into())),
    };
    let mut order: Vec<usize> = (0..dec.singular_values.len()).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| dec.singular_values[i]));
    let u = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let vt = DMatrix::from_rows(&order.iter().map(|&i| vt.row(i)).collect::<Vec<_>>());
    Ok(Svd { u, s, vt })
}

/// Singular values only, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(a)?;
    let dec = nalgebra::SVD::try_new(a.clone(), false, false, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let mut s: Vec<f64> = dec.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Singular values below this fraction of the largest are ignored.
pub const RANK_FLOOR: f64 = 1e-10;

/// Rank at the smallest ratio between consecutive singular values.
///
/// `s` must be sorted descending. Only ratios `s[i+1] / s[i]` with `s[i]`
/// above the relative floor are considered; ties go to the smallest index.
/// Returns the number of leading singular values kept.
pub fn rank_from_spectrum(s: &[f64]) -> Result<usize> {
    let top = s.first().copied().unwrap_or(0.0);
    let floor = RANK_FLOOR * top;
    let above = s.iter().take_while(|&&v| v > floor).count();
    if top <= 0.0 || above < 2 {
        return Err(Error::InvalidInput(format!(
            "rank estimation needs at least 2 singular values above the floor, found {}",
            if top > 0.0 { above } else { 0 }
        )));
    }
    let mut best = (f64::INFINITY, 0);
    for i in 0..above.min(s.len() - 1) {
        let ratio = s[i + 1] / s[i];
        if ratio < best.0 {
            best = (ratio, i);
        }
    }
    Ok(best.1 + 1)
}

pub fn estimate_rank(a: &DMatrix<f64>) -> Result<usize> {
    rank_from_spectrum(&singular_values(a)?)
}

/// `(||X|| - ||X - WH||) / ||X||` in the L2,1 norm.
pub fn reconstruction_score(x: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    check_product_dims(x, w, h)?;
    let nx = norm_l21(x);
    if nx == 0.0 {
        return Err(Error::InvalidInput("reconstruction score undefined for a zero matrix".into()));
    }
    Ok((nx - norm_l21(&(x - w * h))) / nx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_nonneg(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    #[test]
    fn l21_norm_values() {
        assert_eq!(norm_l21(&DMatrix::zeros(3, 4)), 0.0);
        assert_eq!(norm_l21(&DMatrix::from_column_slice(2, 1, &[3.0, 4.0])), 5.0);
        assert_eq!(norm_l21(&DMatrix::identity(2, 2)), 2.0);
    }

    #[test]
    fn objective_edge_cases() {
        let w = random_nonneg(6, 2, 1);
        let h = random_nonneg(2, 5, 2);
        let x = &w * &h;
        assert!(nmf_objective(&x, &w, &h, 0.0).unwrap() < 1e-12);
        let zw = DMatrix::zeros(6, 2);
        let zh = DMatrix::zeros(2, 5);
        assert_eq!(nmf_objective(&x, &zw, &zh, 3.0).unwrap(), norm_l21(&x));
        assert!(matches!(nmf_objective(&x, &w, &DMatrix::zeros(3, 5), 0.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn objective_matches_recomputation() {
        let x = random_nonneg(7, 9, 3);
        let w = random_nonneg(7, 3, 4);
        let h = random_nonneg(3, 9, 5);
        let r = &x - &w * &h;
        let mut expected = 0.0;
        for j in 0..9 {
            expected += (0..7).map(|i| r[(i, j)] * r[(i, j)]).sum::<f64>().sqrt();
            expected += 0.5 * (0..3).map(|i| h[(i, j)] * h[(i, j)]).sum::<f64>().sqrt();
        }
        let got = nmf_objective(&x, &w, &h, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn exact_factorization_is_a_fixed_point() {
        let w = random_nonneg(8, 3, 10);
        let h = random_nonneg(3, 6, 11);
        let x = &w * &h;
        let (w2, h2) = nmf_step(&x, &w, &h, 0.0, 1e-12);
        assert!((&w2 - &w).amax() < 1e-9);
        assert!((&h2 - &h).amax() < 1e-9);
    }

    #[test]
    fn step_preserves_nonnegativity_and_descends() {
        let x = random_nonneg(20, 15, 20);
        let w = random_nonneg(20, 4, 21);
        let h = random_nonneg(4, 15, 22);
        for lambda in [0.0, 0.1, 1.0] {
            let before = nmf_objective(&x, &w, &h, lambda).unwrap();
            let (w2, h2) = nmf_step(&x, &w, &h, lambda, 1e-12);
            assert!(w2.iter().chain(h2.iter()).all(|&v| v >= 0.0));
            let after = nmf_objective(&x, &w2, &h2, lambda).unwrap();
            assert!(after <= before + 1e-9 * before, "{after} > {before}");
        }
    }

    #[test]
    fn rank_one_recovery() {
        let w = DMatrix::from_fn(12, 1, |i, _| 1.0 + i as f64 * 0.3);
        let h = DMatrix::from_fn(1, 10, |_, j| 0.5 + (j as f64).sin().abs());
        let x = &w * &h;
        let opts = SolverOptions { max_iters: 2000, rel_tol: 1e-10, ..Default::default() };
        let f = robust_nmf(&x, 1, 0.0, &opts).unwrap();
        assert!(reconstruction_score(&x, &f.w, &f.h).unwrap() >= 0.999);
    }

    #[test]
    fn zero_matrix_drives_h_to_zero() {
        let x = DMatrix::zeros(5, 6);
        let f = robust_nmf(&x, 2, 1.0, &SolverOptions::default()).unwrap();
        assert!(f.h.amax() < 1e-12);
        assert!(f.objective < 1e-12);
    }

    #[test]
    fn robust_nmf_rejects_bad_input() {
        let x = random_nonneg(4, 5, 1);
        assert!(matches!(robust_nmf(&x, 0, 0.0, &Default::default()), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(robust_nmf(&x, 5, 0.0, &Default::default()), Err(Error::RankOutOfRange { .. })));
        let mut bad = x.clone();
        bad[(0, 0)] = -1.0;
        assert!(robust_nmf(&bad, 2, 0.0, &Default::default()).is_err());
        bad[(0, 0)] = f64::NAN;
        assert!(robust_nmf(&bad, 2, 0.0, &Default::default()).is_err());
        let opts = SolverOptions { max_iters: 0, ..Default::default() };
        assert!(robust_nmf(&x, 2, 0.0, &opts).is_err());
    }

    #[test]
    fn warm_start_continues_descent() {
        let x = random_nonneg(12, 9, 4);
        let opts = SolverOptions { max_iters: 20, rel_tol: 1e-14, ..Default::default() };
        let first = robust_nmf(&x, 3, 0.1, &opts).unwrap();
        let more = robust_nmf_from(&x, first.w.clone(), first.h.clone(), 0.1, &opts).unwrap();
        assert!(more.objective <= first.objective * (1.0 + 1e-9));
        let negative = first.w.map(|v| -v);
        assert!(robust_nmf_from(&x, negative, first.h, 0.1, &opts).is_err());
    }

    #[test]
    fn robust_nmf_is_deterministic() {
        let x = random_nonneg(15, 12, 9);
        let a = robust_nmf(&x, 3, 0.5, &SolverOptions::default()).unwrap();
        let b = robust_nmf(&x, 3, 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_basis_recovers_planted_encoding() {
        let w = random_nonneg(30, 3, 31);
        let h = random_nonneg(3, 4, 32);
        let v = &w * &h;
        let opts = SolverOptions { max_iters: 50_000, rel_tol: 1e-14, ..Default::default() };
        let got = encode_fixed_basis(&v, &w, 0.0, &opts).unwrap();
        let rel = (&got - &h).norm() / h.norm();
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn fixed_basis_zero_input_and_mismatch() {
        let w = random_nonneg(10, 3, 1);
        let h = encode_fixed_basis(&DMatrix::zeros(10, 4), &w, 0.5, &Default::default()).unwrap();
        assert!(h.amax() < 1e-12);
        assert!(matches!(
            encode_fixed_basis(&DMatrix::zeros(9, 4), &w, 0.5, &Default::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fixed_basis_objective_descends() {
        for seed in 0..10 {
            let v = random_nonneg(12, 8, 100 + seed);
            let w = random_nonneg(12, 3, 200 + seed);
            let mut h = random_nonneg(3, 8, 300 + seed);
            let mut prev = nmf_objective(&v, &w, &h, 0.3).unwrap();
            for _ in 0..50 {
                h = update_h(&v, &w, &h, 0.3, 1e-12);
                let cur = nmf_objective(&v, &w, &h, 0.3).unwrap();
                assert!(cur <= prev + 1e-9 * prev);
                prev = cur;
            }
        }
    }

    #[test]
    fn encoding_of_a_column_ignores_its_neighbours() {
        let w = random_nonneg(10, 3, 7);
        let v = random_nonneg(10, 5, 8);
        let full = encode_fixed_basis(&v, &w, 0.2, &Default::default()).unwrap();
        let mut altered = v.clone();
        altered.column_mut(4).fill(9.0);
        let part = encode_fixed_basis(&altered, &w, 0.2, &Default::default()).unwrap();
        assert_eq!(full.columns(0, 4), part.columns(0, 4));
    }

    #[test]
    fn svd_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let d = svd(&a).unwrap();
        assert!((d.s[0] - 3.0).abs() < 1e-14 && (d.s[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_orthogonality_and_round_trip() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(30, 20, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let d = svd(&a).unwrap();
            let r = d.s.len();
            assert!((d.u.tr_mul(&d.u) - DMatrix::identity(r, r)).amax() < 1e-10);
            assert!((&d.vt * d.vt.transpose() - DMatrix::identity(r, r)).amax() < 1e-10);
            assert!((d.reconstruct() - &a).norm() < 1e-8);
            assert!(d.s.iter().all(|&v| v >= 0.0));
            assert!(d.s.as_slice().windows(2).all(|p| p[0] >= p[1]));
        }
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = f64::INFINITY;
        assert!(svd(&bad).is_err());
    }

    #[test]
    fn rank_of_exact_low_rank_matrix() {
        let w = random_nonneg(20, 4, 1);
        let h = random_nonneg(4, 15, 2);
        assert_eq!(estimate_rank(&(&w * &h)).unwrap(), 4);
    }

    #[test]
    fn rank_ties_go_to_smallest_index() {
        assert_eq!(rank_from_spectrum(&[8.0, 4.0, 2.0, 1.0]).unwrap(), 1);
        assert!(rank_from_spectrum(&[1.0, 0.0]).is_err());
        assert!(rank_from_spectrum(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn rank_is_scale_invariant() {
        let w = random_nonneg(20, 3, 5);
        let h = random_nonneg(3, 12, 6);
        let noise = random_nonneg(20, 12, 7) * 1e-3;
        let a = &w * &h + noise;
        let r = estimate_rank(&a).unwrap();
        assert_eq!(estimate_rank(&(&a * 1e6)).unwrap(), r);
        assert_eq!(estimate_rank(&(&a * 1e-6)).unwrap(), r);
    }

    #[test]
    fn reconstruction_score_cases() {
        let w = random_nonneg(6, 2, 1);
        let h = random_nonneg(2, 4, 2);
        let x = &w * &h;
        assert!((reconstruction_score(&x, &w, &h).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(reconstruction_score(&x, &DMatrix::zeros(6, 2), &h).unwrap(), 0.0);
        assert_eq!(reconstruction_score(&x, &w, &DMatrix::zeros(2, 4)).unwrap(), 0.0);
        assert!(reconstruction_score(&DMatrix::zeros(6, 4), &w, &h).is_err());

        let x = random_nonneg(6, 4, 9);
        let nx: f64 = x.column_iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).sum();
        let r = &x - &w * &h;
        let nr: f64 = r.column_iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).sum();
        assert!((reconstruction_score(&x, &w, &h).unwrap() - (nx - nr) / nx).abs() < 1e-12);
    }
}
