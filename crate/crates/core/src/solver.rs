//! Factorized recovery: minimize
//! `½‖A(H Mᵀ) − ŷ‖² + (λ/2)(‖H‖²_F + ‖M‖²_F)` over real factors with L-BFGS,
//! decreasing `λ` over a few warm-started rounds, then read off the best
//! rank-1 approximation of `H Mᵀ`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::lbfgs::{lbfgs_minimize, LbfgsConfig, Termination};
use crate::lifting::{MeasurementRows, MeasurementSet};
use crate::seed::rng_from_seed;

/// Threshold on `‖X̂ − X₀‖_F` below which a recovery counts as a success.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 1e-1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Factorization rank `R`.
    pub rank: usize,
    /// First penalty weight, as a multiple of `‖ŷ‖²`.
    pub lambda_start: f64,
    /// Last penalty weight, as a multiple of `‖ŷ‖²`.
    pub lambda_end: f64,
    /// Number of penalty rounds; weights are spaced geometrically.
    pub rounds: usize,
    /// Gradient tolerance, as a multiple of `max(1, ‖ŷ‖)`.
    pub grad_tol: f64,
    /// Relative objective decrease below which a round stops early.
    pub progress_tol: f64,
    pub max_iters_per_round: usize,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Singular-value ratio `σ₂/σ₁` below which a factor counts as rank
    /// deficient.
    pub rank_ratio_cutoff: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let lb = LbfgsConfig::default();
        Self {
            rank: 2,
            lambda_start: 1e-2,
            lambda_end: 1e-8,
            rounds: 4,
            grad_tol: 1e-9,
            progress_tol: 0.0,
            max_iters_per_round: 2000,
            memory: lb.memory,
            c1: lb.c1,
            c2: lb.c2,
            max_line_search: lb.max_line_search,
            rank_ratio_cutoff: 1e-3,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(DeconvError::Config(format!("{field}: {why}")));
        if self.rank == 0 {
            return bad("rank", "must be at least 1");
        }
        if !(self.lambda_start > 0.0) || !(self.lambda_end > 0.0) {
            return bad("lambda_start", "penalty weights must be positive");
        }
        if self.lambda_end > self.lambda_start {
            return bad("lambda_end", "must not exceed lambda_start");
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol", "must be positive");
        }
        if !(self.progress_tol >= 0.0) {
            return bad("progress_tol", "must be non-negative");
        }
        if self.memory == 0 {
            return bad("memory", "must be at least 1");
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return bad("c1", "line-search constants need 0 < c1 < c2 < 1");
        }
        Ok(())
    }

    /// Penalty weights of each round, relative to `‖ŷ‖²`.
    pub fn lambda_schedule(&self) -> Vec<f64> {
        if self.rounds == 1 {
            return vec![self.lambda_end];
        }
        let ratio = (self.lambda_end / self.lambda_start).powf(1.0 / (self.rounds - 1) as f64);
        (0..self.rounds).map(|i| self.lambda_start * ratio.powi(i as i32)).collect()
    }
}

/// Factors `H` (`L × R`) and `M` (`KN × R`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPair {
    pub h: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(h: DMatrix<f64>, m: DMatrix<f64>) -> Result<Self> {
        if h.ncols() != m.ncols() || h.ncols() == 0 {
            return Err(DeconvError::ShapeMismatch(format!(
                "factor ranks must agree and be positive ({} vs {})",
                h.ncols(),
                m.ncols()
            )));
        }
        if h.iter().chain(m.iter()).any(|v| !v.is_finite()) {
            return Err(DeconvError::NonFinite { what: "factor", index: 0 });
        }
        Ok(Self { h, m })
    }

    pub fn rank(&self) -> usize {
        self.h.ncols()
    }

    fn to_vec(&self) -> Vec<f64> {
        self.h.iter().chain(self.m.iter()).copied().collect()
    }

    fn from_slice(x: &[f64], l: usize, kn: usize, r: usize) -> Self {
        Self {
            h: DMatrix::from_column_slice(l, r, &x[..l * r]),
            m: DMatrix::from_column_slice(kn, r, &x[l * r..]),
        }
    }
}

/// Outcome of one penalty round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub factors: FactorPair,
    /// Objective of the last round.
    pub objective: f64,
    /// `‖A(H Mᵀ) − ŷ‖₂`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sigma_ratio_h: f64,
    pub sigma_ratio_m: f64,
    /// Both factors have `σ₂/σ₁` at or below the configured cutoff.
    pub rank_deficient: bool,
    pub rounds: Vec<RoundSummary>,
}

fn measurement_norm(y: &MeasurementSet) -> f64 {
    y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Value and gradients of `½‖A(H Mᵀ) − ŷ‖² + (λ/2)(‖H‖² + ‖M‖²)`.
pub fn objective_and_gradient(
    rows: &MeasurementRows,
    yhat: &MeasurementSet,
    h: &DMatrix<f64>,
    m: &DMatrix<f64>,
    lambda: f64,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let fwd = rows.forward_factored(h, m)?;
    if yhat.shape() != fwd.yhat.shape() {
        return Err(DeconvError::ShapeMismatch(format!(
            "observations are {}x{}, expected {}x{}",
            yhat.nrows(),
            yhat.ncols(),
            fwd.yhat.nrows(),
            fwd.yhat.ncols()
        )));
    }
    let residual = &fwd.yhat - yhat;
    let fit = 0.5 * residual.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let value = fit + 0.5 * lambda * (h.norm_squared() + m.norm_squared());
    if !value.is_finite() {
        return Err(DeconvError::NonFinite { what: "objective", index: 0 });
    }
    let (mut grad_h, mut grad_m) = rows.adjoint_times_factors(&residual, &fwd)?;
    grad_h += h * lambda;
    grad_m += m * lambda;
    if let Some(index) = grad_h.iter().chain(grad_m.iter()).position(|v| !v.is_finite()) {
        return Err(DeconvError::NonFinite { what: "gradient", index });
    }
    Ok((value, grad_h, grad_m))
}

/// Runs L-BFGS on the penalized objective from `start` with a fixed `λ`.
pub fn lbfgs_minimize_factors(
    rows: &MeasurementRows,
    yhat: &MeasurementSet,
    start: FactorPair,
    lambda: f64,
    cfg: &LbfgsConfig,
) -> (FactorPair, RoundSummary) {
    let (l, kn, r) = (rows.l(), rows.k() * rows.n(), start.rank());
    let objective = |x: &[f64], g: &mut [f64]| {
        let f = FactorPair::from_slice(x, l, kn, r);
        match objective_and_gradient(rows, yhat, &f.h, &f.m, lambda) {
            Ok((value, gh, gm)) => {
                g[..l * r].copy_from_slice(gh.as_slice());
                g[l * r..].copy_from_slice(gm.as_slice());
                value
            }
            Err(_) => f64::NAN,
        }
    };
    let res = lbfgs_minimize(objective, start.to_vec(), cfg);
    let summary = RoundSummary {
        lambda,
        objective: res.value,
        iterations: res.iterations,
        evaluations: res.evaluations,
        termination: res.termination,
    };
    (FactorPair::from_slice(&res.x, l, kn, r), summary)
}

/// Gaussian starting factors with standard deviation `1/√(L·R)`.
pub fn initial_factors(l: usize, kn: usize, r: usize, seed: u64) -> FactorPair {
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, 1.0 / ((l * r) as f64).sqrt()).expect("valid std dev");
    let h = DMatrix::from_fn(l, r, |_, _| normal.sample(&mut rng));
    let m = DMatrix::from_fn(kn, r, |_, _| normal.sample(&mut rng));
    FactorPair { h, m }
}

/// Recovers `(H, M)` from `ŷ` by penalized L-BFGS with decreasing `λ`.
pub fn solve_blind_deconv(rows: &MeasurementRows, yhat: &MeasurementSet, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    if yhat.shape() != (rows.l(), rows.n()) {
        return Err(DeconvError::ShapeMismatch(format!(
            "observations are {}x{}, expected {}x{}",
            yhat.nrows(),
            yhat.ncols(),
            rows.l(),
            rows.n()
        )));
    }
    if let Some(index) = yhat.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(DeconvError::NonFinite { what: "observations", index });
    }
    let ynorm = measurement_norm(yhat);
    let lb = LbfgsConfig {
        memory: cfg.memory,
        max_iters: cfg.max_iters_per_round,
        grad_tol: cfg.grad_tol * ynorm.max(1.0),
        progress_tol: cfg.progress_tol,
        c1: cfg.c1,
        c2: cfg.c2,
        max_line_search: cfg.max_line_search,
    };
    let mut factors = initial_factors(rows.l(), rows.k() * rows.n(), cfg.rank, cfg.seed);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for rel in cfg.lambda_schedule() {
        let (next, summary) = lbfgs_minimize_factors(rows, yhat, factors, rel * ynorm * ynorm, &lb);
        factors = next;
        rounds.push(summary);
    }
    let fitted = rows.apply_a_factored(&factors.h, &factors.m)?;
    let residual = measurement_norm(&(fitted - yhat));
    let last = rounds.last().expect("at least one round");
    let sigma_ratio_h = sigma_ratio(&factors.h);
    let sigma_ratio_m = sigma_ratio(&factors.m);
    Ok(SolveReport {
        objective: last.objective,
        residual,
        iterations: rounds.iter().map(|r| r.iterations).sum(),
        converged: matches!(
            last.termination,
            Termination::GradientTolerance | Termination::ProgressTolerance
        ),
        sigma_ratio_h,
        sigma_ratio_m,
        rank_deficient: sigma_ratio_h <= cfg.rank_ratio_cutoff && sigma_ratio_m <= cfg.rank_ratio_cutoff,
        rounds,
        factors,
    })
}

/// `σ₂/σ₁` of a tall matrix (0 for rank-1 factors or a zero matrix).
pub fn sigma_ratio(a: &DMatrix<f64>) -> f64 {
    if a.ncols() < 2 || a.nrows() < 2 {
        return 0.0;
    }
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    if sv[0] == 0.0 {
        0.0
    } else {
        sv[1] / sv[0]
    }
}

/// Leading singular triple of `H Mᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1 {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub sigma: f64,
    /// `σ₂/σ₁` of `H Mᵀ` (0 when it has rank at most 1).
    pub sigma_ratio: f64,
}

/// Best rank-1 approximation of `H Mᵀ` through thin QR factorizations of the
/// factors and an SVD of the small `R × R` core.
pub fn extract_rank1(h: &DMatrix<f64>, m: &DMatrix<f64>) -> Rank1 {
    let (l, kn) = (h.nrows(), m.nrows());
    let zero = || Rank1 {
        u: DVector::zeros(l),
        v: DVector::zeros(kn),
        sigma: 0.0,
        sigma_ratio: 0.0,
    };
    if h.ncols() == 0 || h.ncols() != m.ncols() {
        return zero();
    }
    let qh = h.clone().qr();
    let qm = m.clone().qr();
    let core = qh.r() * qm.r().transpose();
    let svd = core.svd(true, true);
    let (u_core, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => return zero(),
    };
    let sv = svd.singular_values;
    let top = sv.imax();
    let sigma = sv[top];
    if !(sigma > 0.0) {
        return zero();
    }
    let second = sv.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, &s)| s).fold(0.0, f64::max);
    let u = qh.q() * u_core.column(top);
    let v = qm.q() * v_t.row(top).transpose();
    Rank1 {
        u,
        v,
        sigma,
        sigma_ratio: second / sigma,
    }
}

/// `‖σ u vᵀ − h mᵀ‖_F` without forming either matrix.
///
/// The pair is first rescaled to `(a, b) = (αu, σv/α)` with `a` closest to
/// `h`, so the error is expanded around small differences and keeps full
/// relative accuracy when the two matrices nearly agree.
pub fn rank1_distance(sigma: f64, u: &[f64], v: &[f64], h: &[f64], m: &[f64]) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (nh, nm) = (d(h, h), d(m, m));
    let (nu, nv) = (d(u, u), d(v, v));
    if sigma == 0.0 || nu == 0.0 || nv == 0.0 {
        return (nh * nm).sqrt();
    }
    let alpha = d(u, h) / nu;
    if alpha == 0.0 {
        return (sigma * sigma * nu * nv + nh * nm).sqrt();
    }
    let a: Vec<f64> = u.iter().map(|x| alpha * x).collect();
    let b: Vec<f64> = v.iter().map(|x| sigma * x / alpha).collect();
    // a bᵀ − h mᵀ = (a − h) bᵀ + h (b − m)ᵀ
    let da: Vec<f64> = a.iter().zip(h).map(|(x, y)| x - y).collect();
    let db: Vec<f64> = b.iter().zip(m).map(|(x, y)| x - y).collect();
    let sq = d(&da, &da) * d(&b, &b) + nh * d(&db, &db) + 2.0 * d(&da, h) * d(&b, &db);
    sq.max(0.0).sqrt()
}

/// Scale alignment of a recovered pair `(u, v)` with the truth `(h, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// Minimizer of `‖α u − h‖`; the matching message estimate is `v/α`.
    pub alpha: f64,
    /// Scale-free error `‖u vᵀ − h mᵀ‖_F`.
    pub lifted_error: f64,
}

pub fn align_scale(u: &[f64], v: &[f64], h: &[f64], m: &[f64]) -> Result<Alignment> {
    let nh = h.iter().map(|x| x * x).sum::<f64>();
    let nm = m.iter().map(|x| x * x).sum::<f64>();
    if nh == 0.0 || nm == 0.0 {
        return Err(DeconvError::ZeroVector("ground truth"));
    }
    if u.len() != h.len() || v.len() != m.len() {
        return Err(DeconvError::LengthMismatch {
            left: u.len() + v.len(),
            right: h.len() + m.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>();
    let nv = v.iter().map(|x| x * x).sum::<f64>();
    if nu == 0.0 || nv == 0.0 {
        return Ok(Alignment {
            alpha: 0.0,
            lifted_error: (nh * nm).sqrt(),
        });
    }
    let alpha = u.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / nu;
    Ok(Alignment {
        alpha,
        lifted_error: rank1_distance(1.0, u, v, h, m),
    })
}

/// `‖X̂ − X₀‖_F ≤ threshold`.
pub fn classify_recovery(x_hat: &DMatrix<f64>, x0: &DMatrix<f64>, threshold: f64) -> Result<bool> {
    if x_hat.shape() != x0.shape() {
        return Err(DeconvError::ShapeMismatch("recovered and true lifted matrices differ in shape".into()));
    }
    Ok((x_hat - x0).norm() <= threshold)
}

/// `‖X̂ − X₀‖_F ≤ threshold · ‖X₀‖_F`.
pub fn classify_recovery_relative(x_hat: &DMatrix<f64>, x0: &DMatrix<f64>, threshold: f64) -> Result<bool> {
    if x_hat.shape() != x0.shape() {
        return Err(DeconvError::ShapeMismatch("recovered and true lifted matrices differ in shape".into()));
    }
    Ok((x_hat - x0).norm() <= threshold * x0.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{build_rows, SparsityBasis};
    use crate::spectral::{gaussian_vector, gen_generic_basis};

    fn setup(l: usize, k: usize, n: usize, seed: u64) -> (MeasurementRows, Vec<f64>, Vec<f64>, MeasurementSet) {
        let bases: Vec<_> = (0..n).map(|i| gen_generic_basis(l, k, seed * 97 + i as u64).unwrap()).collect();
        let rows = build_rows(SparsityBasis::Identity, &bases).unwrap();
        let h = gaussian_vector(l, seed + 1);
        let m = gaussian_vector(k * n, seed + 2);
        let y = rows
            .apply_a_factored(&DMatrix::from_column_slice(l, 1, &h), &DMatrix::from_column_slice(k * n, 1, &m))
            .unwrap();
        (rows, h, m, y)
    }

    #[test]
    fn origin_is_stationary() {
        let (rows, _, _, y) = setup(8, 2, 2, 1);
        let (v, gh, gm) = objective_and_gradient(&rows, &y, &DMatrix::zeros(8, 2), &DMatrix::zeros(4, 2), 0.3).unwrap();
        assert!((v - 0.5 * measurement_norm(&y).powi(2)).abs() < 1e-12 * v);
        assert!(gh.norm() == 0.0 && gm.norm() == 0.0);
    }

    #[test]
    fn truth_is_a_zero_of_the_fit() {
        let (rows, h, m, y) = setup(8, 2, 3, 2);
        let (v, gh, gm) = objective_and_gradient(
            &rows,
            &y,
            &DMatrix::from_column_slice(8, 1, &h),
            &DMatrix::from_column_slice(6, 1, &m),
            0.0,
        )
        .unwrap();
        assert!(v < 1e-24);
        assert!(gh.norm() < 1e-12 && gm.norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (l, k, n, r) = (16, 3, 4, 2);
        let (rows, _, _, y) = setup(l, k, n, 3);
        let f0 = initial_factors(l, k * n, r, 9);
        let (h, m) = (f0.h * 3.0, f0.m * 3.0);
        let lambda = 0.05;
        let (_, gh, gm) = objective_and_gradient(&rows, &y, &h, &m, lambda).unwrap();
        for trial in 0..5 {
            let dh = DMatrix::from_vec(l, r, gaussian_vector(l * r, 100 + trial));
            let dm = DMatrix::from_vec(k * n, r, gaussian_vector(k * n * r, 200 + trial));
            let eps = 1e-6;
            let fp = objective_and_gradient(&rows, &y, &(&h + &dh * eps), &(&m + &dm * eps), lambda).unwrap().0;
            let fm = objective_and_gradient(&rows, &y, &(&h - &dh * eps), &(&m - &dm * eps), lambda).unwrap().0;
            let fd = (fp - fm) / (2.0 * eps);
            let an = gh.dot(&dh) + gm.dot(&dm);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-12), "fd {fd} analytic {an}");
        }
    }

    #[test]
    fn lambda_schedule_is_geometric() {
        let s = SolverConfig::default().lambda_schedule();
        let expect = [1e-2, 1e-4, 1e-6, 1e-8];
        for (a, b) in s.iter().zip(expect) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SolverConfig { lambda_start: -1.0, ..SolverConfig::default() };
        assert!(matches!(cfg.validate(), Err(DeconvError::Config(_))));
    }

    #[test]
    fn easy_instance_is_recovered_deterministically() {
        let (l, k, n) = (64, 4, 12);
        let (rows, h, m, y) = setup(l, k, n, 4);
        let cfg = SolverConfig { seed: 5, ..SolverConfig::default() };
        let a = solve_blind_deconv(&rows, &y, &cfg).unwrap();
        let b = solve_blind_deconv(&rows, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.residual <= 1e-6 * measurement_norm(&y), "residual {}", a.residual);
        let top = extract_rank1(&a.factors.h, &a.factors.m);
        let err = rank1_distance(top.sigma, top.u.as_slice(), top.v.as_slice(), &h, &m);
        let scale = h.iter().map(|x| x * x).sum::<f64>().sqrt() * m.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err <= 1e-3 * scale);
        assert!(a.rank_deficient);
        // First-order condition of the symmetric penalty balances the factors.
        let (nh, nm) = (a.factors.h.norm(), a.factors.m.norm());
        assert!((nh - nm).abs() <= 1e-6 * nh, "{nh} vs {nm}");
    }

    #[test]
    fn rank1_of_rank1_factors() {
        let h = DVector::from_vec(gaussian_vector(6, 1)).normalize();
        let m = DVector::from_vec(gaussian_vector(4, 2)).normalize();
        let t = extract_rank1(&DMatrix::from_column_slice(6, 1, h.as_slice()), &DMatrix::from_column_slice(4, 1, m.as_slice()));
        assert!((t.sigma - 1.0).abs() < 1e-12);
        let s = t.u.dot(&h).signum();
        assert!((&t.u * s - &h).norm() < 1e-12);
        assert!((&t.v * s - &m).norm() < 1e-12);
    }

    #[test]
    fn rank1_with_tiny_second_factor() {
        let mut h = DMatrix::from_vec(8, 2, gaussian_vector(16, 3));
        let mut m = DMatrix::from_vec(6, 2, gaussian_vector(12, 4));
        h.column_mut(1).scale_mut(1e-4);
        m.column_mut(1).scale_mut(1e-4);
        let t = extract_rank1(&h, &m);
        assert!(t.sigma_ratio <= 1e-7);
        let h0 = h.column(0).normalize();
        assert!((t.u.dot(&h0).abs() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rank1_matches_dense_svd() {
        let h = DMatrix::from_vec(8, 2, gaussian_vector(16, 5));
        let m = DMatrix::from_vec(6, 2, gaussian_vector(12, 6));
        let dense = (&h * m.transpose()).svd(true, true);
        let t = extract_rank1(&h, &m);
        let i = dense.singular_values.imax();
        assert!((t.sigma - dense.singular_values[i]).abs() <= 1e-10 * t.sigma);
        let approx = &t.u * t.v.transpose() * t.sigma;
        let du = dense.u.unwrap().column(i).into_owned();
        let dv = dense.v_t.unwrap().row(i).transpose();
        let reference = du * dv.transpose() * dense.singular_values[i];
        assert!((approx - reference).norm() <= 1e-10 * t.sigma);
    }

    #[test]
    fn zero_product_has_zero_sigma() {
        let t = extract_rank1(&DMatrix::zeros(4, 2), &DMatrix::zeros(3, 2));
        assert_eq!(t.sigma, 0.0);
    }

    #[test]
    fn scale_and_sign_alignment() {
        let h = gaussian_vector(5, 1);
        let m = gaussian_vector(4, 2);
        let u: Vec<f64> = h.iter().map(|x| 3.0 * x).collect();
        let v: Vec<f64> = m.iter().map(|x| x / 3.0).collect();
        let a = align_scale(&u, &v, &h, &m).unwrap();
        assert!((a.alpha - 1.0 / 3.0).abs() < 1e-12);
        assert!(a.lifted_error < 1e-12);

        let un: Vec<f64> = h.iter().map(|x| -x).collect();
        let vn: Vec<f64> = m.iter().map(|x| -x).collect();
        let a = align_scale(&un, &vn, &h, &m).unwrap();
        assert!((a.alpha + 1.0).abs() < 1e-12);
        assert!(a.lifted_error < 1e-12);

        // A sign flip on one factor only is a genuinely different matrix.
        let a = align_scale(&h, &vn, &h, &m).unwrap();
        let scale = rank1_distance(0.0, &h, &m, &h, &m);
        assert!((a.lifted_error - 2.0 * scale).abs() < 1e-12 * scale);

        let zero = vec![0.0; 5];
        let a = align_scale(&zero, &m, &h, &m).unwrap();
        assert!((a.lifted_error - scale).abs() < 1e-12);
    }

    #[test]
    fn small_perturbation_gives_proportional_error() {
        let h = DVector::from_vec(gaussian_vector(10, 1));
        let m = DVector::from_vec(gaussian_vector(8, 2));
        let eps = 1e-3;
        let dh = DVector::from_vec(gaussian_vector(10, 3)).normalize() * (eps * h.norm());
        let dm = DVector::from_vec(gaussian_vector(8, 4)).normalize() * (eps * m.norm());
        let u = &h + dh;
        let v = &m + dm;
        let a = align_scale(u.as_slice(), v.as_slice(), h.as_slice(), m.as_slice()).unwrap();
        let scale = h.norm() * m.norm();
        assert!(a.lifted_error >= 0.5 * eps * scale && a.lifted_error <= 2.0 * eps * scale);
    }

    #[test]
    fn classification_threshold() {
        let x0 = DMatrix::from_element(2, 2, 0.5);
        assert!(classify_recovery(&x0, &x0, DEFAULT_SUCCESS_THRESHOLD).unwrap());
        let mut e = DMatrix::zeros(2, 2);
        e[(0, 1)] = 0.2;
        assert!(!classify_recovery(&(&x0 + e), &x0, DEFAULT_SUCCESS_THRESHOLD).unwrap());
        assert!(!classify_recovery(&DMatrix::zeros(2, 2), &x0, DEFAULT_SUCCESS_THRESHOLD).unwrap());
        assert!(classify_recovery_relative(&(&x0 * 1.05), &x0, 0.1).unwrap());
    }
}
