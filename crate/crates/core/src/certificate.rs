//! Golfing dual certificate for the lifted rank-1 truth `h mᵀ`, numerical
//! checks of the sufficient optimality conditions, injectivity on the
//! tangent-sparse subspace, and coherences of the golfing iterates.
//!
//! Everything lives in the real lifted space `ℝ^{L×KN}`. Where a step of the
//! construction produces a complex matrix (`S‡` has complex entries), the
//! measurement adjoint maps back to real matrices by taking real parts.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coherence::{GolfingPartition, SOperators};
use crate::error::{DeconvError, Result};
use crate::lifting::{LiftedMap, LiftedMatrix, MeasurementRows, MeasurementSet};

/// Unit-normalized `h`, `m` and the support `Ω` of `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorContext {
    h: DVector<f64>,
    m: DVector<f64>,
    omega: Vec<usize>,
    in_omega: Vec<bool>,
}

impl ProjectorContext {
    pub fn new(h: &[f64], m: &[f64], omega: &[usize]) -> Result<Self> {
        let h = DVector::from_column_slice(h);
        let m = DVector::from_column_slice(m);
        let (nh, nm) = (h.norm(), m.norm());
        if nh == 0.0 || !nh.is_finite() {
            return Err(DeconvError::ZeroVector("impulse response"));
        }
        if nm == 0.0 || !nm.is_finite() {
            return Err(DeconvError::ZeroVector("message"));
        }
        let in_omega = support_mask(omega, h.len())?;
        if let Some(i) = (0..h.len()).find(|&i| h[i] != 0.0 && !in_omega[i]) {
            return Err(DeconvError::InvalidDimension(format!("h is nonzero at {i}, outside the support")));
        }
        Ok(Self { h: h / nh, m: m / nm, omega: omega.to_vec(), in_omega })
    }

    /// Context whose support is the nonzero pattern of `h`.
    pub fn from_support_of(h: &[f64], m: &[f64]) -> Result<Self> {
        let omega: Vec<usize> = (0..h.len()).filter(|&i| h[i] != 0.0).collect();
        Self::new(h, m, &omega)
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    /// `(L, KN)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.h.len(), self.m.len())
    }

    /// `h mᵀ`.
    pub fn truth(&self) -> LiftedMatrix {
        &self.h * self.m.transpose()
    }

    fn check(&self, z: &LiftedMatrix) -> Result<()> {
        if z.shape() != self.shape() {
            return Err(DeconvError::ShapeMismatch(format!(
                "expected {}x{}, got {}x{}",
                self.h.len(),
                self.m.len(),
                z.nrows(),
                z.ncols()
            )));
        }
        Ok(())
    }
}

fn support_mask(omega: &[usize], l: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; l];
    for &w in omega {
        if w >= l {
            return Err(DeconvError::InvalidDimension(format!("support index {w} is out of range for L={l}")));
        }
        mask[w] = true;
    }
    Ok(mask)
}

/// `𝒫(Z)`: zeroes the rows of `Z` outside `Ω`.
pub fn project_p(z: &LiftedMatrix, omega: &[usize]) -> Result<LiftedMatrix> {
    let mask = support_mask(omega, z.nrows())?;
    Ok(mask_rows(z, &mask))
}

fn mask_rows(z: &LiftedMatrix, mask: &[bool]) -> LiftedMatrix {
    let mut out = z.clone();
    for (i, keep) in mask.iter().enumerate() {
        if !keep {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

/// `ℛ(Z) = hhᵀZ + 𝒫(Zmmᵀ) − hhᵀZmmᵀ`, the orthogonal projector onto
/// `{α h vᵀ + u mᵀ : u supported on Ω}`.
pub fn project_r(ctx: &ProjectorContext, z: &LiftedMatrix) -> Result<LiftedMatrix> {
    ctx.check(z)?;
    let (h, m) = (&ctx.h, &ctx.m);
    let htz = z.tr_mul(h); // Zᵀh, length KN
    let zm = z * m; // length L
    let hzm = h.dot(&zm);
    let mut col = mask_rows(&LiftedMatrix::from_column_slice(zm.len(), 1, zm.as_slice()), &ctx.in_omega);
    col.column_mut(0).axpy(-hzm, h, 1.0);
    let mut out = h * htz.transpose();
    out.ger(1.0, &col.column(0), m, 1.0);
    Ok(out)
}

/// `ℛ⊥(Z) = Z − ℛ(Z)`.
pub fn project_r_perp(ctx: &ProjectorContext, z: &LiftedMatrix) -> Result<LiftedMatrix> {
    Ok(z - project_r(ctx, z)?)
}

/// `𝒜*_p𝒜_p(Z)` for a complex `Z`: the measurements in `Γ_p`, mapped back
/// through the real adjoint. Also returns the measurement vector used.
fn golf_step(rows: &MeasurementRows, partition: &GolfingPartition, p: usize, z: &DMatrix<Complex64>) -> Result<(LiftedMatrix, MeasurementSet)> {
    let full = rows.apply_a_complex(z)?;
    let mut masked = MeasurementSet::zeros(full.nrows(), full.ncols());
    for n in 0..partition.n {
        for &l in partition.set(n, p) {
            masked[(l, n)] = full[(l, n)];
        }
    }
    Ok((rows.adjoint_a(&masked)?, masked))
}

/// `𝒮‡_p(X) = Σ_n S‡_{n,p} X D_n`.
pub fn apply_s_dagger(ops: &SOperators, p: usize, x: &LiftedMatrix) -> DMatrix<Complex64> {
    let k = x.ncols() / ops.n();
    let omega = &ops.omega;
    let mut out = DMatrix::from_element(x.nrows(), x.ncols(), Complex64::new(0.0, 0.0));
    for n in 0..ops.n() {
        let block = x.view((0, n * k), (x.nrows(), k));
        let restricted = DMatrix::from_fn(omega.len(), k, |i, j| Complex64::new(block[(omega[i], j)], 0.0));
        let mapped = &ops.blocks[n][p].s_inv * restricted;
        for (i, &w) in omega.iter().enumerate() {
            for j in 0..k {
                out[(w, n * k + j)] = mapped[(i, j)];
            }
        }
    }
    out
}

/// Iterates of the golfing scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateTrace {
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    /// `‖W_p‖_F` for `p = 0..=P`; `W_0 = −hmᵀ`.
    pub w_norms: Vec<f64>,
    /// `W_p` for `p = 0..=P`.
    #[serde(skip)]
    pub w: Vec<LiftedMatrix>,
    /// The certificate `Y = Y_P`.
    #[serde(skip)]
    pub y: LiftedMatrix,
    /// Measurement vector `u` with `Y = 𝒜*(u)`.
    #[serde(skip)]
    pub dual: MeasurementSet,
}

impl CertificateTrace {
    /// Whether `‖W_p‖_F` strictly decreases from `p = 0` to `P`.
    pub fn strictly_decreasing(&self) -> bool {
        self.w_norms.windows(2).all(|w| w[1] < w[0])
    }
}

/// Runs `Y_1 = (L/Q)𝒜*_1𝒜_1(hmᵀ)`,
/// `Y_p = Y_{p−1} + 𝒜*_p𝒜_p𝒮‡_p(hmᵀ − ℛ(Y_{p−1}))`.
pub fn golfing_certificate(
    ctx: &ProjectorContext,
    rows: &MeasurementRows,
    partition: &GolfingPartition,
    ops: &SOperators,
) -> Result<CertificateTrace> {
    let (l, kn) = ctx.shape();
    if (rows.l(), rows.k() * rows.n()) != (l, kn) || partition.l != l || partition.n != rows.n() {
        return Err(DeconvError::ShapeMismatch(format!(
            "rows are {}x{}, partition has L={} N={}, truth is {l}x{kn}",
            rows.l(),
            rows.k() * rows.n(),
            partition.l,
            partition.n
        )));
    }
    if ops.omega != ctx.omega || ops.p() != partition.p || ops.n() != partition.n {
        return Err(DeconvError::ShapeMismatch("S operators do not match the support or partition".into()));
    }
    let truth = ctx.truth();
    let scale = l as f64 / partition.q as f64;
    let (first, u1) = golf_step(rows, partition, 0, &truth.map(|v| Complex64::new(v, 0.0)))?;
    let mut y = first * scale;
    let mut dual = u1 * Complex64::new(scale, 0.0);
    let mut w = vec![-truth.clone()];
    w.push(project_r(ctx, &y)? - &truth);
    for p in 1..partition.p {
        let residual = -&w[p];
        let (step, u) = golf_step(rows, partition, p, &apply_s_dagger(ops, p, &residual))?;
        y += step;
        dual += u;
        w.push(project_r(ctx, &y)? - &truth);
    }
    Ok(CertificateTrace {
        p: partition.p,
        q: partition.q,
        w_norms: w.iter().map(|x| x.norm()).collect(),
        w,
        y,
        dual,
    })
}

/// Ratios of the two certificate conditions to their thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityMargins {
    /// `4γ‖hmᵀ − ℛ(Y)‖_F`.
    pub in_space: f64,
    /// `2‖ℛ⊥(Y)‖`, spectral norm.
    pub off_space: f64,
    pub gamma: f64,
}

impl OptimalityMargins {
    pub fn holds(&self) -> bool {
        self.in_space <= 1.0 && self.off_space <= 1.0
    }
}

/// Evaluates both conditions for a candidate certificate `Y`.
pub fn verify_optimality(ctx: &ProjectorContext, y: &LiftedMatrix, gamma: f64) -> Result<OptimalityMargins> {
    let ry = project_r(ctx, y)?;
    let in_space = 4.0 * gamma * (ctx.truth() - &ry).norm();
    let perp = y - ry;
    let off_space = 2.0 * spectral_norm(&perp);
    Ok(OptimalityMargins { in_space, off_space, gamma })
}

fn spectral_norm(a: &LiftedMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Orthonormal basis of the tangent-sparse subspace as rank-1 pairs
/// `(u, v)`: `h e_jᵀ` for every column `j`, and `u_i mᵀ` with `u_i`
/// supported on `Ω` and orthogonal to `h`.
pub fn tangent_basis(ctx: &ProjectorContext) -> Vec<(DVector<f64>, DVector<f64>)> {
    let (l, kn) = ctx.shape();
    let mut out = Vec::with_capacity(kn + ctx.omega.len());
    for j in 0..kn {
        let mut e = DVector::zeros(kn);
        e[j] = 1.0;
        out.push((ctx.h.clone(), e));
    }
    // Gram-Schmidt of the Ω coordinate vectors against h.
    let mut us: Vec<DVector<f64>> = vec![ctx.h.clone()];
    for &w in &ctx.omega {
        let mut u = DVector::zeros(l);
        u[w] = 1.0;
        for _ in 0..2 {
            for q in &us {
                let c = q.dot(&u);
                u.axpy(-c, q, 1.0);
            }
        }
        let norm = u.norm();
        if norm > 1e-8 {
            us.push(u / norm);
        }
    }
    out.extend(us.into_iter().skip(1).map(|u| (u, ctx.m.clone())));
    out
}

/// How well the measurement map preserves norms on the tangent-sparse
/// subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injectivity {
    /// `max ‖ℛ(Z)‖_F / (√2 ‖𝒜ℛ(Z)‖_F)`; infinite when `𝒜` has a null
    /// direction in the subspace.
    pub margin: f64,
    /// Smallest eigenvalue of the restricted Gram matrix.
    pub lambda_min: f64,
    /// `‖ℛ𝒜*𝒜ℛ − ℛ‖`.
    pub deviation: f64,
    pub dimension: usize,
}

impl Injectivity {
    pub fn holds(&self) -> bool {
        self.margin <= 1.0
    }
}

/// Builds the Gram matrix of `map` on an orthonormal basis of the subspace
/// and reads off its extreme eigenvalues.
pub fn injectivity_margin<M: LiftedMap + ?Sized>(ctx: &ProjectorContext, map: &M) -> Result<Injectivity> {
    if map.lifted_shape() != ctx.shape() {
        return Err(DeconvError::ShapeMismatch("map and context have different lifted shapes".into()));
    }
    let basis = tangent_basis(ctx);
    let images: Vec<Vec<f64>> = basis.iter().map(|(u, v)| map.apply_rank1_real(u.as_slice(), v.as_slice())).collect();
    let rows = images.first().map_or(0, Vec::len);
    let v = DMatrix::from_fn(rows, images.len(), |i, j| images[j][i]);
    let gram = v.tr_mul(&v);
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let lambda_min = eig.min();
    let deviation = eig.iter().map(|e| (e - 1.0).abs()).fold(0.0, f64::max);
    let margin = if lambda_min > 0.0 { 1.0 / (2.0f64.sqrt() * lambda_min.sqrt()) } else { f64::INFINITY };
    Ok(Injectivity { margin, lambda_min, deviation, dimension: basis.len() })
}

/// Coherences of one golfing iterate with their target decay levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateCoherence {
    pub p: usize,
    pub rho: f64,
    pub nu: f64,
    pub mu: f64,
    /// `2^{−p}√(Q/L)ρ₀`.
    pub rho_bound: f64,
    /// `2^{−p+3}μ₀ρ₀`.
    pub nu_bound: f64,
    /// `2^{−p+2}μ₀`.
    pub mu_bound: f64,
}

/// `max_n ‖W D_n‖²_F`, the block energy of `W` per input.
pub fn max_block_energy(w: &LiftedMatrix, n: usize) -> f64 {
    let k = w.ncols() / n;
    (0..n).map(|i| w.columns(i * k, k).norm_squared()).fold(0.0, f64::max)
}

/// `ρ_p`, `ν_p`, `μ_p` for the iterate `W_p`, `1 ≤ p < P`; they use the
/// frequency sets of step `p + 1`.
pub fn iterate_coherences(
    bhat: &DMatrix<Complex64>,
    partition: &GolfingPartition,
    ops: &SOperators,
    w: &LiftedMatrix,
    p: usize,
    mu0_sq: f64,
    rho0_sq: f64,
) -> Result<IterateCoherence> {
    if p == 0 || p >= partition.p {
        return Err(DeconvError::InvalidDimension(format!(
            "iterate coherences need 1 <= p < P (p={p}, P={})",
            partition.p
        )));
    }
    let (l, q, nn) = (partition.l as f64, partition.q as f64, partition.n);
    let k = w.ncols() / nn;
    let omega = &ops.omega;
    let mut rho_max = 0.0f64;
    let mut nu_max = 0.0f64;
    let mut mu_sum = 0.0f64;
    for n in 0..nn {
        // S‡_{n,p+1} W D_n on Ω, then b_ℓ* times it for each ℓ.
        let restricted = DMatrix::from_fn(omega.len(), k, |i, j| Complex64::new(w[(omega[i], n * k + j)], 0.0));
        let mapped = &ops.blocks[n][p].s_inv * restricted;
        let energy = |ell: usize| -> f64 {
            (0..k)
                .map(|j| omega.iter().enumerate().map(|(i, &c)| bhat[(ell, c)] * mapped[(i, j)]).sum::<Complex64>().norm_sqr())
                .sum()
        };
        let next = partition.set(n, p);
        rho_max = rho_max.max(next.iter().map(|&ell| energy(ell)).sum());
        nu_max = nu_max.max(next.iter().map(|&ell| energy(ell)).fold(0.0, f64::max));
        mu_sum += partition.set(n, p - 1).iter().map(|&ell| energy(ell)).fold(0.0, f64::max);
    }
    let nf = nn as f64;
    let (mu0, rho0) = (mu0_sq.sqrt(), rho0_sq.sqrt());
    let decay = 2f64.powi(-(p as i32));
    Ok(IterateCoherence {
        p,
        rho: (q / l * nf * rho_max).sqrt(),
        nu: (q * q / l * nf * nu_max).sqrt(),
        mu: (q * q / l * mu_sum).sqrt(),
        rho_bound: decay * (q / l).sqrt() * rho0,
        nu_bound: 8.0 * decay * mu0 * rho0,
        mu_bound: 4.0 * decay * mu0,
    })
}

/// `ceil(0.5·log₂(4βK log(LN)))`, reduced until `Q = L/P ≥ S`.
pub fn default_partition_count(l: usize, k: usize, n: usize, s: usize, beta: f64) -> usize {
    let arg = 4.0 * beta * k as f64 * ((l * n) as f64).ln();
    let mut p = if arg > 1.0 { (0.5 * arg.log2()).ceil().max(1.0) as usize } else { 1 };
    while p > 1 && l / p < s.max(1) {
        p -= 1;
    }
    p.min(l.max(1))
}

/// Outcome of a full certificate run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub trace: CertificateTrace,
    pub optimality: OptimalityMargins,
    pub injectivity: Injectivity,
    pub iterate_coherences: Vec<IterateCoherence>,
    /// Both certificate conditions and injectivity hold. A failure is
    /// inconclusive.
    pub pass: bool,
}

/// Builds the certificate and runs every check. `gamma` defaults to the
/// exact operator norm.
pub fn certify(
    ctx: &ProjectorContext,
    rows: &MeasurementRows,
    partition: &GolfingPartition,
    ops: &SOperators,
    gamma: Option<f64>,
    mu0_sq: f64,
    rho0_sq: f64,
) -> Result<CertificateReport> {
    let trace = golfing_certificate(ctx, rows, partition, ops)?;
    let gamma = gamma.unwrap_or_else(|| rows.operator_norm_a());
    let optimality = verify_optimality(ctx, &trace.y, gamma)?;
    let injectivity = injectivity_margin(ctx, rows)?;
    let iterate_coherences = (1..partition.p)
        .map(|p| iterate_coherences(rows.bhat(), partition, ops, &trace.w[p], p, mu0_sq, rho0_sq))
        .collect::<Result<Vec<_>>>()?;
    let pass = optimality.holds() && injectivity.holds();
    Ok(CertificateReport { trace, optimality, injectivity, iterate_coherences, pass })
}
