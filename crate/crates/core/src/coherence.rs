//! Coherence and isometry quantities of an instance, golfing partitions, and
//! the restricted frequency-block operators `S_{n,p}` and their inverses.
//!
//! Throughout, `bhat = F B` is the `L × L` Fourier image of the sparsity
//! basis; row `ℓ` is `b_ℓ*`, so `b_ℓ[ω] = conj(bhat[ℓ, ω])`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::lifting::SparsityBasis;
use crate::seed::{derive_seed, rng_from_seed, Role};
use crate::spectral::FourierPlan;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const MAX_CONDITION: f64 = 1e12;

/// `F B` for a real sparsity basis.
pub fn fourier_image(basis: &SparsityBasis, l: usize) -> DMatrix<Complex64> {
    fourier_image_complex(&basis.to_matrix(l).map(|v| Complex64::new(v, 0.0)))
}

/// `F B` for a complex `L × L` matrix.
pub fn fourier_image_complex(b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let l = b.nrows();
    let plan = FourierPlan::new(l);
    let mut scratch = plan.scratch();
    let mut data = b.as_slice().to_vec();
    plan.forward(&mut data, &mut scratch);
    DMatrix::from_vec(l, b.ncols(), data)
}

fn check_unitary(b: &DMatrix<Complex64>) -> Result<()> {
    if !b.is_square() {
        return Err(DeconvError::ShapeMismatch(format!("basis is {}x{}, expected square", b.nrows(), b.ncols())));
    }
    let gram = b.adjoint() * b;
    let l = b.nrows();
    let mut deviation = 0.0f64;
    for i in 0..l {
        for j in 0..l {
            let target = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    if deviation > 1e-10 || !deviation.is_finite() {
        return Err(DeconvError::NotOrthonormal { deviation });
    }
    Ok(())
}

/// `μ²_max = L · max_{ω,ℓ} |(F B)[ω, ℓ]|²` for a unitary `B`.
pub fn mu_max_sq(b: &DMatrix<Complex64>) -> Result<f64> {
    check_unitary(b)?;
    Ok(mu_max_sq_of_image(&fourier_image_complex(b)))
}

/// `μ²_max` from an already transformed basis `F B`.
pub fn mu_max_sq_of_image(bhat: &DMatrix<Complex64>) -> f64 {
    bhat.nrows() as f64 * bhat.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
}

/// `ρ²₀ = N · max_n ‖m_n‖² / ‖m‖²` for the stacked message split into `n`
/// equal blocks.
pub fn rho0_sq(m: &[f64], n: usize) -> Result<f64> {
    if n == 0 || m.len() % n != 0 || m.is_empty() {
        return Err(DeconvError::InvalidDimension(format!(
            "message of length {} does not split into {n} blocks",
            m.len()
        )));
    }
    let k = m.len() / n;
    let energies: Vec<f64> = m.chunks(k).map(|b| b.iter().map(|v| v * v).sum()).collect();
    let total: f64 = energies.iter().sum();
    if total == 0.0 {
        return Err(DeconvError::ZeroVector("message"));
    }
    Ok(n as f64 * energies.iter().copied().fold(0.0, f64::max) / total)
}

/// Smallest multiple of `p` that is at least `l`.
pub fn effective_len(l: usize, p: usize) -> usize {
    l.div_ceil(p) * p
}

/// Per-input random partitions of the frequencies `[L]` into `P` sets of
/// equal size `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GolfingPartition {
    /// Effective length, a multiple of `P`.
    #[serde(rename = "L")]
    pub l: usize,
    /// Length asked for before padding.
    pub requested_l: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    /// `sets[n][p]`, each sorted.
    pub sets: Vec<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl GolfingPartition {
    /// `Δ_{n,p}`.
    pub fn set(&self, n: usize, p: usize) -> &[usize] {
        &self.sets[n][p]
    }

    /// `Γ_p = {(ℓ, n) : ℓ ∈ Δ_{n,p}}`.
    pub fn gamma(&self, p: usize) -> Vec<(usize, usize)> {
        (0..self.n).flat_map(|n| self.sets[n][p].iter().map(move |&l| (l, n))).collect()
    }

    /// Disjointness, equal sizes, and coverage of `[L]` for every `n`.
    pub fn is_valid(&self) -> bool {
        self.q * self.p == self.l
            && self.sets.len() == self.n
            && self.sets.iter().all(|per_n| {
                let mut seen = vec![false; self.l];
                per_n.len() == self.p
                    && per_n.iter().all(|s| s.len() == self.q)
                    && per_n.iter().flatten().all(|&l| l < self.l && !std::mem::replace(&mut seen[l], true))
                    && seen.iter().all(|&b| b)
            })
    }
}

/// Draws the partitions. When `P` does not divide `L`, the effective length
/// is rounded up to the next multiple of `P`.
pub fn build_partition(l: usize, n: usize, p: usize, seed: u64) -> Result<GolfingPartition> {
    if p == 0 || n == 0 || l == 0 {
        return Err(DeconvError::InvalidDimension("partition needs L, N, P >= 1".into()));
    }
    if p > l {
        return Err(DeconvError::InvalidDimension(format!("P={p} exceeds L={l}")));
    }
    let eff = effective_len(l, p);
    let q = eff / p;
    let sets = (0..n)
        .map(|nn| {
            let mut rng = rng_from_seed(derive_seed(seed, nn as u64, Role::Partition(nn as u32)));
            let mut perm: Vec<usize> = (0..eff).collect();
            perm.shuffle(&mut rng);
            perm.chunks(q)
                .map(|c| {
                    let mut v = c.to_vec();
                    v.sort_unstable();
                    v
                })
                .collect()
        })
        .collect();
    Ok(GolfingPartition { l: eff, requested_l: l, n, p, q, sets, seed })
}

/// One `S_{n,p}` restricted to `Ω × Ω`, with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SBlock {
    pub s: DMatrix<Complex64>,
    pub s_inv: DMatrix<Complex64>,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// `S_{n,p} = Σ_{ℓ∈Δ_{n,p}} (𝒫b_ℓ)(𝒫b_ℓ)*` and `S‡_{n,p}` for all `(n, p)`,
/// stored as `|Ω| × |Ω|` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SOperators {
    pub l: usize,
    pub q: usize,
    pub omega: Vec<usize>,
    /// `blocks[n][p]`.
    pub blocks: Vec<Vec<SBlock>>,
}

fn check_support(omega: &[usize], l: usize) -> Result<()> {
    if omega.is_empty() {
        return Err(DeconvError::InvalidDimension("support must be nonempty".into()));
    }
    let mut seen = vec![false; l];
    for &w in omega {
        if w >= l || std::mem::replace(&mut seen[w], true) {
            return Err(DeconvError::InvalidDimension(format!("support index {w} is out of range or repeated")));
        }
    }
    Ok(())
}

/// `Σ_{ℓ∈set} b_ℓ[ω_i] conj(b_ℓ[ω_j])` over `Ω × Ω`.
fn restricted_gram(bhat: &DMatrix<Complex64>, set: &[usize], omega: &[usize]) -> DMatrix<Complex64> {
    let s = omega.len();
    let mut g = DMatrix::from_element(s, s, ZERO);
    for &l in set {
        for i in 0..s {
            let bi = bhat[(l, omega[i])].conj();
            for j in 0..s {
                g[(i, j)] += bi * bhat[(l, omega[j])];
            }
        }
    }
    g
}

fn hermitian_eigen(a: &DMatrix<Complex64>) -> SymmetricEigen<Complex64, nalgebra::Dyn> {
    // Symmetrize so rounding does not leave a non-Hermitian residue.
    let sym = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    SymmetricEigen::new(sym)
}

/// Builds every `S_{n,p}` on the support `Ω` and inverts it there.
pub fn build_s(partition: &GolfingPartition, bhat: &DMatrix<Complex64>, omega: &[usize]) -> Result<SOperators> {
    let l = partition.l;
    if bhat.shape() != (l, l) {
        return Err(DeconvError::ShapeMismatch(format!(
            "basis image is {}x{}, partition expects L={l}",
            bhat.nrows(),
            bhat.ncols()
        )));
    }
    check_support(omega, l)?;
    if omega.len() > partition.q {
        return Err(DeconvError::InvalidDimension(format!(
            "support size S={} exceeds the partition set size Q={}",
            omega.len(),
            partition.q
        )));
    }
    let mut blocks = Vec::with_capacity(partition.n);
    for n in 0..partition.n {
        let mut row = Vec::with_capacity(partition.p);
        for p in 0..partition.p {
            let s = restricted_gram(bhat, partition.set(n, p), omega);
            let eig = hermitian_eigen(&s);
            let max_eig = eig.eigenvalues.max();
            let min_eig = eig.eigenvalues.min();
            let condition = if min_eig > 0.0 { max_eig / min_eig } else { f64::INFINITY };
            if !(condition <= MAX_CONDITION) {
                return Err(DeconvError::IllConditioned { n, p, condition });
            }
            let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| Complex64::new(1.0 / v, 0.0)));
            let s_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.adjoint();
            row.push(SBlock { s, s_inv, min_eig, max_eig });
        }
        blocks.push(row);
    }
    Ok(SOperators { l, q: partition.q, omega: omega.to_vec(), blocks })
}

impl SOperators {
    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn p(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    /// `max_{n,p} ‖S_{n,p}‖`.
    pub fn max_norm(&self) -> f64 {
        self.blocks.iter().flatten().map(|b| b.max_eig).fold(0.0, f64::max)
    }

    /// `max_{n,p} ‖S‡_{n,p}‖`.
    pub fn max_inverse_norm(&self) -> f64 {
        self.blocks.iter().flatten().map(|b| 1.0 / b.min_eig).fold(0.0, f64::max)
    }

    /// `‖S_{n,p}‖ ≤ 5Q/4L` and `‖S‡_{n,p}‖ ≤ 4L/3Q` for all `(n, p)`.
    pub fn eigen_bounds_hold(&self) -> bool {
        let ratio = self.q as f64 / self.l as f64;
        self.max_norm() <= 1.25 * ratio && self.max_inverse_norm() <= 4.0 / (3.0 * ratio)
    }

    /// `S_{n,p} v` for a vector given on `Ω`.
    pub fn apply_s(&self, n: usize, p: usize, v: &[Complex64]) -> Vec<Complex64> {
        mat_vec(&self.blocks[n][p].s, v)
    }

    /// `S‡_{n,p} v` for a vector given on `Ω`.
    pub fn apply_dagger(&self, n: usize, p: usize, v: &[Complex64]) -> Vec<Complex64> {
        mat_vec(&self.blocks[n][p].s_inv, v)
    }

    /// Dense `L × L` matrix of `S‡_{n,p}`.
    pub fn dagger_dense(&self, n: usize, p: usize) -> DMatrix<Complex64> {
        embed(&self.blocks[n][p].s_inv, &self.omega, self.l)
    }

    /// Dense `L × L` matrix of `S_{n,p}`.
    pub fn s_dense(&self, n: usize, p: usize) -> DMatrix<Complex64> {
        embed(&self.blocks[n][p].s, &self.omega, self.l)
    }
}

fn embed(block: &DMatrix<Complex64>, omega: &[usize], l: usize) -> DMatrix<Complex64> {
    let mut out = DMatrix::from_element(l, l, ZERO);
    for (i, &a) in omega.iter().enumerate() {
        for (j, &b) in omega.iter().enumerate() {
            out[(a, b)] = block[(i, j)];
        }
    }
    out
}

fn mat_vec(a: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * v[j]).sum()).collect()
}

fn spectral_deviation(gram: &DMatrix<Complex64>, target: f64) -> f64 {
    let shifted = gram - DMatrix::from_diagonal_element(gram.nrows(), gram.ncols(), Complex64::new(target, 0.0));
    hermitian_eigen(&shifted).eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// `max_{n,p} ‖Σ_{ℓ∈Δ_{n,p}} 𝒫 b_ℓ b_ℓ* 𝒫 − (Q/L) 𝒫‖` for the fixed support `Ω`.
pub fn rip_deviation(partition: &GolfingPartition, bhat: &DMatrix<Complex64>, omega: &[usize]) -> Result<f64> {
    check_support(omega, partition.l)?;
    if bhat.shape() != (partition.l, partition.l) {
        return Err(DeconvError::ShapeMismatch("basis image does not match the partition length".into()));
    }
    let target = partition.q as f64 / partition.l as f64;
    let mut worst = 0.0f64;
    for n in 0..partition.n {
        for p in 0..partition.p {
            worst = worst.max(spectral_deviation(&restricted_gram(bhat, partition.set(n, p), omega), target));
        }
    }
    Ok(worst)
}

/// The same deviation maximized over every support of size `s`. Exhaustive,
/// so only for small problems (`s ≤ 3`, `L ≤ 32`).
pub fn rip_deviation_uniform(partition: &GolfingPartition, bhat: &DMatrix<Complex64>, s: usize) -> Result<f64> {
    if s == 0 || s > 3 || partition.l > 32 {
        return Err(DeconvError::InvalidDimension(format!(
            "exhaustive check limited to S <= 3 and L <= 32 (S={s}, L={})",
            partition.l
        )));
    }
    let l = partition.l;
    let mut worst = 0.0f64;
    let mut visit = |omega: &[usize]| -> Result<()> {
        worst = worst.max(rip_deviation(partition, bhat, omega)?);
        Ok(())
    };
    for a in 0..l {
        if s == 1 {
            visit(&[a])?;
            continue;
        }
        for b in a + 1..l {
            if s == 2 {
                visit(&[a, b])?;
                continue;
            }
            for c in b + 1..l {
                visit(&[a, b, c])?;
            }
        }
    }
    Ok(worst)
}

/// `μ²₀` and its three constituents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mu0 {
    pub value: f64,
    /// `L‖B̂h‖²∞/‖h‖²`, `L(Q/L)² max_{n,p}‖B̂S‡_{n,p}h‖²∞/‖h‖²`, and
    /// `L max_{n,n'}‖B̂S‡_{n,2}S_{n',1}h‖²∞/‖h‖²` (zero when `P = 1`).
    pub terms: [f64; 3],
}

/// `max_ℓ |(B̂ v)[ℓ]|²` for `v` supported on `Ω` (given on `Ω`).
fn peak_on_support(bhat: &DMatrix<Complex64>, omega: &[usize], v: &[Complex64]) -> f64 {
    (0..bhat.nrows())
        .map(|l| omega.iter().zip(v).map(|(&w, &x)| bhat[(l, w)] * x).sum::<Complex64>().norm_sqr())
        .fold(0.0, f64::max)
}

/// The three-term impulse-response coherence `μ²₀`.
pub fn mu0_sq(bhat: &DMatrix<Complex64>, h: &[f64], partition: &GolfingPartition, ops: &SOperators) -> Result<Mu0> {
    let l = partition.l;
    if h.len() != l || bhat.shape() != (l, l) {
        return Err(DeconvError::LengthMismatch { left: h.len(), right: l });
    }
    let energy: f64 = h.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(DeconvError::ZeroVector("impulse response"));
    }
    if let Some(i) = (0..l).find(|i| h[*i] != 0.0 && !ops.omega.contains(i)) {
        return Err(DeconvError::InvalidDimension(format!("h is nonzero at {i}, outside the support")));
    }
    let omega = &ops.omega;
    let h_omega: Vec<Complex64> = omega.iter().map(|&w| Complex64::new(h[w], 0.0)).collect();
    let lf = l as f64;
    let ratio = partition.q as f64 / lf;

    let t1 = lf * peak_on_support(bhat, omega, &h_omega) / energy;
    let mut t2 = 0.0f64;
    for n in 0..ops.n() {
        for p in 0..ops.p() {
            t2 = t2.max(peak_on_support(bhat, omega, &ops.apply_dagger(n, p, &h_omega)));
        }
    }
    let t2 = lf * ratio * ratio * t2 / energy;
    let mut t3 = 0.0f64;
    if ops.p() >= 2 {
        let first: Vec<Vec<Complex64>> = (0..ops.n()).map(|n2| ops.apply_s(n2, 0, &h_omega)).collect();
        for n in 0..ops.n() {
            for s1 in &first {
                t3 = t3.max(peak_on_support(bhat, omega, &ops.apply_dagger(n, 1, s1)));
            }
        }
    }
    let t3 = lf * t3 / energy;
    Ok(Mu0 {
        value: t1.max(t2).max(t3),
        terms: [t1, t2, t3],
    })
}

/// Ratios of the left-hand to right-hand sides of the two sample-complexity
/// conditions; below one means the condition holds for the given constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremMargins {
    /// `max(μ²₀α₁K, μ²_max S α₂ log²S) · C′ α₁ log²(LN) / L`.
    pub l_margin: Option<f64>,
    /// `C′ ρ²₀ α₁ log(LN) / N`.
    pub n_margin: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    /// The constant `C′ = C·β` used.
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremInputs {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub mu0_sq: f64,
    pub mu_max_sq: f64,
    pub rho0_sq: f64,
    pub beta: f64,
    /// Multiplier `C` in `C′ = C·β`.
    pub c: f64,
}

/// Evaluates both conditions. `α₁ = log(K log(LN))` and
/// `α₂ = log(S log(LN))`; a margin is `None` when its logarithm arguments
/// are at most one.
pub fn theorem_bound(x: &TheoremInputs) -> TheoremMargins {
    let log_ln = ((x.l * x.n) as f64).ln();
    let alpha = |d: usize| {
        let arg = d as f64 * log_ln;
        (arg > 1.0).then(|| arg.ln())
    };
    let (alpha1, alpha2) = (alpha(x.k), alpha(x.s));
    let constant = x.c * x.beta;
    let defined = log_ln > 0.0;
    let l_margin = match (alpha1, alpha2) {
        (Some(a1), Some(a2)) if defined => {
            let log_s = (x.s as f64).ln();
            let lhs = (x.mu0_sq * a1 * x.k as f64).max(x.mu_max_sq * x.s as f64 * a2 * log_s * log_s);
            Some(lhs * constant * a1 * log_ln * log_ln / x.l as f64)
        }
        _ => None,
    };
    let n_margin = alpha1.filter(|_| defined).map(|a1| constant * x.rho0_sq * a1 * log_ln / x.n as f64);
    TheoremMargins { l_margin, n_margin, alpha1, alpha2, constant }
}

/// Summary of the coherence quantities of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub mu_max_sq: f64,
    pub rho0_sq: f64,
    pub mu0_sq: f64,
    pub mu0_terms: [f64; 3],
    pub rip_deviation: f64,
    pub eigen_bounds_hold: bool,
    pub max_s_norm: f64,
    pub max_s_inverse_norm: f64,
    pub effective_l: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub margins: TheoremMargins,
}

/// Everything needed to evaluate the coherences of an instance.
pub struct CoherenceInputs<'a> {
    pub bhat: &'a DMatrix<Complex64>,
    pub h: &'a [f64],
    pub m: &'a [f64],
    pub k: usize,
    pub n: usize,
    pub partition: &'a GolfingPartition,
    pub beta: f64,
    pub c: f64,
}

pub fn coherence_report(x: &CoherenceInputs<'_>) -> Result<CoherenceReport> {
    let omega: Vec<usize> = (0..x.h.len()).filter(|&i| x.h[i] != 0.0).collect();
    let ops = build_s(x.partition, x.bhat, &omega)?;
    let mu0 = mu0_sq(x.bhat, x.h, x.partition, &ops)?;
    let mu_max = mu_max_sq_of_image(x.bhat);
    let rho0 = rho0_sq(x.m, x.n)?;
    let margins = theorem_bound(&TheoremInputs {
        l: x.partition.l,
        k: x.k,
        n: x.n,
        s: omega.len(),
        mu0_sq: mu0.value,
        mu_max_sq: mu_max,
        rho0_sq: rho0,
        beta: x.beta,
        c: x.c,
    });
    Ok(CoherenceReport {
        mu_max_sq: mu_max,
        rho0_sq: rho0,
        mu0_sq: mu0.value,
        mu0_terms: mu0.terms,
        rip_deviation: rip_deviation(x.partition, x.bhat, &omega)?,
        eigen_bounds_hold: ops.eigen_bounds_hold(),
        max_s_norm: ops.max_norm(),
        max_s_inverse_norm: ops.max_inverse_norm(),
        effective_l: x.partition.l,
        p: x.partition.p,
        q: x.partition.q,
        margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{gaussian_vector, gen_sparse_coeff};
    use std::f64::consts::PI;

    fn dft_matrix(l: usize) -> DMatrix<Complex64> {
        let s = 1.0 / (l as f64).sqrt();
        DMatrix::from_fn(l, l, |w, j| Complex64::from_polar(s, -2.0 * PI * (w * j) as f64 / l as f64))
    }

    fn identity_image(l: usize) -> DMatrix<Complex64> {
        fourier_image(&SparsityBasis::Identity, l)
    }

    #[test]
    fn mu_max_extremes() {
        let l = 8;
        let f = dft_matrix(l);
        assert!((mu_max_sq(&f.adjoint()).unwrap() - l as f64).abs() < 1e-10);
        assert!((mu_max_sq(&DMatrix::identity(l, l)).unwrap() - 1.0).abs() < 1e-12);
        assert!(mu_max_sq(&DMatrix::from_element(l, l, Complex64::new(1.0, 0.0))).is_err());
    }

    #[test]
    fn mu_max_matches_direct_scan() {
        let l = 16;
        let b = DMatrix::from_vec(l, l, gaussian_vector(l * l, 3)).qr().q();
        let bc = b.map(|v| Complex64::new(v, 0.0));
        let direct = dft_matrix(l) * &bc;
        let expect = l as f64 * direct.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        let got = mu_max_sq(&bc).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect);
        assert!((1.0..=l as f64).contains(&got));
    }

    #[test]
    fn rho0_examples() {
        assert!((rho0_sq(&[1.0, 1.0, 1.0, 1.0], 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((rho0_sq(&[1.0, 2.0, 0.0, 0.0, 0.0, 0.0], 3).unwrap() - 3.0).abs() < 1e-15);
        assert!((rho0_sq(&[1.0, 0.0, 0.0, 1.0], 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(rho0_sq(&[0.0; 4], 2).is_err());
    }

    #[test]
    fn partitions_trivial_and_singleton() {
        let one = build_partition(10, 3, 1, 1).unwrap();
        assert!(one.is_valid());
        assert!(one.sets.iter().all(|s| s[0] == (0..10).collect::<Vec<_>>()));
        let single = build_partition(6, 2, 6, 1).unwrap();
        assert!(single.is_valid());
        assert!(single.sets.iter().flatten().all(|s| s.len() == 1));
        assert!(build_partition(4, 1, 5, 1).is_err());
    }

    #[test]
    fn partition_invariants_exhaustive() {
        let part = build_partition(8, 2, 2, 7).unwrap();
        assert!(part.is_valid());
        for n in 0..2 {
            let a = part.set(n, 0);
            let b = part.set(n, 1);
            assert!(a.iter().all(|x| !b.contains(x)));
            let mut all: Vec<usize> = a.iter().chain(b).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..8).collect::<Vec<_>>());
        }
        assert_eq!(part.gamma(1).len(), 8);
    }

    #[test]
    fn partition_pads_to_multiple() {
        let part = build_partition(10, 2, 4, 3).unwrap();
        assert_eq!((part.l, part.requested_l, part.q), (12, 10, 3));
        assert!(part.is_valid());
    }

    #[test]
    fn full_set_gives_identity_on_support() {
        let l = 12;
        let part = build_partition(l, 2, 1, 0).unwrap();
        let omega = vec![1, 5, 7];
        let ops = build_s(&part, &identity_image(l), &omega).unwrap();
        for row in &ops.blocks {
            for b in row {
                let eye = DMatrix::<Complex64>::identity(3, 3);
                assert!((&b.s - &eye).norm() < 1e-12);
                assert!((&b.s_inv - &eye).norm() < 1e-12);
            }
        }
        assert!(rip_deviation(&part, &identity_image(l), &omega).unwrap() < 1e-12);
    }

    #[test]
    fn dagger_inverts_on_support() {
        let l = 32;
        let part = build_partition(l, 3, 4, 5).unwrap();
        let omega = vec![0, 3, 9, 20];
        let ops = build_s(&part, &identity_image(l), &omega).unwrap();
        for n in 0..3 {
            for p in 0..4 {
                let prod = ops.dagger_dense(n, p) * ops.s_dense(n, p);
                for i in 0..l {
                    for j in 0..l {
                        let target = if i == j && omega.contains(&i) { 1.0 } else { 0.0 };
                        assert!((prod[(i, j)] - Complex64::new(target, 0.0)).norm() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_support_is_rejected() {
        let part = build_partition(8, 1, 4, 0).unwrap();
        assert!(matches!(build_s(&part, &identity_image(8), &[0, 1, 2]), Err(DeconvError::InvalidDimension(_))));
    }

    #[test]
    fn singular_block_names_its_index() {
        // Frequency ℓ sees only column ℓ, so frequencies {0, 1} miss Ω = {2, 3}.
        let l = 4;
        let mut bhat = DMatrix::from_element(l, l, ZERO);
        for i in 0..l {
            bhat[(i, i)] = Complex64::new(1.0, 0.0);
        }
        let part = GolfingPartition {
            l,
            requested_l: l,
            n: 1,
            p: 2,
            q: 2,
            sets: vec![vec![vec![0, 1], vec![2, 3]]],
            seed: 0,
        };
        let err = build_s(&part, &bhat, &[2, 3]).unwrap_err();
        assert!(matches!(err, DeconvError::IllConditioned { n: 0, p: 0, .. }), "{err}");
    }

    #[test]
    fn single_support_rip_is_scalar() {
        let l = 16;
        let bhat = identity_image(l);
        let part = build_partition(l, 2, 4, 9).unwrap();
        let w = 5;
        let dev = rip_deviation(&part, &bhat, &[w]).unwrap();
        let mut expect = 0.0f64;
        for n in 0..2 {
            for p in 0..4 {
                let sum: f64 = part.set(n, p).iter().map(|&l| bhat[(l, w)].norm_sqr()).sum();
                expect = expect.max((sum - part.q as f64 / l as f64).abs());
            }
        }
        assert!((dev - expect).abs() < 1e-14);
        // For B = I every |b_ℓ[ω]|² is 1/L, so the deviation vanishes.
        assert!(dev < 1e-14);
    }

    #[test]
    fn uniform_rip_dominates_fixed_support() {
        let l = 16;
        let bhat = fourier_image(&SparsityBasis::Orthonormal(DMatrix::from_vec(l, l, gaussian_vector(l * l, 1)).qr().q()), l);
        let part = build_partition(l, 2, 2, 4).unwrap();
        let uni = rip_deviation_uniform(&part, &bhat, 2).unwrap();
        for omega in [[0, 1], [3, 9], [14, 15]] {
            assert!(rip_deviation(&part, &bhat, &omega).unwrap() <= uni + 1e-15);
        }
        assert!(rip_deviation_uniform(&part, &bhat, 4).is_err());
    }

    #[test]
    fn mu0_first_term_matches_direct_formula() {
        let l = 8;
        let bhat = identity_image(l);
        let part = build_partition(l, 2, 2, 1).unwrap();
        let h = vec![1.0 / (l as f64).sqrt(); l];
        let omega: Vec<usize> = (0..l).collect();
        // S = L exceeds Q, so evaluate the first term directly.
        assert!(build_s(&part, &bhat, &omega).is_err());
        let fh = &bhat * nalgebra::DVector::from_iterator(l, h.iter().map(|&v| Complex64::new(v, 0.0)));
        let direct = l as f64 * fh.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        assert!((direct - l as f64).abs() < 1e-12);

        let spike = {
            let mut v = vec![0.0; l];
            v[3] = 2.0;
            v
        };
        let ops = build_s(&part, &bhat, &[3]).unwrap();
        let mu = mu0_sq(&bhat, &spike, &part, &ops).unwrap();
        assert!((mu.terms[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mu0_terms_against_dense_operators() {
        let l = 32;
        let bhat = identity_image(l);
        let part = build_partition(l, 3, 4, 2).unwrap();
        let h = gen_sparse_coeff(l, 3, 8, false).unwrap();
        let ops = build_s(&part, &bhat, &h.support).unwrap();
        let mu = mu0_sq(&bhat, &h.values, &part, &ops).unwrap();
        let hv = nalgebra::DVector::from_iterator(l, h.values.iter().map(|&v| Complex64::new(v, 0.0)));
        let e = hv.norm_squared();
        let peak = |v: nalgebra::DVector<Complex64>| (&bhat * v).iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        let lf = l as f64;
        let ratio = part.q as f64 / lf;
        let t1 = lf * peak(hv.clone()) / e;
        let mut t2 = 0.0f64;
        let mut t3 = 0.0f64;
        for n in 0..3 {
            for p in 0..4 {
                t2 = t2.max(peak(ops.dagger_dense(n, p) * &hv));
            }
            for n2 in 0..3 {
                t3 = t3.max(peak(ops.dagger_dense(n, 1) * ops.s_dense(n2, 0) * &hv));
            }
        }
        let expect = [t1, lf * ratio * ratio * t2 / e, lf * t3 / e];
        for (a, b) in mu.terms.iter().zip(expect) {
            assert!((a - b).abs() <= 1e-10 * b, "{a} vs {b}");
        }
        assert_eq!(mu.value, mu.terms.iter().copied().fold(0.0, f64::max));
    }

    proptest::proptest! {
        #[test]
        fn partitions_are_valid(l in 1usize..64, n in 1usize..4, p in 1usize..8, seed in 0u64..1000) {
            proptest::prop_assume!(p <= l);
            let part = build_partition(l, n, p, seed).unwrap();
            proptest::prop_assert!(part.is_valid());
            proptest::prop_assert!(part.l >= l && part.l < l + p);
        }
    }

    #[test]
    fn theorem_margins() {
        let base = TheoremInputs { l: 1_000_000, k: 1, n: 1000, s: 1, mu0_sq: 1.0, mu_max_sq: 1.0, rho0_sq: 1.0, beta: 4.0, c: 1.0 };
        let m = theorem_bound(&base);
        assert!(m.l_margin.unwrap() < 1.0 && m.n_margin.unwrap() < 1.0);
        // Direct arithmetic for the N condition.
        let log_ln = 1e9f64.ln();
        let expect = 4.0 * log_ln.ln() * log_ln / 1000.0;
        assert!((m.n_margin.unwrap() - expect).abs() < 1e-12);

        // Doubling L only changes log(LN) slightly, so hold log(LN) fixed by
        // halving N as L doubles.
        let doubled = theorem_bound(&TheoremInputs { l: 2_000_000, n: 500, ..base });
        assert!((doubled.l_margin.unwrap() / m.l_margin.unwrap() - 0.5).abs() < 1e-12);

        let starved = theorem_bound(&TheoremInputs { n: 10, ..base });
        assert!(starved.n_margin.unwrap() > 1.0);

        let undefined = theorem_bound(&TheoremInputs { l: 1, n: 2, ..base });
        assert!(undefined.l_margin.is_none() && undefined.n_margin.is_none());
    }
}
