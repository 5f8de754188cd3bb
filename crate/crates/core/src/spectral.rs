//! DFT conventions, circular convolution, and the random signal and subspace
//! generators used throughout the crate.
//!
//! The transform is the unitary DFT
//! `F[w, l] = exp(-2πi·w·l / L) / √L` (0-based indices), so that
//! `‖F v‖ = ‖v‖` and the circular convolution obeys `F(w ⊛ x) = √L·(Fw)⊙(Fx)`.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{check_finite, DeconvError, Result};
use crate::seed::rng_from_seed;

/// Cached forward/inverse FFT plans for one transform length, normalized to be
/// unitary.
#[derive(Clone)]
pub struct FourierPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl fmt::Debug for FourierPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierPlan").field("len", &self.len).finish()
    }
}

impl FourierPlan {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "transform length must be positive");
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            scale: 1.0 / (len as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        let n = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        vec![Complex64::new(0.0, 0.0); n]
    }

    /// Unitary forward transform of every consecutive length-`L` chunk of
    /// `buf` (a column-major matrix with `L` rows transforms column by column).
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, scratch);
        let s = self.scale;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    /// Unitary inverse transform, chunked like [`FourierPlan::forward`].
    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, scratch);
        let s = self.scale;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    /// Forward transform scaled by `factor` instead of `1/√L`.
    pub(crate) fn forward_scaled(&self, buf: &mut [Complex64], scratch: &mut [Complex64], factor: f64) {
        self.forward.process_with_scratch(buf, scratch);
        buf.iter_mut().for_each(|v| *v *= factor);
    }
}

/// A real time-domain signal of length `L ≥ 1` with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVec(Vec<f64>);

impl SignalVec {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(DeconvError::InvalidDimension("signal length must be at least 1".into()));
        }
        check_finite("signal", &entries)?;
        Ok(Self(entries))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SignalVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A frequency-domain vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierVec(Vec<Complex64>);

impl FourierVec {
    pub fn new(entries: Vec<Complex64>) -> Self {
        Self(entries)
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    /// Largest violation of `v[l] = conj(v[(L - l) mod L])`, relative to `‖v‖∞`.
    /// Zero for the transform of any real signal, up to rounding.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        conjugate_symmetry_defect(&self.0)
    }
}

impl Deref for FourierVec {
    type Target = [Complex64];
    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

pub(crate) fn conjugate_symmetry_defect(v: &[Complex64]) -> f64 {
    let len = v.len();
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    (0..len)
        .map(|l| (v[l] - v[(len - l) % len].conj()).norm())
        .fold(0.0, f64::max)
        / peak
}

/// Unitary DFT of a real signal.
pub fn dft(v: &[f64]) -> Result<FourierVec> {
    check_finite("dft input", v)?;
    let buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    dft_complex(buf)
}

/// Unitary DFT of a complex vector.
pub fn dft_complex(mut buf: Vec<Complex64>) -> Result<FourierVec> {
    if buf.is_empty() {
        return Err(DeconvError::InvalidDimension("dft of empty vector".into()));
    }
    if let Some(index) = buf.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(DeconvError::NonFinite { what: "dft input", index });
    }
    let plan = FourierPlan::new(buf.len());
    let mut scratch = plan.scratch();
    plan.forward(&mut buf, &mut scratch);
    Ok(FourierVec(buf))
}

/// Unitary inverse DFT.
pub fn idft(v: &[Complex64]) -> Result<Vec<Complex64>> {
    if v.is_empty() {
        return Err(DeconvError::InvalidDimension("idft of empty vector".into()));
    }
    let plan = FourierPlan::new(v.len());
    let mut scratch = plan.scratch();
    let mut buf = v.to_vec();
    plan.inverse(&mut buf, &mut scratch);
    Ok(buf)
}

/// Circular convolution `y[l] = Σ_j w[j]·x[(l - j) mod L]`, computed through
/// the FFT.
pub fn circ_conv(w: &[f64], x: &[f64]) -> Result<SignalVec> {
    if w.len() != x.len() {
        return Err(DeconvError::LengthMismatch { left: w.len(), right: x.len() });
    }
    if w.is_empty() {
        return Err(DeconvError::InvalidDimension("convolution of empty signals".into()));
    }
    check_finite("convolution input", w)?;
    check_finite("convolution input", x)?;
    let len = w.len();
    let plan = FourierPlan::new(len);
    let mut scratch = plan.scratch();
    // Pack both real signals into one complex transform.
    let mut z: Vec<Complex64> = w.iter().zip(x).map(|(&a, &b)| Complex64::new(a, b)).collect();
    plan.forward(&mut z, &mut scratch);
    let root = (len as f64).sqrt();
    let mut prod: Vec<Complex64> = (0..len)
        .map(|l| {
            let zc = z[(len - l) % len].conj();
            let what = (z[l] + zc) * 0.5;
            let xhat = (z[l] - zc) * Complex64::new(0.0, -0.5);
            what * xhat * root
        })
        .collect();
    plan.inverse(&mut prod, &mut scratch);
    SignalVec::new(prod.into_iter().map(|c| c.re).collect())
}

/// An `L × K` matrix with i.i.d. `Normal(0, 1/L)` entries spanning a generic
/// `K`-dimensional subspace, or a random selection of identity columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericBasis {
    pub columns: DMatrix<f64>,
    pub seed: u64,
}

/// Gaussian coding matrix with i.i.d. `Normal(0, 1/L)` entries.
pub fn gen_generic_basis(l: usize, k: usize, seed: u64) -> Result<GenericBasis> {
    if k == 0 || l == 0 || k > l {
        return Err(DeconvError::InvalidDimension(format!(
            "generic basis needs 1 <= K <= L (K={k}, L={l})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, 1.0 / (l as f64).sqrt()).expect("valid std dev");
    // Column-major fill keeps the draw order stable across shapes.
    let columns = DMatrix::from_fn(l, k, |_, _| 0.0);
    let mut columns = columns;
    for v in columns.iter_mut() {
        *v = normal.sample(&mut rng);
    }
    Ok(GenericBasis { columns, seed })
}

/// `K` distinct standard-basis columns chosen uniformly at random, so
/// `C m` is a `K`-sparse vector with known support.
pub fn gen_identity_subset_basis(l: usize, k: usize, seed: u64) -> Result<GenericBasis> {
    if k == 0 || l == 0 || k > l {
        return Err(DeconvError::InvalidDimension(format!(
            "identity-subset basis needs 1 <= K <= L (K={k}, L={l})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let picks = sample(&mut rng, l, k).into_vec();
    let mut columns = DMatrix::zeros(l, k);
    for (j, &row) in picks.iter().enumerate() {
        columns[(row, j)] = 1.0;
    }
    Ok(GenericBasis { columns, seed })
}

/// An `S`-sparse coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoeff {
    pub values: Vec<f64>,
    /// Sorted support indices.
    pub support: Vec<usize>,
}

impl SparseCoeff {
    pub fn sparsity(&self) -> usize {
        self.support.len()
    }
}

/// Draws an `S`-sparse vector with uniformly random support and i.i.d.
/// standard normal nonzeros. `dense` forces `S = L`.
pub fn gen_sparse_coeff(l: usize, s: usize, seed: u64, dense: bool) -> Result<SparseCoeff> {
    let s = if dense { l } else { s };
    if l == 0 || s == 0 || s > l {
        return Err(DeconvError::InvalidDimension(format!(
            "sparse coefficients need 1 <= S <= L (S={s}, L={l})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut support = if s == l {
        (0..l).collect::<Vec<_>>()
    } else {
        sample(&mut rng, l, s).into_vec()
    };
    support.sort_unstable();
    let mut values = vec![0.0; l];
    for &i in &support {
        let mut v: f64 = rng.sample(StandardNormal);
        // A Gaussian draw is nonzero almost surely; keep the support exact.
        while v == 0.0 {
            v = rng.sample(StandardNormal);
        }
        values[i] = v;
    }
    Ok(SparseCoeff { values, support })
}

/// Standard normal vector of length `len`.
pub fn gaussian_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
