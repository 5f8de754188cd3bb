//! The lifted measurement map.
//!
//! With `B̂ = F B` (row `ℓ` is `b_ℓ*`) and `Ĉ_n = √L F C_n` (row `ℓ` is
//! `c_{ℓ,n}`), the Fourier-domain observations of `y_n = w ⊛ x_n`,
//! `w = B h`, `x_n = C_n m_n`, are
//!
//! ```text
//! ŷ[ℓ, n] = Σ_{i,k} B̂[ℓ, i] · X[i, nK + k] · Ĉ_n[ℓ, k],     X = h mᵀ,
//! ```
//!
//! which is linear in the `L × KN` lifted matrix `X`. Block `n` of `X` is the
//! column range `nK..(n+1)K`.
//!
//! The lifted space is real. The adjoint is taken with respect to the real
//! inner product, `⟨X, A*(u)⟩ = Re⟨A(X), u⟩`, which gives
//! `A*(u)_n = Re(B̂ᵀ diag(ū_n) Ĉ_n)`.

use std::collections::HashSet;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{DeconvError, Result};
use crate::spectral::{FourierPlan, GenericBasis};

/// Complex `L × N` array of Fourier-domain measurements `ŷ[ℓ, n]`.
pub type MeasurementSet = DMatrix<Complex64>;

/// Real `L × KN` lifted matrix.
pub type LiftedMatrix = DMatrix<f64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ORTHONORMAL_TOL: f64 = 1e-10;

/// The basis in which the impulse response is sparse, `w = B h`.
#[derive(Debug, Clone, PartialEq)]
pub enum SparsityBasis {
    Identity,
    Orthonormal(DMatrix<f64>),
}

impl SparsityBasis {
    /// `B · v` for a column-major `L × cols` block.
    fn apply(&self, src: &[f64], l: usize, cols: usize) -> Vec<f64> {
        match self {
            SparsityBasis::Identity => src.to_vec(),
            SparsityBasis::Orthonormal(b) => {
                let v = DMatrix::from_column_slice(l, cols, src);
                (b * v).as_slice().to_vec()
            }
        }
    }

    /// `Bᵀ · v` for a column-major `L × cols` block.
    fn apply_transpose(&self, src: Vec<f64>, l: usize, cols: usize) -> Vec<f64> {
        match self {
            SparsityBasis::Identity => src,
            SparsityBasis::Orthonormal(b) => {
                let v = DMatrix::from_vec(l, cols, src);
                b.tr_mul(&v).as_slice().to_vec()
            }
        }
    }

    /// Dense `L × L` matrix of the basis.
    pub fn to_matrix(&self, l: usize) -> DMatrix<f64> {
        match self {
            SparsityBasis::Identity => DMatrix::identity(l, l),
            SparsityBasis::Orthonormal(b) => b.clone(),
        }
    }
}

/// One coding matrix `C_n`, stored densely or, when every column is a distinct
/// standard basis vector, as the list of selected rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Coding {
    Dense(DMatrix<f64>),
    Selection(Vec<usize>),
}

impl Coding {
    pub fn from_basis(basis: &GenericBasis) -> Self {
        let c = &basis.columns;
        let mut rows = Vec::with_capacity(c.ncols());
        for col in c.column_iter() {
            let ones: Vec<usize> = col.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
            let zeros = col.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != col.len() {
                return Coding::Dense(c.clone());
            }
            rows.push(ones[0]);
        }
        let distinct: HashSet<_> = rows.iter().collect();
        if distinct.len() == rows.len() {
            Coding::Selection(rows)
        } else {
            Coding::Dense(c.clone())
        }
    }

    fn shape(&self, l: usize) -> (usize, usize) {
        match self {
            Coding::Dense(c) => c.shape(),
            Coding::Selection(rows) => (l, rows.len()),
        }
    }

    /// `C · M` for a `K × R` block (column-major slice), returning `L × R`.
    fn apply(&self, m: &[f64], l: usize, k: usize, r: usize) -> Vec<f64> {
        match self {
            Coding::Dense(c) => {
                let mm = DMatrix::from_column_slice(k, r, m);
                (c * mm).as_slice().to_vec()
            }
            Coding::Selection(rows) => {
                let mut out = vec![0.0; l * r];
                for j in 0..r {
                    for (kk, &row) in rows.iter().enumerate() {
                        out[j * l + row] = m[j * k + kk];
                    }
                }
                out
            }
        }
    }

    /// `Cᵀ · V` for an `L × R` block, written into a `K × R` slice.
    fn apply_transpose_into(&self, v: &[f64], l: usize, r: usize, out: &mut [f64]) {
        match self {
            Coding::Dense(c) => {
                let vv = DMatrix::from_column_slice(l, r, v);
                out.copy_from_slice(c.tr_mul(&vv).as_slice());
            }
            Coding::Selection(rows) => {
                let k = rows.len();
                for j in 0..r {
                    for (kk, &row) in rows.iter().enumerate() {
                        out[j * k + kk] = v[j * l + row];
                    }
                }
            }
        }
    }

    pub fn to_matrix(&self, l: usize) -> DMatrix<f64> {
        match self {
            Coding::Dense(c) => c.clone(),
            Coding::Selection(rows) => {
                let mut c = DMatrix::zeros(l, rows.len());
                for (k, &row) in rows.iter().enumerate() {
                    c[(row, k)] = 1.0;
                }
                c
            }
        }
    }
}

/// Measurement rows `b_ℓ`, `c_{ℓ,n}` of one instance, with the transforms
/// needed to apply the lifted map quickly.
#[derive(Debug)]
pub struct MeasurementRows {
    l: usize,
    k: usize,
    n: usize,
    basis: SparsityBasis,
    coding: Option<Vec<Coding>>,
    plan: FourierPlan,
    bhat: OnceLock<DMatrix<Complex64>>,
    chat: OnceLock<Vec<DMatrix<Complex64>>>,
}

impl Clone for MeasurementRows {
    fn clone(&self) -> Self {
        let out = Self {
            l: self.l,
            k: self.k,
            n: self.n,
            basis: self.basis.clone(),
            coding: self.coding.clone(),
            plan: self.plan.clone(),
            bhat: OnceLock::new(),
            chat: OnceLock::new(),
        };
        if let Some(b) = self.bhat.get() {
            let _ = out.bhat.set(b.clone());
        }
        if let Some(c) = self.chat.get() {
            let _ = out.chat.set(c.clone());
        }
        out
    }
}

/// Checks `‖BᵀB − I‖_max ≤ 1e−10`.
pub fn check_orthonormal(b: &DMatrix<f64>) -> Result<()> {
    if !b.is_square() {
        return Err(DeconvError::ShapeMismatch(format!(
            "sparsity basis must be square, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let gram = b.tr_mul(b);
    let deviation = (gram - DMatrix::identity(b.nrows(), b.nrows())).amax();
    if deviation > ORTHONORMAL_TOL || !deviation.is_finite() {
        return Err(DeconvError::NotOrthonormal { deviation });
    }
    Ok(())
}

/// Builds the measurement rows from the sparsity basis and the `N` coding
/// matrices.
pub fn build_rows(basis: SparsityBasis, bases: &[GenericBasis]) -> Result<MeasurementRows> {
    let l = bases.first().map_or(0, |b| b.columns.nrows());
    let codings: Vec<Coding> = bases.iter().map(Coding::from_basis).collect();
    build_rows_with_len(l, basis, codings)
}

pub fn build_rows_from_codings(basis: SparsityBasis, codings: Vec<Coding>) -> Result<MeasurementRows> {
    let first = codings
        .first()
        .ok_or_else(|| DeconvError::InvalidDimension("at least one coding matrix is required".into()))?;
    let l = match first {
        Coding::Dense(c) => c.nrows(),
        Coding::Selection(_) => match &basis {
            SparsityBasis::Orthonormal(b) => b.nrows(),
            SparsityBasis::Identity => {
                return Err(DeconvError::InvalidDimension(
                    "selection coding with identity basis needs an explicit length; use build_rows".into(),
                ))
            }
        },
    };
    build_rows_with_len(l, basis, codings)
}

/// As [`build_rows_from_codings`] with the signal length given explicitly.
pub fn build_rows_with_len(l: usize, basis: SparsityBasis, codings: Vec<Coding>) -> Result<MeasurementRows> {
    if l == 0 || codings.is_empty() {
        return Err(DeconvError::InvalidDimension("need L >= 1 and N >= 1".into()));
    }
    let (_, k) = codings[0].shape(l);
    for (i, c) in codings.iter().enumerate() {
        let shape = c.shape(l);
        if shape != (l, k) {
            return Err(DeconvError::ShapeMismatch(format!(
                "coding matrix {i} is {}x{}, expected {l}x{k}",
                shape.0, shape.1
            )));
        }
        if let Coding::Selection(rows) = c {
            if rows.iter().any(|&r| r >= l) {
                return Err(DeconvError::ShapeMismatch(format!("coding matrix {i} selects a row beyond L={l}")));
            }
        }
    }
    if k == 0 || k > l {
        return Err(DeconvError::InvalidDimension(format!("need 1 <= K <= L (K={k}, L={l})")));
    }
    if let SparsityBasis::Orthonormal(b) = &basis {
        if b.nrows() != l {
            return Err(DeconvError::ShapeMismatch(format!(
                "sparsity basis is {}x{}, expected {l}x{l}",
                b.nrows(),
                b.ncols()
            )));
        }
        check_orthonormal(b)?;
    }
    Ok(MeasurementRows {
        l,
        k,
        n: codings.len(),
        basis,
        coding: Some(codings),
        plan: FourierPlan::new(l),
        bhat: OnceLock::new(),
        chat: OnceLock::new(),
    })
}

impl MeasurementRows {
    /// Rows given directly in the Fourier domain: `bhat` is `L × L` with row
    /// `ℓ` equal to `b_ℓ*`, and `chat[n]` is `L × K` with row `ℓ` equal to
    /// `c_{ℓ,n}`. Used for synthetic operators that do not come from real
    /// time-domain matrices.
    pub fn from_fourier_rows(bhat: DMatrix<Complex64>, chat: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let l = bhat.nrows();
        if l == 0 || !bhat.is_square() || chat.is_empty() {
            return Err(DeconvError::InvalidDimension("need square nonempty bhat and N >= 1".into()));
        }
        let k = chat[0].ncols();
        for (i, c) in chat.iter().enumerate() {
            if c.shape() != (l, k) {
                return Err(DeconvError::ShapeMismatch(format!(
                    "Fourier coding rows {i} are {}x{}, expected {l}x{k}",
                    c.nrows(),
                    c.ncols()
                )));
            }
        }
        let rows = Self {
            l,
            k,
            n: chat.len(),
            basis: SparsityBasis::Identity,
            coding: None,
            plan: FourierPlan::new(l),
            bhat: OnceLock::new(),
            chat: OnceLock::new(),
        };
        let _ = rows.bhat.set(bhat);
        let _ = rows.chat.set(chat);
        Ok(rows)
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &SparsityBasis {
        &self.basis
    }

    pub fn codings(&self) -> Option<&[Coding]> {
        self.coding.as_deref()
    }

    fn unitary(&self) -> f64 {
        1.0 / (self.l as f64).sqrt()
    }

    /// `B̂ = F B`; row `ℓ` is `b_ℓ*`.
    pub fn bhat(&self) -> &DMatrix<Complex64> {
        self.bhat.get_or_init(|| {
            let l = self.l;
            let b = self.basis.to_matrix(l);
            let cols = fft_real_columns(&self.plan, b.as_slice(), l, self.unitary());
            DMatrix::from_vec(l, l, cols)
        })
    }

    /// `Ĉ_n = √L F C_n` for every `n`; row `ℓ` of entry `n` is `c_{ℓ,n}`.
    pub fn chat(&self) -> &[DMatrix<Complex64>] {
        self.chat.get_or_init(|| {
            let codings = self.coding.as_ref().expect("rows without time-domain coding carry chat");
            codings
                .iter()
                .map(|c| {
                    let dense = c.to_matrix(self.l);
                    DMatrix::from_vec(self.l, self.k, fft_real_columns(&self.plan, dense.as_slice(), self.k, 1.0))
                })
                .collect()
        })
    }

    /// The vector `b_ℓ`.
    pub fn b_row(&self, l: usize) -> Vec<Complex64> {
        self.bhat().row(l).iter().map(|z| z.conj()).collect()
    }

    /// The vector `c_{ℓ,n}`.
    pub fn c_row(&self, l: usize, n: usize) -> Vec<Complex64> {
        self.chat()[n].row(l).iter().copied().collect()
    }

    fn check_lifted_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if rows != self.l || cols != self.k * self.n {
            return Err(DeconvError::ShapeMismatch(format!(
                "lifted matrix is {rows}x{cols}, expected {}x{}",
                self.l,
                self.k * self.n
            )));
        }
        Ok(())
    }

    fn check_measurement_shape(&self, u: &MeasurementSet) -> Result<()> {
        if u.shape() != (self.l, self.n) {
            return Err(DeconvError::ShapeMismatch(format!(
                "measurement array is {}x{}, expected {}x{}",
                u.nrows(),
                u.ncols(),
                self.l,
                self.n
            )));
        }
        Ok(())
    }

    /// Dense application of the lifted map to a real `L × KN` matrix.
    pub fn apply_a(&self, x: &LiftedMatrix) -> Result<MeasurementSet> {
        self.check_lifted_shape(x.nrows(), x.ncols())?;
        let (l, k) = (self.l, self.k);
        let chat = self.chat();
        let mut out = MeasurementSet::zeros(l, self.n);
        for n in 0..self.n {
            let block = &x.as_slice()[n * k * l..(n + 1) * k * l];
            let bx = self.basis.apply(block, l, k);
            let t = fft_real_columns(&self.plan, &bx, k, self.unitary());
            for kk in 0..k {
                for row in 0..l {
                    out[(row, n)] += t[kk * l + row] * chat[n][(row, kk)];
                }
            }
        }
        Ok(out)
    }

    /// The complex-linear extension of the lifted map to complex matrices.
    pub fn apply_a_complex(&self, z: &DMatrix<Complex64>) -> Result<MeasurementSet> {
        self.check_lifted_shape(z.nrows(), z.ncols())?;
        let (l, k) = (self.l, self.k);
        let chat = self.chat();
        let bhat = self.bhat();
        let mut out = MeasurementSet::zeros(l, self.n);
        for n in 0..self.n {
            let block = z.columns(n * k, k);
            let t = match (&self.basis, self.coding.is_some()) {
                (SparsityBasis::Identity, true) => {
                    let mut buf: Vec<Complex64> = block.iter().copied().collect();
                    let mut scratch = self.plan.scratch();
                    self.plan.forward(&mut buf, &mut scratch);
                    DMatrix::from_vec(l, k, buf)
                }
                _ => bhat * block,
            };
            for kk in 0..k {
                for row in 0..l {
                    out[(row, n)] += t[(row, kk)] * chat[n][(row, kk)];
                }
            }
        }
        Ok(out)
    }

    /// Application to `H Mᵀ` without forming the `L × KN` product.
    pub fn apply_a_factored(&self, h: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<MeasurementSet> {
        Ok(self.forward_factored(h, m)?.yhat)
    }

    /// Factored forward pass, keeping the transformed factors for the
    /// gradient.
    pub fn forward_factored(&self, h: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<FactoredForward> {
        let (l, k, nn) = (self.l, self.k, self.n);
        let r = h.ncols();
        if m.ncols() != r {
            return Err(DeconvError::ShapeMismatch(format!(
                "factor ranks differ: H has {} columns, M has {}",
                r,
                m.ncols()
            )));
        }
        if h.nrows() != l || m.nrows() != k * nn {
            return Err(DeconvError::ShapeMismatch(format!(
                "factors are {}x{r} and {}x{r}, expected {l}x{r} and {}x{r}",
                h.nrows(),
                m.nrows(),
                k * nn
            )));
        }
        let bh = self.basis.apply(h.as_slice(), l, r);
        let p = fft_real_columns(&self.plan, &bh, r, self.unitary());
        let mut q = Vec::with_capacity(nn);
        let mut yhat = MeasurementSet::zeros(l, nn);
        let mut m_block = vec![0.0; k * r];
        for n in 0..nn {
            for j in 0..r {
                m_block[j * k..(j + 1) * k].copy_from_slice(&m.column(j).as_slice()[n * k..(n + 1) * k]);
            }
            let qn = match &self.coding {
                Some(codings) => {
                    let cm = codings[n].apply(&m_block, l, k, r);
                    fft_real_columns(&self.plan, &cm, r, 1.0)
                }
                None => {
                    let mm = DMatrix::from_column_slice(k, r, &m_block).map(|v| Complex64::new(v, 0.0));
                    (&self.chat()[n] * mm).as_slice().to_vec()
                }
            };
            let col = &mut yhat.as_mut_slice()[n * l..(n + 1) * l];
            for j in 0..r {
                for row in 0..l {
                    col[row] += p[j * l + row] * qn[j * l + row];
                }
            }
            q.push(qn);
        }
        Ok(FactoredForward { r, p, q, yhat })
    }

    /// Given `u` and the cached transforms of `(H, M)`, returns
    /// `(A*(u) M, A*(u)ᵀ H)` without forming `A*(u)`.
    pub fn adjoint_times_factors(&self, u: &MeasurementSet, fwd: &FactoredForward) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_measurement_shape(u)?;
        let (l, k, nn, r) = (self.l, self.k, self.n, fwd.r);
        // A*(u)·M = Bᵀ Re(F Σ_n diag(ū_n) Q_n)
        let mut z = vec![ZERO; l * r];
        for n in 0..nn {
            let un = u.column(n);
            let qn = &fwd.q[n];
            for j in 0..r {
                for row in 0..l {
                    z[j * l + row] += un[row].conj() * qn[j * l + row];
                }
            }
        }
        let gm = real_part_of_fft_columns(&self.plan, z, r, self.unitary());
        let gm = self.basis.apply_transpose(gm, l, r);
        let g_m = DMatrix::from_vec(l, r, gm);

        // (A*(u)ᵀ H)_n = √L C_nᵀ Re(F diag(ū_n) P)
        let mut gth = DMatrix::<f64>::zeros(k * nn, r);
        let mut v = vec![ZERO; l * r];
        let mut block = vec![0.0; k * r];
        for n in 0..nn {
            let un = u.column(n);
            for j in 0..r {
                for row in 0..l {
                    v[j * l + row] = un[row].conj() * fwd.p[j * l + row];
                }
            }
            match &self.coding {
                Some(codings) => {
                    let re = real_part_of_fft_columns(&self.plan, v.clone(), r, 1.0);
                    codings[n].apply_transpose_into(&re, l, r, &mut block);
                }
                None => {
                    let vv = DMatrix::from_column_slice(l, r, &v);
                    let prod = self.chat()[n].transpose() * vv;
                    for (dst, src) in block.iter_mut().zip(prod.iter()) {
                        *dst = src.re;
                    }
                }
            }
            for j in 0..r {
                for kk in 0..k {
                    gth[(n * k + kk, j)] = block[j * k + kk];
                }
            }
        }
        Ok((g_m, gth))
    }

    /// Real adjoint `A*(u)` as a dense `L × KN` matrix.
    pub fn adjoint_a(&self, u: &MeasurementSet) -> Result<LiftedMatrix> {
        self.check_measurement_shape(u)?;
        let (l, k) = (self.l, self.k);
        let mut out = LiftedMatrix::zeros(l, k * self.n);
        let chat = self.chat();
        for n in 0..self.n {
            let un = u.column(n);
            let block: Vec<f64> = if self.coding.is_some() {
                let mut v = vec![ZERO; l * k];
                for kk in 0..k {
                    for row in 0..l {
                        v[kk * l + row] = un[row].conj() * chat[n][(row, kk)];
                    }
                }
                let re = real_part_of_fft_columns(&self.plan, v, k, self.unitary());
                self.basis.apply_transpose(re, l, k)
            } else {
                let mut v = chat[n].clone();
                for kk in 0..k {
                    for row in 0..l {
                        v[(row, kk)] *= un[row].conj();
                    }
                }
                let prod = self.bhat().transpose() * v;
                prod.iter().map(|z| z.re).collect()
            };
            out.as_mut_slice()[n * k * l..(n + 1) * k * l].copy_from_slice(&block);
        }
        Ok(out)
    }

    /// The measurements indexed by `subset`, in subset order.
    pub fn apply_a_sub(&self, x: &LiftedMatrix, subset: &IndexSubset) -> Result<Vec<Complex64>> {
        subset.check_range(self.l, self.n)?;
        let full = self.apply_a(x)?;
        Ok(subset.pairs().iter().map(|&(l, n)| full[(l, n)]).collect())
    }

    /// Exact operator norm `max_{ℓ,n} ‖b_ℓ‖·‖c_{ℓ,n}‖`.
    pub fn operator_norm_a(&self) -> f64 {
        let bhat = self.bhat();
        let chat = self.chat();
        let mut best = 0.0f64;
        for l in 0..self.l {
            let b = bhat.row(l).iter().map(|z| z.norm_sqr()).sum::<f64>();
            for c in chat {
                let cn = c.row(l).iter().map(|z| z.norm_sqr()).sum::<f64>();
                best = best.max(b * cn);
            }
        }
        best.sqrt()
    }
}

/// `√(β K log(LN))`, the high-probability bound on the operator norm for
/// Gaussian coding.
pub fn operator_norm_bound(l: usize, k: usize, n: usize, beta: f64) -> f64 {
    (beta * k as f64 * ((l * n) as f64).ln()).sqrt()
}

/// Transforms of the factors kept from a factored forward pass.
#[derive(Debug, Clone)]
pub struct FactoredForward {
    r: usize,
    /// `F B H`, column-major `L × R`.
    p: Vec<Complex64>,
    /// `√L F C_n M_n` per `n`, column-major `L × R`.
    q: Vec<Vec<Complex64>>,
    pub yhat: MeasurementSet,
}

/// A set of measurement indices `(ℓ, n)` without duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexSubset {
    pairs: Vec<(usize, usize)>,
}

impl IndexSubset {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for &(l, n) in &pairs {
            if !seen.insert((l, n)) {
                return Err(DeconvError::DuplicateIndex { l, n });
            }
        }
        Ok(Self { pairs })
    }

    pub fn full(l: usize, n: usize) -> Self {
        let pairs = (0..n).flat_map(|nn| (0..l).map(move |ll| (ll, nn))).collect();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check_range(&self, big_l: usize, big_n: usize) -> Result<()> {
        match self.pairs.iter().find(|&&(l, n)| l >= big_l || n >= big_n) {
            Some(&(l, n)) => Err(DeconvError::IndexOutOfRange { l, n, big_l, big_n }),
            None => Ok(()),
        }
    }
}

/// A real-linear map on the `L × KN` lifted space with a real output vector.
/// Complex outputs are flattened as real parts followed by imaginary parts.
pub trait LiftedMap: Sync {
    /// `(L, KN)`.
    fn lifted_shape(&self) -> (usize, usize);

    fn apply_real(&self, x: &LiftedMatrix) -> Vec<f64>;

    /// Image of the rank-1 matrix `u vᵀ`.
    fn apply_rank1_real(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let (l, kn) = self.lifted_shape();
        let x = LiftedMatrix::from_fn(l, kn, |i, j| u[i] * v[j]);
        self.apply_real(&x)
    }
}

fn flatten_complex(y: &MeasurementSet) -> Vec<f64> {
    y.iter().map(|z| z.re).chain(y.iter().map(|z| z.im)).collect()
}

impl LiftedMap for MeasurementRows {
    fn lifted_shape(&self) -> (usize, usize) {
        (self.l, self.k * self.n)
    }

    fn apply_real(&self, x: &LiftedMatrix) -> Vec<f64> {
        flatten_complex(&self.apply_a(x).expect("shape checked by caller"))
    }

    fn apply_rank1_real(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let h = DMatrix::from_column_slice(self.l, 1, u);
        let m = DMatrix::from_column_slice(self.k * self.n, 1, v);
        flatten_complex(&self.apply_a_factored(&h, &m).expect("shape checked by caller"))
    }
}

/// The identity on the lifted space, an exact isometry.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap {
    pub l: usize,
    pub kn: usize,
}

impl LiftedMap for IdentityMap {
    fn lifted_shape(&self) -> (usize, usize) {
        (self.l, self.kn)
    }

    fn apply_real(&self, x: &LiftedMatrix) -> Vec<f64> {
        x.as_slice().to_vec()
    }
}

/// `factor · F` applied to each real column of a column-major `L × cols`
/// block. Columns are transformed in pairs packed into one complex FFT.
pub(crate) fn fft_real_columns(plan: &FourierPlan, src: &[f64], cols: usize, factor: f64) -> Vec<Complex64> {
    let l = plan.len();
    debug_assert_eq!(src.len(), l * cols);
    let mut out = vec![ZERO; l * cols];
    let mut scratch = plan.scratch();
    let mut buf = vec![ZERO; l];
    let mut c = 0;
    while c < cols {
        let a = &src[c * l..(c + 1) * l];
        if c + 1 < cols {
            let b = &src[(c + 1) * l..(c + 2) * l];
            for i in 0..l {
                buf[i] = Complex64::new(a[i], b[i]);
            }
            plan.forward_scaled(&mut buf, &mut scratch, factor);
            for w in 0..l {
                let z = buf[w];
                let zc = buf[(l - w) % l].conj();
                out[c * l + w] = (z + zc) * 0.5;
                out[(c + 1) * l + w] = (z - zc) * Complex64::new(0.0, -0.5);
            }
            c += 2;
        } else {
            for i in 0..l {
                buf[i] = Complex64::new(a[i], 0.0);
            }
            plan.forward_scaled(&mut buf, &mut scratch, factor);
            out[c * l..(c + 1) * l].copy_from_slice(&buf);
            c += 1;
        }
    }
    out
}

/// `Re(factor · F v)` for each complex column of a column-major `L × cols`
/// block. Uses `Re(F v) = F v_s` with `v_s[ℓ] = (v[ℓ] + conj v[−ℓ]) / 2`,
/// whose transform is real, so two columns share one FFT.
pub(crate) fn real_part_of_fft_columns(plan: &FourierPlan, src: Vec<Complex64>, cols: usize, factor: f64) -> Vec<f64> {
    let l = plan.len();
    debug_assert_eq!(src.len(), l * cols);
    let mut out = vec![0.0; l * cols];
    let mut scratch = plan.scratch();
    let mut buf = vec![ZERO; l];
    let sym = |v: &[Complex64], i: usize| (v[i] + v[(l - i) % l].conj()) * 0.5;
    let mut c = 0;
    while c < cols {
        let a = &src[c * l..(c + 1) * l];
        if c + 1 < cols {
            let b = &src[(c + 1) * l..(c + 2) * l];
            for i in 0..l {
                buf[i] = sym(a, i) + Complex64::i() * sym(b, i);
            }
            plan.forward_scaled(&mut buf, &mut scratch, factor);
            for w in 0..l {
                out[c * l + w] = buf[w].re;
                out[(c + 1) * l + w] = buf[w].im;
            }
            c += 2;
        } else {
            for i in 0..l {
                buf[i] = sym(a, i);
            }
            plan.forward_scaled(&mut buf, &mut scratch, factor);
            for w in 0..l {
                out[c * l + w] = buf[w].re;
            }
            c += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{circ_conv, dft, gaussian_vector, gen_generic_basis, gen_identity_subset_basis};
    use proptest::prelude::*;

    fn instance(l: usize, k: usize, n: usize, seed: u64) -> (MeasurementRows, Vec<GenericBasis>) {
        let bases: Vec<_> = (0..n).map(|i| gen_generic_basis(l, k, seed * 1000 + i as u64).unwrap()).collect();
        (build_rows(SparsityBasis::Identity, &bases).unwrap(), bases)
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        DMatrix::from_vec(r, c, gaussian_vector(r * c, seed))
    }

    fn random_measurements(l: usize, n: usize, seed: u64) -> MeasurementSet {
        let re = gaussian_vector(l * n, seed);
        let im = gaussian_vector(l * n, seed ^ 0xABCD);
        MeasurementSet::from_fn(l, n, |i, j| Complex64::new(re[j * l + i], im[j * l + i]))
    }

    fn inner_c(a: &MeasurementSet, b: &MeasurementSet) -> Complex64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
    }

    fn norm_c(a: &MeasurementSet) -> f64 {
        a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Orthonormal matrix from a Gram-Schmidt pass over Gaussian columns.
    fn random_orthonormal(l: usize, seed: u64) -> DMatrix<f64> {
        random_matrix(l, l, seed).qr().q()
    }

    #[test]
    fn identity_basis_rows_are_conjugated_dft_rows() {
        let bases = vec![gen_generic_basis(4, 1, 1).unwrap()];
        let rows = build_rows(SparsityBasis::Identity, &bases).unwrap();
        for l in 0..4 {
            let b = rows.b_row(l);
            for i in 0..4 {
                let mut e = vec![0.0; 4];
                e[i] = 1.0;
                let f_col = dft(&e).unwrap();
                // F[ℓ, i] is the i-th entry of f_ℓ*.
                assert!((b[i] - f_col[l].conj()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_model_matches_time_domain_convolution() {
        let (l, k, n) = (8, 2, 2);
        let (rows, bases) = instance(l, k, n, 3);
        let h = gaussian_vector(l, 5);
        let m = gaussian_vector(k * n, 6);
        let x = LiftedMatrix::from_fn(l, k * n, |i, j| h[i] * m[j]);
        let y = rows.apply_a(&x).unwrap();
        for nn in 0..n {
            let xn = &bases[nn].columns * nalgebra::DVector::from_column_slice(&m[nn * k..(nn + 1) * k]);
            let conv = circ_conv(&h, xn.as_slice()).unwrap();
            let expect = dft(&conv).unwrap();
            for ll in 0..l {
                assert!((y[(ll, nn)] - expect[ll]).norm() <= 1e-9 * norm_c(&y));
            }
        }
    }

    #[test]
    fn first_coding_row_is_real() {
        let (rows, _) = instance(8, 3, 4, 2);
        for n in 0..4 {
            assert!(rows.c_row(0, n).iter().all(|z| z.im.abs() < 1e-12));
            assert!(rows.c_row(4, n).iter().all(|z| z.im.abs() < 1e-12));
        }
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let (rows, _) = instance(8, 2, 3, 1);
        assert!(rows.apply_a(&LiftedMatrix::zeros(8, 6)).unwrap().iter().all(|z| z.norm() == 0.0));
        let y = rows.apply_a_factored(&DMatrix::zeros(8, 2), &random_matrix(6, 2, 1)).unwrap();
        assert!(y.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn factored_matches_dense() {
        let (l, k, n) = (16, 3, 3);
        for (rows, tag) in [
            (instance(l, k, n, 9).0, "gaussian"),
            (
                build_rows(
                    SparsityBasis::Orthonormal(random_orthonormal(l, 4)),
                    &(0..n).map(|i| gen_identity_subset_basis(l, k, i as u64).unwrap()).collect::<Vec<_>>(),
                )
                .unwrap(),
                "selection",
            ),
        ] {
            for r in 1..=3 {
                let h = random_matrix(l, r, 10 + r as u64);
                let m = random_matrix(k * n, r, 20 + r as u64);
                let dense = rows.apply_a(&(&h * m.transpose())).unwrap();
                let fact = rows.apply_a_factored(&h, &m).unwrap();
                let err = norm_c(&(&dense - &fact));
                assert!(err <= 1e-10 * norm_c(&dense), "{tag} R={r}: {err}");
            }
        }
    }

    #[test]
    fn factored_rank_mismatch_is_rejected() {
        let (rows, _) = instance(8, 2, 2, 1);
        assert!(rows.apply_a_factored(&DMatrix::zeros(8, 2), &DMatrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn fourier_rows_agree_with_time_domain_rows() {
        let (rows, _) = instance(12, 3, 2, 8);
        let synthetic = MeasurementRows::from_fourier_rows(rows.bhat().clone(), rows.chat().to_vec()).unwrap();
        let h = random_matrix(12, 2, 1);
        let m = random_matrix(6, 2, 2);
        let a = rows.apply_a_factored(&h, &m).unwrap();
        let b = synthetic.apply_a_factored(&h, &m).unwrap();
        assert!(norm_c(&(&a - &b)) <= 1e-12 * norm_c(&a));
        let u = random_measurements(12, 2, 3);
        let ga = rows.adjoint_a(&u).unwrap();
        let gb = synthetic.adjoint_a(&u).unwrap();
        assert!((&ga - &gb).norm() <= 1e-12 * ga.norm());
        let fa = rows.forward_factored(&h, &m).unwrap();
        let fb = synthetic.forward_factored(&h, &m).unwrap();
        let (a1, a2) = rows.adjoint_times_factors(&u, &fa).unwrap();
        let (b1, b2) = synthetic.adjoint_times_factors(&u, &fb).unwrap();
        assert!((&a1 - &b1).norm() <= 1e-12 * a1.norm());
        assert!((&a2 - &b2).norm() <= 1e-12 * a2.norm());
    }

    #[test]
    fn adjoint_times_factors_matches_dense_adjoint() {
        let (l, k, n) = (10, 2, 3);
        let (rows, _) = instance(l, k, n, 4);
        let h = random_matrix(l, 2, 1);
        let m = random_matrix(k * n, 2, 2);
        let u = random_measurements(l, n, 3);
        let g = rows.adjoint_a(&u).unwrap();
        let fwd = rows.forward_factored(&h, &m).unwrap();
        let (gm, gth) = rows.adjoint_times_factors(&u, &fwd).unwrap();
        assert!((&g * &m - &gm).norm() <= 1e-12 * gm.norm());
        assert!((g.transpose() * &h - &gth).norm() <= 1e-12 * gth.norm());
    }

    #[test]
    fn single_measurement_adjoint_lives_on_its_block() {
        // A real frequency (ℓ = 0) gives a rank-1 atom; any other frequency
        // gives the real part of a complex rank-1 matrix, so rank at most 2.
        let (l, k, n) = (8, 3, 3);
        let (rows, _) = instance(l, k, n, 7);
        for (freq, max_rank) in [(0, 1), (2, 2)] {
            let mut u = MeasurementSet::zeros(l, n);
            u[(freq, 1)] = Complex64::new(1.0, 0.5);
            let g = rows.adjoint_a(&u).unwrap();
            for j in 0..k * n {
                if j / k != 1 {
                    assert!(g.column(j).iter().all(|&v| v == 0.0));
                }
            }
            let block = g.columns(k, k).into_owned();
            let mut sv: Vec<f64> = block.singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            assert!(sv[0] > 0.0);
            assert!(sv[max_rank] <= 1e-12 * sv[0], "frequency {freq}: {sv:?}");
        }
    }

    #[test]
    fn gram_of_adjoint_is_positive() {
        let (rows, _) = instance(8, 2, 2, 5);
        let x = random_matrix(8, 4, 9);
        let u = rows.apply_a(&x).unwrap();
        let g = rows.adjoint_a(&u).unwrap();
        let lhs = x.dot(&g);
        assert!((lhs - norm_c(&u).powi(2)).abs() <= 1e-10 * lhs);
        assert!(lhs > 0.0);
    }

    #[test]
    fn atoms_are_mutually_orthogonal() {
        let (l, k, n) = (6, 2, 2);
        let (rows, _) = instance(l, k, n, 11);
        // Complex atom A_{ℓ,n}: entries conj(B̂[ℓ,i] Ĉ_n[ℓ,k]) on block n.
        let atom = |ll: usize, nn: usize| {
            let mut a = DMatrix::<Complex64>::zeros(l, k * n);
            for i in 0..l {
                for kk in 0..k {
                    a[(i, nn * k + kk)] = (rows.bhat()[(ll, i)] * rows.chat()[nn][(ll, kk)]).conj();
                }
            }
            a
        };
        let atoms: Vec<_> = (0..n).flat_map(|nn| (0..l).map(move |ll| (ll, nn))).map(|(a, b)| atom(a, b)).collect();
        for i in 0..atoms.len() {
            for j in 0..atoms.len() {
                if i != j {
                    let ip: Complex64 = atoms[i].iter().zip(atoms[j].iter()).map(|(a, b)| a.conj() * b).sum();
                    assert!(ip.norm() < 1e-12, "atoms {i},{j}: {ip}");
                }
            }
        }
    }

    #[test]
    fn subset_restrictions() {
        let (l, k, n) = (6, 2, 3);
        let (rows, _) = instance(l, k, n, 12);
        let x = random_matrix(l, k * n, 1);
        let full = rows.apply_a(&x).unwrap();
        let all = rows.apply_a_sub(&x, &IndexSubset::full(l, n)).unwrap();
        assert_eq!(all, full.as_slice().to_vec());
        assert!(rows.apply_a_sub(&x, &IndexSubset::default()).unwrap().is_empty());

        let evens = IndexSubset::new(IndexSubset::full(l, n).pairs().iter().copied().filter(|p| (p.0 + p.1) % 2 == 0).collect()).unwrap();
        let odds = IndexSubset::new(IndexSubset::full(l, n).pairs().iter().copied().filter(|p| (p.0 + p.1) % 2 == 1).collect()).unwrap();
        let mut joined: Vec<_> = rows.apply_a_sub(&x, &evens).unwrap();
        joined.extend(rows.apply_a_sub(&x, &odds).unwrap());
        assert_eq!(joined.len(), l * n);
        let key = |z: &Complex64| (z.re.to_bits(), z.im.to_bits());
        let mut a: Vec<_> = joined.iter().map(key).collect();
        let mut b: Vec<_> = full.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);

        assert!(matches!(
            rows.apply_a_sub(&x, &IndexSubset::new(vec![(6, 0)]).unwrap()),
            Err(DeconvError::IndexOutOfRange { .. })
        ));
        assert!(matches!(IndexSubset::new(vec![(1, 1), (1, 1)]), Err(DeconvError::DuplicateIndex { .. })));
    }

    #[test]
    fn unit_atoms_have_unit_norm() {
        let l = 5;
        let bhat = DMatrix::<Complex64>::identity(l, l);
        let chat = vec![DMatrix::from_fn(l, 1, |i, _| Complex64::from_polar(1.0, i as f64)); 3];
        let rows = MeasurementRows::from_fourier_rows(bhat, chat).unwrap();
        assert!((rows.operator_norm_a() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_orthonormal_basis_is_rejected() {
        let bases = vec![gen_generic_basis(4, 1, 1).unwrap()];
        let b = DMatrix::from_element(4, 4, 0.5);
        assert!(matches!(
            build_rows(SparsityBasis::Orthonormal(b), &bases),
            Err(DeconvError::NotOrthonormal { .. })
        ));
        let mixed = vec![gen_generic_basis(4, 1, 1).unwrap(), gen_generic_basis(4, 2, 1).unwrap()];
        assert!(matches!(build_rows(SparsityBasis::Identity, &mixed), Err(DeconvError::ShapeMismatch(_))));
    }

    #[test]
    fn selection_coding_is_detected() {
        let sel = gen_identity_subset_basis(9, 3, 2).unwrap();
        assert!(matches!(Coding::from_basis(&sel), Coding::Selection(_)));
        let dense = gen_generic_basis(9, 3, 2).unwrap();
        assert!(matches!(Coding::from_basis(&dense), Coding::Dense(_)));
        assert_eq!(Coding::from_basis(&sel).to_matrix(9), sel.columns);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn adjoint_identity(l in 2usize..=16, k in 1usize..=3, n in 1usize..=4, seed in any::<u64>()) {
            prop_assume!(k <= l);
            let (rows, _) = instance(l, k, n, seed % 10_000);
            let x = random_matrix(l, k * n, seed);
            let u = random_measurements(l, n, seed.wrapping_add(1));
            let lhs = x.dot(&rows.adjoint_a(&u).unwrap());
            let rhs = inner_c(&rows.apply_a(&x).unwrap(), &u).re;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * x.norm() * norm_c(&u));
        }

        #[test]
        fn linearity(l in 2usize..=12, seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (rows, _) = instance(l, 2.min(l), 2, seed % 1000);
            let x = random_matrix(l, 2 * 2.min(l), seed);
            let z = random_matrix(l, 2 * 2.min(l), seed ^ 1);
            let lhs = rows.apply_a(&(&x * a + &z * b)).unwrap();
            let rhs = rows.apply_a(&x).unwrap() * Complex64::new(a, 0.0) + rows.apply_a(&z).unwrap() * Complex64::new(b, 0.0);
            prop_assert!(norm_c(&(&lhs - &rhs)) <= 1e-12 * (1.0 + norm_c(&lhs)));
        }
    }
}
