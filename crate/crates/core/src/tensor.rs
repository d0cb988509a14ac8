//! Tensor-product bookkeeping on labeled site factors, Hermitian
//! eigendecomposition, matrix functions, partial trace, Schatten norms and
//! operator <-> vector conversion.
//!
//! Vectorization is by column stacking: `vec(X)[i + d*j] = X[i, j]`. A
//! superoperator acting as `X -> L X R^dagger` therefore has the matrix
//! `kron(conj(R), L)`. Sites are little-endian: site 0 is the fastest index.
//! Every superoperator in the crate relies on these two conventions.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64 as C64;

use crate::linalg;
use crate::{Error, Result};

/// Hermiticity tolerance enforced at construction.
pub const TOL_HERM: f64 = 1e-12;
/// Relative eigenvalue floor applied before `ln` and negative powers.
pub const EIG_FLOOR: f64 = 1e-14;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Map between chain sites and tensor legs of a `local_dim^n_sites` space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteIndexing {
    n_sites: usize,
    local_dim: usize,
}

impl SiteIndexing {
    pub fn new(n_sites: usize, local_dim: usize) -> Self {
        assert!(n_sites > 0 && local_dim > 1);
        Self { n_sites, local_dim }
    }

    pub fn qubits(n_sites: usize) -> Self {
        Self::new(n_sites, 2)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    /// Total Hilbert space dimension `local_dim^n_sites`.
    pub fn dim(&self) -> usize {
        self.local_dim.pow(self.n_sites as u32)
    }

    /// Stride of `site` in the little-endian index.
    pub fn stride(&self, site: usize) -> usize {
        self.local_dim.pow(site as u32)
    }

    pub fn digit(&self, index: usize, site: usize) -> usize {
        (index / self.stride(site)) % self.local_dim
    }

    pub fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n_sites {
            Err(Error::SiteOutOfRange { site, n_sites: self.n_sites })
        } else {
            Ok(())
        }
    }

    /// Indexing of the subsystem spanned by `sites` (in the given order:
    /// `sites[0]` becomes the fastest index of the subsystem).
    pub fn subsystem(&self, sites: &[usize]) -> SiteIndexing {
        SiteIndexing::new(sites.len(), self.local_dim)
    }
}

/// Dense Hermitian matrix on a labeled tensor-factor set.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    idx: SiteIndexing,
    mat: Array2<C64>,
}

impl HermitianOperator {
    /// Checks Hermiticity within [`TOL_HERM`] and stores the exactly
    /// symmetrized matrix `(A + A^H)/2`.
    pub fn new(mat: Array2<C64>, idx: SiteIndexing) -> Result<Self> {
        let d = idx.dim();
        if mat.dim() != (d, d) {
            return Err(Error::DimMismatch(format!(
                "operator is {:?}, indexing wants {d}x{d}",
                mat.dim()
            )));
        }
        let mut residual = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let r = (mat[(i, j)] - mat[(j, i)].conj()).norm();
                residual = residual.max(r);
                scale = scale.max(mat[(i, j)].norm());
            }
        }
        if residual > TOL_HERM * scale.max(1.0) {
            return Err(Error::NotHermitian { residual });
        }
        let herm = (&mat + &mat.t().mapv(|z| z.conj())).mapv(|z| z * 0.5);
        Ok(Self { idx, mat: herm })
    }

    /// Trusted constructor for matrices Hermitian by construction.
    pub(crate) fn new_unchecked(mat: Array2<C64>, idx: SiteIndexing) -> Self {
        Self { idx, mat }
    }

    pub fn zero(idx: SiteIndexing) -> Self {
        let d = idx.dim();
        Self { idx, mat: Array2::zeros((d, d)) }
    }

    pub fn identity(idx: SiteIndexing) -> Self {
        let d = idx.dim();
        Self { idx, mat: Array2::eye(d) }
    }

    pub fn dim(&self) -> usize {
        self.idx.dim()
    }

    pub fn indexing(&self) -> &SiteIndexing {
        &self.idx
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.diag().iter().map(|z| z.re).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { idx: self.idx.clone(), mat: &self.mat + &other.mat }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { idx: self.idx.clone(), mat: self.mat.mapv(|z| z * s) }
    }
}

/// Positive unit-trace operator with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct DensityState {
    op: HermitianOperator,
    evals: Vec<f64>,
    evecs: Array2<C64>,
}

impl DensityState {
    /// Validates positivity (eigenvalues >= -1e-12) and unit trace
    /// (within 1e-12), then renormalizes the trace exactly.
    pub fn new(op: HermitianOperator) -> Result<Self> {
        Self::with_positivity_tol(op, 1e-12)
    }

    /// Same as [`DensityState::new`] with a caller-chosen positivity floor
    /// (evolved states accumulate slightly more noise than constructed ones).
    pub fn with_positivity_tol(op: HermitianOperator, pos_tol: f64) -> Result<Self> {
        let tr = op.trace();
        if (tr - 1.0).abs() > 1e-12 {
            return Err(Error::Numerical(format!("density trace {tr} != 1")));
        }
        let (evals, evecs) = linalg::eigh(op.matrix())?;
        if let Some(&min) = evals.first() {
            if min < -pos_tol {
                return Err(Error::Numerical(format!("negative eigenvalue {min:.3e}")));
            }
        }
        let mat = op.mat.mapv(|z| z / tr);
        let evals = evals.iter().map(|&x| x / tr).collect();
        Ok(Self { op: HermitianOperator { idx: op.idx, mat }, evals, evecs })
    }

    /// Builds a state from a known eigendecomposition (trusted path used by
    /// Gibbs construction and time evolution).
    pub fn from_eig(evals: Vec<f64>, evecs: Array2<C64>, idx: SiteIndexing) -> Self {
        let lam = Array2::from_diag(&Array1::from_iter(evals.iter().map(|&x| c(x))));
        let mat = evecs.dot(&lam).dot(&evecs.t().mapv(|z| z.conj()));
        Self { op: HermitianOperator::new_unchecked(mat, idx), evals, evecs }
    }

    pub fn pure(vector: &Array1<C64>, idx: SiteIndexing) -> Result<Self> {
        let d = idx.dim();
        if vector.len() != d {
            return Err(Error::DimMismatch(format!("state vector of len {} for dim {d}", vector.len())));
        }
        let nrm = vector.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut mat = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                mat[(i, j)] = vector[i] * vector[j].conj() / (nrm * nrm);
            }
        }
        let mut evals = vec![0.0; d];
        evals[d - 1] = 1.0;
        let (evals2, evecs) = linalg::eigh(&mat)?;
        let _ = evals2;
        Ok(Self { op: HermitianOperator::new_unchecked(mat, idx), evals, evecs })
    }

    pub fn maximally_mixed(idx: SiteIndexing) -> Self {
        let d = idx.dim();
        let mat = Array2::eye(d).mapv(|z: C64| z / c(d as f64));
        Self {
            op: HermitianOperator::new_unchecked(mat, idx.clone()),
            evals: vec![1.0 / d as f64; d],
            evecs: Array2::eye(d),
        }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        self.op.matrix()
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn indexing(&self) -> &SiteIndexing {
        self.op.indexing()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Eigenvalues ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.evals
    }

    pub fn eigenvectors(&self) -> &Array2<C64> {
        &self.evecs
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.evals.first().copied().unwrap_or(0.0)
    }

    /// `ln rho` with the relative eigenvalue floor; returns the floored
    /// operator and the number of floored eigenvalues.
    pub fn ln_floored(&self) -> (Array2<C64>, usize) {
        let top = self.evals.last().copied().unwrap_or(1.0);
        let floor = EIG_FLOOR * top.max(f64::MIN_POSITIVE);
        let mut hits = 0usize;
        let logs: Vec<f64> = self
            .evals
            .iter()
            .map(|&x| {
                if x < floor {
                    hits += 1;
                    floor.ln()
                } else {
                    x.ln()
                }
            })
            .collect();
        let lam = Array2::from_diag(&Array1::from_iter(logs.iter().map(|&x| c(x))));
        let m = self.evecs.dot(&lam).dot(&self.evecs.t().mapv(|z| z.conj()));
        (m, hits)
    }
}

/// Standard Kronecker product; `kron(a, b)[i*q + k, j*q + l] = a[i,j] b[k,l]`.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(b, |o, &x| *o = aij * x);
        }
    }
    out
}

/// Builds the local matrix with `ops[k]` acting on local little-endian
/// position `k` (so `ops[0]` is the fastest factor).
pub fn ops_on_positions(ops: &[&Array2<C64>]) -> Array2<C64> {
    let mut out = ops[ops.len() - 1].clone();
    for op in ops[..ops.len() - 1].iter().rev() {
        out = kron(&out, op);
    }
    out
}

/// Places a k-local operator on the named sites (identity elsewhere); local
/// position `k` of `op` lands on `sites[k]`.
pub fn embed_local(
    op: &Array2<C64>,
    sites: &[usize],
    idx: &SiteIndexing,
) -> Result<Array2<C64>> {
    let k = sites.len();
    let ld = idx.local_dim();
    let dloc = ld.pow(k as u32);
    if op.dim() != (dloc, dloc) {
        return Err(Error::DimMismatch(format!(
            "local operator {:?} does not act on {k} sites of dim {ld}",
            op.dim()
        )));
    }
    let mut seen = vec![false; idx.n_sites()];
    for &s in sites {
        idx.check_site(s)?;
        if seen[s] {
            return Err(Error::DimMismatch(format!("site {s} listed twice")));
        }
        seen[s] = true;
    }
    let d = idx.dim();
    let mut out = Array2::zeros((d, d));
    add_embedded(&mut out, op, sites, idx, C64::new(1.0, 0.0));
    Ok(out)
}

/// `out += coeff * embed_local(op, sites)` without the temporary.
pub(crate) fn add_embedded(
    out: &mut Array2<C64>,
    op: &Array2<C64>,
    sites: &[usize],
    idx: &SiteIndexing,
    coeff: C64,
) {
    let k = sites.len();
    let ld = idx.local_dim();
    let dloc = ld.pow(k as u32);
    let strides: Vec<usize> = sites.iter().map(|&s| idx.stride(s)).collect();
    let rest = complement_bases(sites, idx);
    // offset of local index a within the full space
    let offset = |a: usize| -> usize {
        let mut off = 0;
        let mut aa = a;
        for st in &strides {
            off += (aa % ld) * st;
            aa /= ld;
        }
        off
    };
    let offsets: Vec<usize> = (0..dloc).map(offset).collect();
    for &base in &rest {
        for ar in 0..dloc {
            let row = base + offsets[ar];
            for ac in 0..dloc {
                let v = op[(ar, ac)];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                // columns share the same base (identity on the rest)
                out[(row, base + offsets[ac])] += coeff * v;
            }
        }
    }
}

/// All full-space indices whose digits on `sites` are zero.
fn complement_bases(sites: &[usize], idx: &SiteIndexing) -> Vec<usize> {
    let n = idx.n_sites();
    let ld = idx.local_dim();
    let others: Vec<usize> = (0..n).filter(|s| !sites.contains(s)).collect();
    let count = ld.pow(others.len() as u32);
    let mut out = Vec::with_capacity(count);
    for r in 0..count {
        let mut ix = 0;
        let mut rr = r;
        for &s in &others {
            ix += (rr % ld) * idx.stride(s);
            rr /= ld;
        }
        out.push(ix);
    }
    out
}

/// Applies a k-local operator to a state vector.
pub fn apply_local_to_vector(
    op: &Array2<C64>,
    sites: &[usize],
    v: &ArrayView1<C64>,
    idx: &SiteIndexing,
) -> Array1<C64> {
    let k = sites.len();
    let ld = idx.local_dim();
    let dloc = ld.pow(k as u32);
    debug_assert_eq!(op.dim(), (dloc, dloc));
    debug_assert_eq!(v.len(), idx.dim());
    let strides: Vec<usize> = sites.iter().map(|&s| idx.stride(s)).collect();
    let mut offsets = vec![0usize; dloc];
    for (a, off) in offsets.iter_mut().enumerate() {
        let mut aa = a;
        for st in &strides {
            *off += (aa % ld) * st;
            aa /= ld;
        }
    }
    let mut out = Array1::zeros(v.len());
    let mut gather = vec![C64::new(0.0, 0.0); dloc];
    for base in complement_bases(sites, idx) {
        for (a, g) in gather.iter_mut().enumerate() {
            *g = v[base + offsets[a]];
        }
        for r in 0..dloc {
            let row = op.row(r);
            let mut acc = C64::new(0.0, 0.0);
            for (a, g) in gather.iter().enumerate() {
                acc += row[a] * g;
            }
            out[base + offsets[r]] = acc;
        }
    }
    out
}

/// Partial trace keeping `keep` (output indexed by `keep` in sorted order).
pub fn partial_trace(rho: &Array2<C64>, keep: &[usize], idx: &SiteIndexing) -> Array2<C64> {
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let ld = idx.local_dim();
    let dout = ld.pow(keep.len() as u32);
    let strides: Vec<usize> = keep.iter().map(|&s| idx.stride(s)).collect();
    let mut offsets = vec![0usize; dout];
    for (a, off) in offsets.iter_mut().enumerate() {
        let mut aa = a;
        for st in &strides {
            *off += (aa % ld) * st;
            aa /= ld;
        }
    }
    let mut out = Array2::zeros((dout, dout));
    for base in complement_bases(&keep, idx) {
        for r in 0..dout {
            for cix in 0..dout {
                out[(r, cix)] += rho[(base + offsets[r], base + offsets[cix])];
            }
        }
    }
    out
}

/// Hermitian eigendecomposition of an operator, ascending eigenvalues.
pub fn herm_eig(a: &HermitianOperator) -> Result<(Vec<f64>, Array2<C64>)> {
    linalg::eigh(a.matrix())
}

/// `V f(Lambda) V^H` for a scalar function on the spectrum.
pub fn mat_func(a: &HermitianOperator, f: impl Fn(f64) -> f64) -> Result<HermitianOperator> {
    let (w, v) = herm_eig(a)?;
    let fw: Vec<f64> = w.iter().map(|&x| f(x)).collect();
    if let Some(bad) = fw.iter().find(|x| !x.is_finite()) {
        return Err(Error::SpectrumDomain(format!("f produced {bad}")));
    }
    let lam = Array2::from_diag(&Array1::from_iter(fw.iter().map(|&x| c(x))));
    let m = v.dot(&lam).dot(&v.t().mapv(|z| z.conj()));
    Ok(HermitianOperator::new_unchecked(m, a.indexing().clone()))
}

/// `a^p` with the relative eigenvalue floor applied first (for negative
/// powers of nearly singular positive matrices). Returns the floor-hit count.
pub fn mat_pow_floored(a: &HermitianOperator, p: f64) -> Result<(HermitianOperator, usize)> {
    let (w, v) = herm_eig(a)?;
    let top = w.iter().cloned().fold(0.0f64, f64::max);
    let floor = EIG_FLOOR * top.max(f64::MIN_POSITIVE);
    let mut hits = 0usize;
    let fw: Vec<f64> = w
        .iter()
        .map(|&x| {
            let xf = if x < floor {
                hits += 1;
                floor
            } else {
                x
            };
            xf.powf(p)
        })
        .collect();
    if fw.iter().any(|x| !x.is_finite()) {
        return Err(Error::SpectrumDomain(format!("power {p} undefined after flooring")));
    }
    let lam = Array2::from_diag(&Array1::from_iter(fw.iter().map(|&x| c(x))));
    let m = v.dot(&lam).dot(&v.t().mapv(|z| z.conj()));
    Ok((HermitianOperator::new_unchecked(m, a.indexing().clone()), hits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchattenP {
    One,
    Two,
    Infinity,
}

/// Schatten norm from singular values (`Two` goes through the Frobenius sum).
pub fn schatten_norm(a: &Array2<C64>, p: SchattenP) -> f64 {
    match p {
        SchattenP::Two => a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        SchattenP::One => linalg::singular_values(a).map(|s| s.iter().sum()).unwrap_or(f64::NAN),
        SchattenP::Infinity => linalg::spectral_norm(a).unwrap_or(f64::NAN),
    }
}

/// Trace norm of a Hermitian matrix via eigenvalues (cheaper than an SVD).
pub fn trace_norm_hermitian(a: &Array2<C64>) -> Result<f64> {
    Ok(linalg::eigvalsh(a)?.iter().map(|x| x.abs()).sum())
}

/// Sup-norm of a Hermitian matrix via eigenvalues.
pub fn sup_norm_hermitian(a: &Array2<C64>) -> Result<f64> {
    Ok(linalg::eigvalsh(a)?
        .iter()
        .fold(0.0f64, |m, &x| m.max(x.abs())))
}

/// Column-stacking vectorization.
pub fn vectorize(x: &Array2<C64>) -> Array1<C64> {
    let (r, cdim) = x.dim();
    let mut out = Array1::zeros(r * cdim);
    for j in 0..cdim {
        for i in 0..r {
            out[i + r * j] = x[(i, j)];
        }
    }
    out
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &ArrayView1<C64>, dim: usize) -> Result<Array2<C64>> {
    if v.len() != dim * dim {
        return Err(Error::DimMismatch(format!("vector len {} for dim {dim}", v.len())));
    }
    let mut out = Array2::zeros((dim, dim));
    for j in 0..dim {
        for i in 0..dim {
            out[(i, j)] = v[i + dim * j];
        }
    }
    Ok(out)
}

/// Linear map on column-vectorized operators, stored dense.
#[derive(Debug, Clone)]
pub struct SuperOperator {
    dim: usize,
    mat: Array2<C64>,
}

impl SuperOperator {
    pub fn from_matrix(mat: Array2<C64>, dim: usize) -> Result<Self> {
        if mat.dim() != (dim * dim, dim * dim) {
            return Err(Error::DimMismatch(format!(
                "superoperator {:?} for operator dim {dim}",
                mat.dim()
            )));
        }
        Ok(Self { dim, mat })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, mat: Array2::zeros((dim * dim, dim * dim)) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, mat: Array2::eye(dim * dim) }
    }

    /// `X -> L X R^dagger`.
    pub fn sandwich(l: &Array2<C64>, r: &Array2<C64>) -> Self {
        let dim = l.nrows();
        let rc = r.mapv(|z| z.conj());
        Self { dim, mat: kron(&rc, l) }
    }

    /// `X -> K X`.
    pub fn left_mul(k: &Array2<C64>) -> Self {
        let dim = k.nrows();
        Self { dim, mat: kron(&Array2::eye(dim), k) }
    }

    /// `X -> X K`.
    pub fn right_mul(k: &Array2<C64>) -> Self {
        let dim = k.nrows();
        let kt = k.t().to_owned();
        Self { dim, mat: kron(&kt, &Array2::eye(dim)) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    pub fn apply(&self, x: &Array2<C64>) -> Array2<C64> {
        let v = vectorize(x);
        let out = self.mat.dot(&v);
        devectorize(&out.view(), self.dim).expect("dimension preserved")
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self { dim: self.dim, mat: self.mat.dot(&other.mat) }
    }

    /// Hilbert-Schmidt adjoint: the Heisenberg-picture generator of a
    /// Schroedinger-picture map (and vice versa).
    pub fn adjoint(&self) -> Self {
        Self { dim: self.dim, mat: self.mat.t().mapv(|z| z.conj()) }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { dim: self.dim, mat: &self.mat + &other.mat }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { dim: self.dim, mat: self.mat.mapv(|z| z * s) }
    }

    /// Max-abs deviation from the zero action on the trace:
    /// `tr(L(X)) = 0` for all X  iff  `vec(I)^H M = 0`.
    pub fn trace_preservation_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for col in 0..d * d {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d {
                acc += self.mat[(i + d * i, col)];
            }
            worst = worst.max(acc.norm());
        }
        worst
    }
}

/// Pseudo-site list for embedding a superoperator supported on `sites`:
/// row legs first, then column legs shifted by `n`.
pub fn superop_pseudo_sites(sites: &[usize], n_sites: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * sites.len());
    out.extend_from_slice(sites);
    out.extend(sites.iter().map(|&s| s + n_sites));
    out
}

/// Embeds a superoperator acting on the factor `sites` into the full space
/// (identity on the other factors).
pub fn embed_superop(
    m_factor: &Array2<C64>,
    sites: &[usize],
    idx: &SiteIndexing,
) -> Result<SuperOperator> {
    let pseudo = SiteIndexing::new(2 * idx.n_sites(), idx.local_dim());
    let legs = superop_pseudo_sites(sites, idx.n_sites());
    let mat = embed_local(m_factor, &legs, &pseudo)?;
    SuperOperator::from_matrix(mat, idx.dim())
}

/// Applies a factor-supported superoperator to a full-space operator without
/// materializing the embedded matrix.
pub fn apply_superop_on_factor(
    m_factor: &Array2<C64>,
    sites: &[usize],
    x: &Array2<C64>,
    idx: &SiteIndexing,
) -> Array2<C64> {
    let pseudo = SiteIndexing::new(2 * idx.n_sites(), idx.local_dim());
    let legs = superop_pseudo_sites(sites, idx.n_sites());
    let v = vectorize(x);
    let out = apply_local_to_vector(m_factor, &legs, &v.view(), &pseudo);
    devectorize(&out.view(), idx.dim()).expect("dimension preserved")
}

/// `kron(conj(v), v) . m` without materializing the Kronecker factor
/// (two slab contractions instead of a d^2 x d^2 matmul).
pub fn left_kron_apply(v: &Array2<C64>, m: &Array2<C64>) -> Array2<C64> {
    let d = v.nrows();
    let d2 = d * d;
    debug_assert_eq!(m.nrows(), d2);
    let cols = m.ncols();
    // rows of m are v-indices (i' + d j'); view as slabs over j'
    let mut a = Array2::zeros((d2, cols));
    for jp in 0..d {
        let slab = m.slice(ndarray::s![jp * d..(jp + 1) * d, ..]);
        let prod = v.dot(&slab); // contract i'
        a.slice_mut(ndarray::s![jp * d..(jp + 1) * d, ..]).assign(&prod);
    }
    // contract j' with conj(v): B[(i,j), w] = sum_j' conj(v[j,j']) A[(i,j'), w]
    let vc = v.mapv(|z| z.conj());
    let mut out = Array2::zeros((d2, cols));
    for i in 0..d {
        // gather rows (i + d j') into a (d x cols) block
        let mut block = Array2::zeros((d, cols));
        for jp in 0..d {
            block.row_mut(jp).assign(&a.row(i + d * jp));
        }
        let prod = vc.dot(&block);
        for j in 0..d {
            out.row_mut(i + d * j).assign(&prod.row(j));
        }
    }
    out
}

/// Conjugates a vec-picture superoperator from the eigenbasis of `v` to the
/// computational basis: `kron(conj(v), v) . m . kron(conj(v), v)^H`.
pub fn rotate_superop_to_computational(m: &Array2<C64>, v: &Array2<C64>) -> Array2<C64> {
    let tm = left_kron_apply(v, m);
    let tmh = tm.t().mapv(|z| z.conj());
    left_kron_apply(v, &tmh).t().mapv(|z| z.conj())
}

pub fn pauli_x() -> Array2<C64> {
    ndarray::array![[c(0.0), c(1.0)], [c(1.0), c(0.0)]]
}

pub fn pauli_y() -> Array2<C64> {
    ndarray::array![
        [c(0.0), C64::new(0.0, -1.0)],
        [C64::new(0.0, 1.0), c(0.0)]
    ]
}

pub fn pauli_z() -> Array2<C64> {
    ndarray::array![[c(1.0), c(0.0)], [c(0.0), c(-1.0)]]
}

pub fn eye2() -> Array2<C64> {
    Array2::eye(2)
}
