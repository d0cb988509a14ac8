//! Builders for finite-range translation-invariant commuting chain
//! Hamiltonians (Ising, cluster, user-defined), the cluster-state MPS and the
//! Z2 x Z2 symmetry representation acting on it.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::tensor::{
    self, c, embed_local, ops_on_positions, pauli_x, pauli_z, HermitianOperator, SiteIndexing,
};
use crate::{Error, Result};

pub const TOL_COMMUTE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

/// One interaction term: a Hermitian matrix over the listed sites
/// (`sites[0]` is the fastest local index).
#[derive(Debug, Clone)]
pub struct LocalTerm {
    pub sites: Vec<usize>,
    pub op: Array2<C64>,
}

impl LocalTerm {
    pub fn embedded(&self, idx: &SiteIndexing) -> crate::Result<Array2<C64>> {
        embed_local(&self.op, &self.sites, idx)
    }
}

/// Finite-range chain Hamiltonian as a sum of local terms, with the assembled
/// total kept dense. The eigendecomposition of the total is computed once on
/// demand and shared.
#[derive(Debug)]
pub struct ChainHamiltonian {
    pub n: usize,
    pub range: usize,
    pub boundary: Boundary,
    pub local_term: Array2<C64>,
    pub terms: Vec<LocalTerm>,
    pub total: HermitianOperator,
    pub commuting: bool,
    pub max_commutator_norm: f64,
    pub label: String,
    eig: OnceLock<(Vec<f64>, Array2<C64>)>,
}

impl Clone for ChainHamiltonian {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            range: self.range,
            boundary: self.boundary,
            local_term: self.local_term.clone(),
            terms: self.terms.clone(),
            total: self.total.clone(),
            commuting: self.commuting,
            max_commutator_norm: self.max_commutator_norm,
            label: self.label.clone(),
            eig: match self.eig.get() {
                Some(e) => {
                    let cell = OnceLock::new();
                    let _ = cell.set(e.clone());
                    cell
                }
                None => OnceLock::new(),
            },
        }
    }
}

impl ChainHamiltonian {
    fn assemble(
        n: usize,
        range: usize,
        boundary: Boundary,
        local_term: Array2<C64>,
        terms: Vec<LocalTerm>,
        label: String,
    ) -> Result<Self> {
        let idx = SiteIndexing::qubits(n);
        let d = idx.dim();
        let mut total = Array2::zeros((d, d));
        for t in &terms {
            tensor::add_embedded(&mut total, &t.op, &t.sites, &idx, c(1.0));
        }
        let total = HermitianOperator::new(total, idx)?;
        let (commuting, max_norm) = commutation_scan(&terms)?;
        Ok(Self {
            n,
            range,
            boundary,
            local_term,
            terms,
            total,
            commuting,
            max_commutator_norm: max_norm,
            label,
            eig: OnceLock::new(),
        })
    }

    pub fn indexing(&self) -> &SiteIndexing {
        self.total.indexing()
    }

    pub fn dim(&self) -> usize {
        self.total.dim()
    }

    /// Eigendecomposition of the total Hamiltonian (ascending), computed once.
    pub fn eig(&self) -> Result<&(Vec<f64>, Array2<C64>)> {
        if self.eig.get().is_none() {
            let e = linalg::eigh(self.total.matrix())?;
            let _ = self.eig.set(e);
        }
        Ok(self.eig.get().expect("just set"))
    }

    pub fn sup_norm(&self) -> f64 {
        self.eig()
            .map(|(w, _)| w.iter().fold(0.0f64, |m, &x| m.max(x.abs())))
            .unwrap_or(f64::NAN)
    }

    /// Sites of every term whose support intersects `region`, together with
    /// `region` itself, sorted. This is the factor on which the Davies
    /// generator of `region` acts nontrivially.
    pub fn factor_for_region(&self, region: &[usize]) -> Vec<usize> {
        let mut mask = vec![false; self.n];
        for &s in region {
            mask[s] = true;
        }
        let mut out = vec![false; self.n];
        for &s in region {
            out[s] = true;
        }
        for t in &self.terms {
            if t.sites.iter().any(|&s| mask[s]) {
                for &s in &t.sites {
                    out[s] = true;
                }
            }
        }
        (0..self.n).filter(|&s| out[s]).collect()
    }

    /// The sum of terms touching `region`, restricted to the given factor
    /// (which must contain all their supports).
    pub fn effective_hamiltonian(&self, region: &[usize], factor: &[usize]) -> Result<Array2<C64>> {
        let mask: Vec<bool> = {
            let mut m = vec![false; self.n];
            for &s in region {
                m[s] = true;
            }
            m
        };
        let fac_idx = SiteIndexing::qubits(factor.len());
        let dfac = fac_idx.dim();
        let mut h = Array2::zeros((dfac, dfac));
        let pos_of = |site: usize| -> Result<usize> {
            factor
                .iter()
                .position(|&f| f == site)
                .ok_or_else(|| Error::DimMismatch(format!("site {site} not in factor")))
        };
        for t in &self.terms {
            if t.sites.iter().any(|&s| mask[s]) {
                let positions: Vec<usize> =
                    t.sites.iter().map(|&s| pos_of(s)).collect::<Result<_>>()?;
                tensor::add_embedded(&mut h, &t.op, &positions, &fac_idx, c(1.0));
            }
        }
        Ok(h)
    }
}

/// `-J Z_j Z_{j+1} - h_z Z_j` on every (wrapped) bond; diagonal, hence
/// commuting. On n=2 periodic chains the two wrapped bonds coincide and the
/// literal sum double-counts the coupling; tests account for the factor.
pub fn build_ising(n: usize, boundary: Boundary, j: f64, h_z: f64) -> Result<ChainHamiltonian> {
    if n < 2 {
        return Err(Error::InvalidModel("ising needs n >= 2".into()));
    }
    let z = pauli_z();
    let zz = tensor::kron(&z, &z); // symmetric under both orderings
    let bond = zz.mapv(|v| v * c(-j))
        + embed_local(&z, &[0], &SiteIndexing::qubits(2))?.mapv(|v| v * c(-h_z));
    let mut terms = Vec::new();
    let bonds = match boundary {
        Boundary::Periodic => n,
        Boundary::Open => n - 1,
    };
    for b in 0..bonds {
        terms.push(LocalTerm { sites: vec![b, (b + 1) % n], op: bond.clone() });
    }
    if boundary == Boundary::Open && h_z != 0.0 {
        // the per-bond field covers sites 0..n-2; close the last one
        terms.push(LocalTerm { sites: vec![n - 1], op: z.mapv(|v| v * c(-h_z)) });
    }
    ChainHamiltonian::assemble(n, 2, boundary, bond, terms, format!("ising(J={j},hz={h_z})"))
}

/// `-Z_{j-1} X_j Z_{j+1}` on every site (periodic) or on the interior sites
/// (open); the cluster state is the ground state.
pub fn build_cluster(n: usize, boundary: Boundary) -> Result<ChainHamiltonian> {
    if n < 3 {
        return Err(Error::InvalidModel("cluster needs n >= 3".into()));
    }
    let zxz = ops_on_positions(&[&pauli_z(), &pauli_x(), &pauli_z()]).mapv(|v| v * c(-1.0));
    let mut terms = Vec::new();
    let js: Vec<usize> = match boundary {
        Boundary::Periodic => (0..n).collect(),
        Boundary::Open => (1..n - 1).collect(),
    };
    for j in js {
        terms.push(LocalTerm {
            sites: vec![(j + n - 1) % n, j, (j + 1) % n],
            op: zxz.clone(),
        });
    }
    ChainHamiltonian::assemble(n, 3, boundary, zxz, terms, "cluster".into())
}

/// Translation-invariant chain from an arbitrary Hermitian local term.
pub fn build_custom(
    n: usize,
    boundary: Boundary,
    local_term: Array2<C64>,
    range: usize,
    require_commuting: bool,
) -> Result<ChainHamiltonian> {
    if range == 0 || n < range {
        return Err(Error::InvalidModel(format!("range {range} invalid for n={n}")));
    }
    let dloc = 1usize << range;
    if local_term.dim() != (dloc, dloc) {
        return Err(Error::DimMismatch(format!(
            "local term {:?} for range {range}",
            local_term.dim()
        )));
    }
    HermitianOperator::new(local_term.clone(), SiteIndexing::qubits(range))?;
    let mut terms = Vec::new();
    let starts: Vec<usize> = match boundary {
        Boundary::Periodic => (0..n).collect(),
        Boundary::Open => (0..=n - range).collect(),
    };
    for s in starts {
        terms.push(LocalTerm {
            sites: (0..range).map(|k| (s + k) % n).collect(),
            op: local_term.clone(),
        });
    }
    let h = ChainHamiltonian::assemble(n, range, boundary, local_term, terms, "custom".into())?;
    if require_commuting && !h.commuting {
        return Err(Error::NonCommuting(h.max_commutator_norm));
    }
    Ok(h)
}

/// Zero Hamiltonian; every Bohr decomposition collapses to a single
/// frequency, which makes the infinite-temperature closed forms exact.
pub fn build_zero(n: usize) -> Result<ChainHamiltonian> {
    build_custom(n, Boundary::Periodic, Array2::zeros((2, 2)), 1, true)
}

/// True iff the max commutator sup-norm over term pairs is below
/// [`TOL_COMMUTE`] (relative to the term norms).
pub fn check_commuting(h: &ChainHamiltonian) -> (bool, f64) {
    (h.commuting, h.max_commutator_norm)
}

fn commutation_scan(terms: &[LocalTerm]) -> Result<(bool, f64)> {
    let mut worst = 0.0f64;
    for (i, a) in terms.iter().enumerate() {
        for b in terms.iter().skip(i + 1) {
            if a.sites.iter().all(|s| !b.sites.contains(s)) {
                continue; // disjoint supports commute exactly
            }
            let mut union: Vec<usize> = a.sites.clone();
            for &s in &b.sites {
                if !union.contains(&s) {
                    union.push(s);
                }
            }
            union.sort_unstable();
            let fac = SiteIndexing::qubits(union.len());
            let pos = |sites: &[usize]| -> Vec<usize> {
                sites
                    .iter()
                    .map(|s| union.iter().position(|u| u == s).expect("in union"))
                    .collect()
            };
            let ea = embed_local(&a.op, &pos(&a.sites), &fac)?;
            let eb = embed_local(&b.op, &pos(&b.sites), &fac)?;
            let comm = ea.dot(&eb) - eb.dot(&ea);
            let scale = tensor::schatten_norm(&ea, tensor::SchattenP::Infinity)
                * tensor::schatten_norm(&eb, tensor::SchattenP::Infinity);
            let nrm = tensor::schatten_norm(&comm, tensor::SchattenP::Infinity);
            worst = worst.max(nrm / scale.max(1.0));
        }
    }
    Ok((worst <= TOL_COMMUTE, worst))
}

/// Site-translation unitary (shifts every site up by one), used by the
/// translation-invariance tests.
pub fn shift_unitary(n: usize) -> Array2<C64> {
    let d = 1usize << n;
    let mut u = Array2::zeros((d, d));
    for b in 0..d {
        let top = (b >> (n - 1)) & 1;
        let shifted = ((b << 1) & (d - 1)) | top;
        u[(shifted, b)] = c(1.0);
    }
    u
}

/// Translation-invariant MPS tensor: one `D x D` matrix per physical index.
#[derive(Debug, Clone)]
pub struct MPSTensor {
    pub physical_dim: usize,
    pub bond_dim: usize,
    pub matrices: Vec<Array2<C64>>,
}

impl MPSTensor {
    /// The cluster-state tensor `A^0 = |0)(+|`, `A^1 = |1)(-|`.
    pub fn cluster() -> Self {
        let s = 1.0 / 2.0f64.sqrt();
        let a0 = ndarray::array![[c(s), c(s)], [c(0.0), c(0.0)]];
        let a1 = ndarray::array![[c(0.0), c(0.0)], [c(s), c(-s)]];
        Self { physical_dim: 2, bond_dim: 2, matrices: vec![a0, a1] }
    }

    /// Rank of the set of vectorized matrices; the tensor is injective after
    /// blocking once this reaches `bond_dim^2`.
    pub fn span_rank(&self) -> usize {
        let d2 = self.bond_dim * self.bond_dim;
        let rows = self.matrices.len();
        let mut m = Array2::zeros((rows, d2));
        for (r, a) in self.matrices.iter().enumerate() {
            let v = tensor::vectorize(a);
            for (k, x) in v.iter().enumerate() {
                m[(r, k)] = *x;
            }
        }
        let s = linalg::singular_values(&m).unwrap_or_default();
        let top = s.first().copied().unwrap_or(0.0);
        s.iter().filter(|&&x| x > 1e-12 * top.max(1.0)).count()
    }
}

/// Blocks `k` consecutive sites: `A^{i_1...i_k} = A^{i_1} ... A^{i_k}`, with
/// `i_1` the fastest index of the blocked label.
pub fn block_mps(t: &MPSTensor, k: usize) -> MPSTensor {
    assert!(k >= 1);
    let dp = t.physical_dim.pow(k as u32);
    let mut matrices = Vec::with_capacity(dp);
    for label in 0..dp {
        let mut m = Array2::eye(t.bond_dim);
        let mut rest = label;
        // i_1 is the fastest digit and the leftmost matrix in the product
        for _ in 0..k {
            let i = rest % t.physical_dim;
            rest /= t.physical_dim;
            m = m.dot(&t.matrices[i]);
        }
        matrices.push(m);
    }
    MPSTensor { physical_dim: dp, bond_dim: t.bond_dim, matrices }
}

/// Normalized cluster state amplitudes from the trace formula
/// `c_{i_0..i_{n-1}} = tr(A^{i_0} ... A^{i_{n-1}})`.
pub fn cluster_mps_state(n: usize) -> Result<Array1<C64>> {
    if n < 3 {
        return Err(Error::InvalidModel("cluster state needs n >= 3".into()));
    }
    let t = MPSTensor::cluster();
    let d = 1usize << n;
    let mut psi = Array1::zeros(d);
    for m in 0..d {
        let mut prod = Array2::eye(t.bond_dim);
        for site in 0..n {
            let i = (m >> site) & 1;
            prod = prod.dot(&t.matrices[i]);
        }
        psi[m] = prod.diag().sum();
    }
    let nrm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nrm == 0.0 {
        return Err(Error::Numerical("cluster MPS has zero norm".into()));
    }
    Ok(psi.mapv(|z| z / nrm))
}

/// Unitary group representation on the chain.
#[derive(Debug, Clone)]
pub struct SymmetryRep {
    pub labels: Vec<String>,
    pub unitaries: Vec<Array2<C64>>,
}

impl SymmetryRep {
    pub fn trivial(dim: usize) -> Self {
        Self { labels: vec!["e".into()], unitaries: vec![Array2::eye(dim)] }
    }

    pub fn order(&self) -> usize {
        self.unitaries.len()
    }
}

/// The Z2 x Z2 symmetry of the cluster chain: X on all even sites and X on
/// all odd sites generate it, and each element commutes with the cluster
/// Hamiltonian.
pub fn z2z2_representation(n: usize) -> Result<SymmetryRep> {
    if n % 2 != 0 {
        return Err(Error::InvalidModel("Z2 x Z2 blocking requires even n".into()));
    }
    let idx = SiteIndexing::qubits(n);
    let x = pauli_x();
    let string = |sites: &[usize]| -> Result<Array2<C64>> {
        let mut u = Array2::eye(idx.dim());
        for &s in sites {
            u = embed_local(&x, &[s], &idx)?.dot(&u);
        }
        Ok(u)
    };
    let evens: Vec<usize> = (0..n).step_by(2).collect();
    let odds: Vec<usize> = (1..n).step_by(2).collect();
    let u_even = string(&evens)?;
    let u_odd = string(&odds)?;
    let u_both = u_even.dot(&u_odd);
    Ok(SymmetryRep {
        labels: vec!["e".into(), "x_even".into(), "x_odd".into(), "x_even*x_odd".into()],
        unitaries: vec![Array2::eye(idx.dim()), u_even, u_odd, u_both],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{apply_local_to_vector, SchattenP};

    #[test]
    fn ising_n2_periodic_double_bond() {
        let h = build_ising(2, Boundary::Periodic, 1.0, 0.0).unwrap();
        // two wrapped bonds coincide: H = -2 Z ox Z, spectrum {-2,-2,2,2}
        let (w, _) = h.eig().unwrap();
        let expect = [-2.0, -2.0, 2.0, 2.0];
        for (a, b) in w.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(h.commuting);
    }

    #[test]
    fn ising_open_matches_classical_enumeration() {
        let h = build_ising(3, Boundary::Open, 1.0, 0.0).unwrap();
        let mut classical: Vec<f64> = (0..8u32)
            .map(|m| {
                let s: Vec<f64> =
                    (0..3).map(|k| if (m >> k) & 1 == 0 { 1.0 } else { -1.0 }).collect();
                -(s[0] * s[1] + s[1] * s[2])
            })
            .collect();
        classical.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (w, _) = h.eig().unwrap();
        for (a, b) in w.iter().zip(classical.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ising_zero_couplings_is_zero() {
        let h = build_ising(3, Boundary::Periodic, 0.0, 0.0).unwrap();
        assert!(h.total.matrix().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn cluster_terms_commute_and_ground_state() {
        let h = build_cluster(4, Boundary::Periodic).unwrap();
        assert!(h.commuting, "max commutator {:.3e}", h.max_commutator_norm);
        assert!(h.max_commutator_norm <= 1e-14);
        let (w, _) = h.eig().unwrap();
        assert!((w[0] + 4.0).abs() < 1e-12, "ground {:.6}", w[0]);
        assert!(w[1] > w[0] + 1.0, "unique ground state");
        assert!(h.total.trace().abs() < 1e-12);
    }

    #[test]
    fn custom_commuting_flags() {
        let zz = tensor::kron(&pauli_z(), &pauli_z());
        let ok = build_custom(3, Boundary::Open, zz.clone(), 2, true).unwrap();
        assert!(ok.commuting);
        let xx = tensor::kron(&pauli_x(), &pauli_x());
        let bad = build_custom(3, Boundary::Open, &xx + &zz, 2, false).unwrap();
        assert!(!bad.commuting);
        assert!(build_custom(3, Boundary::Open, &xx + &zz, 2, true).is_err());
        let zero = build_custom(3, Boundary::Open, Array2::zeros((4, 4)), 2, true).unwrap();
        assert!(zero.commuting);
        assert!(zero.total.matrix().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn commutator_norm_of_overlapping_xx_zz() {
        // explicit overlap: X ox X on {0,1} vs Z ox Z on {1,2}
        let terms = vec![
            LocalTerm { sites: vec![0, 1], op: tensor::kron(&pauli_x(), &pauli_x()) },
            LocalTerm { sites: vec![1, 2], op: tensor::kron(&pauli_z(), &pauli_z()) },
        ];
        let (ok, norm) = commutation_scan(&terms).unwrap();
        assert!(!ok);
        assert!(norm > 0.1);
    }

    #[test]
    fn cluster_mps_is_ground_state() {
        let n = 4;
        let h = build_cluster(n, Boundary::Periodic).unwrap();
        let psi = cluster_mps_state(n).unwrap();
        let (_, v) = h.eig().unwrap();
        let ground = v.column(0);
        let ov: C64 = ground.iter().zip(psi.iter()).map(|(g, p)| g.conj() * p).sum();
        assert!((ov.norm() - 1.0).abs() < 1e-10, "overlap {:.12}", ov.norm());
    }

    #[test]
    fn cluster_mps_stabilizer_eigenvalues() {
        let n = 4;
        let idx = SiteIndexing::qubits(n);
        let psi = cluster_mps_state(n).unwrap();
        let zxz = ops_on_positions(&[&pauli_z(), &pauli_x(), &pauli_z()]);
        for j in 0..n {
            let sites = [(j + n - 1) % n, j, (j + 1) % n];
            let spsi = apply_local_to_vector(&zxz, &sites, &psi.view(), &idx);
            let diff: f64 = spsi.iter().zip(psi.iter()).map(|(a, b)| (a - b).norm()).sum();
            assert!(diff < 1e-10, "stabilizer {j} residual {diff:.3e}");
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blocked_cluster_tensors() {
        let t = MPSTensor::cluster();
        let b = block_mps(&t, 2);
        let s = 1.0 / 2.0f64.sqrt();
        // direct products of the one-site tensors
        let expect = [
            // A^{00} = (1/sqrt2)|0)(+|
            ndarray::array![[c(s * s), c(s * s)], [c(0.0), c(0.0)]],
            // A^{10} = (1/sqrt2)|1)(+|   (label 1 = i1=1, i2=0)
            ndarray::array![[c(0.0), c(0.0)], [c(s * s), c(s * s)]],
            // A^{01} = (1/sqrt2)|0)(-|
            ndarray::array![[c(s * s), c(-s * s)], [c(0.0), c(0.0)]],
            // A^{11} = -(1/sqrt2)|1)(-|
            ndarray::array![[c(0.0), c(0.0)], [c(-s * s), c(s * s)]],
        ];
        for (m, e) in b.matrices.iter().zip(expect.iter()) {
            assert!(crate::max_abs_diff(m, e) < 1e-14);
        }
        // blocked tensors span all 2x2 matrices
        assert_eq!(b.span_rank(), 4);
        // k=1 is the identity operation
        let b1 = block_mps(&t, 1);
        for (m, e) in b1.matrices.iter().zip(t.matrices.iter()) {
            assert!(crate::max_abs_diff(m, e) < 1e-15);
        }
    }

    #[test]
    fn z2z2_commutes_with_cluster() {
        let n = 4;
        let h = build_cluster(n, Boundary::Periodic).unwrap();
        let rep = z2z2_representation(n).unwrap();
        assert_eq!(rep.order(), 4);
        for (g, u) in rep.unitaries.iter().enumerate() {
            let comm = u.dot(h.total.matrix()) - h.total.matrix().dot(u);
            let nrm = tensor::schatten_norm(&comm, SchattenP::Infinity);
            assert!(nrm <= 1e-12, "element {g}: {nrm:.3e}");
            // order-2 elements
            let sq = u.dot(u);
            assert!(crate::max_abs_diff(&sq, &Array2::eye(h.dim())) < 1e-12);
        }
        assert!(crate::max_abs_diff(&rep.unitaries[0], &Array2::eye(h.dim())) < 1e-15);
        assert!(z2z2_representation(5).is_err());
    }

    #[test]
    fn translation_invariance_of_periodic_builders() {
        for h in [
            build_ising(5, Boundary::Periodic, 1.0, 0.4).unwrap(),
            build_cluster(5, Boundary::Periodic).unwrap(),
        ] {
            let u = shift_unitary(5);
            let moved = u.dot(h.total.matrix()).dot(&u.t().mapv(|z| z.conj()));
            assert!(crate::max_abs_diff(&moved, h.total.matrix()) < 1e-12, "{}", h.label);
        }
    }

    #[test]
    fn factor_for_region_tracks_term_supports() {
        let h = build_cluster(6, Boundary::Periodic).unwrap();
        assert_eq!(h.factor_for_region(&[2]), vec![0, 1, 2, 3, 4]);
        let h2 = build_ising(6, Boundary::Periodic, 1.0, 0.0).unwrap();
        assert_eq!(h2.factor_for_region(&[2]), vec![1, 2, 3]);
        assert_eq!(h2.factor_for_region(&[0]), vec![0, 1, 5]);
    }
}
