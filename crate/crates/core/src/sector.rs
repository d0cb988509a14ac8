//! Bohr-frequency grading of operator space.
//!
//! A Davies generator built from eigenoperators of H commutes with `[H, .]`,
//! so in the H-eigenbasis it is block-diagonal over the sectors
//! `span{ |E_k><E_l| : E_k - E_l = nu }`. All spectral work (eigendecompo-
//! sitions, kernel projections, powers, norms) happens per block, which is
//! what keeps the n = 6 superoperators tractable on one core.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::linalg;
use crate::tensor::c;
use crate::{Error, Result};

/// Clusters values whose gaps are below `tol`; returns (centroid, member
/// indices) sorted by centroid.
pub fn group_values(vals: &[f64], tol: f64) -> Vec<(f64, Vec<usize>)> {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).expect("finite"));
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some((cent, members)) if (vals[i] - *cent).abs() <= tol => {
                // running centroid keeps clusters tight
                let k = members.len() as f64;
                *cent = (*cent * k + vals[i]) / (k + 1.0);
                members.push(i);
            }
            _ => groups.push((vals[i], vec![i])),
        }
    }
    groups
}

/// The grading of vec-indices `(k, l) -> v = k + d*l` (H-eigenbasis order) by
/// the frequency `nu = E_k - E_l`.
#[derive(Debug, Clone)]
pub struct BohrSectors {
    pub dim: usize,
    /// centroid frequency per sector
    pub frequencies: Vec<f64>,
    /// vec indices per sector, ascending
    pub members: Vec<Vec<usize>>,
    /// sector id and position within it, per vec index
    pub lookup: Vec<(usize, usize)>,
    /// energy group id per eigenbasis index
    pub energy_group: Vec<usize>,
    /// energy group centroids
    pub energy_centroids: Vec<f64>,
}

impl BohrSectors {
    pub fn from_energies(evals: &[f64], tol: f64) -> Self {
        let d = evals.len();
        let egroups = group_values(evals, tol);
        let mut energy_group = vec![0usize; d];
        let mut energy_centroids = Vec::with_capacity(egroups.len());
        for (gid, (cent, members)) in egroups.iter().enumerate() {
            energy_centroids.push(*cent);
            for &m in members {
                energy_group[m] = gid;
            }
        }
        // cluster the pairwise group differences into frequencies
        let g = energy_centroids.len();
        let mut pair_vals = Vec::with_capacity(g * g);
        for a in 0..g {
            for b in 0..g {
                pair_vals.push(energy_centroids[a] - energy_centroids[b]);
            }
        }
        let fgroups = group_values(&pair_vals, tol);
        let mut pair_to_sector = vec![0usize; g * g];
        let mut frequencies = Vec::with_capacity(fgroups.len());
        for (sid, (cent, members)) in fgroups.iter().enumerate() {
            frequencies.push(*cent);
            for &p in members {
                pair_to_sector[p] = sid;
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); frequencies.len()];
        let mut lookup = vec![(0usize, 0usize); d * d];
        for l in 0..d {
            for k in 0..d {
                let v = k + d * l;
                let sid = pair_to_sector[energy_group[k] * g + energy_group[l]];
                lookup[v] = (sid, members[sid].len());
                members[sid].push(v);
            }
        }
        Self { dim: d, frequencies, members, lookup, energy_group, energy_centroids }
    }

    pub fn n_sectors(&self) -> usize {
        self.frequencies.len()
    }

    pub fn largest_block(&self) -> usize {
        self.members.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// A superoperator that is block-diagonal over Bohr sectors, stored as one
/// dense matrix per sector, indexed in the H-eigenbasis.
#[derive(Debug, Clone)]
pub struct SectorMatrix {
    pub blocks: Vec<Array2<C64>>,
}

impl SectorMatrix {
    pub fn zeros(sectors: &BohrSectors) -> Self {
        Self {
            blocks: sectors.members.iter().map(|m| Array2::zeros((m.len(), m.len()))).collect(),
        }
    }

    pub fn identity(sectors: &BohrSectors) -> Self {
        Self { blocks: sectors.members.iter().map(|m| Array2::eye(m.len())).collect() }
    }

    /// Gathers the sector blocks of a dense vec-space matrix and reports the
    /// Frobenius mass left outside the blocks.
    pub fn from_dense(m: &Array2<C64>, sectors: &BohrSectors) -> (Self, f64) {
        let total: f64 = m.iter().map(|z| z.norm_sqr()).sum();
        let mut captured = 0.0f64;
        let mut blocks = Vec::with_capacity(sectors.n_sectors());
        for mem in &sectors.members {
            let s = mem.len();
            let mut b = Array2::zeros((s, s));
            for (r, &vr) in mem.iter().enumerate() {
                for (cc, &vc) in mem.iter().enumerate() {
                    let x = m[(vr, vc)];
                    b[(r, cc)] = x;
                    captured += x.norm_sqr();
                }
            }
            blocks.push(b);
        }
        (Self { blocks }, (total - captured).max(0.0).sqrt())
    }

    pub fn to_dense(&self, sectors: &BohrSectors) -> Array2<C64> {
        let d2 = sectors.dim * sectors.dim;
        let mut m = Array2::zeros((d2, d2));
        for (b, mem) in self.blocks.iter().zip(&sectors.members) {
            for (r, &vr) in mem.iter().enumerate() {
                for (cc, &vc) in mem.iter().enumerate() {
                    m[(vr, vc)] = b[(r, cc)];
                }
            }
        }
        m
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| if a.nrows() == 0 { a.clone() } else { a.dot(b) })
                .collect(),
        }
    }

    pub fn add_scaled(&self, other: &Self, s: C64) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a + &b.mapv(|z| z * s))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add_scaled(other, c(-1.0))
    }

    /// Applies to a vec-space vector (H-eigenbasis indexing).
    pub fn apply_vec(&self, v: &Array1<C64>, sectors: &BohrSectors) -> Array1<C64> {
        let mut out = Array1::zeros(v.len());
        for (b, mem) in self.blocks.iter().zip(&sectors.members) {
            if mem.is_empty() {
                continue;
            }
            let x = Array1::from_iter(mem.iter().map(|&i| v[i]));
            let y = b.dot(&x);
            for (pos, &i) in mem.iter().enumerate() {
                out[i] = y[pos];
            }
        }
        out
    }

    /// Max over blocks of the spectral norm.
    pub fn spectral_norm(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for b in &self.blocks {
            if b.nrows() > 0 {
                worst = worst.max(linalg::spectral_norm(b)?);
            }
        }
        Ok(worst)
    }

    /// Spectral norm of `M - M^H` (detailed-balance residual).
    pub fn hermiticity_residual(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for b in &self.blocks {
            if b.nrows() == 0 {
                continue;
            }
            let diff = b - &b.t().mapv(|z| z.conj());
            worst = worst.max(linalg::spectral_norm(&diff)?);
        }
        Ok(worst)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Blockwise Hermitian eigendecomposition.
    pub fn eigh_blocks(&self) -> Result<Vec<(Vec<f64>, Array2<C64>)>> {
        self.blocks
            .iter()
            .map(|b| {
                if b.nrows() == 0 {
                    Ok((Vec::new(), Array2::zeros((0, 0))))
                } else {
                    linalg::eigh(b)
                }
            })
            .collect()
    }

    /// All eigenvalues of a Hermitian sector matrix, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut all = Vec::new();
        for b in &self.blocks {
            if b.nrows() > 0 {
                all.extend(linalg::eigvalsh(b)?);
            }
        }
        all.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(all)
    }

    /// Orthogonal projection onto the near-kernel of a Hermitian sector
    /// matrix. Errors when an eigenvalue falls into the ambiguous band just
    /// above the threshold.
    pub fn kernel_projection(&self, threshold: f64) -> Result<(Self, usize)> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut dim = 0usize;
        for b in &self.blocks {
            if b.nrows() == 0 {
                blocks.push(b.clone());
                continue;
            }
            let (w, v) = linalg::eigh(b)?;
            let ambiguous: Vec<f64> = w
                .iter()
                .copied()
                .filter(|x| x.abs() > threshold && x.abs() < 10.0 * threshold)
                .collect();
            if !ambiguous.is_empty() {
                return Err(Error::KernelAmbiguous(format!(
                    "eigenvalues {ambiguous:?} within a decade of the kernel threshold {threshold:.1e}"
                )));
            }
            let mut p = Array2::zeros(b.dim());
            for (i, &wi) in w.iter().enumerate() {
                if wi.abs() <= threshold {
                    dim += 1;
                    let col = v.column(i);
                    for r in 0..b.nrows() {
                        for q in 0..b.nrows() {
                            p[(r, q)] += col[r] * col[q].conj();
                        }
                    }
                }
            }
            blocks.push(p);
        }
        Ok((Self { blocks }, dim))
    }

    /// `f` applied to a Hermitian sector matrix through its blocked
    /// eigendecomposition.
    pub fn matrix_function(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            if b.nrows() == 0 {
                blocks.push(b.clone());
                continue;
            }
            let (w, v) = linalg::eigh(b)?;
            let lam = Array2::from_diag(&Array1::from_iter(w.iter().map(|&x| c(f(x)))));
            blocks.push(v.dot(&lam).dot(&v.t().mapv(|z| z.conj())));
        }
        Ok(Self { blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_clusters_with_tolerance() {
        let vals = [0.0, 1.0, 1.0 + 1e-12, 2.0, -1.0];
        let g = group_values(&vals, 1e-9);
        assert_eq!(g.len(), 4);
        assert_eq!(g[2].1.len(), 2); // the two ones
    }

    #[test]
    fn sectors_of_qubit_z() {
        // H = Z: energies {-1, 1}; frequencies {-2, 0, 2}
        let s = BohrSectors::from_energies(&[-1.0, 1.0], 1e-9);
        assert_eq!(s.n_sectors(), 3);
        assert_eq!(s.frequencies, vec![-2.0, 0.0, 2.0]);
        let sizes: Vec<usize> = s.members.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 4);
        assert_eq!(s.largest_block(), 2);
    }

    #[test]
    fn dense_roundtrip_and_offblock_residual() {
        let s = BohrSectors::from_energies(&[-1.0, 1.0], 1e-9);
        let mut m = Array2::zeros((4, 4));
        // fill only the nu=0 sector: vec indices 0 = (0,0) and 3 = (1,1)
        m[(0, 0)] = c(2.0);
        m[(0, 3)] = c(0.5);
        m[(3, 0)] = c(0.5);
        m[(3, 3)] = c(-1.0);
        let (sm, resid) = SectorMatrix::from_dense(&m, &s);
        assert!(resid < 1e-15);
        assert!(crate::max_abs_diff(&sm.to_dense(&s), &m) < 1e-15);
        // off-block mass is reported
        let mut m2 = m.clone();
        m2[(0, 1)] = c(0.3);
        let (_, resid2) = SectorMatrix::from_dense(&m2, &s);
        assert!((resid2 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn kernel_projection_of_diagonal() {
        let s = BohrSectors::from_energies(&[0.0, 0.0], 1e-9);
        // one sector (all frequencies 0), block = full 4x4
        assert_eq!(s.n_sectors(), 1);
        let mut m = Array2::zeros((4, 4));
        m[(1, 1)] = c(-2.0);
        m[(2, 2)] = c(-2.0);
        let (sm, _) = SectorMatrix::from_dense(&m, &s);
        let (p, dim) = sm.kernel_projection(1e-8).unwrap();
        assert_eq!(dim, 2);
        let pd = p.to_dense(&s);
        assert!((pd[(0, 0)].re - 1.0).abs() < 1e-14);
        assert!((pd[(3, 3)].re - 1.0).abs() < 1e-14);
        assert!(pd[(1, 1)].norm() < 1e-14);
    }
}
