//! KMS (GNS) inner product machinery: `<x, y>_sigma = tr(s^{1/2} x^H s^{1/2} y)`,
//! and the sigma^{1/4}-multiplier similarity transform under which
//! detailed-balanced generators become Hermitian matrices.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::tensor::{kron, DensityState, SuperOperator};
use crate::{Error, Result};

fn quarter_powers(sigma: &DensityState) -> Result<(Array2<C64>, Array2<C64>)> {
    let min = sigma.min_eigenvalue();
    if min <= 0.0 {
        return Err(Error::RankDeficient { min_eig: min });
    }
    let v = sigma.eigenvectors();
    let vh = v.t().mapv(|z| z.conj());
    let dim = sigma.dim();
    let mut plus = Array2::zeros((dim, dim));
    let mut minus = Array2::zeros((dim, dim));
    for (i, &w) in sigma.eigenvalues().iter().enumerate() {
        let q = w.powf(0.25);
        plus[(i, i)] = C64::new(q, 0.0);
        minus[(i, i)] = C64::new(1.0 / q, 0.0);
    }
    Ok((v.dot(&plus).dot(&vh), v.dot(&minus).dot(&vh)))
}

/// `<x, y>_sigma = tr(sigma^{1/2} x^H sigma^{1/2} y)`.
pub fn kms_inner(x: &Array2<C64>, y: &Array2<C64>, sigma: &DensityState) -> Result<C64> {
    let min = sigma.min_eigenvalue();
    if min <= 0.0 {
        return Err(Error::RankDeficient { min_eig: min });
    }
    let v = sigma.eigenvectors();
    let vh = v.t().mapv(|z| z.conj());
    let dim = sigma.dim();
    let mut half = Array2::zeros((dim, dim));
    for (i, &w) in sigma.eigenvalues().iter().enumerate() {
        half[(i, i)] = C64::new(w.sqrt(), 0.0);
    }
    let s_half = v.dot(&half).dot(&vh);
    let prod = s_half.dot(&x.t().mapv(|z| z.conj())).dot(&s_half).dot(y);
    Ok(prod.diag().sum())
}

/// Conjugates a Schroedinger-picture superoperator by the
/// `sigma^{1/4}`-multipliers:
/// `M = W^{-1/2} L W^{1/2}` with `W^{1/2} = kron(conj(s^{1/4}), s^{1/4})`.
/// `M` is Hermitian iff `L` is detailed balanced with respect to `sigma`,
/// and `M` equals the symmetrized form of the Heisenberg generator.
pub fn kms_symmetrize(l: &SuperOperator, sigma: &DensityState) -> Result<SuperOperator> {
    let (s_plus, s_minus) = quarter_powers(sigma)?;
    let w_plus = kron(&s_plus.mapv(|z| z.conj()), &s_plus);
    let w_minus = kron(&s_minus.mapv(|z| z.conj()), &s_minus);
    let m = w_minus.dot(l.matrix()).dot(&w_plus);
    SuperOperator::from_matrix(m, l.dim())
}

/// Transports a symmetrized map back to the Schroedinger picture:
/// `L = W^{1/2} M W^{-1/2}`.
pub fn kms_unsymmetrize(m: &SuperOperator, sigma: &DensityState) -> Result<SuperOperator> {
    let (s_plus, s_minus) = quarter_powers(sigma)?;
    let w_plus = kron(&s_plus.mapv(|z| z.conj()), &s_plus);
    let w_minus = kron(&s_minus.mapv(|z| z.conj()), &s_minus);
    let l = w_plus.dot(m.matrix()).dot(&w_minus);
    SuperOperator::from_matrix(l, m.dim())
}

/// Hermiticity residual `||M - M^H||_inf` of the symmetrized generator.
pub fn detailed_balance_residual(l: &SuperOperator, sigma: &DensityState) -> Result<f64> {
    let m = kms_symmetrize(l, sigma)?;
    let diff = m.matrix() - &m.matrix().t().mapv(|z| z.conj());
    crate::linalg::spectral_norm(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_ising, Boundary};
    use crate::davies::{davies_generator, default_pauli_jumps, RateFunction};
    use crate::gibbs::gibbs_state;
    use crate::tensor::{c, SiteIndexing};
    use std::sync::Arc;

    #[test]
    fn kms_inner_normalization() {
        let idx = SiteIndexing::qubits(2);
        let sigma = DensityState::maximally_mixed(idx.clone());
        let eye = Array2::<C64>::eye(4);
        let ip = kms_inner(&eye, &eye, &sigma).unwrap();
        assert!((ip - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn conjugation_matches_direct_symmetrization() {
        // the generator's own sector-blocked symmetrized form must equal the
        // generic sigma^{1/4}-conjugation of its dense superoperator
        let chain = Arc::new(build_ising(3, Boundary::Periodic, 1.0, 0.0).unwrap());
        let beta = 0.7;
        let gen = davies_generator(
            &chain,
            beta,
            &default_pauli_jumps(3),
            RateFunction::Glauber,
            &[0, 1, 2],
        )
        .unwrap();
        let sigma = gibbs_state(&chain, beta).unwrap();
        let m_conj = kms_symmetrize(&gen.superoperator().unwrap(), &sigma.state).unwrap();
        // move to the H-eigenbasis where the sector blocks live
        let ctx = gen.context().unwrap();
        let t = kron(&ctx.evecs.mapv(|z| z.conj()), &ctx.evecs);
        let th = t.t().mapv(|z| z.conj());
        let m_eig = th.dot(m_conj.matrix()).dot(&t);
        let (blocks, offblock) =
            crate::sector::SectorMatrix::from_dense(&m_eig, &ctx.sectors);
        assert!(offblock < 1e-10, "off-sector mass {offblock:.3e}");
        let direct = gen.symmetrized_blocks();
        let mut worst = 0.0f64;
        for (a, b) in blocks.blocks.iter().zip(direct.blocks.iter()) {
            worst = worst.max(crate::max_abs_diff(a, b));
        }
        assert!(worst < 1e-10, "symmetrization mismatch {worst:.3e}");
    }

    #[test]
    fn self_adjointness_of_davies_generator() {
        let chain = Arc::new(build_ising(3, Boundary::Periodic, 1.0, 0.4).unwrap());
        let beta = 1.1;
        let gen = davies_generator(
            &chain,
            beta,
            &default_pauli_jumps(3),
            RateFunction::Glauber,
            &[0, 1, 2],
        )
        .unwrap();
        let sigma = gibbs_state(&chain, beta).unwrap();
        let res = detailed_balance_residual(&gen.superoperator().unwrap(), &sigma.state).unwrap();
        assert!(res < 1e-10, "{res:.3e}");
    }

    #[test]
    fn rank_deficient_sigma_rejected() {
        let idx = SiteIndexing::qubits(1);
        let v = ndarray::Array1::from(vec![c(1.0), c(0.0)]);
        let pure = DensityState::pure(&v, idx).unwrap();
        let l = SuperOperator::identity(2);
        assert!(kms_symmetrize(&l, &pure).is_err());
    }
}
