//! Gibbs states, marginals, and the overlap operator
//! `h(sigma_{A^c B^c}) = s_{A^c}^{-1/2} (x) s_{B^c}^{-1/2} s_{A^cB^c}
//! s_{A^c}^{-1/2} (x) s_{B^c}^{-1/2} - 1`, whose sup norm is the
//! multiplicative error of the quasi-factorization step.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::chain::ChainHamiltonian;
use crate::geometry::SplittingGeometry;
use crate::tensor::{
    c, embed_local, mat_pow_floored, partial_trace, sup_norm_hermitian, DensityState,
    HermitianOperator,
};
use crate::{Error, Result};

/// Thermal state `e^{-beta H} / Z` with its log-partition function.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub beta: f64,
    pub chain: Arc<ChainHamiltonian>,
    pub state: DensityState,
    pub log_partition: f64,
}

/// Builds the Gibbs state; energies are shifted by the spectral minimum
/// before exponentiation so large beta cannot overflow, and `ln Z` carries
/// the shift back.
pub fn gibbs_state(chain: &Arc<ChainHamiltonian>, beta: f64) -> Result<GibbsState> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidModel(format!("inverse temperature {beta}")));
    }
    let (evals, evecs) = chain.eig()?.clone();
    let e0 = evals.first().copied().unwrap_or(0.0);
    let boltz: Vec<f64> = evals.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    let z_shifted: f64 = boltz.iter().sum();
    let log_partition = z_shifted.ln() - beta * e0;
    let weights: Vec<f64> = boltz.iter().map(|&b| b / z_shifted).collect();
    // ascending eigenvalue order for the DensityState contract
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].partial_cmp(&weights[b]).expect("finite"));
    let sorted_w: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let mut sorted_v = Array2::zeros(evecs.dim());
    for (col, &i) in order.iter().enumerate() {
        sorted_v.column_mut(col).assign(&evecs.column(i));
    }
    let state = DensityState::from_eig(sorted_w, sorted_v, chain.indexing().clone());
    Ok(GibbsState { beta, chain: Arc::clone(chain), state, log_partition })
}

/// Reduced state on `region` (partial trace over the complement).
pub fn marginal(state: &DensityState, region: &[usize]) -> Result<DensityState> {
    if region.is_empty() {
        return Err(Error::InvalidModel("marginal of the empty region".into()));
    }
    let idx = state.indexing();
    let red = partial_trace(state.matrix(), region, idx);
    let sub = idx.subsystem(region);
    DensityState::new(HermitianOperator::new(red, sub)?)
}

/// The overlap operator of a split, its sup norm and the derived
/// quasi-factorization constant.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapReport {
    pub a_sites: Vec<usize>,
    pub b_sites: Vec<usize>,
    pub a_complement: Vec<usize>,
    pub b_complement: Vec<usize>,
    pub h_infty_norm: f64,
    pub admissible: bool,
    pub qf_constant: Option<f64>,
    #[serde(skip)]
    pub h_operator: Array2<C64>,
    pub floor_hits: usize,
}

/// Overlap operator for an explicit pair of covering regions `A`, `B` with
/// `A u B = Lambda` (complements may be adjacent; they must be disjoint).
pub fn overlap_operator_ab(
    sigma: &DensityState,
    a_sites: &[usize],
    b_sites: &[usize],
) -> Result<OverlapReport> {
    let idx = sigma.indexing();
    let n = idx.n_sites();
    let in_a: Vec<bool> = (0..n).map(|s| a_sites.contains(&s)).collect();
    let in_b: Vec<bool> = (0..n).map(|s| b_sites.contains(&s)).collect();
    if (0..n).any(|s| !in_a[s] && !in_b[s]) {
        return Err(Error::InfeasibleGeometry("A u B must cover the chain".into()));
    }
    let ac: Vec<usize> = (0..n).filter(|&s| !in_a[s]).collect();
    let bc: Vec<usize> = (0..n).filter(|&s| !in_b[s]).collect();
    if ac.is_empty() || bc.is_empty() {
        return Err(Error::InfeasibleGeometry("complements must be nonempty".into()));
    }
    // the complements are automatically disjoint since A u B = Lambda
    let mut joint: Vec<usize> = ac.iter().chain(bc.iter()).copied().collect();
    joint.sort_unstable();
    let sub = idx.subsystem(&joint);
    let s_joint = partial_trace(sigma.matrix(), &joint, idx);
    let s_ac = partial_trace(sigma.matrix(), &ac, idx);
    let s_bc = partial_trace(sigma.matrix(), &bc, idx);

    let mut floor_hits = 0usize;
    let mut half_inv = |m: Array2<C64>, sites: &[usize]| -> Result<Array2<C64>> {
        let hop = HermitianOperator::new(m, idx.subsystem(sites))?;
        let (inv_sqrt, hits) = mat_pow_floored(&hop, -0.5)?;
        floor_hits += hits;
        let positions: Vec<usize> = sites
            .iter()
            .map(|s| joint.iter().position(|j| j == s).expect("subset"))
            .collect();
        embed_local(inv_sqrt.matrix(), &positions, &sub)
    };
    let w_ac = half_inv(s_ac, &ac)?;
    let w_bc = half_inv(s_bc, &bc)?;
    let w = w_ac.dot(&w_bc); // disjoint supports commute
    let h = w.dot(&s_joint).dot(&w) - Array2::<C64>::eye(sub.dim());
    let norm = sup_norm_hermitian(&h)?;
    let admissible = norm < 0.5;
    let qf_constant = admissible.then(|| 1.0 / (1.0 - 2.0 * norm));
    Ok(OverlapReport {
        a_sites: a_sites.to_vec(),
        b_sites: b_sites.to_vec(),
        a_complement: ac,
        b_complement: bc,
        h_infty_norm: norm,
        admissible,
        qf_constant,
        h_operator: h,
        floor_hits,
    })
}

/// Overlap operator for a splitting geometry.
pub fn overlap_operator(sigma: &GibbsState, geometry: &SplittingGeometry) -> Result<OverlapReport> {
    overlap_operator_ab(&sigma.state, &geometry.a_sites(), &geometry.b_sites())
}

/// One row of the overlap-decay table.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapScanRow {
    pub n: usize,
    pub beta: f64,
    pub overlap_width: usize,
    pub h_infty_norm: f64,
    pub qf_constant: Option<f64>,
}

/// `||h||_inf` for a single centered split of growing overlap width
/// (A = [0, n/2 + w), B = [n/2, n)); complements separate as `w` grows.
pub fn overlap_decay_scan(
    chain: &Arc<ChainHamiltonian>,
    beta: f64,
    widths: &[usize],
) -> Result<Vec<OverlapScanRow>> {
    let sigma = gibbs_state(chain, beta)?;
    let n = chain.n;
    let mut rows = Vec::new();
    for &w in widths {
        let half = n / 2;
        if half + w >= n {
            return Err(Error::InfeasibleGeometry(format!("overlap {w} too wide for n={n}")));
        }
        let a: Vec<usize> = (0..half + w).collect();
        let b: Vec<usize> = (half..n).collect();
        let rep = overlap_operator_ab(&sigma.state, &a, &b)?;
        rows.push(OverlapScanRow {
            n,
            beta,
            overlap_width: w,
            h_infty_norm: rep.h_infty_norm,
            qf_constant: rep.qf_constant,
        });
    }
    Ok(rows)
}

/// Classical Boltzmann average of the energy (diagonal Hamiltonians), used
/// as an oracle for `tr(sigma H)`.
pub fn classical_energy_average(diag: &[f64], beta: f64) -> f64 {
    let e0 = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = diag.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = weights.iter().sum();
    diag.iter().zip(&weights).map(|(&e, &w)| e * w).sum::<f64>() / z
}

/// `tr(sigma H)`.
pub fn energy_expectation(sigma: &GibbsState) -> f64 {
    let prod = sigma.state.matrix().dot(sigma.chain.total.matrix());
    prod.diag().iter().map(|z| z.re).sum()
}

/// `ln sigma + beta H + ln Z = 0` consistency residual.
pub fn log_partition_residual(sigma: &GibbsState) -> Result<f64> {
    let (ln_sigma, _) = sigma.state.ln_floored();
    let d = sigma.state.dim();
    let mut m = ln_sigma + &sigma.chain.total.matrix().mapv(|z| z * c(sigma.beta));
    for i in 0..d {
        m[(i, i)] += c(sigma.log_partition);
    }
    sup_norm_hermitian(&m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_ising, Boundary};
    use crate::tensor::schatten_norm;

    #[test]
    fn infinite_temperature_is_maximally_mixed() {
        let chain = Arc::new(build_ising(3, Boundary::Periodic, 1.0, 0.3).unwrap());
        let g = gibbs_state(&chain, 0.0).unwrap();
        let expect = Array2::<C64>::eye(8).mapv(|z| z / c(8.0));
        assert!(crate::max_abs_diff(g.state.matrix(), &expect) < 1e-14);
        assert!((g.log_partition - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_site_closed_form() {
        let chain =
            Arc::new(crate::chain::build_custom(1, Boundary::Open, crate::tensor::pauli_z(), 1, true).unwrap());
        let g = gibbs_state(&chain, 1.0).unwrap();
        let z = (1.0f64).exp() + (-1.0f64).exp();
        let m = g.state.matrix();
        assert!((m[(0, 0)].re - (-1.0f64).exp() / z).abs() < 1e-14);
        assert!((m[(1, 1)].re - (1.0f64).exp() / z).abs() < 1e-14);
    }

    #[test]
    fn thermal_energy_matches_classical_enumeration() {
        let chain = Arc::new(build_ising(3, Boundary::Periodic, 1.0, 0.0).unwrap());
        let beta = 0.7;
        let g = gibbs_state(&chain, beta).unwrap();
        // classical energies of the eight spin configurations
        let diag: Vec<f64> = (0..8u32)
            .map(|m| {
                let s: Vec<f64> =
                    (0..3).map(|k| if (m >> k) & 1 == 0 { 1.0 } else { -1.0 }).collect();
                -(s[0] * s[1] + s[1] * s[2] + s[2] * s[0])
            })
            .collect();
        let oracle = classical_energy_average(&diag, beta);
        assert!((energy_expectation(&g) - oracle).abs() < 1e-10);
    }

    #[test]
    fn gibbs_commutes_with_h_and_log_partition_consistent() {
        let chain = Arc::new(build_ising(4, Boundary::Periodic, 1.0, 0.5).unwrap());
        let g = gibbs_state(&chain, 1.3).unwrap();
        let comm = g.state.matrix().dot(chain.total.matrix())
            - chain.total.matrix().dot(g.state.matrix());
        assert!(schatten_norm(&comm, crate::tensor::SchattenP::Infinity) <= 1e-10);
        assert!(log_partition_residual(&g).unwrap() < 1e-9);
        assert!((g.state.matrix().diag().iter().map(|z| z.re).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.state.min_eigenvalue() > 0.0);
    }

    #[test]
    fn overlap_vanishes_at_beta_zero_and_for_products() {
        let chain = Arc::new(build_ising(4, Boundary::Periodic, 1.0, 0.0).unwrap());
        let g = gibbs_state(&chain, 0.0).unwrap();
        let rep = overlap_operator_ab(&g.state, &[0, 1, 2], &[2, 3, 0]).unwrap();
        assert!(rep.h_infty_norm < 1e-12);
        assert!(rep.admissible);
        assert!((rep.qf_constant.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_matches_classical_ratio_formula() {
        // diagonal (classical) model: h is diagonal and equals
        // p(x_Ac, x_Bc)/(p(x_Ac) p(x_Bc)) - 1 entrywise
        let chain = Arc::new(build_ising(4, Boundary::Open, 1.0, 0.0).unwrap());
        let beta = 1.0;
        let g = gibbs_state(&chain, beta).unwrap();
        let a = [0usize, 1, 2];
        let b = [2usize, 3];
        let rep = overlap_operator_ab(&g.state, &a, &b).unwrap();
        // A^c = {3}, B^c = {0,1}; joint = {0,1,3}
        assert_eq!(rep.a_complement, vec![3]);
        assert_eq!(rep.b_complement, vec![0, 1]);
        let p: Vec<f64> = g.state.matrix().diag().iter().map(|z| z.re).collect();
        let marg = |keep: &[usize]| -> Vec<f64> {
            let mut q = vec![0.0; 1 << keep.len()];
            for (m, &pm) in p.iter().enumerate() {
                let mut i = 0;
                for (k, &s) in keep.iter().enumerate() {
                    i |= ((m >> s) & 1) << k;
                }
                q[i] += pm;
            }
            q
        };
        let p_joint = marg(&[0, 1, 3]);
        let p_ac = marg(&[3]);
        let p_bc = marg(&[0, 1]);
        // off-diagonal part of h vanishes
        let mut offdiag = 0.0f64;
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    offdiag = offdiag.max(rep.h_operator[(i, j)].norm());
                }
            }
        }
        assert!(offdiag < 1e-12);
        for m in 0..8usize {
            // joint little-endian order is sites [0,1,3]: positions of Bc are
            // {0,1}, of Ac {2}
            let ibc = m & 3;
            let iac = (m >> 2) & 1;
            let expect = p_joint[m] / (p_ac[iac] * p_bc[ibc]) - 1.0;
            assert!((rep.h_operator[(m, m)].re - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn overlap_symmetric_under_relabel() {
        let chain = Arc::new(build_ising(5, Boundary::Periodic, 1.0, 0.2).unwrap());
        let g = gibbs_state(&chain, 0.8).unwrap();
        let a = [0usize, 1, 2];
        let b = [2usize, 3, 4, 0];
        let r1 = overlap_operator_ab(&g.state, &a, &b).unwrap();
        let r2 = overlap_operator_ab(&g.state, &b, &a).unwrap();
        assert!((r1.h_infty_norm - r2.h_infty_norm).abs() < 1e-10);
    }

    #[test]
    fn decay_scan_monotone_on_open_chain() {
        let chain = Arc::new(build_ising(8, Boundary::Open, 1.0, 0.0).unwrap());
        let rows = overlap_decay_scan(&chain, 1.0, &[1, 2, 3]).unwrap();
        assert!(rows[0].h_infty_norm > rows[1].h_infty_norm);
        assert!(rows[1].h_infty_norm > rows[2].h_infty_norm);
    }
}
