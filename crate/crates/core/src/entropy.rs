//! Entropic functionals in nats: relative entropy, the two conditional
//! relative entropies, and entropy production.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::condexp::ConditionalExpectation;
use crate::davies::DaviesGenerator;
use crate::tensor::{partial_trace, DensityState, HermitianOperator};
use crate::{Error, Result};

/// A value in nats together with the number of eigenvalues that hit the
/// relative floor while taking logarithms. Silent flooring would corrupt
/// the inequality tests, so it is surfaced.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EntropyValue {
    pub value: f64,
    pub floor_hits: usize,
}

impl EntropyValue {
    fn new(value: f64, floor_hits: usize) -> Self {
        Self { value, floor_hits }
    }
}

/// `D(rho || sigma) = tr rho (ln rho - ln sigma)`.
///
/// The `rho ln rho` part is summed over the spectrum directly (`x ln x -> 0`
/// continuously, so exact zeros contribute nothing); `ln sigma` is floored.
pub fn rel_entropy(rho: &DensityState, sigma: &DensityState) -> Result<EntropyValue> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimMismatch(format!("{} vs {}", rho.dim(), sigma.dim())));
    }
    let term1: f64 = rho
        .eigenvalues()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum();
    let (ln_sigma, hits) = sigma.ln_floored();
    let prod = rho.matrix().dot(&ln_sigma);
    let term2: f64 = prod.diag().iter().map(|z| z.re).sum();
    Ok(EntropyValue::new(term1 - term2, hits))
}

/// `D_A(rho || sigma) = D(rho || sigma) - D(rho_{A^c} || sigma_{A^c})`.
pub fn cond_rel_entropy_da(
    rho: &DensityState,
    sigma: &DensityState,
    region_a: &[usize],
) -> Result<EntropyValue> {
    let full = rel_entropy(rho, sigma)?;
    let idx = rho.indexing();
    let complement: Vec<usize> =
        (0..idx.n_sites()).filter(|s| !region_a.contains(s)).collect();
    if complement.is_empty() {
        // A = Lambda: the complement marginal is the scalar 1
        return Ok(full);
    }
    let sub = idx.subsystem(&complement);
    let rho_c = DensityState::with_positivity_tol(
        HermitianOperator::new(partial_trace(rho.matrix(), &complement, idx), sub.clone())?,
        1e-9,
    )?;
    let sig_c = DensityState::with_positivity_tol(
        HermitianOperator::new(partial_trace(sigma.matrix(), &complement, idx), sub)?,
        1e-9,
    )?;
    let reduced = rel_entropy(&rho_c, &sig_c)?;
    Ok(EntropyValue::new(full.value - reduced.value, full.floor_hits + reduced.floor_hits))
}

/// `D_A(rho || E_A(rho))` (the conditional relative entropy through the
/// conditional expectation).
pub fn cond_rel_entropy_ea(
    rho: &DensityState,
    e_a: &ConditionalExpectation,
) -> Result<EntropyValue> {
    let img = e_a.apply(rho.matrix())?;
    let tau = DensityState::with_positivity_tol(
        HermitianOperator::new(img, rho.indexing().clone())?,
        1e-9,
    )?;
    rel_entropy(rho, &tau)
}

/// `EP_A(rho) = -tr[L_A(rho) (ln rho - ln sigma)]`.
pub fn entropy_production(
    gen: &DaviesGenerator,
    region: &[usize],
    rho: &DensityState,
    sigma: &DensityState,
) -> Result<EntropyValue> {
    let (ln_rho, hits_r) = rho.ln_floored();
    let (ln_sigma, hits_s) = sigma.ln_floored();
    let m = &ln_rho - &ln_sigma;
    let lrho = gen.apply_region(rho.matrix(), region);
    let prod = lrho.dot(&m);
    let tr: f64 = prod.diag().iter().map(|z| z.re).sum();
    Ok(EntropyValue::new(-tr, hits_r + hits_s))
}

/// Trace distance `||a - b||_1` between two states.
pub fn trace_distance(a: &Array2<C64>, b: &Array2<C64>) -> Result<f64> {
    crate::tensor::trace_norm_hermitian(&(a - b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_ising, Boundary};
    use crate::davies::{davies_generator, default_pauli_jumps, RateFunction};
    use crate::gibbs::gibbs_state;
    use crate::probes;
    use crate::tensor::{c, SiteIndexing};
    use ndarray::Array1;
    use std::sync::Arc;

    #[test]
    fn identical_states_have_zero_entropy() {
        let idx = SiteIndexing::qubits(2);
        let s = probes::random_density(&idx, &mut probes::rng(1, 0)).unwrap();
        let d = rel_entropy(&s, &s).unwrap();
        assert!(d.value.abs() < 1e-12);
    }

    #[test]
    fn pure_vs_maximally_mixed_is_ln2() {
        let idx = SiteIndexing::qubits(1);
        let mut v = Array1::zeros(2);
        v[0] = c(1.0);
        let rho = DensityState::pure(&v, idx.clone()).unwrap();
        let sigma = DensityState::maximally_mixed(idx);
        let d = rel_entropy(&rho, &sigma).unwrap();
        assert!((d.value - 2.0f64.ln()).abs() < 1e-12, "{}", d.value);
    }

    // independent eigen-basis double-sum oracle:
    //   D = sum_i p_i ln p_i - sum_{ij} p_i |<u_i|v_j>|^2 ln q_j
    fn double_sum_oracle(rho: &DensityState, sigma: &DensityState) -> f64 {
        let mut d = 0.0;
        for &p in rho.eigenvalues() {
            if p > 0.0 {
                d += p * p.ln();
            }
        }
        let u = rho.eigenvectors();
        let v = sigma.eigenvectors();
        let ov = u.t().mapv(|z| z.conj()).dot(v);
        for (i, &p) in rho.eigenvalues().iter().enumerate() {
            for (j, &q) in sigma.eigenvalues().iter().enumerate() {
                d -= p * ov[(i, j)].norm_sqr() * q.ln();
            }
        }
        d
    }

    #[test]
    fn matches_double_sum_oracle() {
        let idx = SiteIndexing::qubits(2);
        let mut r = probes::rng(5, 0);
        for _ in 0..5 {
            let rho = probes::random_density(&idx, &mut r).unwrap();
            let sigma = probes::random_density(&idx, &mut r).unwrap();
            let d = rel_entropy(&rho, &sigma).unwrap();
            let oracle = double_sum_oracle(&rho, &sigma);
            assert!((d.value - oracle).abs() < 1e-10, "{} vs {oracle}", d.value);
            assert!(d.value >= -1e-12);
        }
    }

    #[test]
    fn pinsker_inequality_on_random_pairs() {
        let idx = SiteIndexing::qubits(2);
        let mut r = probes::rng(6, 0);
        for _ in 0..10 {
            let rho = probes::random_density(&idx, &mut r).unwrap();
            let sigma = probes::random_density(&idx, &mut r).unwrap();
            let d = rel_entropy(&rho, &sigma).unwrap().value;
            let td = trace_distance(rho.matrix(), sigma.matrix()).unwrap();
            assert!(td * td <= 2.0 * d + 1e-9);
        }
    }

    #[test]
    fn conditional_da_full_region_equals_d() {
        let idx = SiteIndexing::qubits(3);
        let mut r = probes::rng(7, 0);
        let rho = probes::random_density(&idx, &mut r).unwrap();
        let sigma = probes::random_density(&idx, &mut r).unwrap();
        let d = rel_entropy(&rho, &sigma).unwrap().value;
        let da = cond_rel_entropy_da(&rho, &sigma, &[0, 1, 2]).unwrap().value;
        assert!((d - da).abs() < 1e-12);
        // rho = sigma -> 0
        let z = cond_rel_entropy_da(&sigma, &sigma, &[0]).unwrap().value;
        assert!(z.abs() < 1e-10);
    }

    #[test]
    fn conditional_da_term_by_term_oracle_and_positivity() {
        let idx = SiteIndexing::qubits(3);
        let mut r = probes::rng(8, 0);
        for _ in 0..5 {
            let rho = probes::random_density(&idx, &mut r).unwrap();
            let sigma = probes::random_density(&idx, &mut r).unwrap();
            let a = [0usize, 2];
            let da = cond_rel_entropy_da(&rho, &sigma, &a).unwrap().value;
            // independent re-evaluation of both terms
            let full = double_sum_oracle(&rho, &sigma);
            let comp = [1usize];
            let rc = crate::gibbs::marginal(&rho, &comp).unwrap();
            let sc = crate::gibbs::marginal(&sigma, &comp).unwrap();
            let red = double_sum_oracle(&rc, &sc);
            assert!((da - (full - red)).abs() < 1e-9);
            // data processing
            assert!(da >= -1e-10);
        }
    }

    #[test]
    fn entropy_production_vanishes_at_fixed_point() {
        let chain = Arc::new(build_ising(3, Boundary::Periodic, 1.0, 0.0).unwrap());
        let beta = 0.9;
        let sigma = gibbs_state(&chain, beta).unwrap();
        let gen = davies_generator(
            &chain,
            beta,
            &default_pauli_jumps(3),
            RateFunction::Glauber,
            &[0, 1, 2],
        )
        .unwrap();
        let ep = entropy_production(&gen, &[0, 1, 2], &sigma.state, &sigma.state).unwrap();
        assert!(ep.value.abs() < 1e-10, "{:.3e}", ep.value);
    }

    #[test]
    fn entropy_production_additive_over_disjoint_regions() {
        let chain = Arc::new(build_ising(4, Boundary::Periodic, 1.0, 0.0).unwrap());
        let beta = 1.0;
        let sigma = gibbs_state(&chain, beta).unwrap();
        let gen = davies_generator(
            &chain,
            beta,
            &default_pauli_jumps(4),
            RateFunction::Glauber,
            &[0, 1, 2, 3],
        )
        .unwrap();
        let mut r = probes::rng(9, 0);
        let rho = probes::random_density(chain.indexing(), &mut r).unwrap();
        let ep_a = entropy_production(&gen, &[0, 1], &rho, &sigma.state).unwrap().value;
        let ep_b = entropy_production(&gen, &[2, 3], &rho, &sigma.state).unwrap().value;
        let ep_ab = entropy_production(&gen, &[0, 1, 2, 3], &rho, &sigma.state).unwrap().value;
        assert!((ep_ab - ep_a - ep_b).abs() <= 1e-12 * ep_ab.abs().max(1.0));
        assert!(ep_ab >= -1e-9);
    }

    #[test]
    fn depolarizer_ep_matches_finite_difference() {
        // single qubit, H = Z, beta = 0: e^{tL}(rho) = sigma + e^{-2t}(rho - sigma)
        let chain = Arc::new(
            crate::chain::build_custom(1, Boundary::Open, crate::tensor::pauli_z(), 1, true)
                .unwrap(),
        );
        let gen =
            davies_generator(&chain, 0.0, &default_pauli_jumps(1), RateFunction::Glauber, &[0])
                .unwrap();
        let idx = SiteIndexing::qubits(1);
        let sigma = DensityState::maximally_mixed(idx.clone());
        let rho_m = ndarray::array![[c(0.9), c(0.0)], [c(0.0), c(0.1)]];
        let rho =
            DensityState::new(HermitianOperator::new(rho_m.clone(), idx.clone()).unwrap()).unwrap();
        let ep = entropy_production(&gen, &[0], &rho, &sigma).unwrap().value;
        let h = 1e-5;
        let state_at = |t: f64| -> DensityState {
            let f = (-2.0 * t as f64).exp();
            let m = sigma.matrix() + &(&rho_m - sigma.matrix()).mapv(|z| z * f);
            DensityState::new(HermitianOperator::new(m, idx.clone()).unwrap()).unwrap()
        };
        let dp = rel_entropy(&state_at(h), &sigma).unwrap().value;
        let dm = rel_entropy(&state_at(-h), &sigma).unwrap().value;
        let deriv = (dp - dm) / (2.0 * h);
        assert!((deriv + ep).abs() < 1e-6, "d/dt D = {deriv}, EP = {ep}");
    }
}
