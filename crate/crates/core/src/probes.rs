//! Deterministic probe-state generation. Every randomized scan derives its
//! RNG from `(base_seed, stream)` so results are reproducible regardless of
//! scheduling.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::tensor::{DensityState, SiteIndexing};
use crate::Result;

pub fn rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian(rng: &mut ChaCha12Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im)
}

/// Haar-random unit vector.
pub fn haar_state_vector(dim: usize, rng: &mut ChaCha12Rng) -> Array1<C64> {
    let mut v = Array1::from_iter((0..dim).map(|_| gaussian(rng)));
    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_inplace(|z| z / nrm);
    v
}

/// Full-rank random density matrix `G G^H / tr`.
pub fn random_density(idx: &SiteIndexing, rng: &mut ChaCha12Rng) -> Result<DensityState> {
    let d = idx.dim();
    let g = Array2::from_shape_fn((d, d), |_| gaussian(rng));
    let rho = g.dot(&g.t().mapv(|z| z.conj()));
    let tr: f64 = rho.diag().iter().map(|z| z.re).sum();
    let rho = rho.mapv(|z| z / tr);
    DensityState::new(crate::tensor::HermitianOperator::new(rho, idx.clone())?)
}

/// `(1 - w) |psi><psi| + w sigma` for a Haar-random pure state.
pub fn haar_mixed_with(
    sigma: &DensityState,
    weight: f64,
    rng: &mut ChaCha12Rng,
) -> Result<DensityState> {
    let idx = sigma.indexing().clone();
    let d = idx.dim();
    let psi = haar_state_vector(d, rng);
    let mut rho = sigma.matrix().mapv(|z| z * weight);
    for i in 0..d {
        for j in 0..d {
            rho[(i, j)] += C64::new(1.0 - weight, 0.0) * psi[i] * psi[j].conj();
        }
    }
    DensityState::new(crate::tensor::HermitianOperator::new(rho, idx)?)
}

/// `(1 - delta) |i><i| + delta sigma` (basis states floored to full rank).
pub fn basis_mixed_with(sigma: &DensityState, i: usize, delta: f64) -> Result<DensityState> {
    let idx = sigma.indexing().clone();
    let mut rho = sigma.matrix().mapv(|z| z * delta);
    rho[(i, i)] += C64::new(1.0 - delta, 0.0);
    DensityState::new(crate::tensor::HermitianOperator::new(rho, idx)?)
}

/// Pure computational-basis state.
pub fn basis_state(idx: &SiteIndexing, i: usize) -> Result<DensityState> {
    let d = idx.dim();
    let mut v = Array1::zeros(d);
    v[i] = C64::new(1.0, 0.0);
    DensityState::pure(&v, idx.clone())
}

/// The default full-rank probe family for entropy-ratio estimation: Haar
/// pure states mixed with sigma at the given weights plus all floored basis
/// states.
pub fn mlsi_probe_family(
    sigma: &DensityState,
    n_random: usize,
    seed: u64,
) -> Result<Vec<(String, DensityState)>> {
    let mut out = Vec::new();
    let weights = [0.01, 0.1, 0.5];
    let mut r = rng(seed, 1);
    for k in 0..n_random {
        let w = weights[k % weights.len()];
        out.push((format!("haar{k}_w{w}"), haar_mixed_with(sigma, w, &mut r)?));
    }
    let d = sigma.dim();
    for i in 0..d {
        out.push((format!("basis{i}"), basis_mixed_with(sigma, i, 1e-4)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_streams() {
        let idx = SiteIndexing::qubits(2);
        let a = random_density(&idx, &mut rng(7, 0)).unwrap();
        let b = random_density(&idx, &mut rng(7, 0)).unwrap();
        assert!(crate::max_abs_diff(a.matrix(), b.matrix()) == 0.0);
        let c = random_density(&idx, &mut rng(7, 1)).unwrap();
        assert!(crate::max_abs_diff(a.matrix(), c.matrix()) > 1e-3);
    }

    #[test]
    fn probes_are_states() {
        let idx = SiteIndexing::qubits(2);
        let sigma = DensityState::maximally_mixed(idx);
        let fam = mlsi_probe_family(&sigma, 4, 3).unwrap();
        assert_eq!(fam.len(), 4 + 4);
        for (_, p) in &fam {
            assert!(p.min_eigenvalue() > 0.0);
            let tr: f64 = p.matrix().diag().iter().map(|z| z.re).sum();
            assert!((tr - 1.0).abs() < 1e-12);
        }
    }
}
