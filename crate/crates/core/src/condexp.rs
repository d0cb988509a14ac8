//! Conditional expectations `E_A = lim_{t->inf} e^{t L_A}` onto the
//! fixed-point algebra of the region generator, their semigroup-limit
//! validation, and the detectability contraction of products of single-site
//! conditional expectations.
//!
//! `E_A` is computed by kernel projection: the symmetrized `L_A` is Hermitian
//! and negative semidefinite, so the limit is the spectral projection onto
//! its kernel, transported back to the Schroedinger picture by the
//! `sigma^{1/4}` weights of the factor. The semigroup limit (a Pade matrix
//! exponential, no eigendecomposition) serves as the independent oracle.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::davies::{assemble_symmetrized, DaviesGenerator, FactorContext, JumpOperator, KERNEL_TOL};
use crate::linalg;
use crate::sector::SectorMatrix;
use crate::tensor::{self, c, vectorize, SiteIndexing, SuperOperator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    KernelProjection,
    SemigroupLimit,
}

/// Conditional expectation onto the fixed-point algebra of a region's
/// Davies generator. Stored in sector form on its factor; the dense factor
/// superoperator is materialized lazily.
#[derive(Debug)]
pub struct ConditionalExpectation {
    pub region: Vec<usize>,
    pub provenance: Provenance,
    pub fixed_space_dim: usize,
    pub(crate) ctx: FactorContext,
    /// symmetrized projection (kernel of the symmetrized generator)
    pub(crate) projection: SectorMatrix,
    /// chain size the factor embeds into
    n_sites: usize,
    dense_factor: OnceLock<Array2<C64>>,
}

impl Clone for ConditionalExpectation {
    fn clone(&self) -> Self {
        Self {
            region: self.region.clone(),
            provenance: self.provenance,
            fixed_space_dim: self.fixed_space_dim,
            ctx: self.ctx.clone(),
            projection: self.projection.clone(),
            n_sites: self.n_sites,
            dense_factor: OnceLock::new(),
        }
    }
}

/// Builds `E_A` for a region of the generator by kernel projection.
pub fn conditional_expectation(
    gen: &DaviesGenerator,
    region: &[usize],
) -> Result<ConditionalExpectation> {
    let sub = crate::davies::davies_generator(
        &gen.chain,
        gen.beta,
        &gen.jumps,
        gen.rate_fn,
        region,
    )?;
    if sub.is_zero() {
        return Err(Error::InvalidModel("conditional expectation of an empty region".into()));
    }
    let ctx = sub.context()?.clone();
    conditional_expectation_on(&ctx, &sub, region, gen.chain.n)
}

/// Same as [`conditional_expectation`] but on a caller-supplied factor
/// context (used when several expectations must share one factor and basis).
pub fn conditional_expectation_on_factor(
    gen: &DaviesGenerator,
    region: &[usize],
    ctx: &FactorContext,
) -> Result<ConditionalExpectation> {
    let active: Vec<&JumpOperator> =
        gen.jumps.iter().filter(|j| region.contains(&j.anchor())).collect();
    if active.is_empty() {
        return Err(Error::InvalidModel("no jumps anchored in the region".into()));
    }
    let m = assemble_symmetrized(ctx, &active, gen.rate_fn)?;
    project_kernel(ctx, &m, region, gen.chain.n)
}

fn conditional_expectation_on(
    ctx: &FactorContext,
    sub: &DaviesGenerator,
    region: &[usize],
    n_sites: usize,
) -> Result<ConditionalExpectation> {
    project_kernel(ctx, sub.symmetrized_blocks(), region, n_sites)
}

fn project_kernel(
    ctx: &FactorContext,
    m: &SectorMatrix,
    region: &[usize],
    n_sites: usize,
) -> Result<ConditionalExpectation> {
    let threshold = KERNEL_TOL * m.max_abs().max(1.0);
    let (projection, dim) = m.kernel_projection(threshold)?;
    Ok(ConditionalExpectation {
        region: region.to_vec(),
        provenance: Provenance::KernelProjection,
        fixed_space_dim: dim,
        ctx: ctx.clone(),
        projection,
        n_sites,
        dense_factor: OnceLock::new(),
    })
}

impl ConditionalExpectation {
    pub fn factor_sites(&self) -> &[usize] {
        &self.ctx.sites
    }

    /// Schroedinger-picture action on a full-space operator.
    pub fn apply(&self, x: &Array2<C64>) -> Result<Array2<C64>> {
        if self.ctx.sites.len() == self.n_sites {
            // the factor spans the chain: work in the eigenbasis directly
            let x_eig = self.ctx.to_eigenbasis(x);
            let v = vectorize(&x_eig);
            let out = self.apply_vec_schrodinger(&v);
            let back = tensor::devectorize(&out.view(), self.ctx.dim())?;
            Ok(self.ctx.from_eigenbasis(&back))
        } else {
            let dense = self.dense_factor_superop();
            let idx = SiteIndexing::qubits(self.n_sites);
            Ok(tensor::apply_superop_on_factor(dense, &self.ctx.sites, x, &idx))
        }
    }

    /// Action on an eigenbasis vec-vector: `Dw^{1/2} P Dw^{-1/2}`.
    fn apply_vec_schrodinger(&self, v: &Array1<C64>) -> Array1<C64> {
        let scaled = Array1::from_iter(
            v.iter().enumerate().map(|(i, &x)| x / c(self.ctx.quarter_weight(i))),
        );
        let projected = self.projection.apply_vec(&scaled, &self.ctx.sectors);
        Array1::from_iter(
            projected.iter().enumerate().map(|(i, &x)| x * c(self.ctx.quarter_weight(i))),
        )
    }

    /// Dense factor superoperator in the computational basis.
    pub fn dense_factor_superop(&self) -> &Array2<C64> {
        self.dense_factor.get_or_init(|| {
            let d = self.ctx.dim();
            // scale the projection blocks into the Schroedinger picture and
            // scatter to a dense eigenbasis matrix
            let mut eig = Array2::zeros((d * d, d * d));
            for (b, mem) in self.projection.blocks.iter().zip(&self.ctx.sectors.members) {
                for (r, &vr) in mem.iter().enumerate() {
                    let wr = self.ctx.quarter_weight(vr);
                    for (cc, &vc) in mem.iter().enumerate() {
                        let wc = self.ctx.quarter_weight(vc);
                        eig[(vr, vc)] = b[(r, cc)] * c(wr / wc);
                    }
                }
            }
            tensor::rotate_superop_to_computational(&eig, &self.ctx.evecs)
        })
    }

    /// Full-space dense superoperator (embeds the factor).
    pub fn superoperator(&self) -> Result<SuperOperator> {
        let idx = SiteIndexing::qubits(self.n_sites);
        tensor::embed_superop(self.dense_factor_superop(), &self.ctx.sites, &idx)
    }

    /// `||E o E - E||` in the KMS-symmetrized picture (basis independent).
    pub fn idempotency_residual(&self) -> Result<f64> {
        let sq = self.projection.matmul(&self.projection);
        sq.sub(&self.projection).spectral_norm()
    }

    /// `||P - P^H||` -- KMS self-adjointness of the map.
    pub fn kms_self_adjointness_residual(&self) -> Result<f64> {
        self.projection.hermiticity_residual()
    }

    /// `||E(sigma) - sigma||_1` for a full-space sigma.
    pub fn sigma_preservation_residual(&self, sigma: &Array2<C64>) -> Result<f64> {
        let img = self.apply(sigma)?;
        tensor::trace_norm_hermitian(&(&img - sigma))
    }

    /// Least eigenvalue of the Choi matrix (complete positivity check;
    /// dense, for small factors).
    pub fn choi_min_eigenvalue(&self) -> Result<f64> {
        let m = self.dense_factor_superop();
        let d = self.ctx.dim();
        let mut choi = Array2::zeros((d * d, d * d));
        // Phi(E_kl)[i, j] = M[i + d j, k + d l]; Choi[(k,i),(l,j)]
        for k in 0..d {
            for l in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        choi[(k * d + i, l * d + j)] = m[(i + d * j, k + d * l)];
                    }
                }
            }
        }
        let evs = linalg::eigvalsh(&choi)?;
        Ok(evs.first().copied().unwrap_or(0.0))
    }
}

/// Checks `e^{T L_A} -> E_A`: residuals `||e^{T L} - E||` (spectral norm on
/// the factor superoperator) over a grid of times, using a Pade exponential
/// as the independent route.
pub fn semigroup_limit_check(
    gen: &DaviesGenerator,
    region: &[usize],
    e: &ConditionalExpectation,
    t_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let sub =
        crate::davies::davies_generator(&gen.chain, gen.beta, &gen.jumps, gen.rate_fn, region)?;
    let (sites, l_fac) = sub.factor_superoperator()?;
    if sites != e.ctx.sites {
        return Err(Error::DimMismatch("factor mismatch between generator and E".into()));
    }
    let target = e.dense_factor_superop();
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let et = linalg::expm(&l_fac.mapv(|z| z * c(t)))?;
        let resid = linalg::spectral_norm(&(&et - target))?;
        out.push((t, resid));
    }
    Ok(out)
}

/// Contraction of the ordered product of single-site conditional
/// expectations toward the region expectation, in the KMS 2-norm.
#[derive(Debug, Clone, Serialize)]
pub struct DetectabilityReport {
    pub region: Vec<usize>,
    pub site_order: Vec<usize>,
    /// `|| prod_j E_j - E_X ||` (KMS 2-norm)
    pub lambda: f64,
    /// same with the site order reversed
    pub lambda_reversed: f64,
    /// `k -> ||(prod_j E_j)^k - E_X||`
    pub decay: Vec<(usize, f64)>,
    /// smallest k with norm <= 1e-6
    pub k_star: Option<usize>,
    pub pass: bool,
}

/// Builds all expectations on the common factor of `x_region` and measures
/// `||(prod_{j in X} E_j)^k - E_X||` for `k = 1..k_max`.
pub fn product_expectation_distance(
    gen: &DaviesGenerator,
    x_region: &[usize],
    k_max: usize,
) -> Result<DetectabilityReport> {
    let mut region: Vec<usize> = x_region.to_vec();
    region.sort_unstable();
    region.dedup();
    let ctx = FactorContext::for_region(&gen.chain, &region, gen.beta)?;
    let e_x = conditional_expectation_on_factor(gen, &region, &ctx)?;
    let singles: Vec<ConditionalExpectation> = region
        .iter()
        .map(|&j| conditional_expectation_on_factor(gen, &[j], &ctx))
        .collect::<Result<_>>()?;

    let ordered_product = |order: &[usize]| -> SectorMatrix {
        let mut q = SectorMatrix::identity(&ctx.sectors);
        for &j in order {
            let pos = region.iter().position(|&s| s == j).expect("in region");
            q = q.matmul(&singles[pos].projection);
        }
        q
    };
    let q = ordered_product(&region);
    let rev: Vec<usize> = region.iter().rev().copied().collect();
    let q_rev = ordered_product(&rev);

    let r = q.sub(&e_x.projection);
    let lambda = r.spectral_norm()?;
    let lambda_reversed = q_rev.sub(&e_x.projection).spectral_norm()?;

    let mut decay = Vec::with_capacity(k_max);
    let mut k_star = None;
    let mut power = r.clone();
    for k in 1..=k_max {
        if k > 1 {
            power = power.matmul(&r);
        }
        let nrm = power.spectral_norm()?;
        decay.push((k, nrm));
        if k_star.is_none() && nrm <= 1e-6 {
            k_star = Some(k);
        }
    }
    Ok(DetectabilityReport {
        region: region.clone(),
        site_order: region,
        lambda,
        lambda_reversed,
        decay,
        k_star,
        pass: lambda < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_ising, build_zero, Boundary};
    use crate::davies::{davies_generator, default_pauli_jumps, RateFunction};
    use crate::gibbs::gibbs_state;
    use crate::probes;
    use crate::tensor::partial_trace;
    use std::sync::Arc;

    fn ising_gen(n: usize, beta: f64) -> (Arc<crate::chain::ChainHamiltonian>, DaviesGenerator) {
        let chain = Arc::new(build_ising(n, Boundary::Periodic, 1.0, 0.0).unwrap());
        let region: Vec<usize> = (0..n).collect();
        let gen = davies_generator(
            &chain,
            beta,
            &default_pauli_jumps(n),
            RateFunction::Glauber,
            &region,
        )
        .unwrap();
        (chain, gen)
    }

    #[test]
    fn invariants_of_conditional_expectation() {
        let (chain, gen) = ising_gen(3, 1.0);
        let sigma = gibbs_state(&chain, 1.0).unwrap();
        let e = conditional_expectation(&gen, &[0, 1]).unwrap();
        assert!(e.idempotency_residual().unwrap() < 1e-10);
        assert!(e.kms_self_adjointness_residual().unwrap() < 1e-10);
        assert!(e.sigma_preservation_residual(sigma.state.matrix()).unwrap() < 1e-10);
        assert!(e.choi_min_eigenvalue().unwrap() > -1e-9);
    }

    #[test]
    fn zero_hamiltonian_expectation_is_pinching() {
        // with H = 0 the Bohr structure is trivial and E_x is exactly
        // Tr_x(.) ox I/2
        let chain = Arc::new(build_zero(3).unwrap());
        let gen = davies_generator(
            &chain,
            0.0,
            &default_pauli_jumps(3),
            RateFunction::Glauber,
            &[0, 1, 2],
        )
        .unwrap();
        let e = conditional_expectation(&gen, &[1]).unwrap();
        let idx = chain.indexing();
        let mut r = probes::rng(11, 0);
        let rho = probes::random_density(idx, &mut r).unwrap();
        let img = e.apply(rho.matrix()).unwrap();
        // oracle: trace out site 1, tensor back I/2
        let red = partial_trace(rho.matrix(), &[0, 2], idx);
        let mut expect = Array2::zeros((8, 8));
        tensor::add_embedded(
            &mut expect,
            &red,
            &[0, 2],
            idx,
            c(0.5),
        );
        // the embed of `red` on sites {0,2} tensor I on site 1, halved
        assert!(crate::max_abs_diff(&img, &expect) < 1e-12);
    }

    #[test]
    fn semigroup_limit_converges() {
        let (_, gen) = ising_gen(3, 1.0);
        let e = conditional_expectation(&gen, &[0, 1]).unwrap();
        let grid = [1.0, 5.0, 20.0, 60.0];
        let res = semigroup_limit_check(&gen, &[0, 1], &e, &grid).unwrap();
        for w in res.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12, "not decreasing: {res:?}");
        }
        assert!(res.last().unwrap().1 < 1e-8, "{res:?}");
    }

    #[test]
    fn depolarizer_semigroup_rate() {
        // single-qubit depolarizer: residual(T) decays exactly at rate 2
        let chain = Arc::new(
            crate::chain::build_custom(1, Boundary::Open, crate::tensor::pauli_z(), 1, true)
                .unwrap(),
        );
        let gen =
            davies_generator(&chain, 0.0, &default_pauli_jumps(1), RateFunction::Glauber, &[0])
                .unwrap();
        let e = conditional_expectation(&gen, &[0]).unwrap();
        let res = semigroup_limit_check(&gen, &[0], &e, &[1.0, 2.0, 3.0]).unwrap();
        let slope1 = (res[1].1 / res[0].1).ln();
        let slope2 = (res[2].1 / res[1].1).ln();
        assert!((slope1 + 2.0).abs() < 0.02, "slope {slope1}");
        assert!((slope2 + 2.0).abs() < 0.02, "slope {slope2}");
    }

    #[test]
    fn detectability_zero_hamiltonian_collapses_at_k1() {
        let chain = Arc::new(build_zero(4).unwrap());
        let gen = davies_generator(
            &chain,
            0.3,
            &default_pauli_jumps(4),
            RateFunction::Glauber,
            &[0, 1, 2, 3],
        )
        .unwrap();
        let rep = product_expectation_distance(&gen, &[1, 2], 4).unwrap();
        // pinchings compose exactly: the product equals E_X already at k=1
        for (_, nrm) in &rep.decay {
            assert!(*nrm <= 1e-12, "{:?}", rep.decay);
        }
        assert!(rep.pass);
    }

    #[test]
    fn detectability_single_site_is_exact() {
        let (_, gen) = ising_gen(3, 1.0);
        let rep = product_expectation_distance(&gen, &[1], 3).unwrap();
        assert!(rep.lambda < 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn detectability_contracts_on_ising() {
        let (_, gen) = ising_gen(4, 1.0);
        let rep = product_expectation_distance(&gen, &[1, 2], 20).unwrap();
        assert!(rep.lambda < 1.0, "lambda = {}", rep.lambda);
        assert!(rep.lambda > 0.01);
        // non-increasing and eventually small
        for w in rep.decay.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
        // bounded by lambda^k
        for &(k, nrm) in &rep.decay {
            assert!(nrm <= rep.lambda.powi(k as i32) * (1.0 + 1e-9));
        }
        assert!(rep.k_star.is_some());
    }
}
