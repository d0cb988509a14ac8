//! The experiment pipelines behind `davies-sim run`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::Serialize;

use davies_sim::chain::{self, ChainHamiltonian};
use davies_sim::condexp;
use davies_sim::davies::{self, DaviesGenerator};
use davies_sim::gibbs;
use davies_sim::mixing::{self, MlsiOptions, PassFlag};
use davies_sim::probes;

use crate::config::{ExperimentConfig, ExperimentKind, ModelKind};
use crate::output::{fmt_float, fmt_opt, RunWriter};
use crate::RunError;

pub fn run_experiment(
    cfg: &ExperimentConfig,
    writer: &mut RunWriter,
    seed: u64,
) -> Result<(), RunError> {
    match cfg.experiment {
        ExperimentKind::Gibbs => run_gibbs(cfg, writer),
        ExperimentKind::DaviesCheck => run_davies_check(cfg, writer, seed),
        ExperimentKind::OverlapScan => run_overlap_scan(cfg, writer),
        ExperimentKind::MixingScan => run_mixing_scan(cfg, writer, seed),
        ExperimentKind::MlsiScan => run_mlsi_scan(cfg, writer, seed),
        ExperimentKind::QfCheck => run_qf_check(cfg, writer, seed),
        ExperimentKind::Detectability => run_detectability(cfg, writer),
        ExperimentKind::SptCheck => run_spt_check(cfg, writer, seed),
    }
}

fn make_gen(
    cfg: &ExperimentConfig,
    chain: &Arc<ChainHamiltonian>,
    beta: f64,
) -> Result<DaviesGenerator, RunError> {
    let region: Vec<usize> = (0..chain.n).collect();
    let jumps = cfg.build_jumps(chain.n)?;
    davies::davies_generator(chain, beta, &jumps, cfg.rate_fn, &region)
        .map_err(RunError::from_core)
}

fn covariance_probes(
    chain: &Arc<ChainHamiltonian>,
    count: usize,
    seed: u64,
) -> Vec<Array2<C64>> {
    let d = chain.dim();
    let mut out: Vec<Array2<C64>> = Vec::with_capacity(d + count);
    for i in 0..d {
        let mut m = Array2::zeros((d, d));
        m[(i, i)] = C64::new(1.0, 0.0);
        out.push(m);
    }
    let mut r = probes::rng(seed, 23);
    for _ in 0..count {
        let psi = probes::haar_state_vector(d, &mut r);
        let mut m = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        out.push(m);
    }
    out
}

fn run_gibbs(cfg: &ExperimentConfig, writer: &mut RunWriter) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct GibbsEntry {
        model: String,
        n: usize,
        beta: f64,
        log_partition: f64,
        min_eigenvalue: f64,
    }
    writer.begin_stage("gibbs");
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &n in &cfg.n_values() {
        let chain = cfg.build_chain(n)?;
        for &beta in &cfg.beta_values() {
            let g = gibbs::gibbs_state(&chain, beta).map_err(RunError::from_core)?;
            for (i, z) in g.state.matrix().diag().iter().enumerate() {
                rows.push(vec![
                    n.to_string(),
                    fmt_float(beta),
                    i.to_string(),
                    fmt_float(z.re),
                ]);
            }
            entries.push(GibbsEntry {
                model: chain.label.clone(),
                n,
                beta,
                log_partition: g.log_partition,
                min_eigenvalue: g.state.min_eigenvalue(),
            });
        }
    }
    writer.write_csv("gibbs_diag.csv", &["n", "beta", "basis_index", "probability"], &rows)?;
    writer.write_json("gibbs_report.json", &entries)?;
    Ok(())
}

fn run_davies_check(
    cfg: &ExperimentConfig,
    writer: &mut RunWriter,
    seed: u64,
) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct CheckEntry {
        model: String,
        n: usize,
        beta: f64,
        rate_fn: String,
        fixed_point_residual: f64,
        detailed_balance_residual: f64,
        trace_preservation_residual: f64,
        ergodicity: davies_sim::davies::ErgodicityReport,
        covariance: Option<davies_sim::davies::CovarianceReport>,
        pass: bool,
    }
    let tol = cfg.tolerances();
    let spec = cfg.probe_spec();
    writer.begin_stage("davies-check");
    let mut entries = Vec::new();
    let mut all_pass = true;
    for &n in &cfg.n_values() {
        let chain = cfg.build_chain(n)?;
        for &beta in &cfg.beta_values() {
            let gen = make_gen(cfg, &chain, beta)?;
            let sigma = gibbs::gibbs_state(&chain, beta).map_err(RunError::from_core)?;
            let fp = gen
                .fixed_point_residual(sigma.state.matrix())
                .map_err(RunError::from_core)?;
            let db = gen.detailed_balance_residual().map_err(RunError::from_core)?;
            let sup = gen.superoperator().map_err(RunError::from_core)?;
            let tp = sup.trace_preservation_residual();
            let erg = davies::check_ergodic(&gen).map_err(RunError::from_core)?;
            let covariance = if cfg.model.kind == ModelKind::Cluster && n % 2 == 0 {
                let rep = chain::z2z2_representation(n).map_err(RunError::from_core)?;
                let pr = covariance_probes(&chain, spec.count, seed);
                Some(davies::check_covariance(&gen, &rep, &pr).map_err(RunError::from_core)?)
            } else {
                None
            };
            let pass = fp <= tol.fixed_point
                && db <= tol.detailed_balance
                && covariance.as_ref().map(|cv| cv.pass).unwrap_or(true);
            all_pass &= pass;
            if fp > tol.fixed_point {
                writer.warn(format!("fixed-point residual {fp:.3e} at n={n}, beta={beta}"));
            }
            if db > tol.detailed_balance {
                writer.warn(format!("detailed-balance residual {db:.3e} at n={n}, beta={beta}"));
            }
            entries.push(CheckEntry {
                model: chain.label.clone(),
                n,
                beta,
                rate_fn: cfg.rate_fn.name().into(),
                fixed_point_residual: fp,
                detailed_balance_residual: db,
                trace_preservation_residual: tp,
                ergodicity: erg,
                covariance,
                pass,
            });
        }
    }
    writer.write_json("davies_check.json", &entries)?;
    if !all_pass {
        return Err(RunError::falsified("davies-check residuals exceed tolerance".into()));
    }
    Ok(())
}

fn run_overlap_scan(cfg: &ExperimentConfig, writer: &mut RunWriter) -> Result<(), RunError> {
    writer.begin_stage("overlap-scan");
    let mut rows = Vec::new();
    let mut decay_points = Vec::new();
    for &n in &cfg.n_values() {
        let chain = cfg.build_chain(n)?;
        let max_w = cfg.geometry.as_ref().map(|g| g.w).unwrap_or(4).min(n / 2 - 1);
        let widths: Vec<usize> = (1..=max_w).collect();
        for &beta in &cfg.beta_values() {
            let scan =
                gibbs::overlap_decay_scan(&chain, beta, &widths).map_err(RunError::from_core)?;
            for row in scan {
                rows.push(vec![
                    row.n.to_string(),
                    fmt_float(row.beta),
                    row.overlap_width.to_string(),
                    fmt_float(row.h_infty_norm),
                    fmt_opt(row.qf_constant),
                ]);
                decay_points.push((row.overlap_width as f64, row.h_infty_norm));
            }
        }
    }
    writer.write_csv(
        "overlap_scan.csv",
        &["n", "beta", "overlap_width", "h_infty_norm", "qf_constant"],
        &rows,
    )?;
    writer.write_plot_data("plot_h_vs_overlap.dat", decay_points)?;
    Ok(())
}

fn run_mixing_scan(
    cfg: &ExperimentConfig,
    writer: &mut RunWriter,
    seed: u64,
) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct FitReport {
        a: f64,
        b: f64,
        relative_residual: f64,
        n_values: Vec<usize>,
    }
    let eps = cfg.epsilon.unwrap_or(0.1);
    let spec = cfg.probe_spec();
    writer.begin_stage("mixing-scan");
    let mut rows = Vec::new();
    let mut tmix_pts = Vec::new();
    let mut alpha_pts = Vec::new();
    let beta = cfg.beta_values()[0];
    let mut fit_data = Vec::new();
    for &n in &cfg.n_values() {
        let chain = cfg.build_chain(n)?;
        let gen = make_gen(cfg, &chain, beta)?;
        let sigma = gibbs::gibbs_state(&chain, beta).map_err(RunError::from_core)?;
        let gap = mixing::spectral_gap(&gen).map_err(RunError::from_core)?;
        let opts = MlsiOptions { seed, ..Default::default() };
        let mlsi = mixing::mlsi_estimate(&gen, &sigma, &opts).map_err(RunError::from_core)?.report;
        let mix = mixing::mixing_time_estimate(&gen, &sigma.state, eps, spec.count, seed)
            .map_err(RunError::from_core)?;
        rows.push(vec![
            n.to_string(),
            fmt_float(gap),
            fmt_float(mlsi.alpha_hat),
            fmt_float(mix.t_mix_lower_estimate),
        ]);
        tmix_pts.push(((n as f64).ln(), mix.t_mix_lower_estimate));
        alpha_pts.push((n as f64, mlsi.alpha_hat * (n as f64).ln()));
        fit_data.push(((n as f64).ln(), mix.t_mix_lower_estimate));
    }
    writer.write_csv("mixing_scan.csv", &["n", "gap", "alpha_hat", "t_mix"], &rows)?;
    // least squares t_mix ~ a ln n + b
    let fit = if fit_data.len() >= 2 {
        let m = fit_data.len() as f64;
        let sx: f64 = fit_data.iter().map(|p| p.0).sum();
        let sy: f64 = fit_data.iter().map(|p| p.1).sum();
        let sxx: f64 = fit_data.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = fit_data.iter().map(|p| p.0 * p.1).sum();
        let a = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        let b = (sy - a * sx) / m;
        let ss_res: f64 = fit_data.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum();
        let norm: f64 = fit_data.iter().map(|p| p.1 * p.1).sum();
        FitReport {
            a,
            b,
            relative_residual: (ss_res / norm.max(1e-300)).sqrt(),
            n_values: cfg.n_values(),
        }
    } else {
        FitReport { a: f64::NAN, b: f64::NAN, relative_residual: f64::NAN, n_values: cfg.n_values() }
    };
    writer.write_json("mixing_fit.json", &fit)?;
    writer.write_plot_data("plot_tmix_vs_lnn.dat", tmix_pts)?;
    writer.write_plot_data("plot_alpha_lnn_vs_n.dat", alpha_pts)?;
    Ok(())
}

fn run_mlsi_scan(
    cfg: &ExperimentConfig,
    writer: &mut RunWriter,
    seed: u64,
) -> Result<(), RunError> {
    writer.begin_stage("mlsi-scan");
    let mut rows = Vec::new();
    for &n in &cfg.n_values() {
        let chain = cfg.build_chain(n)?;
        for &beta in &cfg.beta_values() {
            let gen = make_gen(cfg, &chain, beta)?;
            let sigma = gibbs::gibbs_state(&chain, beta).map_err(RunError::from_core)?;
            let opts = MlsiOptions { seed, ..Default::default() };
            let rep = mixing::mlsi_estimate(&gen, &sigma, &opts).map_err(RunError::from_core)?.report;
            let mut push = |quantity: &str, value: f64, slack: Option<f64>| {
                rows.push(vec![
                    chain.label.clone(),
                    n.to_string(),
                    fmt_float(beta),
                    cfg.rate_fn.name().into(),
                    quantity.to_string(),
                    fmt_float(value),
                    fmt_opt(slack),
                ]);
            };
            push("alpha_hat", rep.alpha_hat, None);
            push("gap", rep.gap, None);
            push("alpha0_site", rep.alpha0_site, None);
            push("decay_rate_fit", rep.decay_rate_fit, None);
            if rep.skipped_probes > 0 {
                writer.warn(format!(
                    "{} probes skipped (D below threshold) at n={n}, beta={beta}",
                    rep.skipped_probes
                ));
            }
        }
    }
    writer.write_csv(
        "mlsi_scan.csv",
        &["model", "n", "beta", "rate_fn", "quantity", "value", "slack"],
        &rows,
    )?;
    Ok(())
}

fn run_qf_check(
    cfg: &ExperimentConfig,
    writer: &mut RunWriter,
    seed: u64,
) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct QfSummary {
        model: String,
        n: usize,
        beta: f64,
        overlap: OverlapSummary,
        inequality_stats: Vec<IneqStat>,
        chain_bound: davies_sim::mixing::ChainBoundReport,
        pass: bool,
    }
    #[derive(Serialize)]
    struct OverlapSummary {
        h_infty_norm: f64,
        admissible: bool,
        qf_constant: Option<f64>,
    }
    #[derive(Serialize)]
    struct IneqStat {
        inequality: String,
        instances: usize,
        min_slack: Option<f64>,
        max_constant: Option<f64>,
        not_applicable: usize,
        failures: usize,
    }
    let geo_spec = cfg
        .geometry
        .as_ref()
        .ok_or_else(|| RunError::infeasible("qf-check requires a geometry".into()))?;
    let spec = cfg.probe_spec();
    let tol = cfg.tolerances();
    writer.begin_stage("qf-check");
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    let mut any_fail = false;
    for &n in &cfg.n_values() {
        let chain = cfg.build_chain(n)?;
        let geometry = mixing::build_geometry(n, geo_spec.ell, geo_spec.w, cfg.boundary)
            .map_err(RunError::from_core)?;
        for &beta in &cfg.beta_values() {
            let gen = make_gen(cfg, &chain, beta)?;
            let sigma = gibbs::gibbs_state(&chain, beta).map_err(RunError::from_core)?;
            let overlap = gibbs::overlap_operator(&sigma, &geometry).map_err(RunError::from_core)?;
            if !overlap.admissible {
                writer.warn(format!(
                    "geometry inadmissible at n={n}, beta={beta}: ||h|| = {:.4}",
                    overlap.h_infty_norm
                ));
            }
            // conditional expectations, built once: the cover regions and
            // every single site
            let cover = geometry.x_cover();
            let e_cover: Vec<condexp::ConditionalExpectation> = cover
                .iter()
                .map(|x| condexp::conditional_expectation(&gen, x))
                .collect::<Result<_, _>>()
                .map_err(RunError::from_core)?;
            let e_site: Vec<condexp::ConditionalExpectation> = (0..n)
                .map(|j| condexp::conditional_expectation(&gen, &[j]))
                .collect::<Result<_, _>>()
                .map_err(RunError::from_core)?;
            let mut family = Vec::new();
            let mut r = probes::rng(seed, 31);
            for k in 0..spec.count {
                family.push((
                    format!("random{k}"),
                    probes::random_density(chain.indexing(), &mut r)
                        .map_err(RunError::from_core)?,
                ));
            }
            let mut reports: Vec<mixing::QFReport> = Vec::new();
            for (_, rho) in &family {
                reports.extend(
                    mixing::qf_verify_global(rho, &sigma, &geometry).map_err(RunError::from_core)?,
                );
                reports.push(
                    mixing::qf_verify_combined(rho, &sigma, &e_cover)
                        .map_err(RunError::from_core)?,
                );
                for (xi, x) in cover.iter().enumerate() {
                    let e_sub: Vec<&condexp::ConditionalExpectation> =
                        x.iter().map(|&j| &e_site[j]).collect();
                    let mut rep = mixing::qf_verify_local(rho, &e_cover[xi], &e_sub)
                        .map_err(RunError::from_core)?;
                    rep.inequality = format!("eq12-local-X{xi}");
                    reports.push(rep);
                }
            }
            let opts = MlsiOptions { seed, n_random_probes: 12, restarts: 3, ..Default::default() };
            let mlsi = mixing::mlsi_estimate(&gen, &sigma, &opts).map_err(RunError::from_core)?;
            // chain constants on the same family alpha_hat was minimized over
            let chain_bound = mixing::qf_chain_check(
                &gen,
                &sigma,
                &mlsi.family,
                &e_site,
                mlsi.report.alpha_hat,
            )
            .map_err(RunError::from_core)?;
            let mlsi = mlsi.report;
            // aggregate
            let mut names: Vec<String> = reports.iter().map(|r| r.inequality.clone()).collect();
            names.sort();
            names.dedup();
            let mut stats = Vec::new();
            for name in names {
                let group: Vec<&mixing::QFReport> =
                    reports.iter().filter(|r| r.inequality == name).collect();
                let min_slack = group
                    .iter()
                    .filter_map(|r| r.slack)
                    .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))));
                let max_constant = group
                    .iter()
                    .filter_map(|r| r.constant)
                    .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
                let not_applicable =
                    group.iter().filter(|r| r.pass == PassFlag::NotApplicable).count();
                let failures = group.iter().filter(|r| r.pass == PassFlag::Fail).count();
                let failures = failures
                    + group
                        .iter()
                        .filter_map(|r| r.slack)
                        .filter(|&s| s < tol.qf_slack)
                        .count()
                        .saturating_sub(failures);
                any_fail |= failures > 0;
                rows.push(vec![
                    chain.label.clone(),
                    n.to_string(),
                    fmt_float(beta),
                    name.clone(),
                    group.len().to_string(),
                    fmt_opt(min_slack),
                    fmt_opt(max_constant),
                    not_applicable.to_string(),
                    failures.to_string(),
                ]);
                stats.push(IneqStat {
                    inequality: name,
                    instances: group.len(),
                    min_slack,
                    max_constant,
                    not_applicable,
                    failures,
                });
            }
            any_fail |= !chain_bound.consistent;
            let pass = stats.iter().all(|s| s.failures == 0) && chain_bound.consistent;
            summaries.push(QfSummary {
                model: chain.label.clone(),
                n,
                beta,
                overlap: OverlapSummary {
                    h_infty_norm: overlap.h_infty_norm,
                    admissible: overlap.admissible,
                    qf_constant: overlap.qf_constant,
                },
                inequality_stats: stats,
                chain_bound,
                pass,
            });
        }
    }
    writer.write_csv(
        "qf_summary.csv",
        &[
            "model",
            "n",
            "beta",
            "inequality",
            "instances",
            "min_slack",
            "max_constant",
            "not_applicable",
            "failures",
        ],
        &rows,
    )?;
    writer.write_json("qf_reports.json", &summaries)?;
    if any_fail {
        return Err(RunError::falsified("quasi-factorization inequality falsified".into()));
    }
    Ok(())
}

fn run_detectability(cfg: &ExperimentConfig, writer: &mut RunWriter) -> Result<(), RunError> {
    writer.begin_stage("detectability");
    let size = cfg.geometry.as_ref().map(|g| g.ell).unwrap_or(3);
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.n_values() {
        if size > n {
            return Err(RunError::infeasible(format!("|X| = {size} exceeds n = {n}")));
        }
        let chain = cfg.build_chain(n)?;
        for &beta in &cfg.beta_values() {
            let gen = make_gen(cfg, &chain, beta)?;
            let start = (n - size) / 2;
            let region: Vec<usize> = (start..start + size).collect();
            let rep = condexp::product_expectation_distance(&gen, &region, 25)
                .map_err(RunError::from_core)?;
            for &(k, nrm) in &rep.decay {
                rows.push(vec![
                    n.to_string(),
                    fmt_float(beta),
                    format!("{region:?}").replace(", ", ";"),
                    k.to_string(),
                    fmt_float(nrm),
                ]);
            }
            reports.push((n, beta, rep));
        }
    }
    #[derive(Serialize)]
    struct Entry {
        n: usize,
        beta: f64,
        report: condexp::DetectabilityReport,
    }
    let entries: Vec<Entry> =
        reports.into_iter().map(|(n, beta, report)| Entry { n, beta, report }).collect();
    writer.write_csv(
        "detectability.csv",
        &["n", "beta", "region", "k", "residual_norm"],
        &rows,
    )?;
    writer.write_json("detectability.json", &entries)?;
    if entries.iter().any(|e| !e.report.pass) {
        return Err(RunError::falsified("detectability contraction has lambda >= 1".into()));
    }
    Ok(())
}

fn run_spt_check(
    cfg: &ExperimentConfig,
    writer: &mut RunWriter,
    seed: u64,
) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct SptReport {
        n: usize,
        beta: f64,
        mps_overlap_deficit: f64,
        covariance: davies_sim::davies::CovarianceReport,
        strong_symmetry: davies_sim::davies::StrongSymmetryReport,
        expected_nonergodicity: bool,
        gap: f64,
        alpha_hat: f64,
        t_mix: f64,
        pass: bool,
    }
    if cfg.model.kind != ModelKind::Cluster {
        return Err(RunError::infeasible("spt-check requires the cluster model".into()));
    }
    let spec = cfg.probe_spec();
    writer.begin_stage("spt-check");
    let eps = cfg.epsilon.unwrap_or(0.1);
    let mut entries = Vec::new();
    let mut all_pass = true;
    for &n in &cfg.n_values() {
        if n % 2 != 0 {
            return Err(RunError::infeasible(format!(
                "Z2 x Z2 blocking requires even n, got {n}"
            )));
        }
        let chain = cfg.build_chain(n)?;
        // MPS vs exact ground state
        let psi = chain::cluster_mps_state(n).map_err(RunError::from_core)?;
        let (_, evecs) = chain.eig().map_err(RunError::from_core)?;
        let ground = evecs.column(0);
        let ov: C64 = ground.iter().zip(psi.iter()).map(|(g, p)| g.conj() * p).sum();
        let deficit = 1.0 - ov.norm();
        let rep = chain::z2z2_representation(n).map_err(RunError::from_core)?;
        for &beta in &cfg.beta_values() {
            let gen = make_gen(cfg, &chain, beta)?;
            let sigma = gibbs::gibbs_state(&chain, beta).map_err(RunError::from_core)?;
            let pr = covariance_probes(&chain, spec.count, seed);
            let cov = davies::check_covariance(&gen, &rep, &pr).map_err(RunError::from_core)?;
            let strong =
                davies::strong_symmetry_witness(&chain, &rep, beta, cfg.rate_fn, &pr)
                    .map_err(RunError::from_core)?;
            let gap = mixing::spectral_gap(&gen).map_err(RunError::from_core)?;
            let opts = MlsiOptions { seed, n_random_probes: 12, restarts: 3, ..Default::default() };
            let mlsi = mixing::mlsi_estimate(&gen, &sigma, &opts).map_err(RunError::from_core)?.report;
            let mix = mixing::mixing_time_estimate(&gen, &sigma.state, eps, spec.count, seed)
                .map_err(RunError::from_core)?;
            // non-ergodicity under the strong-symmetry restriction is the
            // predicted outcome
            let expected_nonergodicity = strong.fixed_space_dim > 1;
            let pass = deficit <= 1e-10
                && cov.pass
                && expected_nonergodicity
                && strong.invariance_residual <= 1e-10;
            all_pass &= pass;
            entries.push(SptReport {
                n,
                beta,
                mps_overlap_deficit: deficit,
                covariance: cov,
                strong_symmetry: strong,
                expected_nonergodicity,
                gap,
                alpha_hat: mlsi.alpha_hat,
                t_mix: mix.t_mix_lower_estimate,
                pass,
            });
        }
    }
    writer.write_json("spt_check.json", &entries)?;
    if !all_pass {
        return Err(RunError::falsified("spt-check failed".into()));
    }
    Ok(())
}

