//! Experiment driver tying the pipeline together: the offline build with
//! artifact persistence, comparison runs at new parameters, basis-size
//! sweeps, online-versus-direct timing studies, and the CSV/raster outputs.
//!
//! Offline work parallelizes over coarse neighborhoods; every stage is
//! deterministic for a fixed config and seed, so repeated builds write
//! byte-identical artifacts and error reports (timing columns excepted).

use crate::artifact::{self, OfflineNeighborhood};
use crate::coefficient::{component_median, AffineCoefficient};
use crate::config::{ExperimentConfig, PredictorKind, ScalarField};
use crate::fem::{self, ProblemOperators};
use crate::grid::{CoarseNeighborhood, StructuredMesh};
use crate::msbasis::{self, LocalEigenData, SnapshotSpace};
use crate::online::{self, OnlineSolution};
use crate::predict::{self, Predictor};
use crate::raster::Raster;
use crate::rom::{self, PodBasis, ReducedOperators};
use crate::{Error, Result, FORMAT_VERSION};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

pub const METHOD_FINE: &str = "FEM-fine";
pub const METHOD_GMSFEM: &str = "GMsFEM";
pub const METHOD_GPC: &str = "gPC-GMsFEM";
pub const METHOD_GPR: &str = "GPR-GMsFEM";

/// Exact header of `errors.csv`.
pub const ERRORS_CSV_HEADER: &str =
    "mu,method,l2_rel,energy_rel,t_predict_s,t_assemble_s,t_solve_s";

/// Training sample whose retained eigenvector points far away from the same
/// mode at the first sample: a possible eigenvalue-crossing region.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrossingFlag {
    pub node: usize,
    pub sample: usize,
    pub mode: usize,
    pub cosine: f64,
}

/// Run provenance stored as `manifest.json` next to the binary artifacts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config: ExperimentConfig,
    /// Reference parameter of snapshots and partition of unity.
    pub mu_ref: Vec<f64>,
    /// Minimum gap witness lambda_{l+1} over all (neighborhood, sample) pairs.
    pub lambda_star: f64,
    /// Per neighborhood: POD energy discarded by the epsilon cut.
    pub pod_tails: Vec<f64>,
    /// Per neighborhood: largest chaos least-squares residual over outputs.
    pub gpc_residuals: Vec<f64>,
    pub crossing_flags: Vec<CrossingFlag>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Manifest> {
        serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("manifest parse error: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Manifest::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Everything the online stage loads from disk; no mesh or field data.
pub struct Artifacts {
    pub manifest: Manifest,
    pub reduced: ReducedOperators,
    /// Chaos predictors in coarse-node order.
    pub gpc: Vec<Predictor>,
    /// Kernel predictors in coarse-node order.
    pub gpr: Vec<Predictor>,
    pub pods: Vec<PodBasis>,
}

impl Artifacts {
    /// Family selected by the config.
    pub fn predictors(&self) -> &[Predictor] {
        match self.manifest.config.predictor {
            PredictorKind::Gpc => &self.gpc,
            PredictorKind::Gpr => &self.gpr,
        }
    }
}

/// Offline products held in memory: artifacts plus the rebuilt fine-scale
/// problem needed for reference solves and error reporting.
pub struct OfflineBundle {
    pub config: ExperimentConfig,
    pub mesh: StructuredMesh,
    pub coeff: AffineCoefficient,
    pub ops: ProblemOperators,
    pub boundary: ScalarField,
    pub reduced: ReducedOperators,
    pub gpc: Vec<Predictor>,
    pub gpr: Vec<Predictor>,
    pub pods: Vec<PodBasis>,
    pub offline: Vec<OfflineNeighborhood>,
    pub manifest: Manifest,
    pub train_mu: Vec<Vec<f64>>,
}

impl OfflineBundle {
    pub fn predictors(&self) -> &[Predictor] {
        match self.config.predictor {
            PredictorKind::Gpc => &self.gpc,
            PredictorKind::Gpr => &self.gpr,
        }
    }
}

fn with_context(ctx: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
        Error::Io(m) => Error::Io(format!("{ctx}: {m}")),
    }
}

struct PerNeighborhood {
    nb: CoarseNeighborhood,
    snap: SnapshotSpace,
    pod: PodBasis,
    eigen: Vec<LocalEigenData>,
    chi: Vec<f64>,
    gpc: Predictor,
    gpr: Predictor,
    flags: Vec<CrossingFlag>,
    tail: f64,
    residual: f64,
}

fn crossing_flags(node: usize, eigen: &[LocalEigenData]) -> Vec<CrossingFlag> {
    let mut flags = Vec::new();
    let first = &eigen[0].psi;
    for (j, e) in eigen.iter().enumerate().skip(1) {
        for k in 0..e.psi.ncols() {
            let a = e.psi.column(k);
            let b = first.column(k);
            let cosine = a.dot(&b) / (a.norm() * b.norm());
            if cosine < 0.5 {
                flags.push(CrossingFlag { node, sample: j, mode: k, cosine });
            }
        }
    }
    flags
}

fn build_neighborhood(
    i: usize,
    mesh: &StructuredMesh,
    coeff: &AffineCoefficient,
    a_ref: &crate::sparse::CsrMatrix,
    theta_ref: &[f64],
    chi_full: &[f64],
    train_mu: &[Vec<f64>],
    cfg: &ExperimentConfig,
) -> Result<PerNeighborhood> {
    let ctx = |e| with_context(&format!("neighborhood {i}"), e);
    let nb = mesh.neighborhood(i);
    let snap = msbasis::build_snapshots(a_ref, &nb).map_err(ctx)?;
    let local = msbasis::reduce_local_operators(mesh, coeff, &snap, &nb).map_err(ctx)?;
    let mut eigen = Vec::with_capacity(train_mu.len());
    for (j, mu) in train_mu.iter().enumerate() {
        let theta = coeff.theta_vec(mu)?;
        let e = msbasis::local_spectral(&local, &theta, theta_ref, mu, cfg.l)
            .map_err(|e| with_context(&format!("neighborhood {i}, sample {j}"), e))?;
        eigen.push(e);
    }
    let flags = crossing_flags(i, &eigen);
    let s_n = rom::assemble_snapshot_matrix(&eigen).map_err(ctx)?;
    let pod = rom::pod_reduce(i, &s_n, cfg.epsilon).map_err(ctx)?;
    let targets = rom::predictor_targets(&pod, &eigen);
    let gpc = predict::fit_gpc(cfg.m, cfg.p, train_mu, &targets).map_err(ctx)?;
    let gpr = predict::fit_gpr(train_mu, &targets).map_err(ctx)?;
    let tail = (1.0 - pod.energy_fraction).max(0.0);
    let residual = gpc.residuals.iter().cloned().fold(0.0, f64::max);
    let chi: Vec<f64> = nb.all_nodes.iter().map(|&g| chi_full[g]).collect();
    log::info!(
        "neighborhood {i}: {} snapshots, N_h = {}, pod tail {:.3e}, gpc residual {:.3e}",
        snap.r_snap.ncols(),
        pod.n_h(),
        tail,
        residual
    );
    Ok(PerNeighborhood {
        nb,
        snap,
        pod,
        eigen,
        chi,
        gpc: Predictor::Gpc(gpc),
        gpr: Predictor::Gpr(gpr),
        flags,
        tail,
        residual,
    })
}

/// Runs the full offline stage for a config: training samples, snapshot
/// spaces and spectral problems at the reference parameter, POD, predictor
/// fits (both families), and the reduced operators.
pub fn build_offline(cfg: &ExperimentConfig, base_dir: &Path) -> Result<OfflineBundle> {
    cfg.validate()?;
    let t0 = Instant::now();
    let mesh = cfg.mesh()?;
    let coeff = cfg.coefficient(&mesh, base_dir)?;
    let f = cfg.source_fn(&mesh, base_dir)?;
    let boundary = cfg.boundary_fn(&mesh, base_dir)?;
    let ops = ProblemOperators::build(&mesh, &coeff, f.as_ref())?;
    let lift = fem::dirichlet_lift(&mesh, boundary.as_ref());

    let train_mu = coeff.sample_training_set(cfg.n_s, cfg.seed)?;
    let mu_ref = component_median(&train_mu);
    let theta_ref = coeff.theta_vec(&mu_ref)?;
    let a_ref = ops.stiffness_at(&coeff, &mu_ref)?;
    let pou = msbasis::build_pou(&mesh, &a_ref, &mu_ref)?;

    let per: Vec<PerNeighborhood> = (0..mesh.coarse_node_count())
        .into_par_iter()
        .map(|i| {
            build_neighborhood(i, &mesh, &coeff, &a_ref, &theta_ref, &pou.chi[i], &train_mu, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let lambda_star = msbasis::spectral_gap(per.iter().flat_map(|p| p.eigen.iter()));
    let items: Vec<(&CoarseNeighborhood, &SnapshotSpace, &PodBasis)> =
        per.iter().map(|p| (&p.nb, &p.snap, &p.pod)).collect();
    let reduced = rom::reduce_operators(&mesh, &ops.a_q, &ops.load, &lift, &pou, &items)?;
    drop(items);

    let n = per.len();
    let mut offline = Vec::with_capacity(n);
    let mut gpc = Vec::with_capacity(n);
    let mut gpr = Vec::with_capacity(n);
    let mut pods = Vec::with_capacity(n);
    let mut pod_tails = Vec::with_capacity(n);
    let mut gpc_residuals = Vec::with_capacity(n);
    let mut flags = Vec::new();
    for p in per {
        offline.push(OfflineNeighborhood {
            node: p.nb.node,
            patch_nodes: p.nb.all_nodes,
            r_snap: p.snap.r_snap,
            chi: p.chi,
            eigen: p.eigen,
        });
        gpc.push(p.gpc);
        gpr.push(p.gpr);
        pods.push(p.pod);
        pod_tails.push(p.tail);
        gpc_residuals.push(p.residual);
        flags.extend(p.flags);
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        mu_ref,
        lambda_star,
        pod_tails,
        gpc_residuals,
        crossing_flags: flags,
    };
    log::info!(
        "offline stage: {} neighborhoods, reduced dimension {}, lambda_star {:.4e}, {:.2}s",
        n,
        reduced.total_dim(),
        lambda_star,
        t0.elapsed().as_secs_f64()
    );
    Ok(OfflineBundle {
        config: cfg.clone(),
        mesh,
        coeff,
        ops,
        boundary,
        reduced,
        gpc,
        gpr,
        pods,
        offline,
        manifest,
        train_mu,
    })
}

/// Writes every artifact of an offline bundle into `dir`.
pub fn persist_offline(bundle: &OfflineBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    bundle.manifest.save(&dir.join("manifest.json"))?;
    artifact::save_reduced_operators(&bundle.reduced, &dir.join("reduced.bin"))?;
    let pair = |v: &[Predictor]| -> Vec<(usize, Predictor)> {
        v.iter().cloned().enumerate().collect()
    };
    artifact::save_predictors(&pair(&bundle.gpc), bundle.config.seed, &dir.join("predictors_gpc.bin"))?;
    artifact::save_predictors(&pair(&bundle.gpr), bundle.config.seed, &dir.join("predictors_gpr.bin"))?;
    artifact::save_pod_bases(&bundle.pods, &dir.join("pods.bin"))?;
    for o in &bundle.offline {
        artifact::save_offline_neighborhood(o, &dir.join(format!("offline_{:04}.bin", o.node)))?;
    }
    Ok(())
}

/// Offline build plus persistence; the usual CLI entry point.
pub fn run_offline(cfg: &ExperimentConfig, base_dir: &Path, dir: &Path) -> Result<OfflineBundle> {
    let bundle = build_offline(cfg, base_dir)?;
    persist_offline(&bundle, dir)?;
    Ok(bundle)
}

fn check_node_order(label: &str, nodes: impl Iterator<Item = usize>) -> Result<()> {
    for (i, node) in nodes.enumerate() {
        if node != i {
            return Err(Error::Config(format!(
                "{label} artifact out of order: entry {i} belongs to node {node}"
            )));
        }
    }
    Ok(())
}

/// Loads the online-sufficient artifacts; never touches field data, so it
/// works without the raster files the offline stage may have used.
pub fn load_artifacts(dir: &Path) -> Result<Artifacts> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "artifact format {} unsupported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let reduced = artifact::load_reduced_operators(&dir.join("reduced.bin"))?;
    let (gpc_pairs, seed_gpc) = artifact::load_predictors(&dir.join("predictors_gpc.bin"))?;
    let (gpr_pairs, seed_gpr) = artifact::load_predictors(&dir.join("predictors_gpr.bin"))?;
    let pods = artifact::load_pod_bases(&dir.join("pods.bin"))?;
    if seed_gpc != manifest.config.seed || seed_gpr != manifest.config.seed {
        return Err(Error::Config(
            "predictor artifacts were trained under a different seed than the manifest".into(),
        ));
    }
    check_node_order("reduced block", reduced.blocks.iter().map(|b| b.node))?;
    check_node_order("gpc predictor", gpc_pairs.iter().map(|p| p.0))?;
    check_node_order("gpr predictor", gpr_pairs.iter().map(|p| p.0))?;
    check_node_order("pod basis", pods.iter().map(|p| p.node))?;
    if gpc_pairs.len() != reduced.blocks.len() || gpr_pairs.len() != reduced.blocks.len() {
        return Err(Error::Config(
            "predictor artifact mismatch with reduced operators (block count)".into(),
        ));
    }
    Ok(Artifacts {
        manifest,
        reduced,
        gpc: gpc_pairs.into_iter().map(|p| p.1).collect(),
        gpr: gpr_pairs.into_iter().map(|p| p.1).collect(),
        pods,
    })
}

/// Loads all artifacts and rebuilds the fine-scale problem from the config.
pub fn load_bundle(dir: &Path, base_dir: &Path) -> Result<OfflineBundle> {
    let arts = load_artifacts(dir)?;
    let cfg = arts.manifest.config.clone();
    let mesh = cfg.mesh()?;
    let coeff = cfg.coefficient(&mesh, base_dir)?;
    let f = cfg.source_fn(&mesh, base_dir)?;
    let boundary = cfg.boundary_fn(&mesh, base_dir)?;
    let ops = ProblemOperators::build(&mesh, &coeff, f.as_ref())?;
    let mut offline = Vec::with_capacity(mesh.coarse_node_count());
    for i in 0..mesh.coarse_node_count() {
        offline.push(artifact::load_offline_neighborhood(
            &dir.join(format!("offline_{i:04}.bin")),
        )?);
    }
    check_node_order("offline neighborhood", offline.iter().map(|o| o.node))?;
    let train_mu = coeff.sample_training_set(cfg.n_s, cfg.seed)?;
    Ok(OfflineBundle {
        config: cfg,
        mesh,
        coeff,
        ops,
        boundary,
        reduced: arts.reduced,
        gpc: arts.gpc,
        gpr: arts.gpr,
        pods: arts.pods,
        offline,
        manifest: arts.manifest,
        train_mu,
    })
}

/// One method's result at one evaluation parameter.
#[derive(Debug, Clone)]
pub struct MethodRow {
    pub mu_index: usize,
    pub mu: Vec<f64>,
    pub method: &'static str,
    /// Relative kappa-weighted L2 error against the fine reference; NaN when
    /// the run skipped the reference solve.
    pub l2_rel: f64,
    /// Relative energy-norm error; NaN without a reference.
    pub energy_rel: f64,
    pub t_predict: f64,
    pub t_assemble: f64,
    pub t_solve: f64,
    /// Fine-node field, kept for raster output.
    pub u: Vec<f64>,
}

/// Rows of an online comparison run, grouped by parameter in input order.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub l: usize,
    pub rows: Vec<MethodRow>,
}

fn online_row(
    bundle: &OfflineBundle,
    predictors: &[Predictor],
    method: &'static str,
    mu_index: usize,
    mu: &[f64],
    l: usize,
) -> Result<OnlineSolution> {
    let theta = bundle.config.thetas(mu)?;
    online::solve_online(&bundle.reduced, predictors, &theta, l, mu).map_err(|e| {
        with_context(&format!("{method} online solve at parameter {mu_index}"), e)
    })
}

/// Online solves at each parameter; with `compare` also the fine reference
/// and the from-scratch multiscale solve, with errors against the reference.
pub fn run_online(
    bundle: &OfflineBundle,
    mu_list: &[Vec<f64>],
    l: usize,
    compare: bool,
) -> Result<ErrorReport> {
    if mu_list.is_empty() {
        return Err(Error::Config("no evaluation parameters given".into()));
    }
    let mut rows = Vec::new();
    for (mi, mu) in mu_list.iter().enumerate() {
        if !bundle.coeff.is_admissible(mu) {
            return Err(Error::Config(format!(
                "parameter {mi} leaves the admissible range of the coefficient"
            )));
        }
        if compare {
            let t0 = Instant::now();
            let fine = fem::solve_fine(
                &bundle.mesh,
                &bundle.ops,
                &bundle.coeff,
                mu,
                bundle.boundary.as_ref(),
            )?;
            let t_fine = t0.elapsed().as_secs_f64();
            rows.push(MethodRow {
                mu_index: mi,
                mu: mu.clone(),
                method: METHOD_FINE,
                l2_rel: 0.0,
                energy_rel: 0.0,
                t_predict: 0.0,
                t_assemble: 0.0,
                t_solve: t_fine,
                u: fine.values.clone(),
            });

            let direct = online::gmsfem_direct_solve(
                &bundle.mesh,
                &bundle.ops,
                &bundle.coeff,
                mu,
                l,
                &bundle.reduced.lift,
            )?;
            let (l2, en) = fem::relative_errors(
                &bundle.ops,
                &bundle.coeff,
                mu,
                &fine.values,
                &direct.u,
            )?;
            rows.push(MethodRow {
                mu_index: mi,
                mu: mu.clone(),
                method: METHOD_GMSFEM,
                l2_rel: l2,
                energy_rel: en,
                t_predict: 0.0,
                t_assemble: direct.t_basis,
                t_solve: direct.t_solve,
                u: direct.u,
            });

            for (method, predictors) in
                [(METHOD_GPC, &bundle.gpc), (METHOD_GPR, &bundle.gpr)]
            {
                let sol = online_row(bundle, predictors, method, mi, mu, l)?;
                let (l2, en) = fem::relative_errors(
                    &bundle.ops,
                    &bundle.coeff,
                    mu,
                    &fine.values,
                    &sol.u,
                )?;
                rows.push(MethodRow {
                    mu_index: mi,
                    mu: mu.clone(),
                    method,
                    l2_rel: l2,
                    energy_rel: en,
                    t_predict: sol.t_predict,
                    t_assemble: sol.t_assemble,
                    t_solve: sol.t_solve,
                    u: sol.u,
                });
            }
        } else {
            let method = match bundle.config.predictor {
                PredictorKind::Gpc => METHOD_GPC,
                PredictorKind::Gpr => METHOD_GPR,
            };
            let sol = online_row(bundle, bundle.predictors(), method, mi, mu, l)?;
            rows.push(MethodRow {
                mu_index: mi,
                mu: mu.clone(),
                method,
                l2_rel: f64::NAN,
                energy_rel: f64::NAN,
                t_predict: sol.t_predict,
                t_assemble: sol.t_assemble,
                t_solve: sol.t_solve,
                u: sol.u,
            });
        }
    }
    Ok(ErrorReport { l, rows })
}

/// Online solves straight from loaded artifacts: no mesh, no field data, no
/// reference errors. Rows carry NaN errors and the configured family.
pub fn run_online_artifacts(
    arts: &Artifacts,
    mu_list: &[Vec<f64>],
    l: usize,
) -> Result<ErrorReport> {
    if mu_list.is_empty() {
        return Err(Error::Config("no evaluation parameters given".into()));
    }
    let method = match arts.manifest.config.predictor {
        PredictorKind::Gpc => METHOD_GPC,
        PredictorKind::Gpr => METHOD_GPR,
    };
    let mut rows = Vec::with_capacity(mu_list.len());
    for (mi, mu) in mu_list.iter().enumerate() {
        let theta = arts.manifest.config.thetas(mu)?;
        let sol = online::solve_online(&arts.reduced, arts.predictors(), &theta, l, mu)
            .map_err(|e| with_context(&format!("online solve at parameter {mi}"), e))?;
        rows.push(MethodRow {
            mu_index: mi,
            mu: mu.clone(),
            method,
            l2_rel: f64::NAN,
            energy_rel: f64::NAN,
            t_predict: sol.t_predict,
            t_assemble: sol.t_assemble,
            t_solve: sol.t_solve,
            u: sol.u,
        });
    }
    Ok(ErrorReport { l, rows })
}

/// Error decay against basis size at a fixed parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub l: usize,
    /// Coarse degrees of freedom: l modes per coarse node.
    pub dof: usize,
    pub l2_rel: f64,
    pub energy_rel: f64,
}

/// Online solves for l = 1..=l_max against one fine reference solve.
pub fn sweep_basis(bundle: &OfflineBundle, l_max: usize, mu: &[f64]) -> Result<Vec<SweepRow>> {
    if l_max == 0 {
        return Err(Error::Config("sweep needs l_max >= 1".into()));
    }
    if l_max > bundle.config.l {
        return Err(Error::Config(format!(
            "sweep l_max {l_max} exceeds the trained basis size {}",
            bundle.config.l
        )));
    }
    let fine = fem::solve_fine(
        &bundle.mesh,
        &bundle.ops,
        &bundle.coeff,
        mu,
        bundle.boundary.as_ref(),
    )?;
    let theta = bundle.config.thetas(mu)?;
    let mut rows = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        let sol = online::solve_online(&bundle.reduced, bundle.predictors(), &theta, l, mu)?;
        let (l2, en) =
            fem::relative_errors(&bundle.ops, &bundle.coeff, mu, &fine.values, &sol.u)?;
        rows.push(SweepRow { l, dof: l * bundle.mesh.coarse_node_count(), l2_rel: l2, energy_rel: en });
    }
    Ok(rows)
}

/// Mean wall-clock seconds of the online path versus the from-scratch
/// multiscale solve at one basis size.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub l: usize,
    pub t_online: f64,
    pub t_direct: f64,
    /// t_direct / t_online.
    pub ratio: f64,
}

/// Times both paths over `reps` repetitions of every parameter, after one
/// discarded warm-up pass per basis size.
pub fn compare_timing(
    bundle: &OfflineBundle,
    mu_list: &[Vec<f64>],
    l_list: &[usize],
    reps: usize,
) -> Result<Vec<TimingRow>> {
    if reps == 0 {
        return Err(Error::Config("timing needs reps >= 1".into()));
    }
    if mu_list.is_empty() || l_list.is_empty() {
        return Err(Error::Config("timing needs at least one parameter and one l".into()));
    }
    let predictors = bundle.predictors();
    let mut rows = Vec::with_capacity(l_list.len());
    for &l in l_list {
        let mu0 = &mu_list[0];
        let theta0 = bundle.config.thetas(mu0)?;
        online::solve_online(&bundle.reduced, predictors, &theta0, l, mu0)?;
        online::gmsfem_direct_solve(
            &bundle.mesh,
            &bundle.ops,
            &bundle.coeff,
            mu0,
            l,
            &bundle.reduced.lift,
        )?;
        let solves = (reps * mu_list.len()) as f64;
        let mut t_online = 0.0;
        let mut t_direct = 0.0;
        for _ in 0..reps {
            for mu in mu_list {
                let theta = bundle.config.thetas(mu)?;
                let t0 = Instant::now();
                online::solve_online(&bundle.reduced, predictors, &theta, l, mu)?;
                t_online += t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                online::gmsfem_direct_solve(
                    &bundle.mesh,
                    &bundle.ops,
                    &bundle.coeff,
                    mu,
                    l,
                    &bundle.reduced.lift,
                )?;
                t_direct += t1.elapsed().as_secs_f64();
            }
        }
        t_online /= solves;
        t_direct /= solves;
        rows.push(TimingRow { l, t_online, t_direct, ratio: t_direct / t_online });
        log::info!("timing l = {l}: online {t_online:.4}s, direct {t_direct:.4}s");
    }
    Ok(rows)
}

fn format_mu(mu: &[f64]) -> String {
    mu.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn method_slug(method: &str) -> String {
    method.to_lowercase().replace('-', "_")
}

/// Renders `errors.csv` content for a report.
pub fn errors_csv(report: &ErrorReport) -> String {
    let mut out = String::from(ERRORS_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            format_mu(&r.mu),
            r.method,
            r.l2_rel,
            r.energy_rel,
            r.t_predict,
            r.t_assemble,
            r.t_solve
        )
        .unwrap();
    }
    out
}

/// Relative (weighted L2, energy) errors recomputed from nodal rasters with
/// 2x2 Gauss quadrature per cell, independent of the assembled matrices.
pub fn independent_relative_errors(
    mesh: &StructuredMesh,
    kappa: &Raster,
    u_ref: &[f64],
    u: &[f64],
) -> (f64, f64) {
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let g = [0.5 - 0.5 / 3.0_f64.sqrt(), 0.5 + 0.5 / 3.0_f64.sqrt()];
    let mut l2_diff = 0.0;
    let mut l2_ref = 0.0;
    let mut en_diff = 0.0;
    let mut en_ref = 0.0;
    for iy in 0..mesh.ny() {
        for ix in 0..mesh.nx() {
            let nodes = mesh.fine_cell_nodes(ix, iy);
            let k = kappa.get(ix, iy);
            let scale = 0.25 * hx * hy * k;
            for &xi in &g {
                for &eta in &g {
                    let shape = [
                        (1.0 - xi) * (1.0 - eta),
                        xi * (1.0 - eta),
                        xi * eta,
                        (1.0 - xi) * eta,
                    ];
                    let dxi = [-(1.0 - eta), 1.0 - eta, eta, -eta];
                    let deta = [-(1.0 - xi), -xi, xi, 1.0 - xi];
                    let mut vals = [0.0f64; 6];
                    for (c, &n) in nodes.iter().enumerate() {
                        let d = u_ref[n] - u[n];
                        let r = u_ref[n];
                        vals[0] += shape[c] * d;
                        vals[1] += shape[c] * r;
                        vals[2] += dxi[c] * d;
                        vals[3] += dxi[c] * r;
                        vals[4] += deta[c] * d;
                        vals[5] += deta[c] * r;
                    }
                    l2_diff += scale * vals[0] * vals[0];
                    l2_ref += scale * vals[1] * vals[1];
                    let (gx_d, gy_d) = (vals[2] / hx, vals[4] / hy);
                    let (gx_r, gy_r) = (vals[3] / hx, vals[5] / hy);
                    en_diff += scale * (gx_d * gx_d + gy_d * gy_d);
                    en_ref += scale * (gx_r * gx_r + gy_r * gy_r);
                }
            }
        }
    }
    ((l2_diff / l2_ref).sqrt(), (en_diff / en_ref).sqrt())
}

/// Writes `errors.csv` plus one text raster and one PGM per (parameter,
/// method); `nx`, `ny` are fine cell counts, so nodal rasters are one larger.
pub fn emit_report(report: &ErrorReport, nx: usize, ny: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("errors.csv"), errors_csv(report))?;
    for r in &report.rows {
        let raster = Raster::new(nx + 1, ny + 1, r.u.clone());
        let stem = format!("solution_mu{}_{}", r.mu_index, method_slug(r.method));
        raster.save(&dir.join(format!("{stem}.txt")))?;
        std::fs::write(dir.join(format!("{stem}.pgm")), raster.to_pgm())?;
    }
    Ok(())
}

/// [`emit_report`] followed by a recheck of every finite CSV error against
/// the persisted rasters with the quadrature-based norms; disagreement
/// beyond 1e-12 fails the run.
pub fn emit_outputs(bundle: &OfflineBundle, report: &ErrorReport, dir: &Path) -> Result<()> {
    emit_report(report, bundle.mesh.nx(), bundle.mesh.ny(), dir)?;

    for r in &report.rows {
        if !r.l2_rel.is_finite() || r.method == METHOD_FINE {
            continue;
        }
        let load = |method: &str| -> Result<Vec<f64>> {
            let stem = format!("solution_mu{}_{}", r.mu_index, method_slug(method));
            Ok(Raster::load(&dir.join(format!("{stem}.txt")))?.data().to_vec())
        };
        let u_ref = load(METHOD_FINE).map_err(|e| {
            with_context("error recheck needs the reference raster", e)
        })?;
        let u = load(r.method)?;
        let kappa = bundle.coeff.eval_kappa(&r.mu)?;
        let (l2, en) = independent_relative_errors(&bundle.mesh, &kappa, &u_ref, &u);
        if (l2 - r.l2_rel).abs() > 1e-12 || (en - r.energy_rel).abs() > 1e-12 {
            return Err(Error::Numerical(format!(
                "independent norm recheck disagrees with the CSV at parameter {} ({}): \
                 l2 {l2:.17e} vs {:.17e}, energy {en:.17e} vs {:.17e}",
                r.mu_index, r.method, r.l2_rel, r.energy_rel
            )));
        }
    }
    Ok(())
}

/// Renders `sweep.csv` content.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("l,dof,l2_rel,energy_rel\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.l, r.dof, r.l2_rel, r.energy_rel).unwrap();
    }
    out
}

/// Bar-chart raster of -log10(l2 error) per basis size, for a quick visual
/// check of the decay.
pub fn sweep_decay_raster(rows: &[SweepRow]) -> Raster {
    let bar = 12usize;
    let height = 120usize;
    let floor = 1e-16f64;
    let heights: Vec<usize> = rows
        .iter()
        .map(|r| {
            let v = (-r.l2_rel.max(floor).log10()).max(0.0);
            ((v / 16.0) * height as f64).round().min(height as f64) as usize
        })
        .collect();
    Raster::from_fn(rows.len().max(1) * bar, height, |ix, iy| {
        let b = ix / bar;
        if b < heights.len() && iy < heights[b] && ix % bar != 0 {
            1.0
        } else {
            0.0
        }
    })
}

/// Writes `sweep.csv` and `sweep_decay.pgm`.
pub fn emit_sweep(rows: &[SweepRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(rows))?;
    std::fs::write(dir.join("sweep_decay.pgm"), sweep_decay_raster(rows).to_pgm())?;
    Ok(())
}

/// Renders `timing.csv` content.
pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("l,t_online_s,t_gmsfem_s,ratio\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.l, r.t_online, r.t_direct, r.ratio).unwrap();
    }
    out
}

/// Writes `timing.csv`.
pub fn emit_timing(rows: &[TimingRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("timing.csv"), timing_csv(rows))?;
    Ok(())
}

/// Fine reference solves at each parameter, stored as text and PGM rasters.
pub fn run_reference(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    mu_list: &[Vec<f64>],
    dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    if mu_list.is_empty() {
        return Err(Error::Config("no evaluation parameters given".into()));
    }
    let mesh = cfg.mesh()?;
    let coeff = cfg.coefficient(&mesh, base_dir)?;
    let f = cfg.source_fn(&mesh, base_dir)?;
    let p = cfg.boundary_fn(&mesh, base_dir)?;
    let ops = ProblemOperators::build(&mesh, &coeff, f.as_ref())?;
    std::fs::create_dir_all(dir)?;
    for (mi, mu) in mu_list.iter().enumerate() {
        let t0 = Instant::now();
        let fine = fem::solve_fine(&mesh, &ops, &coeff, mu, p.as_ref())?;
        let raster = Raster::new(mesh.nx() + 1, mesh.ny() + 1, fine.values);
        raster.save(&dir.join(format!("reference_mu{mi}.txt")))?;
        std::fs::write(dir.join(format!("reference_mu{mi}.pgm")), raster.to_pgm())?;
        log::info!("reference solve {mi} in {:.3}s", t0.elapsed().as_secs_f64());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        BoundaryConfig, FieldConfig, SourceConfig, TermConfig,
    };
    use crate::coefficient::ThetaKind;
    use tempfile::TempDir;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            fine_nx: 16,
            fine_ny: 16,
            coarse_nx: 2,
            coarse_ny: 2,
            m: 1,
            terms: vec![TermConfig {
                theta: ThetaKind::MuPlusMuSq,
                component: 0,
                field: FieldConfig::Periodic,
            }],
            source: SourceConfig::Paper41,
            boundary: BoundaryConfig::Paper41,
            n_s: 6,
            seed: 11,
            p: 2,
            epsilon: 1e-8,
            l: 2,
            predictor: PredictorKind::Gpc,
            mu_star: vec![vec![0.6]],
            output_dir: "out".into(),
        }
    }

    fn tmp(prefix: &str) -> TempDir {
        tempfile::Builder::new().prefix(prefix).tempdir().unwrap()
    }

    #[test]
    fn offline_build_shapes_and_single_term_pod_rank() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let n = bundle.mesh.coarse_node_count();
        assert_eq!(n, 9);
        assert_eq!(bundle.offline.len(), n);
        assert_eq!(bundle.reduced.blocks.len(), n);
        assert!(bundle.manifest.lambda_star > 0.0);
        // One coefficient term: the normalized eigenvector map is constant in
        // mu, so POD keeps exactly one direction per retained mode.
        for pod in &bundle.pods {
            assert_eq!(pod.n_h(), cfg.l);
        }
        assert_eq!(bundle.reduced.total_dim(), n * cfg.l);
        for o in &bundle.offline {
            assert_eq!(o.eigen.len(), cfg.n_s);
            assert_eq!(o.chi.len(), o.patch_nodes.len());
        }
    }

    #[test]
    fn persist_and_reload_round_trips_and_is_byte_stable() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let dir_a = tmp("harness_a");
        let dir_b = tmp("harness_b");
        persist_offline(&bundle, dir_a.path()).unwrap();
        persist_offline(&bundle, dir_b.path()).unwrap();
        for name in ["manifest.json", "reduced.bin", "predictors_gpc.bin", "predictors_gpr.bin", "pods.bin", "offline_0004.bin"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical writes");
        }
        let loaded = load_bundle(dir_a.path(), Path::new(".")).unwrap();
        assert_eq!(loaded.reduced, bundle.reduced);
        assert_eq!(loaded.pods, bundle.pods);
        assert_eq!(loaded.manifest, bundle.manifest);
        assert_eq!(loaded.train_mu, bundle.train_mu);
        assert_eq!(loaded.offline[3].r_snap, bundle.offline[3].r_snap);
        for (a, b) in loaded.gpc.iter().zip(&bundle.gpc) {
            assert_eq!(a.predict(&[0.7]), b.predict(&[0.7]));
        }
    }

    #[test]
    fn artifacts_load_without_field_data() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let dir = tmp("harness_light");
        persist_offline(&bundle, dir.path()).unwrap();
        let arts = load_artifacts(dir.path()).unwrap();
        let theta = arts.manifest.config.thetas(&[0.7]).unwrap();
        let sol =
            online::solve_online(&arts.reduced, arts.predictors(), &theta, cfg.l, &[0.7])
                .unwrap();
        assert_eq!(sol.u.len(), bundle.mesh.fine_node_count());
        assert!(sol.u.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn compare_run_reports_all_methods_and_small_predictor_drift() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let report = run_online(&bundle, &[vec![0.6]], cfg.l, true).unwrap();
        let methods: Vec<&str> = report.rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, vec![METHOD_FINE, METHOD_GMSFEM, METHOD_GPC, METHOD_GPR]);
        let gms = &report.rows[1];
        let gpc = &report.rows[2];
        assert!(gms.l2_rel.is_finite() && gms.l2_rel > 0.0);
        // Single-term coefficient: prediction is exact up to regression noise,
        // so the online errors track the direct multiscale errors tightly.
        assert!((gpc.l2_rel - gms.l2_rel).abs() <= 1e-6, "{} vs {}", gpc.l2_rel, gms.l2_rel);
        assert!((gpc.energy_rel - gms.energy_rel).abs() <= 1e-6);
    }

    #[test]
    fn non_compare_run_emits_nan_errors_for_selected_family() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let report = run_online(&bundle, &[vec![0.5], vec![0.9]], cfg.l, false).unwrap();
        assert_eq!(report.rows.len(), 2);
        for (mi, r) in report.rows.iter().enumerate() {
            assert_eq!(r.method, METHOD_GPC);
            assert_eq!(r.mu_index, mi);
            assert!(r.l2_rel.is_nan() && r.energy_rel.is_nan());
        }
    }

    #[test]
    fn inadmissible_parameter_is_rejected() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        match run_online(&bundle, &[vec![-2.0]], cfg.l, false) {
            Err(Error::Config(m)) => assert!(m.contains("admissible")),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn emit_outputs_writes_csv_and_rasters_that_pass_the_recheck() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let report = run_online(&bundle, &[vec![0.6]], cfg.l, true).unwrap();
        let dir = tmp("harness_emit");
        emit_outputs(&bundle, &report, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), ERRORS_CSV_HEADER);
        assert_eq!(lines.count(), 4);
        assert!(csv.contains("0.6,FEM-fine,0,0,"));
        let pgm =
            std::fs::read_to_string(dir.path().join("solution_mu0_gpc_gmsfem.pgm")).unwrap();
        let dims = pgm.lines().nth(1).unwrap();
        assert_eq!(dims, "17 17");
        let txt = Raster::load(&dir.path().join("solution_mu0_fem_fine.txt")).unwrap();
        assert_eq!(txt.data(), &report.rows[0].u[..]);
    }

    #[test]
    fn independent_norms_match_assembled_forms() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let mu = [0.8];
        let n = bundle.mesh.fine_node_count();
        let u_ref: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = bundle.mesh.fine_node_coords(i);
                (2.3 * x + 1.1).sin() * (1.7 * y - 0.4).cos() + 0.3
            })
            .collect();
        let u: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = bundle.mesh.fine_node_coords(i);
                u_ref[i] + 0.05 * (x * y + 0.2 * x)
            })
            .collect();
        let (l2_a, en_a) =
            fem::relative_errors(&bundle.ops, &bundle.coeff, &mu, &u_ref, &u).unwrap();
        let kappa = bundle.coeff.eval_kappa(&mu).unwrap();
        let (l2_b, en_b) = independent_relative_errors(&bundle.mesh, &kappa, &u_ref, &u);
        assert!((l2_a - l2_b).abs() <= 1e-13, "{l2_a} vs {l2_b}");
        assert!((en_a - en_b).abs() <= 1e-13, "{en_a} vs {en_b}");
    }

    #[test]
    fn sweep_rows_cover_requested_sizes_and_reject_overrun() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        let rows = sweep_basis(&bundle, 2, &[0.6]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].l, 1);
        assert_eq!(rows[1].dof, 2 * 9);
        assert!(rows.iter().all(|r| r.l2_rel.is_finite() && r.energy_rel.is_finite()));
        assert!(matches!(sweep_basis(&bundle, 3, &[0.6]), Err(Error::Config(_))));
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("l,dof,l2_rel,energy_rel\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn timing_rejects_zero_reps_and_reports_positive_times() {
        let cfg = tiny_config();
        let bundle = build_offline(&cfg, Path::new(".")).unwrap();
        assert!(matches!(
            compare_timing(&bundle, &[vec![0.6]], &[1], 0),
            Err(Error::Config(_))
        ));
        let rows = compare_timing(&bundle, &[vec![0.6]], &[1, 2], 1).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.t_online > 0.0 && r.t_direct > 0.0 && r.ratio > 0.0);
        }
        let csv = timing_csv(&rows);
        assert!(csv.starts_with("l,t_online_s,t_gmsfem_s,ratio\n"));
    }

    #[test]
    fn manifest_json_round_trips() {
        let cfg = tiny_config();
        let m = Manifest {
            format_version: FORMAT_VERSION,
            crate_version: "0.0.0".into(),
            config: cfg,
            mu_ref: vec![0.55],
            lambda_star: 0.123,
            pod_tails: vec![1e-9, 2e-9],
            gpc_residuals: vec![1e-7],
            crossing_flags: vec![CrossingFlag { node: 1, sample: 3, mode: 0, cosine: 0.2 }],
        };
        assert_eq!(Manifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn reference_run_writes_rasters() {
        let cfg = tiny_config();
        let dir = tmp("harness_ref");
        run_reference(&cfg, Path::new("."), &[vec![0.6]], dir.path()).unwrap();
        let r = Raster::load(&dir.path().join("reference_mu0.txt")).unwrap();
        assert_eq!((r.nx(), r.ny()), (17, 17));
        assert!(dir.path().join("reference_mu0.pgm").exists());
    }
}
