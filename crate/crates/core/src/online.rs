//! Online stage: predictors fill the coarse space at a new parameter, the
//! precomputed reduced operators assemble the small dense system, and block
//! reconstruction lifts the coarse solution to the fine grid.
//!
//! Nothing here touches fine-scale assembly or eigensolves; the counters
//! stay flat across `solve_online`. A direct recompute path is provided as
//! the reference the online method is benchmarked against.

use crate::coefficient::AffineCoefficient;
use crate::fem::ProblemOperators;
use crate::grid::StructuredMesh;
use crate::msbasis;
use crate::predict::Predictor;
use crate::rom::{self, PodBasis, ReducedOperators};
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use std::time::Instant;

/// Predictor-built coarse space: per-neighborhood coordinate blocks Xi_i,
/// one column per retained mode.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSpace {
    /// Per neighborhood: N_h x l matrix of predicted POD coordinates.
    pub xi: Vec<DMatrix<f64>>,
    pub l: usize,
}

impl OnlineSpace {
    pub fn n_columns(&self) -> usize {
        self.xi.len() * self.l
    }
}

/// Evaluates every neighborhood predictor at mu. Predictors trained with
/// l_train modes serve any l <= l_train by truncating the mode blocks.
pub fn build_online_space(
    red: &ReducedOperators,
    predictors: &[Predictor],
    l: usize,
    mu: &[f64],
) -> Result<OnlineSpace> {
    if predictors.len() != red.blocks.len() {
        return Err(Error::Config(format!(
            "{} predictors for {} neighborhoods",
            predictors.len(),
            red.blocks.len()
        )));
    }
    let mut xi = Vec::with_capacity(predictors.len());
    for (blk, pred) in red.blocks.iter().zip(predictors) {
        let n_h = blk.b.ncols();
        let n_out = pred.n_outputs();
        if n_out % n_h != 0 {
            return Err(Error::Config(format!(
                "predictor for neighborhood {} emits {} values, not a multiple of N_h = {}",
                blk.node, n_out, n_h
            )));
        }
        let l_train = n_out / n_h;
        if l > l_train {
            return Err(Error::Config(format!(
                "requested {l} modes but neighborhood {} was trained with {l_train}",
                blk.node
            )));
        }
        let out = pred.predict(mu);
        let mut m = DMatrix::zeros(n_h, l);
        for k in 0..l {
            for c in 0..n_h {
                m[(c, k)] = out[k * n_h + c];
            }
        }
        for k in 0..l {
            if m.column(k).norm() <= 1e-14 {
                return Err(Error::Numerical(format!(
                    "predicted mode {k} of neighborhood {} is degenerate",
                    blk.node
                )));
            }
        }
        xi.push(m);
    }
    Ok(OnlineSpace { xi, l })
}

fn solve_dense_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c.solve(&b));
    }
    let jit = 1e-12 * a.trace();
    let mut aj = a;
    for i in 0..aj.nrows() {
        aj[(i, i)] += jit;
    }
    Cholesky::new(aj)
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::Numerical("online coarse system is not positive definite".into()))
}

/// Online solve output with its stage timings in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSolution {
    /// Reconstructed fine-node field.
    pub u: Vec<f64>,
    /// Coarse coefficients, one per online column.
    pub coarse: Vec<f64>,
    pub n_columns: usize,
    pub t_predict: f64,
    pub t_assemble: f64,
    pub t_solve: f64,
}

/// Full online pass at mu: predict, assemble the Theta-weighted reduced
/// system, solve, reconstruct. Takes the Theta weights directly so the
/// caller can run from artifacts alone, with no coefficient fields at hand.
pub fn solve_online(
    red: &ReducedOperators,
    predictors: &[Predictor],
    theta: &[f64],
    l: usize,
    mu: &[f64],
) -> Result<OnlineSolution> {
    if theta.len() != red.a_hat.len() {
        return Err(Error::Config(format!(
            "{} theta weights for {} operator components",
            theta.len(),
            red.a_hat.len()
        )));
    }
    let t0 = Instant::now();
    let space = build_online_space(red, predictors, l, mu)?;
    let t_predict = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let n_tot = red.total_dim();
    let n_c = space.n_columns();
    let mut a_theta = DMatrix::zeros(n_tot, n_tot);
    for (t, a) in theta.iter().zip(&red.a_hat) {
        a_theta += a * *t;
    }
    let mut rhat = DVector::from_column_slice(&red.f_hat);
    for (t, g) in theta.iter().zip(&red.g_hat) {
        for (r, v) in g.iter().enumerate() {
            rhat[r] -= t * v;
        }
    }
    let mut a_on = DMatrix::zeros(n_c, n_c);
    let mut f_on = DVector::zeros(n_c);
    for (i, blk_i) in red.blocks.iter().enumerate() {
        let ni = blk_i.b.ncols();
        for (j, blk_j) in red.blocks.iter().enumerate() {
            let nj = blk_j.b.ncols();
            let sub = a_theta.view((blk_i.offset, blk_j.offset), (ni, nj));
            let m = space.xi[i].transpose() * (sub * &space.xi[j]);
            for r in 0..space.l {
                for c in 0..space.l {
                    a_on[(i * space.l + r, j * space.l + c)] = m[(r, c)];
                }
            }
        }
        let ri = rhat.rows(blk_i.offset, ni);
        let fi = space.xi[i].transpose() * ri;
        for r in 0..space.l {
            f_on[i * space.l + r] = fi[r];
        }
    }
    let a_on = (&a_on + a_on.transpose()) * 0.5;
    let t_assemble = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let y = solve_dense_spd(a_on, f_on)?;
    let mut z = vec![0.0; n_tot];
    for (i, blk) in red.blocks.iter().enumerate() {
        let yi = y.rows(i * space.l, space.l);
        let zi = &space.xi[i] * yi;
        z[blk.offset..blk.offset + blk.b.ncols()].copy_from_slice(zi.as_slice());
    }
    let u = red.reconstruct(&z);
    let t_solve = t2.elapsed().as_secs_f64();

    Ok(OnlineSolution {
        u,
        coarse: y.as_slice().to_vec(),
        n_columns: n_c,
        t_predict,
        t_assemble,
        t_solve,
    })
}

/// Direct multiscale solution recomputed from scratch at mu, with timings.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectSolution {
    pub u: Vec<f64>,
    /// Snapshot, spectral, and reduction work.
    pub t_basis: f64,
    /// Coarse assembly and solve.
    pub t_solve: f64,
}

/// Reference method: rebuilds snapshots, partition of unity, and spectral
/// modes at mu itself, then solves in the resulting l-mode coarse space.
pub fn gmsfem_direct_solve(
    mesh: &StructuredMesh,
    ops: &ProblemOperators,
    coeff: &AffineCoefficient,
    mu: &[f64],
    l: usize,
    lift: &[f64],
) -> Result<DirectSolution> {
    let t0 = Instant::now();
    let theta = coeff.theta_vec(mu)?;
    let a_mu = ops.stiffness_at(coeff, mu)?;
    let pou = msbasis::build_pou(mesh, &a_mu, mu)?;
    let mut nbs = Vec::with_capacity(mesh.coarse_node_count());
    let mut snaps = Vec::with_capacity(mesh.coarse_node_count());
    let mut pods = Vec::with_capacity(mesh.coarse_node_count());
    for i in 0..mesh.coarse_node_count() {
        let nb = mesh.neighborhood(i);
        let snap = msbasis::build_snapshots(&a_mu, &nb)?;
        let local = msbasis::reduce_local_operators(mesh, coeff, &snap, &nb)?;
        let eig = msbasis::local_spectral(&local, &theta, &theta, mu, l)?;
        pods.push(PodBasis {
            node: i,
            v: eig.psi.clone(),
            singular_values: Vec::new(),
            energy_fraction: 1.0,
            epsilon: 0.0,
        });
        nbs.push(nb);
        snaps.push(snap);
    }
    let items: Vec<_> = (0..nbs.len()).map(|i| (&nbs[i], &snaps[i], &pods[i])).collect();
    let red = rom::reduce_operators(mesh, &ops.a_q, &ops.load, lift, &pou, &items)?;
    let t_basis = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let n_tot = red.total_dim();
    let mut a_theta = DMatrix::zeros(n_tot, n_tot);
    for (t, a) in theta.iter().zip(&red.a_hat) {
        a_theta += a * *t;
    }
    let mut rhs = DVector::from_column_slice(&red.f_hat);
    for (t, g) in theta.iter().zip(&red.g_hat) {
        for (r, v) in g.iter().enumerate() {
            rhs[r] -= t * v;
        }
    }
    let y = solve_dense_spd(a_theta, rhs)?;
    let u = red.reconstruct(y.as_slice());
    let t_solve = t1.elapsed().as_secs_f64();
    Ok(DirectSolution { u, t_basis, t_solve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{
        component_median, synth_contrast_field, AffineCoefficient, ThetaDescriptor, ThetaKind,
    };
    use crate::counters;
    use crate::fem;
    use crate::grid::build_mesh;
    use crate::predict;
    use crate::raster::Raster;
    use crate::rom::pod_reduce;
    use approx::assert_abs_diff_eq;

    struct Fixture {
        mesh: crate::grid::StructuredMesh,
        coeff: AffineCoefficient,
        ops: ProblemOperators,
        lift: Vec<f64>,
        red: ReducedOperators,
        predictors: Vec<Predictor>,
    }

    impl Fixture {
        fn theta(&self, mu: &[f64]) -> Vec<f64> {
            self.coeff.theta_vec(mu).unwrap()
        }
    }

    fn fixture(
        n: usize,
        coarse: usize,
        field: Raster,
        mus: &[f64],
        l: usize,
        f: &dyn Fn(f64, f64) -> f64,
        p_bc: &dyn Fn(f64, f64) -> f64,
    ) -> Fixture {
        let mesh = build_mesh(n, n, coarse, coarse).unwrap();
        let coeff = AffineCoefficient::new(
            vec![(ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 }, field)],
            1,
        )
        .unwrap();
        let ops = ProblemOperators::build(&mesh, &coeff, f).unwrap();
        let samples: Vec<Vec<f64>> = mus.iter().map(|&m| vec![m]).collect();
        let mu_ref = component_median(&samples);
        let a_ref = ops.stiffness_at(&coeff, &mu_ref).unwrap();
        let pou = msbasis::build_pou(&mesh, &a_ref, &mu_ref).unwrap();
        let theta_ref = coeff.theta_vec(&mu_ref).unwrap();
        let mut nbs = Vec::new();
        let mut snaps = Vec::new();
        let mut pods = Vec::new();
        let mut predictors = Vec::new();
        for i in 0..mesh.coarse_node_count() {
            let nb = mesh.neighborhood(i);
            let snap = msbasis::build_snapshots(&a_ref, &nb).unwrap();
            let local = msbasis::reduce_local_operators(&mesh, &coeff, &snap, &nb).unwrap();
            let data: Vec<_> = samples
                .iter()
                .map(|m| {
                    let theta = coeff.theta_vec(m).unwrap();
                    msbasis::local_spectral(&local, &theta, &theta_ref, m, l).unwrap()
                })
                .collect();
            let s_n = rom::assemble_snapshot_matrix(&data).unwrap();
            let pod = pod_reduce(i, &s_n, 1e-6).unwrap();
            let targets = rom::predictor_targets(&pod, &data);
            let p = if samples.len() > 3 {
                predict::fit_gpc(1, 2, &samples, &targets).unwrap()
            } else {
                predict::fit_gpc(1, 0, &samples, &targets).unwrap()
            };
            predictors.push(Predictor::Gpc(p));
            pods.push(pod);
            nbs.push(nb);
            snaps.push(snap);
        }
        let lift = fem::dirichlet_lift(&mesh, p_bc);
        let items: Vec<_> = (0..nbs.len()).map(|i| (&nbs[i], &snaps[i], &pods[i])).collect();
        let red = rom::reduce_operators(&mesh, &ops.a_q, &ops.load, &lift, &pou, &items).unwrap();
        Fixture { mesh, coeff, ops, lift, red, predictors }
    }

    #[test]
    fn online_matches_direct_for_single_term() {
        // One affine term: the spectral spaces are parameter independent, so
        // predictor and recompute must land in the same coarse space. The
        // contrast field keeps the local spectra simple, which pins each
        // eigenvector up to sign.
        let fx = fixture(
            24,
            3,
            {
                let mesh = build_mesh(24, 24, 3, 3).unwrap();
                synth_contrast_field(&mesh, 12, 20.0).unwrap()
            },
            &[0.3, 0.55, 0.8, 1.1, 1.45, 1.7],
            2,
            &|x, y| (x + y).cos(),
            &|x, _| 0.25 * x,
        );
        let mu = [0.92];
        let on = solve_online(&fx.red, &fx.predictors, &fx.theta(&mu), 2, &mu).unwrap();
        let direct =
            gmsfem_direct_solve(&fx.mesh, &fx.ops, &fx.coeff, &mu, 2, &fx.lift).unwrap();
        let scale = direct.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = on
            .u
            .iter()
            .zip(&direct.u)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-6 * scale, "online/direct drift {diff} vs scale {scale}");
    }

    #[test]
    fn zero_load_zero_boundary_gives_zero() {
        let fx = fixture(
            16,
            2,
            Raster::constant(16, 16, 1.0),
            &[0.4, 0.9, 1.5],
            1,
            &|_, _| 0.0,
            &|_, _| 0.0,
        );
        let on = solve_online(&fx.red, &fx.predictors, &fx.theta(&[0.7]), 1, &[0.7]).unwrap();
        let peak = on.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 1e-12, "nonzero field {peak}");
    }

    #[test]
    fn column_counts_match_mode_budget() {
        let fx = fixture(
            50,
            5,
            Raster::constant(50, 50, 1.0),
            &[0.5, 1.0],
            5,
            &|_, _| 1.0,
            &|_, _| 0.0,
        );
        let on1 = solve_online(&fx.red, &fx.predictors, &fx.theta(&[0.8]), 1, &[0.8]).unwrap();
        assert_eq!(on1.n_columns, 36);
        let on5 = solve_online(&fx.red, &fx.predictors, &fx.theta(&[0.8]), 5, &[0.8]).unwrap();
        assert_eq!(on5.n_columns, 180);
    }

    #[test]
    fn constant_kappa_one_mode_is_galerkin_on_cropped_hats() {
        // For constant kappa the partition of unity is the exact bilinear
        // hats and the first local mode is constant, so the one-mode online
        // space equals span of the hats with their boundary rows zeroed.
        let n = 40;
        let coarse = 4;
        let fx = fixture(
            n,
            coarse,
            Raster::constant(n, n, 1.0),
            &[crate::coefficient::MU_UNIT, 0.5, 1.3],
            1,
            &|_, _| 1.0,
            &|_, _| 0.0,
        );
        let mu = [crate::coefficient::MU_UNIT];
        let on = solve_online(&fx.red, &fx.predictors, &fx.theta(&mu), 1, &mu).unwrap();
        // Independent oracle: dense Galerkin solve on analytically built
        // cropped hat columns.
        let m = (n / coarse) as f64;
        let hat1d = |i: usize, c: usize| (1.0 - (i as f64 / m - c as f64).abs()).max(0.0);
        let n_fine = fx.mesh.fine_node_count();
        let n_cols = (coarse + 1) * (coarse + 1);
        let mut c_full = DMatrix::zeros(n_fine, n_cols);
        for cy in 0..=coarse {
            for cx in 0..=coarse {
                let col = cy * (coarse + 1) + cx;
                for iy in 0..=n {
                    for ix in 0..=n {
                        let g = fx.mesh.fine_node_index(ix, iy);
                        if !fx.mesh.is_boundary_fine_node(g) {
                            c_full[(g, col)] = hat1d(ix, cx) * hat1d(iy, cy);
                        }
                    }
                }
            }
        }
        let a1 = &fx.ops.a_q[0];
        let a_c = c_full.transpose() * a1.matmul_dense(&c_full);
        let f_c = c_full.transpose() * DVector::from_column_slice(&fx.ops.load);
        let y = Cholesky::new(a_c).unwrap().solve(&f_c);
        let u_oracle = &c_full * y;
        let scale = u_oracle.amax();
        for g in 0..n_fine {
            assert_abs_diff_eq!(on.u[g], u_oracle[g], epsilon = 1e-8 * scale);
        }
        // The cropped-hat space contains the interior coarse Q1 space, so by
        // Galerkin optimality the online energy error cannot exceed the
        // interpolated coarse FEM energy error.
        let fine = fem::solve_fine(&fx.mesh, &fx.ops, &fx.coeff, &mu, &|_, _| 0.0).unwrap();
        let cmesh = build_mesh(coarse, coarse, coarse, coarse).unwrap();
        let ccoeff = AffineCoefficient::new(
            vec![(
                ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 },
                Raster::constant(coarse, coarse, 1.0),
            )],
            1,
        )
        .unwrap();
        let cops = ProblemOperators::build(&cmesh, &ccoeff, &|_, _| 1.0).unwrap();
        let cfem = fem::solve_fine(&cmesh, &cops, &ccoeff, &mu, &|_, _| 0.0).unwrap();
        let mut coarse_interp = vec![0.0; n_fine];
        for iy in 0..=n {
            for ix in 0..=n {
                let g = fx.mesh.fine_node_index(ix, iy);
                for cy in 0..=coarse {
                    for cx in 0..=coarse {
                        let w = hat1d(ix, cx) * hat1d(iy, cy);
                        if w > 0.0 {
                            coarse_interp[g] +=
                                w * cfem.values[cmesh.fine_node_index(cx, cy)];
                        }
                    }
                }
            }
        }
        let (_, en_online) =
            fem::relative_errors(&fx.ops, &fx.coeff, &mu, &fine.values, &on.u).unwrap();
        let (_, en_coarse) =
            fem::relative_errors(&fx.ops, &fx.coeff, &mu, &fine.values, &coarse_interp)
                .unwrap();
        assert!(
            en_online <= en_coarse + 1e-12,
            "online energy error {en_online} exceeds coarse FEM {en_coarse}"
        );
    }

    #[test]
    fn energy_error_decreases_with_more_modes() {
        let n = 24;
        let mesh = build_mesh(n, n, 3, 3).unwrap();
        let field = synth_contrast_field(&mesh, 4, 100.0).unwrap();
        let coeff = AffineCoefficient::new(
            vec![(ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 }, field)],
            1,
        )
        .unwrap();
        let ops = ProblemOperators::build(&mesh, &coeff, &|_, _| 1.0).unwrap();
        let mu = [0.85];
        let lift = vec![0.0; mesh.fine_node_count()];
        let fine = fem::solve_fine(&mesh, &ops, &coeff, &mu, &|_, _| 0.0).unwrap();
        let mut last = f64::INFINITY;
        for l in 1..=4 {
            let d = gmsfem_direct_solve(&mesh, &ops, &coeff, &mu, l, &lift).unwrap();
            let (_, energy) =
                fem::relative_errors(&ops, &coeff, &mu, &fine.values, &d.u).unwrap();
            assert!(
                energy <= last + 1e-12,
                "energy error grew at l = {l}: {energy} > {last}"
            );
            last = energy;
        }
        assert!(last < 0.5, "four modes should capture most of the energy, err {last}");
    }

    #[test]
    fn online_solution_is_galerkin_orthogonal() {
        let fx = fixture(
            20,
            2,
            {
                let mesh = build_mesh(20, 20, 2, 2).unwrap();
                synth_contrast_field(&mesh, 7, 50.0).unwrap()
            },
            &[0.4, 0.7, 1.0, 1.3, 1.6],
            2,
            &|_, _| 1.0,
            &|x, y| x * y,
        );
        let mu = [0.95];
        let on = solve_online(&fx.red, &fx.predictors, &fx.theta(&mu), 2, &mu).unwrap();
        let a_mu = fx.ops.stiffness_at(&fx.coeff, &mu).unwrap();
        let au = a_mu.matvec(&on.u);
        // Residual of the fine variational problem tested against every
        // online basis column.
        let space = build_online_space(&fx.red, &fx.predictors, 2, &mu).unwrap();
        let mut peak: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (blk, xi) in fx.red.blocks.iter().zip(&space.xi) {
            let cols = &blk.b * xi;
            for k in 0..cols.ncols() {
                let mut resid = 0.0;
                let mut mag = 0.0;
                for (r, &g) in blk.patch_nodes.iter().enumerate() {
                    resid += cols[(r, k)] * (fx.ops.load[g] - au[g]);
                    mag += cols[(r, k)].abs() * (fx.ops.load[g].abs() + au[g].abs());
                }
                peak = peak.max(resid.abs());
                scale = scale.max(mag);
            }
        }
        assert!(peak <= 1e-9 * scale.max(1.0), "residual {peak} vs scale {scale}");
    }

    #[test]
    fn online_touches_no_fine_machinery() {
        let fx = fixture(
            16,
            2,
            Raster::constant(16, 16, 1.0),
            &[0.5, 0.9, 1.4],
            1,
            &|_, _| 1.0,
            &|_, _| 0.0,
        );
        let before = counters::snapshot();
        for mu in [[0.6], [1.1], [1.9]] {
            solve_online(&fx.red, &fx.predictors, &fx.theta(&mu), 1, &mu).unwrap();
        }
        let delta = counters::snapshot().delta_since(&before);
        assert_eq!(delta.eigensolves, 0);
        assert_eq!(delta.fine_assemblies, 0);
        assert_eq!(delta.fine_solves, 0);
        assert_eq!(delta.local_solves, 0);
    }

    #[test]
    fn mode_budget_overrun_is_config_error() {
        let fx = fixture(
            16,
            2,
            Raster::constant(16, 16, 1.0),
            &[0.5, 0.9, 1.4],
            2,
            &|_, _| 1.0,
            &|_, _| 0.0,
        );
        assert!(matches!(
            solve_online(&fx.red, &fx.predictors, &fx.theta(&[0.7]), 3, &[0.7]),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn degenerate_predicted_column_is_reported() {
        let fx = fixture(
            16,
            2,
            Raster::constant(16, 16, 1.0),
            &[0.5, 0.9, 1.4],
            1,
            &|_, _| 1.0,
            &|_, _| 0.0,
        );
        let mut preds = fx.predictors.clone();
        if let Predictor::Gpc(m) = &mut preds[0] {
            m.coeffs.fill(0.0);
        }
        match solve_online(&fx.red, &preds, &fx.theta(&[0.7]), 1, &[0.7]) {
            Err(crate::Error::Numerical(msg)) => {
                assert!(msg.contains("degenerate"), "msg: {msg}")
            }
            other => panic!("expected degenerate-column error, got {other:?}"),
        }
    }
}
