//! Offline local machinery: harmonic-extension snapshot spaces, partition of
//! unity, local generalized spectral problems, and offline multiscale basis
//! assembly.
//!
//! All per-neighborhood data lives in the neighborhood's local coordinates:
//! row r of a snapshot matrix corresponds to `all_nodes[r]` of its
//! [`CoarseNeighborhood`].

use crate::coefficient::AffineCoefficient;
use crate::counters;
use crate::fem;
use crate::grid::{CoarseNeighborhood, StructuredMesh};
use crate::pencil;
use crate::sparse::{BandedCholesky, CsrMatrix};
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Harmonic-extension snapshot space of one neighborhood.
///
/// Column j extends the discrete delta at boundary node `J_h[j]`: value 1
/// there, 0 at the other boundary nodes, kappa-harmonic inside.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSpace {
    pub node: usize,
    /// all_nodes.len() x L_i coefficient matrix.
    pub r_snap: DMatrix<f64>,
}

/// Partition-of-unity functions, one full fine-node vector per coarse node,
/// built from cell problems at the reference parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    pub chi: Vec<Vec<f64>>,
    pub mu_ref: Vec<f64>,
}

/// Parameter-independent congruences R_snap' A_q R_snap and R_snap' S_q
/// R_snap of one neighborhood; Theta-weighting happens per parameter.
#[derive(Debug, Clone)]
pub struct LocalOperators {
    pub node: usize,
    pub a_off_q: Vec<DMatrix<f64>>,
    pub s_off_q: Vec<DMatrix<f64>>,
}

/// Retained eigenpairs of one (neighborhood, parameter) spectral problem.
///
/// Columns are in snapshot coordinates, sign-aligned, and normalized to unit
/// S-norm at the recorded reference Theta weights, which keeps the map
/// mu -> Psi constant for single-term coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEigenData {
    pub node: usize,
    pub mu: Vec<f64>,
    /// Ascending retained eigenvalues, length l.
    pub lambdas: Vec<f64>,
    /// Gap witness lambda_{l+1}.
    pub lambda_next: f64,
    /// L_i x l eigenvector columns in snapshot coordinates.
    pub psi: DMatrix<f64>,
    /// Theta weights of the normalization reference parameter.
    pub theta_norm: Vec<f64>,
}

/// Solves the local Dirichlet problems for every boundary delta of the
/// neighborhood on the restricted stiffness block of A(mu).
pub fn build_snapshots(a_mu: &CsrMatrix, nb: &CoarseNeighborhood) -> Result<SnapshotSpace> {
    let a_patch = a_mu.restrict(&nb.all_nodes);
    let a_ii = a_patch.restrict(&nb.interior_local);
    let n_patch = nb.all_nodes.len();
    let n_int = nb.interior_local.len();
    let l_count = nb.boundary_local.len();
    let mut bpos = vec![usize::MAX; n_patch];
    for (col, &lp) in nb.boundary_local.iter().enumerate() {
        bpos[lp] = col;
    }
    let mut ipos = vec![usize::MAX; n_patch];
    for (row, &lp) in nb.interior_local.iter().enumerate() {
        ipos[lp] = row;
    }
    // rhs of column j collects -A[interior, boundary_j].
    let mut rhs = vec![vec![0.0f64; n_int]; l_count];
    for (row, &lp) in nb.interior_local.iter().enumerate() {
        for (lj, v) in a_patch.row(lp) {
            if bpos[lj] != usize::MAX {
                rhs[bpos[lj]][row] -= v;
            }
        }
    }
    let factor = BandedCholesky::factor(&a_ii)
        .map_err(|e| Error::Numerical(format!("snapshot solve, neighborhood {}: {e}", nb.node)))?;
    let mut r_snap = DMatrix::zeros(n_patch, l_count);
    for (j, b) in rhs.iter().enumerate() {
        counters::record_local_solve();
        let x = factor.solve(b);
        r_snap[(nb.boundary_local[j], j)] = 1.0;
        for (row, &lp) in nb.interior_local.iter().enumerate() {
            r_snap[(lp, j)] = x[row];
        }
    }
    Ok(SnapshotSpace { node: nb.node, r_snap })
}

/// Builds chi_i from per-cell problems with bilinear-hat boundary data at the
/// reference parameter, then normalizes pointwise so the sum is exactly 1.
pub fn build_pou(
    mesh: &StructuredMesh,
    a_ref: &CsrMatrix,
    mu_ref: &[f64],
) -> Result<PartitionOfUnity> {
    let n_fine = mesh.fine_node_count();
    let mut chi = vec![vec![0.0f64; n_fine]; mesh.coarse_node_count()];
    let (mx, my) = (mesh.refine_x() as f64, mesh.refine_y() as f64);
    for cy in 0..mesh.coarse_ny() {
        for cx in 0..mesh.coarse_nx() {
            let patch = mesh.coarse_cell_patch(cx, cy);
            let nodes = patch.nodes(mesh);
            let a_cell = a_ref.restrict(&nodes);
            let interior = patch.interior_nodes(mesh);
            let interior_local: Vec<usize> =
                interior.iter().map(|g| nodes.binary_search(g).unwrap()).collect();
            let a_ii = a_cell.restrict(&interior_local);
            let factor = BandedCholesky::factor(&a_ii).map_err(|e| {
                Error::Numerical(format!("cell problem ({cx},{cy}): {e}"))
            })?;
            let mut is_interior = vec![false; nodes.len()];
            for &lp in &interior_local {
                is_interior[lp] = true;
            }
            // Bilinear hat weights of the 4 corners at a patch node.
            let corner_weights = |g: usize| -> [f64; 4] {
                let (ix, iy) = mesh.fine_node_ij(g);
                let s = (ix - patch.ix0) as f64 / mx;
                let t = (iy - patch.iy0) as f64 / my;
                [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t]
            };
            for (c, &corner) in mesh.coarse_cell_corners(cx, cy).iter().enumerate() {
                let mut rhs = vec![0.0f64; interior_local.len()];
                for (row, &lp) in interior_local.iter().enumerate() {
                    for (lj, v) in a_cell.row(lp) {
                        if !is_interior[lj] {
                            rhs[row] -= v * corner_weights(nodes[lj])[c];
                        }
                    }
                }
                counters::record_local_solve();
                let x = factor.solve(&rhs);
                for (lp, &g) in nodes.iter().enumerate() {
                    chi[corner][g] = if is_interior[lp] {
                        x[interior_local.binary_search(&lp).unwrap()]
                    } else {
                        corner_weights(g)[c]
                    };
                }
            }
        }
    }
    // The raw sum is 1 up to solver rounding; make it exact.
    for n in 0..n_fine {
        let sum: f64 = chi.iter().map(|c| c[n]).sum();
        debug_assert!((sum - 1.0).abs() < 1e-9, "PoU sum {sum} at node {n}");
        for c in chi.iter_mut() {
            c[n] /= sum;
        }
    }
    Ok(PartitionOfUnity { chi, mu_ref: mu_ref.to_vec() })
}

/// Assembles each operator component over the neighborhood's cells only (the
/// energies of the local forms) and lifts them to snapshot coordinates.
pub fn reduce_local_operators(
    mesh: &StructuredMesh,
    coeff: &AffineCoefficient,
    snap: &SnapshotSpace,
    nb: &CoarseNeighborhood,
) -> Result<LocalOperators> {
    let congruence = |m: &CsrMatrix| {
        let w = m.matmul_dense(&snap.r_snap);
        let g = snap.r_snap.transpose() * w;
        (&g + g.transpose()) * 0.5
    };
    let mut a_off_q = Vec::with_capacity(coeff.q());
    let mut s_off_q = Vec::with_capacity(coeff.q());
    for q in 0..coeff.q() {
        let raster = coeff.term_raster(q);
        let a_loc = fem::assemble_patch_stiffness(mesh, raster, &nb.patch)?;
        let s_loc =
            fem::assemble_patch_weighted_mass(mesh, raster, mesh.coarse_h(), &nb.patch)?;
        a_off_q.push(congruence(&a_loc));
        s_off_q.push(congruence(&s_loc));
    }
    Ok(LocalOperators { node: snap.node, a_off_q, s_off_q })
}

fn weighted_sum(mats: &[DMatrix<f64>], theta: &[f64]) -> DMatrix<f64> {
    let mut acc = mats[0].clone() * theta[0];
    for (m, &t) in mats.iter().zip(theta).skip(1) {
        acc += m * t;
    }
    acc
}

/// Solves the neighborhood spectral problem at Theta weights `theta`,
/// keeping the l smallest eigenpairs plus the gap witness. Columns are
/// rescaled to unit S-norm at `theta_norm` and sign-aligned.
pub fn local_spectral(
    ops: &LocalOperators,
    theta: &[f64],
    theta_norm: &[f64],
    mu: &[f64],
    l: usize,
) -> Result<LocalEigenData> {
    let l_count = ops.a_off_q[0].nrows();
    if l + 1 > l_count {
        return Err(Error::Config(format!(
            "need l + 1 = {} eigenpairs but the snapshot space has only {l_count} columns",
            l + 1
        )));
    }
    let a = weighted_sum(&ops.a_off_q, theta);
    let s = weighted_sum(&ops.s_off_q, theta);
    let pairs = pencil::solve_gep(&a, &s)
        .map_err(|e| Error::Numerical(format!("spectral problem, neighborhood {}: {e}", ops.node)))?;
    let s_norm = weighted_sum(&ops.s_off_q, theta_norm);
    let mut psi = DMatrix::zeros(l_count, l);
    for k in 0..l {
        let v = pairs.vectors.column(k);
        let s_v = &s_norm * v;
        let scale = 1.0 / v.dot(&s_v).sqrt();
        psi.set_column(k, &(v * scale));
    }
    pencil::sign_align(&mut psi);
    Ok(LocalEigenData {
        node: ops.node,
        mu: mu.to_vec(),
        lambdas: pairs.values[..l].to_vec(),
        lambda_next: pairs.values[l],
        psi,
        theta_norm: theta_norm.to_vec(),
    })
}

/// Lifts eigenvectors to fine nodes and multiplies nodally by chi_i:
/// psi_k = chi_i .* (R_snap Psi_k), zeroed on the domain boundary.
pub fn offline_basis(
    mesh: &StructuredMesh,
    chi_i: &[f64],
    snap: &SnapshotSpace,
    nb: &CoarseNeighborhood,
    eig: &LocalEigenData,
) -> Vec<Vec<f64>> {
    let phi = &snap.r_snap * &eig.psi;
    (0..eig.psi.ncols())
        .map(|k| {
            let mut v = vec![0.0; mesh.fine_node_count()];
            for (lp, &g) in nb.all_nodes.iter().enumerate() {
                if !mesh.is_boundary_fine_node(g) {
                    v[g] = chi_i[g] * phi[(lp, k)];
                }
            }
            v
        })
        .collect()
}

/// Minimum gap witness over a set of eigendata records.
pub fn spectral_gap<'a>(eigendata: impl IntoIterator<Item = &'a LocalEigenData>) -> f64 {
    eigendata
        .into_iter()
        .map(|e| e.lambda_next)
        .fold(f64::INFINITY, f64::min)
}
