//! POD compression of eigenvector snapshot clouds and precomputation of the
//! reduced online operators A_hat_q, F_hat.
//!
//! POD runs per neighborhood: one orthonormal V per omega_i spanning all
//! retained eigenvector columns over the training samples. The reduced
//! operators fold the partition-of-unity weighting and the boundary-row
//! zeroing into per-neighborhood blocks B_i = D_chi R_snap V, so the online
//! stage touches nothing fine-scale.

use crate::grid::{CoarseNeighborhood, StructuredMesh};
use crate::msbasis::{LocalEigenData, PartitionOfUnity, SnapshotSpace};
use crate::pencil;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Relative singular-value cutoff separating rank from rounding noise.
const RANK_CUTOFF: f64 = 1e-10;

/// Per-neighborhood POD transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub node: usize,
    /// L_i x N_h orthonormal columns.
    pub v: DMatrix<f64>,
    /// All singular values above the rank cutoff, descending.
    pub singular_values: Vec<f64>,
    /// Retained energy fraction I(N_h).
    pub energy_fraction: f64,
    pub epsilon: f64,
}

impl PodBasis {
    pub fn n_h(&self) -> usize {
        self.v.ncols()
    }

    /// V' psi: snapshot coordinates to POD coordinates.
    pub fn project(&self, psi: &nalgebra::DVectorView<f64>) -> Vec<f64> {
        (self.v.transpose() * psi).as_slice().to_vec()
    }

    /// V xi: POD coordinates back to snapshot coordinates.
    pub fn lift(&self, xi: &[f64]) -> Vec<f64> {
        (&self.v * DMatrix::from_column_slice(xi.len(), 1, xi))
            .as_slice()
            .to_vec()
    }
}

/// Stacks eigenvector columns sample-major: all k of sample 1, then sample 2.
pub fn assemble_snapshot_matrix(eigendata: &[LocalEigenData]) -> Result<DMatrix<f64>> {
    let first = eigendata
        .first()
        .ok_or_else(|| Error::Config("no eigendata to assemble".into()))?;
    let (rows, l) = (first.psi.nrows(), first.psi.ncols());
    for e in eigendata {
        if e.node != first.node || e.psi.nrows() != rows || e.psi.ncols() != l {
            return Err(Error::Config(format!(
                "eigendata shape mismatch in neighborhood {}",
                first.node
            )));
        }
    }
    let mut s_n = DMatrix::zeros(rows, l * eigendata.len());
    for (j, e) in eigendata.iter().enumerate() {
        for k in 0..l {
            s_n.set_column(j * l + k, &e.psi.column(k));
        }
    }
    Ok(s_n)
}

fn orthonormalize(v: &mut DMatrix<f64>) {
    for _ in 0..2 {
        for j in 0..v.ncols() {
            for i in 0..j {
                let d = v.column(i).dot(&v.column(j));
                let vi = v.column(i).into_owned();
                v.column_mut(j).axpy(-d, &vi, 1.0);
            }
            let n = v.column(j).norm();
            v.column_mut(j).scale_mut(1.0 / n);
        }
    }
}

/// Correlation-matrix POD: eigendecomposes S_n' S_n, forms left vectors
/// beta_j = S_n delta_j / sigma_j, and keeps the smallest N_h whose energy
/// fraction reaches 1 - eps.
pub fn pod_reduce(node: usize, s_n: &DMatrix<f64>, eps: f64) -> Result<PodBasis> {
    let c = s_n.transpose() * s_n;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let n_v = s_n.ncols();
    let mut order: Vec<usize> = (0..n_v).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let sigma_sq: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    if sigma_sq[0] <= 0.0 {
        return Err(Error::Numerical("all-zero snapshot matrix in POD".into()));
    }
    let rank = sigma_sq
        .iter()
        .take_while(|&&s| s > sigma_sq[0] * RANK_CUTOFF * RANK_CUTOFF)
        .count();
    let total: f64 = sigma_sq[..rank].iter().sum();
    let mut n_h = rank;
    let mut cum = 0.0;
    for (j, s) in sigma_sq[..rank].iter().enumerate() {
        cum += s;
        if cum >= (1.0 - eps) * total {
            n_h = j + 1;
            break;
        }
    }
    let retained: f64 = sigma_sq[..n_h].iter().sum();
    let mut v = DMatrix::zeros(s_n.nrows(), n_h);
    for (dst, &src) in order[..n_h].iter().enumerate() {
        let beta = s_n * eig.eigenvectors.column(src) / sigma_sq[dst].sqrt();
        v.set_column(dst, &beta);
    }
    orthonormalize(&mut v);
    pencil::sign_align(&mut v);
    Ok(PodBasis {
        node,
        v,
        singular_values: sigma_sq[..rank].iter().map(|s| s.sqrt()).collect(),
        energy_fraction: retained / total,
        epsilon: eps,
    })
}

/// Training targets for one neighborhood's predictor: row j holds the POD
/// coordinates of every retained mode of sample j, mode-major.
pub fn predictor_targets(pod: &PodBasis, eigendata: &[LocalEigenData]) -> DMatrix<f64> {
    let l = eigendata.first().map_or(0, |e| e.psi.ncols());
    let n_h = pod.n_h();
    let mut t = DMatrix::zeros(eigendata.len(), l * n_h);
    for (j, e) in eigendata.iter().enumerate() {
        for k in 0..l {
            let xi = pod.v.transpose() * e.psi.column(k);
            for c in 0..n_h {
                t[(j, k * n_h + c)] = xi[c];
            }
        }
    }
    t
}

/// One neighborhood's reconstruction block in the reduced model.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodBlock {
    pub node: usize,
    /// Column offset of this block in global reduced coordinates.
    pub offset: usize,
    /// Global fine nodes of the patch, ascending (rows of `b`).
    pub patch_nodes: Vec<usize>,
    /// Patch x N_h block of chi-weighted, boundary-zeroed basis columns.
    pub b: DMatrix<f64>,
}

/// Q block sets A_hat_q plus reduced load and Dirichlet-lift couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOperators {
    pub blocks: Vec<NeighborhoodBlock>,
    /// Per q: N_tot x N_tot reduced stiffness.
    pub a_hat: Vec<DMatrix<f64>>,
    /// Reduced load B' F.
    pub f_hat: Vec<f64>,
    /// Per q: B' (A_q u_p), the boundary-lift coupling.
    pub g_hat: Vec<Vec<f64>>,
    /// Fine-node Dirichlet lift u_p.
    pub lift: Vec<f64>,
    pub n_fine: usize,
}

impl ReducedOperators {
    pub fn total_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.b.ncols())
    }

    /// Fine-node field u_p + sum_i B_i z_i from reduced coordinates.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.total_dim());
        let mut u = self.lift.clone();
        for blk in &self.blocks {
            for (r, &g) in blk.patch_nodes.iter().enumerate() {
                let mut acc = 0.0;
                for c in 0..blk.b.ncols() {
                    acc += blk.b[(r, c)] * z[blk.offset + c];
                }
                u[g] += acc;
            }
        }
        u
    }
}

fn patches_overlap(a: &crate::grid::Patch, b: &crate::grid::Patch) -> bool {
    a.ix0 <= b.ix1 && b.ix0 <= a.ix1 && a.iy0 <= b.iy1 && b.iy0 <= a.iy1
}

/// Precomputes all parameter-independent reduced operators from the offline
/// artifacts of every neighborhood.
pub fn reduce_operators(
    mesh: &StructuredMesh,
    a_q: &[CsrMatrix],
    load: &[f64],
    lift: &[f64],
    pou: &PartitionOfUnity,
    items: &[(&CoarseNeighborhood, &SnapshotSpace, &PodBasis)],
) -> Result<ReducedOperators> {
    let n_fine = mesh.fine_node_count();
    let mut blocks = Vec::with_capacity(items.len());
    let mut offset = 0;
    for (nb, snap, pod) in items {
        if nb.node != snap.node || nb.node != pod.node {
            return Err(Error::Config(format!(
                "artifact mismatch: neighborhood {} paired with snapshot {} / pod {}",
                nb.node, snap.node, pod.node
            )));
        }
        let mut b = &snap.r_snap * &pod.v;
        let chi = &pou.chi[nb.node];
        for (r, &g) in nb.all_nodes.iter().enumerate() {
            let w = if mesh.is_boundary_fine_node(g) { 0.0 } else { chi[g] };
            for c in 0..b.ncols() {
                b[(r, c)] *= w;
            }
        }
        blocks.push(NeighborhoodBlock {
            node: nb.node,
            offset,
            patch_nodes: nb.all_nodes.clone(),
            b,
        });
        offset += blocks.last().unwrap().b.ncols();
    }
    let n_tot = offset;
    let q_count = a_q.len();

    let mut a_hat = vec![DMatrix::zeros(n_tot, n_tot); q_count];
    for (q, a) in a_q.iter().enumerate() {
        for (j, (nb_j, _, _)) in items.iter().enumerate() {
            // Y = A_q B_j on full fine nodes.
            let blk_j = &blocks[j];
            let mut y = DMatrix::zeros(n_fine, blk_j.b.ncols());
            for (r, &g) in blk_j.patch_nodes.iter().enumerate() {
                for c in 0..blk_j.b.ncols() {
                    y[(g, c)] = blk_j.b[(r, c)];
                }
            }
            let y = {
                let mut out = DMatrix::zeros(n_fine, blk_j.b.ncols());
                for c in 0..blk_j.b.ncols() {
                    let col = a.matvec(y.column(c).as_slice());
                    for (r, v) in col.iter().enumerate() {
                        out[(r, c)] = *v;
                    }
                }
                out
            };
            for (i, (nb_i, _, _)) in items.iter().enumerate().take(j + 1) {
                if !patches_overlap(&nb_i.patch, &nb_j.patch) {
                    continue;
                }
                let blk_i = &blocks[i];
                let mut gathered = DMatrix::zeros(blk_i.patch_nodes.len(), y.ncols());
                for (r, &g) in blk_i.patch_nodes.iter().enumerate() {
                    for c in 0..y.ncols() {
                        gathered[(r, c)] = y[(g, c)];
                    }
                }
                let block = blk_i.b.transpose() * gathered;
                for bi in 0..block.nrows() {
                    for bj in 0..block.ncols() {
                        a_hat[q][(blk_i.offset + bi, blk_j.offset + bj)] = block[(bi, bj)];
                        a_hat[q][(blk_j.offset + bj, blk_i.offset + bi)] = block[(bi, bj)];
                    }
                }
            }
        }
    }

    let mut f_hat = vec![0.0; n_tot];
    for blk in &blocks {
        let gathered: Vec<f64> = blk.patch_nodes.iter().map(|&g| load[g]).collect();
        let reduced = blk.b.transpose() * DMatrix::from_column_slice(gathered.len(), 1, &gathered);
        f_hat[blk.offset..blk.offset + reduced.nrows()].copy_from_slice(reduced.as_slice());
    }

    let mut g_hat = Vec::with_capacity(q_count);
    for a in a_q {
        let t = a.matvec(lift);
        let mut g_vec = vec![0.0; n_tot];
        for blk in &blocks {
            let gathered: Vec<f64> = blk.patch_nodes.iter().map(|&g| t[g]).collect();
            let reduced =
                blk.b.transpose() * DMatrix::from_column_slice(gathered.len(), 1, &gathered);
            g_vec[blk.offset..blk.offset + reduced.nrows()].copy_from_slice(reduced.as_slice());
        }
        g_hat.push(g_vec);
    }

    Ok(ReducedOperators {
        blocks,
        a_hat,
        f_hat,
        g_hat,
        lift: lift.to_vec(),
        n_fine,
    })
}
