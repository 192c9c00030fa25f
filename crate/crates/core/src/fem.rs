//! Fine-scale conforming FEM on the structured grid: bilinear (Q1) elements
//! on rectangles, parameter-independent operator components A_q and M_q,
//! patch-local assembly for the neighborhood energies, load assembly,
//! Dirichlet handling, fine reference solve, and the weighted error norms.
//!
//! kappa_q is constant per fine cell, so every element integral below is
//! exact. The affine identity A(mu) = sum_q Theta_q(mu) A_q then holds
//! entrywise to rounding error.

use crate::coefficient::AffineCoefficient;
use crate::counters;
use crate::grid::StructuredMesh;
use crate::raster::Raster;
use crate::sparse::{self, CsrMatrix};
use crate::{Error, Result};

/// Q1 stiffness element matrix for a hx x hy cell with constant kappa,
/// node order LL, LR, UR, UL.
pub fn q1_stiffness(hx: f64, hy: f64, kappa: f64) -> [[f64; 4]; 4] {
    const KX: [[f64; 4]; 4] = [
        [2.0, -2.0, -1.0, 1.0],
        [-2.0, 2.0, 1.0, -1.0],
        [-1.0, 1.0, 2.0, -2.0],
        [1.0, -1.0, -2.0, 2.0],
    ];
    const KY: [[f64; 4]; 4] = [
        [2.0, 1.0, -1.0, -2.0],
        [1.0, 2.0, -2.0, -1.0],
        [-1.0, -2.0, 2.0, 1.0],
        [-2.0, -1.0, 1.0, 2.0],
    ];
    let cx = kappa * hy / (6.0 * hx);
    let cy = kappa * hx / (6.0 * hy);
    let mut k = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = cx * KX[a][b] + cy * KY[a][b];
        }
    }
    k
}

/// Q1 mass element matrix with constant weight, node order LL, LR, UR, UL.
pub fn q1_mass(hx: f64, hy: f64, weight: f64) -> [[f64; 4]; 4] {
    const M: [[f64; 4]; 4] = [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ];
    let c = weight * hx * hy / 36.0;
    let mut m = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            m[a][b] = c * M[a][b];
        }
    }
    m
}

fn check_shape(mesh: &StructuredMesh, raster: &Raster) -> Result<()> {
    if raster.nx() != mesh.nx() || raster.ny() != mesh.ny() {
        return Err(Error::Config(format!(
            "raster {}x{} does not match mesh cells {}x{}",
            raster.nx(),
            raster.ny(),
            mesh.nx(),
            mesh.ny()
        )));
    }
    Ok(())
}

fn assemble(mesh: &StructuredMesh, element: impl Fn(usize, usize) -> [[f64; 4]; 4]) -> CsrMatrix {
    counters::record_fine_assembly();
    let mut triplets = Vec::with_capacity(mesh.fine_cell_count() * 16);
    for iy in 0..mesh.ny() {
        for ix in 0..mesh.nx() {
            let nodes = mesh.fine_cell_nodes(ix, iy);
            let k = element(ix, iy);
            for a in 0..4 {
                for b in 0..4 {
                    triplets.push((nodes[a], nodes[b], k[a][b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(mesh.fine_node_count(), &triplets)
}

/// Stiffness component int kappa_q grad phi_i . grad phi_j.
pub fn assemble_stiffness_component(mesh: &StructuredMesh, raster: &Raster) -> Result<CsrMatrix> {
    check_shape(mesh, raster)?;
    let (hx, hy) = (mesh.hx(), mesh.hy());
    Ok(assemble(mesh, |ix, iy| q1_stiffness(hx, hy, raster.get(ix, iy))))
}

/// Weighted mass component with cellwise weight kappa_q / h_coarse^2.
pub fn assemble_weighted_mass_component(
    mesh: &StructuredMesh,
    raster: &Raster,
    h_coarse: f64,
) -> Result<CsrMatrix> {
    check_shape(mesh, raster)?;
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let scale = 1.0 / (h_coarse * h_coarse);
    Ok(assemble(mesh, |ix, iy| q1_mass(hx, hy, raster.get(ix, iy) * scale)))
}

fn assemble_patch(
    patch: &crate::grid::Patch,
    element: impl Fn(usize, usize) -> [[f64; 4]; 4],
) -> CsrMatrix {
    let w = patch.ix1 - patch.ix0 + 1;
    let h = patch.iy1 - patch.iy0 + 1;
    let mut triplets = Vec::with_capacity((w - 1) * (h - 1) * 16);
    for iy in patch.iy0..patch.iy1 {
        for ix in patch.ix0..patch.ix1 {
            let ll = (iy - patch.iy0) * w + (ix - patch.ix0);
            let nodes = [ll, ll + 1, ll + w + 1, ll + w];
            let k = element(ix, iy);
            for a in 0..4 {
                for b in 0..4 {
                    triplets.push((nodes[a], nodes[b], k[a][b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(w * h, &triplets)
}

/// Stiffness over the patch cells only (the local energy of the
/// neighborhood), in patch-local row-major node indexing.
pub fn assemble_patch_stiffness(
    mesh: &StructuredMesh,
    raster: &Raster,
    patch: &crate::grid::Patch,
) -> Result<CsrMatrix> {
    check_shape(mesh, raster)?;
    let (hx, hy) = (mesh.hx(), mesh.hy());
    Ok(assemble_patch(patch, |ix, iy| q1_stiffness(hx, hy, raster.get(ix, iy))))
}

/// kappa H^-2 weighted mass over the patch cells, patch-local indexing.
pub fn assemble_patch_weighted_mass(
    mesh: &StructuredMesh,
    raster: &Raster,
    h_coarse: f64,
    patch: &crate::grid::Patch,
) -> Result<CsrMatrix> {
    check_shape(mesh, raster)?;
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let scale = 1.0 / (h_coarse * h_coarse);
    Ok(assemble_patch(patch, |ix, iy| q1_mass(hx, hy, raster.get(ix, iy) * scale)))
}

/// Load vector by 2x2 Gauss quadrature per cell.
pub fn assemble_load(mesh: &StructuredMesh, f: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    counters::record_fine_assembly();
    let g = 0.5 / 3.0f64.sqrt();
    let pts = [0.5 - g, 0.5 + g];
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let w = hx * hy / 4.0;
    let mut load = vec![0.0; mesh.fine_node_count()];
    for iy in 0..mesh.ny() {
        for ix in 0..mesh.nx() {
            let nodes = mesh.fine_cell_nodes(ix, iy);
            let (x0, y0) = (ix as f64 * hx, iy as f64 * hy);
            for &xi in &pts {
                for &eta in &pts {
                    let fv = f(x0 + xi * hx, y0 + eta * hy);
                    let shapes = [
                        (1.0 - xi) * (1.0 - eta),
                        xi * (1.0 - eta),
                        xi * eta,
                        (1.0 - xi) * eta,
                    ];
                    for a in 0..4 {
                        load[nodes[a]] += w * fv * shapes[a];
                    }
                }
            }
        }
    }
    load
}

/// Nodal boundary lift: p at domain-boundary fine nodes, zero inside.
pub fn dirichlet_lift(mesh: &StructuredMesh, p: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut lift = vec![0.0; mesh.fine_node_count()];
    for idx in mesh.boundary_fine_nodes() {
        let (x, y) = mesh.fine_node_coords(idx);
        lift[idx] = p(x, y);
    }
    lift
}

/// All parameter-independent fine-scale operators of one problem setup.
pub struct ProblemOperators {
    /// Stiffness components A_q.
    pub a_q: Vec<CsrMatrix>,
    /// kappa_q weighted mass components (L2 norm weight).
    pub m_q: Vec<CsrMatrix>,
    /// Load vector for the configured source.
    pub load: Vec<f64>,
}

impl ProblemOperators {
    pub fn build(
        mesh: &StructuredMesh,
        coeff: &AffineCoefficient,
        f: &dyn Fn(f64, f64) -> f64,
    ) -> Result<ProblemOperators> {
        let mut a_q = Vec::with_capacity(coeff.q());
        let mut m_q = Vec::with_capacity(coeff.q());
        for q in 0..coeff.q() {
            let raster = coeff.term_raster(q);
            a_q.push(assemble_stiffness_component(mesh, raster)?);
            m_q.push(assemble_weighted_mass_component(mesh, raster, 1.0)?);
        }
        let load = assemble_load(mesh, f);
        Ok(ProblemOperators { a_q, m_q, load })
    }

    pub fn q(&self) -> usize {
        self.a_q.len()
    }

    /// A(mu) = sum_q Theta_q(mu) A_q.
    pub fn stiffness_at(&self, coeff: &AffineCoefficient, mu: &[f64]) -> Result<CsrMatrix> {
        let theta = coeff.theta_vec(mu)?;
        let terms: Vec<(f64, &CsrMatrix)> =
            theta.iter().copied().zip(self.a_q.iter()).collect();
        CsrMatrix::linear_combination(&terms)
    }
}

/// Fine-grid nodal solution at one parameter.
pub struct FineSolution {
    pub values: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Assembles A(mu), eliminates Dirichlet nodes with nodal values of p, and
/// solves the reduced SPD system.
pub fn solve_fine(
    mesh: &StructuredMesh,
    ops: &ProblemOperators,
    coeff: &AffineCoefficient,
    mu: &[f64],
    p: &dyn Fn(f64, f64) -> f64,
) -> Result<FineSolution> {
    let a_mu = ops.stiffness_at(coeff, mu)?;
    let lift = dirichlet_lift(mesh, p);
    let interior = mesh.interior_fine_nodes();
    let a_ii = a_mu.restrict(&interior);
    let a_lift = a_mu.matvec(&lift);
    let rhs: Vec<f64> = interior.iter().map(|&n| ops.load[n] - a_lift[n]).collect();
    counters::record_fine_solve();
    let x = sparse::solve_spd(&a_ii, &rhs)?;
    let mut values = lift;
    for (k, &n) in interior.iter().enumerate() {
        values[n] = x[k];
    }
    Ok(FineSolution { values, mu: mu.to_vec() })
}

fn weighted_quadratic_form(
    components: &[CsrMatrix],
    coeff: &AffineCoefficient,
    mu: &[f64],
    v: &[f64],
) -> Result<f64> {
    let theta = coeff.theta_vec(mu)?;
    let mut total = 0.0;
    for (t, m) in theta.iter().zip(components) {
        total += t * sparse::dot(v, &m.matvec(v));
    }
    Ok(total.max(0.0))
}

/// sqrt(v' A(mu) v): kappa-weighted H1 seminorm.
pub fn energy_norm(
    ops: &ProblemOperators,
    coeff: &AffineCoefficient,
    mu: &[f64],
    v: &[f64],
) -> Result<f64> {
    Ok(weighted_quadratic_form(&ops.a_q, coeff, mu, v)?.sqrt())
}

/// sqrt(v' M(mu) v): kappa-weighted L2 norm.
pub fn weighted_l2_norm(
    ops: &ProblemOperators,
    coeff: &AffineCoefficient,
    mu: &[f64],
    v: &[f64],
) -> Result<f64> {
    Ok(weighted_quadratic_form(&ops.m_q, coeff, mu, v)?.sqrt())
}

/// Relative (weighted L2, energy) errors of u against the reference u_ref.
pub fn relative_errors(
    ops: &ProblemOperators,
    coeff: &AffineCoefficient,
    mu: &[f64],
    u_ref: &[f64],
    u: &[f64],
) -> Result<(f64, f64)> {
    let diff: Vec<f64> = u_ref.iter().zip(u).map(|(a, b)| a - b).collect();
    let l2 = weighted_l2_norm(ops, coeff, mu, &diff)? / weighted_l2_norm(ops, coeff, mu, u_ref)?;
    let en = energy_norm(ops, coeff, mu, &diff)? / energy_norm(ops, coeff, mu, u_ref)?;
    Ok((l2, en))
}
