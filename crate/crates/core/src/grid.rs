//! Structured rectangular fine/coarse grids on the unit square, coarse
//! neighborhoods, and fine-node index bookkeeping.
//!
//! Fine nodes are enumerated row-major from the bottom-left corner; all
//! derived index lists are deterministic so that downstream snapshot columns
//! and training data reproduce bit-exactly.

use crate::{Error, Result};

/// Nested fine/coarse rectangular grids on [0,1]^2.
///
/// The fine grid must refine the coarse grid exactly: nx % Nx == 0 and
/// ny % Ny == 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredMesh {
    nx: usize,
    ny: usize,
    coarse_nx: usize,
    coarse_ny: usize,
}

/// Axis-aligned block of fine nodes ix0..=ix1 x iy0..=iy1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub ix0: usize,
    pub ix1: usize,
    pub iy0: usize,
    pub iy1: usize,
}

/// Coarse node with its incident coarse cells and the fine-node partition of
/// the neighborhood closure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseNeighborhood {
    /// Coarse node index i.
    pub node: usize,
    /// Incident coarse cells as (cx, cy).
    pub cells: Vec<(usize, usize)>,
    /// Covered fine-node patch.
    pub patch: Patch,
    /// All fine nodes of the closure, row-major ascending.
    pub all_nodes: Vec<usize>,
    /// Boundary fine nodes J_h, counter-clockwise from the lower-left corner.
    pub boundary: Vec<usize>,
    /// Interior fine nodes, row-major ascending.
    pub interior: Vec<usize>,
    /// Positions of `boundary` entries within `all_nodes`.
    pub boundary_local: Vec<usize>,
    /// Positions of `interior` entries within `all_nodes`.
    pub interior_local: Vec<usize>,
}

/// Builds the nested mesh; fails when the fine grid does not refine the
/// coarse grid.
pub fn build_mesh(nx: usize, ny: usize, coarse_nx: usize, coarse_ny: usize) -> Result<StructuredMesh> {
    if nx == 0 || ny == 0 || coarse_nx == 0 || coarse_ny == 0 {
        return Err(Error::Config("mesh cell counts must be positive".into()));
    }
    if nx % coarse_nx != 0 || ny % coarse_ny != 0 {
        return Err(Error::Config(format!(
            "fine grid {nx}x{ny} does not refine coarse grid {coarse_nx}x{coarse_ny}"
        )));
    }
    Ok(StructuredMesh { nx, ny, coarse_nx, coarse_ny })
}

impl StructuredMesh {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn coarse_nx(&self) -> usize {
        self.coarse_nx
    }

    pub fn coarse_ny(&self) -> usize {
        self.coarse_ny
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    /// Fine mesh size h = 1/nx.
    pub fn h(&self) -> f64 {
        self.hx()
    }

    /// Coarse mesh size H = 1/Nx.
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.coarse_nx as f64
    }

    /// Fine cells per coarse cell along x.
    pub fn refine_x(&self) -> usize {
        self.nx / self.coarse_nx
    }

    /// Fine cells per coarse cell along y.
    pub fn refine_y(&self) -> usize {
        self.ny / self.coarse_ny
    }

    pub fn fine_node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn coarse_node_count(&self) -> usize {
        (self.coarse_nx + 1) * (self.coarse_ny + 1)
    }

    pub fn fine_cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn fine_node_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nx && iy <= self.ny);
        iy * (self.nx + 1) + ix
    }

    pub fn fine_node_ij(&self, idx: usize) -> (usize, usize) {
        (idx % (self.nx + 1), idx / (self.nx + 1))
    }

    pub fn fine_node_coords(&self, idx: usize) -> (f64, f64) {
        let (ix, iy) = self.fine_node_ij(idx);
        (ix as f64 * self.hx(), iy as f64 * self.hy())
    }

    pub fn coarse_node_index(&self, cx: usize, cy: usize) -> usize {
        debug_assert!(cx <= self.coarse_nx && cy <= self.coarse_ny);
        cy * (self.coarse_nx + 1) + cx
    }

    pub fn coarse_node_ij(&self, idx: usize) -> (usize, usize) {
        (idx % (self.coarse_nx + 1), idx / (self.coarse_nx + 1))
    }

    pub fn coarse_node_coords(&self, idx: usize) -> (f64, f64) {
        let (cx, cy) = self.coarse_node_ij(idx);
        (cx as f64 * self.coarse_h(), cy as f64 / self.coarse_ny as f64)
    }

    /// Corner fine nodes of fine cell (ix, iy), counter-clockwise from the
    /// lower-left: LL, LR, UR, UL.
    pub fn fine_cell_nodes(&self, ix: usize, iy: usize) -> [usize; 4] {
        [
            self.fine_node_index(ix, iy),
            self.fine_node_index(ix + 1, iy),
            self.fine_node_index(ix + 1, iy + 1),
            self.fine_node_index(ix, iy + 1),
        ]
    }

    pub fn fine_cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * self.hx(), (iy as f64 + 0.5) * self.hy())
    }

    /// Corner coarse nodes of coarse cell (cx, cy): LL, LR, UR, UL.
    pub fn coarse_cell_corners(&self, cx: usize, cy: usize) -> [usize; 4] {
        [
            self.coarse_node_index(cx, cy),
            self.coarse_node_index(cx + 1, cy),
            self.coarse_node_index(cx + 1, cy + 1),
            self.coarse_node_index(cx, cy + 1),
        ]
    }

    /// Fine-node patch covered by coarse cell (cx, cy).
    pub fn coarse_cell_patch(&self, cx: usize, cy: usize) -> Patch {
        let (mx, my) = (self.refine_x(), self.refine_y());
        Patch {
            ix0: cx * mx,
            ix1: (cx + 1) * mx,
            iy0: cy * my,
            iy1: (cy + 1) * my,
        }
    }

    pub fn is_boundary_fine_node(&self, idx: usize) -> bool {
        let (ix, iy) = self.fine_node_ij(idx);
        ix == 0 || ix == self.nx || iy == 0 || iy == self.ny
    }

    /// Fine nodes on the domain boundary, ascending.
    pub fn boundary_fine_nodes(&self) -> Vec<usize> {
        (0..self.fine_node_count()).filter(|&i| self.is_boundary_fine_node(i)).collect()
    }

    /// Fine nodes strictly inside the domain, ascending.
    pub fn interior_fine_nodes(&self) -> Vec<usize> {
        (0..self.fine_node_count()).filter(|&i| !self.is_boundary_fine_node(i)).collect()
    }

    /// Neighborhood of coarse node i: union of incident coarse cells with its
    /// fine-node partition. Pure function of (mesh, i).
    pub fn neighborhood(&self, i: usize) -> CoarseNeighborhood {
        assert!(i < self.coarse_node_count(), "coarse node {i} out of range");
        let (cx, cy) = self.coarse_node_ij(i);
        let mut cells = Vec::with_capacity(4);
        let xs = cx.saturating_sub(1)..cx.min(self.coarse_nx - 1) + 1;
        let ys = cy.saturating_sub(1)..cy.min(self.coarse_ny - 1) + 1;
        for gy in ys.clone() {
            for gx in xs.clone() {
                cells.push((gx, gy));
            }
        }
        let (mx, my) = (self.refine_x(), self.refine_y());
        let patch = Patch {
            ix0: cx.saturating_sub(1) * mx,
            ix1: (cx.min(self.coarse_nx - 1) + 1) * mx,
            iy0: cy.saturating_sub(1) * my,
            iy1: (cy.min(self.coarse_ny - 1) + 1) * my,
        };
        let all_nodes = patch.nodes(self);
        let boundary = patch.perimeter_ccw(self);
        let on_boundary: std::collections::HashSet<usize> = boundary.iter().copied().collect();
        let interior: Vec<usize> =
            all_nodes.iter().copied().filter(|n| !on_boundary.contains(n)).collect();
        let local = |global: usize| all_nodes.binary_search(&global).unwrap();
        let boundary_local = boundary.iter().map(|&g| local(g)).collect();
        let interior_local = interior.iter().map(|&g| local(g)).collect();
        CoarseNeighborhood {
            node: i,
            cells,
            patch,
            all_nodes,
            boundary,
            interior,
            boundary_local,
            interior_local,
        }
    }

    /// All neighborhoods in coarse-node order.
    pub fn neighborhoods(&self) -> Vec<CoarseNeighborhood> {
        (0..self.coarse_node_count()).map(|i| self.neighborhood(i)).collect()
    }
}

impl Patch {
    pub fn node_count(&self) -> usize {
        (self.ix1 - self.ix0 + 1) * (self.iy1 - self.iy0 + 1)
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.ix0 && ix <= self.ix1 && iy >= self.iy0 && iy <= self.iy1
    }

    /// Fine-node indices of the block, row-major ascending.
    pub fn nodes(&self, mesh: &StructuredMesh) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.node_count());
        for iy in self.iy0..=self.iy1 {
            for ix in self.ix0..=self.ix1 {
                out.push(mesh.fine_node_index(ix, iy));
            }
        }
        out
    }

    /// Perimeter fine nodes counter-clockwise starting at the lower-left
    /// corner, each node listed once.
    pub fn perimeter_ccw(&self, mesh: &StructuredMesh) -> Vec<usize> {
        let mut out = Vec::new();
        for ix in self.ix0..=self.ix1 {
            out.push(mesh.fine_node_index(ix, self.iy0));
        }
        for iy in self.iy0 + 1..=self.iy1 {
            out.push(mesh.fine_node_index(self.ix1, iy));
        }
        if self.iy1 > self.iy0 {
            for ix in (self.ix0..self.ix1).rev() {
                out.push(mesh.fine_node_index(ix, self.iy1));
            }
        }
        if self.ix1 > self.ix0 {
            for iy in (self.iy0 + 1..self.iy1).rev() {
                out.push(mesh.fine_node_index(self.ix0, iy));
            }
        }
        out
    }

    /// Fine nodes strictly inside the block, row-major ascending.
    pub fn interior_nodes(&self, mesh: &StructuredMesh) -> Vec<usize> {
        let mut out = Vec::new();
        for iy in self.iy0 + 1..self.iy1 {
            for ix in self.ix0 + 1..self.ix1 {
                out.push(mesh.fine_node_index(ix, iy));
            }
        }
        out
    }
}
