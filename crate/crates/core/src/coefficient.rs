//! Affine parametric permeability kappa(x; mu) = sum_q Theta_q(mu) kappa_q(x),
//! built-in coefficient fields, and training-parameter sampling.
//!
//! kappa_q rasters live on fine cells (one constant value per cell). The
//! admissible parameter set keeps every Theta_q strictly positive, which keeps
//! the assembled operators positive definite.

use crate::grid::StructuredMesh;
use crate::raster::Raster;
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Built-in Theta function families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaKind {
    /// t + t^2 applied to one parameter component; admissible branch t > 0.
    MuPlusMuSq,
}

/// One Theta_q: a function family applied to a parameter component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaDescriptor {
    pub kind: ThetaKind,
    pub component: usize,
}

impl ThetaDescriptor {
    /// True when this Theta is strictly positive at mu on its retained branch.
    pub fn admissible(&self, mu: &[f64]) -> bool {
        match self.kind {
            ThetaKind::MuPlusMuSq => mu[self.component] > 0.0,
        }
    }

    pub fn eval(&self, mu: &[f64]) -> Result<f64> {
        if self.component >= mu.len() {
            return Err(Error::Config(format!(
                "theta component {} out of range for parameter dimension {}",
                self.component,
                mu.len()
            )));
        }
        if !self.admissible(mu) {
            return Err(Error::Config(format!(
                "inadmissible parameter {:?}: theta must stay positive",
                mu
            )));
        }
        let t = mu[self.component];
        match self.kind {
            ThetaKind::MuPlusMuSq => Ok(t + t * t),
        }
    }
}

/// kappa(x; mu) = sum over q of Theta_q(mu) * kappa_q(x).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoefficient {
    terms: Vec<(ThetaDescriptor, Raster)>,
    m: usize,
}

impl AffineCoefficient {
    pub fn new(terms: Vec<(ThetaDescriptor, Raster)>, m: usize) -> Result<AffineCoefficient> {
        if terms.is_empty() {
            return Err(Error::Config("affine coefficient needs at least one term".into()));
        }
        let (nx, ny) = (terms[0].1.nx(), terms[0].1.ny());
        for (q, (theta, raster)) in terms.iter().enumerate() {
            if theta.component >= m {
                return Err(Error::Config(format!(
                    "term {q}: theta component {} out of range for M={m}",
                    theta.component
                )));
            }
            if raster.nx() != nx || raster.ny() != ny {
                return Err(Error::Config(format!(
                    "term {q}: raster shape {}x{} differs from {}x{}",
                    raster.nx(),
                    raster.ny(),
                    nx,
                    ny
                )));
            }
            if raster.min() <= 0.0 {
                return Err(Error::Config(format!(
                    "term {q}: raster must be strictly positive (min {})",
                    raster.min()
                )));
            }
        }
        Ok(AffineCoefficient { terms, m })
    }

    pub fn q(&self) -> usize {
        self.terms.len()
    }

    /// Parameter dimension M.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn term_raster(&self, q: usize) -> &Raster {
        &self.terms[q].1
    }

    pub fn theta(&self, q: usize, mu: &[f64]) -> Result<f64> {
        self.check_dim(mu)?;
        self.terms[q].0.eval(mu)
    }

    /// All Theta_q(mu) in term order.
    pub fn theta_vec(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(mu)?;
        self.terms.iter().map(|(t, _)| t.eval(mu)).collect()
    }

    pub fn is_admissible(&self, mu: &[f64]) -> bool {
        mu.len() == self.m && self.terms.iter().all(|(t, _)| t.admissible(mu))
    }

    pub fn eval_kappa(&self, mu: &[f64]) -> Result<Raster> {
        Ok(self.eval_kappa_weights(&self.theta_vec(mu)?))
    }

    /// Cellwise sum of weights[q] * kappa_q.
    pub fn eval_kappa_weights(&self, weights: &[f64]) -> Raster {
        assert_eq!(weights.len(), self.q());
        let (nx, ny) = (self.terms[0].1.nx(), self.terms[0].1.ny());
        let mut data = vec![0.0; nx * ny];
        for (w, (_, raster)) in weights.iter().zip(&self.terms) {
            for (dst, v) in data.iter_mut().zip(raster.data()) {
                *dst += w * v;
            }
        }
        Raster::new(nx, ny, data)
    }

    /// Draws n_s admissible training parameters: i.i.d. standard normals per
    /// component, rejection-resampled until every Theta_q is positive.
    pub fn sample_training_set(&self, n_s: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n_s == 0 {
            return Err(Error::Config("training set size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n_s);
        let max_attempts = 1000 * n_s;
        let mut attempts = 0;
        while out.len() < n_s {
            if attempts >= max_attempts {
                return Err(Error::Numerical(format!(
                    "rejection sampling failed: {} accepted after {attempts} attempts",
                    out.len()
                )));
            }
            attempts += 1;
            let mu: Vec<f64> = (0..self.m).map(|_| rng.sample(StandardNormal)).collect();
            if self.is_admissible(&mu) {
                out.push(mu);
            }
        }
        Ok(out)
    }

    fn check_dim(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.m {
            return Err(Error::Config(format!(
                "parameter length {} does not match M={}",
                mu.len(),
                self.m
            )));
        }
        Ok(())
    }
}

/// Componentwise median; the reference parameter for partition-of-unity and
/// normalization choices.
pub fn component_median(samples: &[Vec<f64>]) -> Vec<f64> {
    assert!(!samples.is_empty());
    let m = samples[0].len();
    let n = samples.len();
    (0..m)
        .map(|c| {
            let mut vals: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if n % 2 == 1 {
                vals[n / 2]
            } else {
                0.5 * (vals[n / 2 - 1] + vals[n / 2])
            }
        })
        .collect()
}

/// The positive root of mu + mu^2 = 1: at this parameter the assembled
/// operator equals the raw component matrix, which several tests exploit.
pub const MU_UNIT: f64 = 0.618033988749894848;

/// Periodic high-oscillation permeability x^2 y + 1/(3 + 2.8 sin(15 pi (x-y))).
pub fn periodic_kappa(x: f64, y: f64) -> f64 {
    x * x * y + 1.0 / (3.0 + 2.8 * (15.0 * std::f64::consts::PI * (x - y)).sin())
}

/// Periodic field sampled at fine-cell centers.
pub fn analytic_periodic_field(mesh: &StructuredMesh) -> Raster {
    Raster::from_fn(mesh.nx(), mesh.ny(), |ix, iy| {
        let (x, y) = mesh.fine_cell_center(ix, iy);
        periodic_kappa(x, y)
    })
}

/// Seeded high-contrast field: background 1 with channels and rectangular
/// inclusions at tau. Deterministic given (mesh, seed, tau).
pub fn synth_contrast_field(mesh: &StructuredMesh, seed: u64, tau: f64) -> Result<Raster> {
    if tau < 1.0 {
        return Err(Error::Config(format!("contrast tau must be >= 1, got {tau}")));
    }
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let mut field = Raster::constant(nx, ny, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paint = |field: &mut Raster, ix: usize, iy: usize| {
        if ix < nx && iy < ny {
            field.set(ix, iy, tau);
        }
    };
    // Dense horizontal layering: one channel per band, most full-width, some
    // broken by a gap so dead-ended channels add further local modes. The
    // band period sits well below the coarse cell size, which puts one-mode
    // coarse spaces in the resonance regime.
    let step = (ny / 12).max(4);
    for band in 0..ny / step {
        if rng.gen_range(0.0..1.0) > 0.9 {
            continue;
        }
        let thick = 2.min(step - 1).max(1);
        let row = band * step + rng.gen_range(0..(step - thick).max(1));
        let gap = if rng.gen_range(0.0..1.0) < 0.35 {
            let w = (nx / 10).max(2);
            let x0 = rng.gen_range(0..nx - w);
            Some((x0, x0 + w))
        } else {
            None
        };
        for iy in row..row + thick {
            for ix in 0..nx {
                if gap.is_none_or(|(a, b)| ix < a || ix >= b) {
                    paint(&mut field, ix, iy);
                }
            }
        }
    }
    // Vertical connectors of partial height; every other one reaches the top
    // boundary, where the Dirichlet data is largest.
    for k in 0..6 {
        let col = rng.gen_range(0..nx - 2);
        let thick = rng.gen_range(1..=2);
        let h = rng.gen_range(ny / 3..ny);
        let y0 = if k % 2 == 0 { ny - h } else { rng.gen_range(0..ny - h + 1) };
        for ix in col..col + thick {
            for iy in y0..y0 + h {
                paint(&mut field, ix, iy);
            }
        }
    }
    // One diagonal band ix - iy = c.
    {
        let c = rng.gen_range(0..nx / 2) as isize - (nx / 4) as isize;
        for iy in 0..ny {
            for d in -1isize..=1 {
                let ix = iy as isize + c + d;
                if ix >= 0 {
                    paint(&mut field, ix as usize, iy);
                }
            }
        }
    }
    // Rectangular inclusions.
    for _ in 0..10 {
        let w = rng.gen_range(3..=6).min(nx);
        let h = rng.gen_range(3..=6).min(ny);
        let x0 = rng.gen_range(0..nx - w + 1);
        let y0 = rng.gen_range(0..ny - h + 1);
        for iy in y0..y0 + h {
            for ix in x0..x0 + w {
                paint(&mut field, ix, iy);
            }
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_mesh;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_coeff(nx: usize, ny: usize) -> AffineCoefficient {
        AffineCoefficient::new(
            vec![(
                ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 },
                Raster::constant(nx, ny, 1.0),
            )],
            1,
        )
        .unwrap()
    }

    #[test]
    fn theta_values_and_admissibility() {
        let c = unit_coeff(2, 2);
        assert_abs_diff_eq!(c.theta(0, &[0.6]).unwrap(), 0.96, epsilon = 1e-15);
        assert_abs_diff_eq!(c.theta(0, &[1.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert!(matches!(c.theta(0, &[0.0]), Err(Error::Config(_))));
        assert!(!c.is_admissible(&[-0.5]));
        assert!(!c.is_admissible(&[0.3, 0.3]));
    }

    #[test]
    fn eval_kappa_scales_unit_field() {
        let c = unit_coeff(3, 2);
        let k = c.eval_kappa(&[1.0]).unwrap();
        assert!(k.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn eval_kappa_periodic_first_cell() {
        let mesh = build_mesh(100, 100, 5, 5).unwrap();
        let field = analytic_periodic_field(&mesh);
        let c = AffineCoefficient::new(
            vec![(ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 }, field)],
            1,
        )
        .unwrap();
        let k = c.eval_kappa(&[1.0]).unwrap();
        let expect = (0.005f64.powi(2) * 0.005 + 1.0 / 3.0) * 2.0;
        assert_abs_diff_eq!(k.get(0, 0), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(k.get(0, 0), 0.6667, epsilon = 1e-3);
    }

    #[test]
    fn eval_kappa_is_linear_in_terms() {
        let mesh = build_mesh(10, 10, 2, 2).unwrap();
        let field = analytic_periodic_field(&mesh);
        let c = AffineCoefficient::new(
            vec![
                (ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 }, field.clone()),
                (ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 }, field.clone()),
            ],
            1,
        )
        .unwrap();
        let k = c.eval_kappa_weights(&[1.0, 1.0]);
        for (v, f) in k.data().iter().zip(field.data()) {
            assert_abs_diff_eq!(*v, 2.0 * f, epsilon = 1e-15);
        }
    }

    #[test]
    fn periodic_field_matches_formula() {
        assert_abs_diff_eq!(periodic_kappa(0.5, 0.5), 0.125 + 1.0 / 3.0, epsilon = 1e-12);
        let mesh = build_mesh(40, 40, 4, 4).unwrap();
        let field = analytic_periodic_field(&mesh);
        assert!(field.min() >= 1.0 / 5.8 - 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let ix = rng.gen_range(0..40);
            let iy = rng.gen_range(0..40);
            let (x, y) = mesh.fine_cell_center(ix, iy);
            let expect =
                x * x * y + 1.0 / (3.0 + 2.8 * (15.0 * std::f64::consts::PI * (x - y)).sin());
            assert_abs_diff_eq!(field.get(ix, iy), expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn synth_field_contrast_and_determinism() {
        let mesh = build_mesh(100, 100, 5, 5).unwrap();
        let f = synth_contrast_field(&mesh, 42, 1e4).unwrap();
        assert_eq!(f.max() / f.min(), 1e4);
        let again = synth_contrast_field(&mesh, 42, 1e4).unwrap();
        assert_eq!(f, again);
        let other = synth_contrast_field(&mesh, 43, 1e4).unwrap();
        assert_ne!(f, other);
        let flat = synth_contrast_field(&mesh, 42, 1.0).unwrap();
        assert_eq!(flat.min(), 1.0);
        assert_eq!(flat.max(), 1.0);
        assert!(synth_contrast_field(&mesh, 1, 0.5).is_err());
    }

    #[test]
    fn training_samples_are_admissible_and_deterministic() {
        let c = unit_coeff(2, 2);
        let s = c.sample_training_set(50, 7).unwrap();
        assert_eq!(s.len(), 50);
        assert!(s.iter().all(|mu| mu[0] > 0.0));
        assert_eq!(s, c.sample_training_set(50, 7).unwrap());

        let mesh_terms: Vec<_> = (0..4)
            .map(|q| {
                (ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: q }, Raster::constant(2, 2, 1.0))
            })
            .collect();
        let c4 = AffineCoefficient::new(mesh_terms, 4).unwrap();
        let one = c4.sample_training_set(1, 9).unwrap();
        assert_eq!(one[0].len(), 4);
        assert!(one[0].iter().all(|&t| t > 0.0));
    }

    #[test]
    fn accepted_sample_mean_matches_truncated_normal() {
        let c = unit_coeff(2, 2);
        let s = c.sample_training_set(100_000, 2024).unwrap();
        let mean: f64 = s.iter().map(|mu| mu[0]).sum::<f64>() / s.len() as f64;
        let expect = (2.0 / std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(mean, expect, epsilon = 0.01);
    }

    #[test]
    fn component_median_even_and_odd() {
        let odd = component_median(&[vec![3.0], vec![1.0], vec![2.0]]);
        assert_eq!(odd, vec![2.0]);
        let even = component_median(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![4.0, 40.0], vec![8.0, 30.0]]);
        assert_eq!(even, vec![3.0, 25.0]);
    }

    proptest! {
        #[test]
        fn single_term_kappa_scales_exactly(mu1 in 0.05f64..3.0, mu2 in 0.05f64..3.0) {
            let mesh = build_mesh(8, 8, 2, 2).unwrap();
            let field = analytic_periodic_field(&mesh);
            let c = AffineCoefficient::new(
                vec![(ThetaDescriptor { kind: ThetaKind::MuPlusMuSq, component: 0 }, field)],
                1,
            ).unwrap();
            let t1 = c.theta(0, &[mu1]).unwrap();
            let t2 = c.theta(0, &[mu2]).unwrap();
            let k1 = c.eval_kappa(&[mu1]).unwrap();
            let k2 = c.eval_kappa(&[mu2]).unwrap();
            for (a, b) in k1.data().iter().zip(k2.data()) {
                prop_assert!((a / t1 - b / t2).abs() <= 1e-15 * (a / t1).abs());
            }
        }
    }
}
