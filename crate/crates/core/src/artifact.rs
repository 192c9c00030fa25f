//! Versioned binary artifact files for offline data, reduced operators,
//! and trained predictors.
//!
//! Every file is a `Container`: the magic bytes `RGMSBIN1`, a little-endian
//! u32 format version, a u64 section count, then the sections in insertion
//! order. A section is a u64 name length, the UTF-8 name, a one-byte kind
//! tag (0 = f64 array, 1 = u64 array), a u64 rank, the u64 dimensions, and
//! the payload as little-endian 64-bit values. Matrices store dimensions
//! `[rows, cols]` with column-major data. Writing is deterministic: the same
//! container always produces identical bytes.

use crate::msbasis::LocalEigenData;
use crate::predict::{GpcModel, GprModel, HermiteBasis, Predictor};
use crate::rom::{NeighborhoodBlock, PodBasis, ReducedOperators};
use crate::{Error, Result, FORMAT_VERSION};
use nalgebra::DMatrix;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RGMSBIN1";
/// Refuse to allocate sections beyond this many values (corrupt headers).
const MAX_ELEMENTS: u64 = 1 << 32;

/// One named payload inside a container.
#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    F64 { dims: Vec<usize>, data: Vec<f64> },
    U64 { dims: Vec<usize>, data: Vec<u64> },
}

/// An ordered set of named sections with a versioned binary encoding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    sections: Vec<(String, Section)>,
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    let mut n: u64 = 1;
    for &d in dims {
        n = n
            .checked_mul(d as u64)
            .filter(|&v| v <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Config("artifact section dimensions overflow".into()))?;
    }
    Ok(n as usize)
}

impl Container {
    pub fn new() -> Container {
        Container::default()
    }

    fn push(&mut self, name: &str, section: Section) -> Result<()> {
        if self.sections.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate artifact section '{name}'")));
        }
        let (dims, len) = match &section {
            Section::F64 { dims, data } => (dims, data.len()),
            Section::U64 { dims, data } => (dims, data.len()),
        };
        if checked_len(dims)? != len {
            return Err(Error::Config(format!(
                "artifact section '{name}' has {len} values for dimensions {dims:?}"
            )));
        }
        self.sections.push((name.to_string(), section));
        Ok(())
    }

    pub fn put_f64(&mut self, name: &str, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.push(name, Section::F64 { dims, data })
    }

    pub fn put_u64(&mut self, name: &str, dims: Vec<usize>, data: Vec<u64>) -> Result<()> {
        self.push(name, Section::U64 { dims, data })
    }

    pub fn put_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        self.put_f64(name, vec![1], vec![value])
    }

    pub fn put_index(&mut self, name: &str, value: usize) -> Result<()> {
        self.put_u64(name, vec![1], vec![value as u64])
    }

    pub fn put_vector(&mut self, name: &str, data: &[f64]) -> Result<()> {
        self.put_f64(name, vec![data.len()], data.to_vec())
    }

    pub fn put_matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        self.put_f64(name, vec![m.nrows(), m.ncols()], m.as_slice().to_vec())
    }

    fn get(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Config(format!("artifact section '{name}' is missing")))
    }

    pub fn get_f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Section::F64 { dims, data } => Ok((dims, data)),
            Section::U64 { .. } => {
                Err(Error::Config(format!("artifact section '{name}' is not an f64 array")))
            }
        }
    }

    pub fn get_u64(&self, name: &str) -> Result<(&[usize], &[u64])> {
        match self.get(name)? {
            Section::U64 { dims, data } => Ok((dims, data)),
            Section::F64 { .. } => {
                Err(Error::Config(format!("artifact section '{name}' is not a u64 array")))
            }
        }
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        let (_, data) = self.get_f64(name)?;
        if data.len() != 1 {
            return Err(Error::Config(format!("artifact section '{name}' is not a scalar")));
        }
        Ok(data[0])
    }

    pub fn get_index(&self, name: &str) -> Result<usize> {
        let (_, data) = self.get_u64(name)?;
        if data.len() != 1 {
            return Err(Error::Config(format!("artifact section '{name}' is not a scalar")));
        }
        Ok(data[0] as usize)
    }

    pub fn get_vector(&self, name: &str) -> Result<Vec<f64>> {
        let (dims, data) = self.get_f64(name)?;
        if dims.len() != 1 {
            return Err(Error::Config(format!("artifact section '{name}' is not a vector")));
        }
        Ok(data.to_vec())
    }

    pub fn get_indices(&self, name: &str) -> Result<Vec<usize>> {
        let (dims, data) = self.get_u64(name)?;
        if dims.len() != 1 {
            return Err(Error::Config(format!("artifact section '{name}' is not a vector")));
        }
        Ok(data.iter().map(|&v| v as usize).collect())
    }

    pub fn get_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (dims, data) = self.get_f64(name)?;
        if dims.len() != 2 {
            return Err(Error::Config(format!("artifact section '{name}' is not a matrix")));
        }
        Ok(DMatrix::from_column_slice(dims[0], dims[1], data))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u64).to_le_bytes())?;
        for (name, section) in &self.sections {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let (tag, dims): (u8, &[usize]) = match section {
                Section::F64 { dims, .. } => (0, dims),
                Section::U64 { dims, .. } => (1, dims),
            };
            w.write_all(&[tag])?;
            w.write_all(&(dims.len() as u64).to_le_bytes())?;
            for &d in dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match section {
                Section::F64 { data, .. } => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Section::U64 { data, .. } => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Container> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config(format!(
                "{} is not an artifact file (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "artifact format version {version} is not the supported {FORMAT_VERSION}"
            )));
        }
        let n_sections = read_u64(&mut r)?;
        if n_sections > MAX_ELEMENTS {
            return Err(Error::Config("artifact section count overflows".into()));
        }
        let mut c = Container::new();
        for _ in 0..n_sections {
            let name_len = read_u64(&mut r)? as usize;
            if name_len > 1 << 16 {
                return Err(Error::Config("artifact section name overflows".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Config("artifact section name is not UTF-8".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let rank = read_u64(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::Config("artifact section rank overflows".into()));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(&mut r)? as usize);
            }
            let len = checked_len(&dims)?;
            let section = match tag[0] {
                0 => {
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(f64::from_le_bytes(read_8(&mut r)?));
                    }
                    Section::F64 { dims, data }
                }
                1 => {
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(u64::from_le_bytes(read_8(&mut r)?));
                    }
                    Section::U64 { dims, data }
                }
                t => {
                    return Err(Error::Config(format!(
                        "artifact section '{name}' has unknown kind tag {t}"
                    )))
                }
            };
            c.push(&name, section)?;
        }
        Ok(c)
    }
}

fn read_8(r: &mut impl Read) -> Result<[u8; 8]> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_8(r)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Per-neighborhood offline bundle: snapshot basis, partition-of-unity
/// restriction, and the retained eigendata of every training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineNeighborhood {
    pub node: usize,
    /// Global fine nodes of the patch, ascending (rows of `r_snap`).
    pub patch_nodes: Vec<usize>,
    pub r_snap: DMatrix<f64>,
    /// chi_i restricted to `patch_nodes`.
    pub chi: Vec<f64>,
    pub eigen: Vec<LocalEigenData>,
}

pub fn save_offline_neighborhood(o: &OfflineNeighborhood, path: &Path) -> Result<()> {
    let mut c = Container::new();
    c.put_index("node", o.node)?;
    c.put_u64(
        "patch_nodes",
        vec![o.patch_nodes.len()],
        o.patch_nodes.iter().map(|&v| v as u64).collect(),
    )?;
    c.put_matrix("r_snap", &o.r_snap)?;
    c.put_vector("chi", &o.chi)?;
    c.put_index("n_samples", o.eigen.len())?;
    for (j, e) in o.eigen.iter().enumerate() {
        c.put_vector(&format!("eig{j}/mu"), &e.mu)?;
        c.put_vector(&format!("eig{j}/lambdas"), &e.lambdas)?;
        c.put_scalar(&format!("eig{j}/lambda_next"), e.lambda_next)?;
        c.put_matrix(&format!("eig{j}/psi"), &e.psi)?;
        c.put_vector(&format!("eig{j}/theta_norm"), &e.theta_norm)?;
    }
    c.write_to(path)
}

pub fn load_offline_neighborhood(path: &Path) -> Result<OfflineNeighborhood> {
    let c = Container::read_from(path)?;
    let node = c.get_index("node")?;
    let n_samples = c.get_index("n_samples")?;
    let mut eigen = Vec::with_capacity(n_samples);
    for j in 0..n_samples {
        eigen.push(LocalEigenData {
            node,
            mu: c.get_vector(&format!("eig{j}/mu"))?,
            lambdas: c.get_vector(&format!("eig{j}/lambdas"))?,
            lambda_next: c.get_scalar(&format!("eig{j}/lambda_next"))?,
            psi: c.get_matrix(&format!("eig{j}/psi"))?,
            theta_norm: c.get_vector(&format!("eig{j}/theta_norm"))?,
        });
    }
    Ok(OfflineNeighborhood {
        node,
        patch_nodes: c.get_indices("patch_nodes")?,
        r_snap: c.get_matrix("r_snap")?,
        chi: c.get_vector("chi")?,
        eigen,
    })
}

pub fn save_reduced_operators(ops: &ReducedOperators, path: &Path) -> Result<()> {
    let mut c = Container::new();
    c.put_index("n_fine", ops.n_fine)?;
    c.put_index("n_q", ops.a_hat.len())?;
    c.put_index("n_blocks", ops.blocks.len())?;
    c.put_vector("f_hat", &ops.f_hat)?;
    c.put_vector("lift", &ops.lift)?;
    for (q, a) in ops.a_hat.iter().enumerate() {
        c.put_matrix(&format!("a_hat{q}"), a)?;
        c.put_vector(&format!("g_hat{q}"), &ops.g_hat[q])?;
    }
    for (i, b) in ops.blocks.iter().enumerate() {
        c.put_index(&format!("block{i}/node"), b.node)?;
        c.put_index(&format!("block{i}/offset"), b.offset)?;
        c.put_u64(
            &format!("block{i}/patch_nodes"),
            vec![b.patch_nodes.len()],
            b.patch_nodes.iter().map(|&v| v as u64).collect(),
        )?;
        c.put_matrix(&format!("block{i}/b"), &b.b)?;
    }
    c.write_to(path)
}

pub fn load_reduced_operators(path: &Path) -> Result<ReducedOperators> {
    let c = Container::read_from(path)?;
    let n_q = c.get_index("n_q")?;
    let n_blocks = c.get_index("n_blocks")?;
    let mut a_hat = Vec::with_capacity(n_q);
    let mut g_hat = Vec::with_capacity(n_q);
    for q in 0..n_q {
        a_hat.push(c.get_matrix(&format!("a_hat{q}"))?);
        g_hat.push(c.get_vector(&format!("g_hat{q}"))?);
    }
    let mut blocks = Vec::with_capacity(n_blocks);
    for i in 0..n_blocks {
        blocks.push(NeighborhoodBlock {
            node: c.get_index(&format!("block{i}/node"))?,
            offset: c.get_index(&format!("block{i}/offset"))?,
            patch_nodes: c.get_indices(&format!("block{i}/patch_nodes"))?,
            b: c.get_matrix(&format!("block{i}/b"))?,
        });
    }
    Ok(ReducedOperators {
        blocks,
        a_hat,
        f_hat: c.get_vector("f_hat")?,
        g_hat,
        lift: c.get_vector("lift")?,
        n_fine: c.get_index("n_fine")?,
    })
}

pub fn save_pod_bases(pods: &[PodBasis], path: &Path) -> Result<()> {
    let mut c = Container::new();
    c.put_index("n_pods", pods.len())?;
    for (i, p) in pods.iter().enumerate() {
        c.put_index(&format!("pod{i}/node"), p.node)?;
        c.put_matrix(&format!("pod{i}/v"), &p.v)?;
        c.put_vector(&format!("pod{i}/sigma"), &p.singular_values)?;
        c.put_scalar(&format!("pod{i}/energy_fraction"), p.energy_fraction)?;
        c.put_scalar(&format!("pod{i}/epsilon"), p.epsilon)?;
    }
    c.write_to(path)
}

pub fn load_pod_bases(path: &Path) -> Result<Vec<PodBasis>> {
    let c = Container::read_from(path)?;
    let n = c.get_index("n_pods")?;
    let mut pods = Vec::with_capacity(n);
    for i in 0..n {
        pods.push(PodBasis {
            node: c.get_index(&format!("pod{i}/node"))?,
            v: c.get_matrix(&format!("pod{i}/v"))?,
            singular_values: c.get_vector(&format!("pod{i}/sigma"))?,
            energy_fraction: c.get_scalar(&format!("pod{i}/energy_fraction"))?,
            epsilon: c.get_scalar(&format!("pod{i}/epsilon"))?,
        });
    }
    Ok(pods)
}

/// Saves one predictor per neighborhood with the training seed and, per
/// model, either the chaos degree and coefficients or the kernel state.
pub fn save_predictors(models: &[(usize, Predictor)], seed: u64, path: &Path) -> Result<()> {
    let mut c = Container::new();
    c.put_u64("seed", vec![1], vec![seed])?;
    c.put_index("n_models", models.len())?;
    c.put_u64("nodes", vec![models.len()], models.iter().map(|(n, _)| *n as u64).collect())?;
    let kinds = models
        .iter()
        .map(|(_, p)| match p {
            Predictor::Gpc(_) => 0,
            Predictor::Gpr(_) => 1,
        })
        .collect();
    c.put_u64("kinds", vec![models.len()], kinds)?;
    for (i, (_, p)) in models.iter().enumerate() {
        match p {
            Predictor::Gpc(g) => {
                c.put_index(&format!("m{i}/m"), g.basis.m)?;
                c.put_index(&format!("m{i}/p"), g.basis.p)?;
                c.put_matrix(&format!("m{i}/coeffs"), &g.coeffs)?;
                c.put_vector(&format!("m{i}/residuals"), &g.residuals)?;
            }
            Predictor::Gpr(g) => {
                let n = g.train_mu.len();
                let m = g.train_mu.first().map_or(0, Vec::len);
                let mu = DMatrix::from_fn(n, m, |r, col| g.train_mu[r][col]);
                c.put_matrix(&format!("m{i}/train_mu"), &mu)?;
                c.put_scalar(&format!("m{i}/length_scale"), g.length_scale)?;
                c.put_vector(&format!("m{i}/signal_variance"), &g.signal_variance)?;
                c.put_scalar(&format!("m{i}/jitter"), g.jitter)?;
                c.put_vector(&format!("m{i}/means"), &g.means)?;
                c.put_matrix(&format!("m{i}/alpha"), &g.alpha)?;
            }
        }
    }
    c.write_to(path)
}

/// Loads predictors saved by [`save_predictors`], rebuilding kernel
/// factorizations from the stored state. Returns (models, seed).
pub fn load_predictors(path: &Path) -> Result<(Vec<(usize, Predictor)>, u64)> {
    let c = Container::read_from(path)?;
    let (_, seed) = c.get_u64("seed")?;
    let seed = seed[0];
    let n_models = c.get_index("n_models")?;
    let nodes = c.get_indices("nodes")?;
    let (_, kinds) = c.get_u64("kinds")?;
    if nodes.len() != n_models || kinds.len() != n_models {
        return Err(Error::Config("predictor artifact header is inconsistent".into()));
    }
    let mut models = Vec::with_capacity(n_models);
    for i in 0..n_models {
        let p = match kinds[i] {
            0 => {
                let m = c.get_index(&format!("m{i}/m"))?;
                let p = c.get_index(&format!("m{i}/p"))?;
                Predictor::Gpc(GpcModel {
                    basis: HermiteBasis::new(m, p),
                    coeffs: c.get_matrix(&format!("m{i}/coeffs"))?,
                    residuals: c.get_vector(&format!("m{i}/residuals"))?,
                })
            }
            1 => {
                let mu = c.get_matrix(&format!("m{i}/train_mu"))?;
                let train_mu: Vec<Vec<f64>> =
                    (0..mu.nrows()).map(|r| mu.row(r).iter().copied().collect()).collect();
                Predictor::Gpr(GprModel::from_parts(
                    train_mu,
                    c.get_scalar(&format!("m{i}/length_scale"))?,
                    c.get_vector(&format!("m{i}/signal_variance"))?,
                    c.get_scalar(&format!("m{i}/jitter"))?,
                    c.get_vector(&format!("m{i}/means"))?,
                    c.get_matrix(&format!("m{i}/alpha"))?,
                )?)
            }
            k => {
                return Err(Error::Config(format!(
                    "predictor artifact has unknown kind tag {k}"
                )))
            }
        };
        models.push((nodes[i], p));
    }
    Ok((models, seed))
}
