//! Per-voxel matrices built from nullspace filters.
//!
//! * `h_r(x, q) = sum_{n in L} h_r[n, q] exp(i 2 pi n.x)` (filter field)
//! * `G(x) = H(x)^H H(x)`, i.e. `G_pq(x) = sum_r conj(h_r(x, p)) h_r(x, q)`
//! * `B(x) = I - G(x) / |L|` (ESPIRiT form)
//!
//! The fast path never forms `H(x)`. With `W = sum_r h_r h_r^H` it folds each
//! `|L| x |L|` block of `W` into a lag kernel `K_pq[d]` summed over all
//! `(s, t)` with `n_s - n_t = d`, then evaluates `G_pq(x) = sum_d K_pq[d]
//! exp(i 2 pi d.x)` on the voxel grid with one transform per channel pair.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{nominal_mults, Direction, NdFft};
use crate::grid::{voxel_count, wrapped_offset};
use crate::kernel::KernelSupport;
use crate::linalg::CMatrix;
use crate::nullspace::NullspaceBasis;

/// Default refusal point for materializing `H(x)`: 2^26 complex values (1 GiB).
pub const DEFAULT_FILTER_FIELD_CAP: usize = 1 << 26;

/// Bytes needed to hold `H(x)` for every voxel.
pub fn projected_filter_field_bytes(filters: usize, channels: usize, voxels: usize) -> u64 {
    (filters * channels * voxels * 16) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldMethod {
    Naive,
    Fast,
}

impl std::str::FromStr for FieldMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "naive" => Ok(FieldMethod::Naive),
            "fast" => Ok(FieldMethod::Fast),
            other => Err(format!("unknown field method {other:?}")),
        }
    }
}

/// `h_r(x, q)` sampled on a voxel grid, stored `[(r * Q + q) * N + voxel]`.
#[derive(Debug, Clone)]
pub struct FilterField {
    pub dims: Vec<usize>,
    pub channels: usize,
    pub filters: usize,
    pub values: Vec<Complex64>,
}

impl FilterField {
    pub fn plane(&self, r: usize, q: usize) -> &[Complex64] {
        let n = voxel_count(&self.dims);
        let start = (r * self.channels + q) * n;
        &self.values[start..start + n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldForm {
    /// `G(x)`
    Gram,
    /// `B(x) = I - G(x)/|L|`
    Espirit,
}

/// One `Q x Q` Hermitian matrix per voxel, voxel-major and row-major inside.
#[derive(Debug, Clone)]
pub struct GramField {
    pub dims: Vec<usize>,
    pub channels: usize,
    pub form: FieldForm,
    pub values: Vec<Complex64>,
}

impl GramField {
    pub fn voxels(&self) -> usize {
        voxel_count(&self.dims)
    }

    pub fn matrix(&self, v: usize) -> &[Complex64] {
        let qq = self.channels * self.channels;
        &self.values[v * qq..(v + 1) * qq]
    }

    pub fn bytes(&self) -> u64 {
        (self.values.len() * std::mem::size_of::<Complex64>()) as u64
    }
}

#[derive(Debug, Clone)]
pub struct AggregateW {
    pub matrix: CMatrix,
    pub channels: usize,
    pub support_size: usize,
}

impl AggregateW {
    /// Block `W_qp`, entry `(s, t)` = `sum_r h_r[n_s, q] conj(h_r[n_t, p])`.
    pub fn block(&self, q: usize, p: usize) -> CMatrix {
        let l = self.support_size;
        let mut b = CMatrix::zeros(l, l);
        for s in 0..l {
            for t in 0..l {
                b[(s, t)] = self.matrix[(q * l + s, p * l + t)];
            }
        }
        b
    }
}

fn check_support(basis: &NullspaceBasis, support: &KernelSupport, dims: &[usize]) -> Result<()> {
    if basis.support_size != support.size() {
        return Err(Error::DimensionMismatch(format!(
            "basis built for |L| = {}, support has {}",
            basis.support_size,
            support.size()
        )));
    }
    if dims.len() != support.rank() || dims.contains(&0) {
        return Err(Error::DimensionMismatch(format!(
            "voxel grid {dims:?} vs support rank {}",
            support.rank()
        )));
    }
    Ok(())
}

/// Evaluate every filter on every channel at every voxel.
pub fn filter_field_naive(
    basis: &NullspaceBasis,
    support: &KernelSupport,
    dims: &[usize],
    cap: usize,
) -> Result<FilterField> {
    check_support(basis, support, dims)?;
    let n = voxel_count(dims);
    let q_count = basis.channels;
    let r_count = basis.dim();
    let requested = r_count * q_count * n;
    if requested > cap {
        return Err(Error::MemoryCap { requested, cap });
    }
    let plans = NdFft::new(dims);
    let positions: Vec<usize> = support
        .offsets()
        .iter()
        .map(|o| wrapped_offset(o, dims))
        .collect();
    let l = support.size();
    let mut values = vec![Complex64::default(); requested];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (r, q) = (plane / q_count, plane % q_count);
            let h = &basis.filters[r][q * l..(q + 1) * l];
            for (&pos, &v) in positions.iter().zip(h) {
                dst[pos] += v;
            }
            plans.transform_centered(dst, Direction::Evaluate);
        });
    Ok(FilterField {
        dims: dims.to_vec(),
        channels: q_count,
        filters: r_count,
        values,
    })
}

/// `G(x)` by summing over filters at each voxel.
pub fn gram_field_naive(field: &FilterField) -> GramField {
    let n = voxel_count(&field.dims);
    let qc = field.channels;
    let mut values = vec![Complex64::default(); n * qc * qc];
    values
        .par_chunks_mut(qc * qc)
        .enumerate()
        .for_each(|(v, g)| {
            for r in 0..field.filters {
                for p in 0..qc {
                    let hp = field.plane(r, p)[v].conj();
                    for q in 0..qc {
                        g[p * qc + q] += hp * field.plane(r, q)[v];
                    }
                }
            }
        });
    GramField {
        dims: field.dims.clone(),
        channels: qc,
        form: FieldForm::Gram,
        values,
    }
}

/// `W = sum_r h_r h_r^H`.
pub fn aggregate_w(basis: &NullspaceBasis) -> Result<AggregateW> {
    if basis.dim() == 0 {
        return Err(Error::EmptyNullspace {
            threshold_ratio: basis.threshold_ratio,
        });
    }
    let m = basis.filter_len();
    let mut data = vec![Complex64::default(); m * m];
    data.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        for h in &basis.filters {
            let hi = h[i];
            if hi == Complex64::default() {
                continue;
            }
            for (d, hj) in row.iter_mut().zip(h) {
                *d += hi * hj.conj();
            }
        }
    });
    let mut matrix = CMatrix::from_vec(m, m, data);
    matrix.symmetrize();
    Ok(AggregateW {
        matrix,
        channels: basis.channels,
        support_size: basis.support_size,
    })
}

/// `G(x)` on `dims` from `W` with one evaluation transform per `p <= q` pair.
pub fn gram_field_fast(w: &AggregateW, support: &KernelSupport, dims: &[usize]) -> Result<GramField> {
    if w.support_size != support.size() {
        return Err(Error::DimensionMismatch(format!(
            "W built for |L| = {}, support has {}",
            w.support_size,
            support.size()
        )));
    }
    if dims.len() != support.rank() || dims.contains(&0) {
        return Err(Error::DimensionMismatch(format!(
            "voxel grid {dims:?} vs support rank {}",
            support.rank()
        )));
    }
    let l = support.size();
    let qc = w.channels;
    let n = voxel_count(dims);
    let plans = NdFft::new(dims);
    let offs = support.offsets();
    let lag_pos: Vec<usize> = offs
        .iter()
        .flat_map(|ns| {
            offs.iter().map(move |nt| {
                let d: Vec<i64> = ns.iter().zip(nt).map(|(a, b)| a - b).collect();
                wrapped_offset(&d, dims)
            })
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..qc)
        .flat_map(|p| (p..qc).map(move |q| (p, q)))
        .collect();
    let planes: Vec<Vec<Complex64>> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let mut plane = vec![Complex64::default(); n];
            for s in 0..l {
                let row = &w.matrix.row(q * l + s)[p * l..(p + 1) * l];
                let pos = &lag_pos[s * l..(s + 1) * l];
                for (&dst, &val) in pos.iter().zip(row) {
                    plane[dst] += val;
                }
            }
            plans.transform_centered(&mut plane, Direction::Evaluate);
            plane
        })
        .collect();

    let mut values = vec![Complex64::default(); n * qc * qc];
    values
        .par_chunks_mut(qc * qc)
        .enumerate()
        .for_each(|(v, g)| {
            for (&(p, q), plane) in pairs.iter().zip(&planes) {
                let val = plane[v];
                if p == q {
                    g[p * qc + p] = Complex64::new(val.re, 0.0);
                } else {
                    g[p * qc + q] = val;
                    g[q * qc + p] = val.conj();
                }
            }
        });
    Ok(GramField {
        dims: dims.to_vec(),
        channels: qc,
        form: FieldForm::Gram,
        values,
    })
}

/// Transient bytes held by [`gram_field_fast`] beyond its output: one plane
/// per `p <= q` pair.
pub fn fast_field_scratch_bytes(channels: usize, voxels: usize) -> u64 {
    (channels * (channels + 1) / 2 * voxels * 16) as u64
}

/// `B(x) = I - G(x) / |L|`.
pub fn to_espirit_field(g: &GramField, support_size: usize) -> GramField {
    let qc = g.channels;
    let inv = 1.0 / support_size as f64;
    let mut values: Vec<Complex64> = g.values.iter().map(|v| -v * inv).collect();
    values.par_chunks_mut(qc * qc).for_each(|m| {
        for i in 0..qc {
            m[i * qc + i] += 1.0;
        }
    });
    GramField {
        dims: g.dims.clone(),
        channels: qc,
        form: FieldForm::Espirit,
        values,
    }
}

/// Complex multiplications for the direct per-voxel evaluation of `G(x)`.
pub fn naive_gram_field_mults(channels: usize, support: usize, filters: usize, voxels: usize) -> f64 {
    let (q, l, r, n) = (channels as f64, support as f64, filters as f64, voxels as f64);
    q * q * l * l * (r + 1.0) * n
}

/// Complex multiplications performed by the fast path: forming `W` plus one
/// nominal radix-2 transform per `p <= q` pair.
pub fn fast_gram_field_mults(channels: usize, support: usize, filters: usize, dims: &[usize]) -> f64 {
    let (q, l, r) = (channels as f64, support as f64, filters as f64);
    let n = voxel_count(dims) as f64;
    let per_transform: f64 = dims.iter().map(|&d| n / d as f64 * nominal_mults(d)).sum();
    let pairs = q * (q + 1.0) / 2.0;
    q * q * l * l * r + pairs * per_transform
}
