//! Calibration matrix `C` and its Gram `C^H C`.
//!
//! Column layout is channel-major: block `q` spans columns
//! `q*|L| .. (q+1)*|L|` in support enumeration order, and the entry for shift
//! `n` (one row) and offset `n_i` is `s_q[n - n_i]`. Only shifts whose whole
//! rectangular `tau`-box lies inside the calibration region are used, for
//! both support shapes.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{Direction, NdFft};
use crate::grid::{ravel, unravel, voxel_count, CalibrationRegion};
use crate::kernel::KernelSupport;
use crate::linalg::CMatrix;

#[derive(Debug, Clone)]
pub struct CalibMatrix {
    pub matrix: CMatrix,
    pub support_size: usize,
    pub channels: usize,
}

impl CalibMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramMethod {
    Explicit,
    Fft,
}

impl std::str::FromStr for GramMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(GramMethod::Explicit),
            "fft" => Ok(GramMethod::Fft),
            other => Err(format!("unknown gram method {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub matrix: CMatrix,
    pub method: GramMethod,
    pub channels: usize,
    pub support_size: usize,
    /// (forward, inverse) zero-padded transforms used by the FFT path.
    pub transforms: Option<(usize, usize)>,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Block `(p, q)`, i.e. `C_p^H C_q`.
    pub fn block(&self, p: usize, q: usize) -> CMatrix {
        let l = self.support_size;
        let mut b = CMatrix::zeros(l, l);
        for s in 0..l {
            for t in 0..l {
                b[(s, t)] = self.matrix[(p * l + s, q * l + t)];
            }
        }
        b
    }
}

fn check_fits(calib: &CalibrationRegion, support: &KernelSupport) -> Result<Vec<usize>> {
    let dims = calib.dims();
    if dims.len() != support.rank() {
        return Err(Error::DimensionMismatch(format!(
            "support rank {} vs calibration rank {}",
            support.rank(),
            dims.len()
        )));
    }
    let tau = support.tau();
    if dims.iter().any(|&e| e <= 2 * tau) {
        return Err(Error::CalibrationTooSmall {
            extents: dims.to_vec(),
            tau,
        });
    }
    Ok(dims.iter().map(|&e| e - 2 * tau).collect())
}

/// Explicit `C`, one row per valid shift (lexicographic).
pub fn build_calib_matrix(calib: &CalibrationRegion, support: &KernelSupport) -> Result<CalibMatrix> {
    let valid = check_fits(calib, support)?;
    let dims = calib.dims();
    let tau = support.tau() as i64;
    let q_count = calib.channels();
    let l = support.size();
    let p_rows = voxel_count(&valid);
    let cols = q_count * l;

    // flat sample offset of (row shift origin) and of each support offset
    let offset_delta: Vec<i64> = support
        .offsets()
        .iter()
        .map(|o| {
            let neg: Vec<i64> = o.iter().map(|v| -v).collect();
            neg.iter()
                .zip(crate::grid::strides(dims))
                .map(|(v, s)| v * s as i64)
                .sum()
        })
        .collect();

    let mut data = vec![Complex64::default(); p_rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(row, dst)| {
        let mut idx = vec![0usize; valid.len()];
        unravel(row, &valid, &mut idx);
        let shifted: Vec<usize> = idx.iter().map(|&i| i + tau as usize).collect();
        let base = ravel(&shifted, dims) as i64;
        for q in 0..q_count {
            let ch = calib.grid().channel(q);
            for (i, d) in offset_delta.iter().enumerate() {
                dst[q * l + i] = ch[(base + d) as usize];
            }
        }
    });
    Ok(CalibMatrix {
        matrix: CMatrix::from_vec(p_rows, cols, data),
        support_size: l,
        channels: q_count,
    })
}

/// `C^H C` by direct multiplication, symmetrized.
pub fn gram_explicit(c: &CalibMatrix) -> GramMatrix {
    let m = &c.matrix;
    let n = m.cols();
    let rows = m.rows();
    let mut out = vec![Complex64::default(); n * n];
    // upper triangle row by row
    out.par_chunks_mut(n).enumerate().for_each(|(i, dst)| {
        for r in 0..rows {
            let row = m.row(r);
            let a = row[i].conj();
            if a == Complex64::default() {
                continue;
            }
            for (d, b) in dst[i..].iter_mut().zip(&row[i..]) {
                *d += a * b;
            }
        }
    });
    for i in 0..n {
        for j in 0..i {
            out[i * n + j] = out[j * n + i].conj();
        }
    }
    let mut matrix = CMatrix::from_vec(n, n, out);
    matrix.symmetrize();
    GramMatrix {
        matrix,
        method: GramMethod::Explicit,
        channels: c.channels,
        support_size: c.support_size,
        transforms: None,
    }
}

/// Zero-padded transform length per axis: next power of two `>= extent + 2 tau`.
pub fn fft_pad_dims(calib_dims: &[usize], tau: usize) -> Vec<usize> {
    calib_dims
        .iter()
        .map(|&e| (e + 2 * tau).next_power_of_two())
        .collect()
}

/// Approximate `C^H C` from per-pair cross-correlations, neglecting the
/// row mask: block `(p, q)` entry `(s, t)` is
/// `a_pq[n_s - n_t]` with `a_pq[d] = sum_m conj(s_p[m]) s_q[m + d]`.
pub fn gram_fft(calib: &CalibrationRegion, support: &KernelSupport) -> Result<GramMatrix> {
    check_fits(calib, support)?;
    let dims = calib.dims();
    let q_count = calib.channels();
    let l = support.size();
    let pad = fft_pad_dims(dims, support.tau());
    let plans = NdFft::new(&pad);
    let padded_len = voxel_count(&pad);

    // zero-padded spectra, data placed at the low corner
    let spectra: Vec<Vec<Complex64>> = (0..q_count)
        .into_par_iter()
        .map(|q| {
            let mut buf = vec![Complex64::default(); padded_len];
            let ch = calib.grid().channel(q);
            let mut idx = vec![0usize; dims.len()];
            for (v, val) in ch.iter().enumerate() {
                unravel(v, dims, &mut idx);
                buf[ravel(&idx, &pad)] = *val;
            }
            plans.transform(&mut buf, Direction::Forward);
            buf
        })
        .collect();

    // lags n_s - n_t for every (s, t), as flat offsets into the periodic
    // correlation array
    let lag_offsets: Vec<usize> = {
        let offs = support.offsets();
        let mut v = Vec::with_capacity(l * l);
        for ns in offs {
            for nt in offs {
                let flat = ns.iter().zip(nt).zip(&pad).fold(0usize, |acc, ((a, b), &n)| {
                    acc * n + (a - b).rem_euclid(n as i64) as usize
                });
                v.push(flat);
            }
        }
        v
    };

    let scale = 1.0 / padded_len as f64;
    let pairs: Vec<(usize, usize)> = (0..q_count)
        .flat_map(|p| (0..q_count).map(move |q| (p, q)))
        .collect();
    // The correlation evaluation direction must carry the opposite sign of
    // the forward transform.
    let blocks: Vec<Vec<Complex64>> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let mut prod: Vec<Complex64> = spectra[p]
                .iter()
                .zip(&spectra[q])
                .map(|(a, b)| a.conj() * b)
                .collect();
            plans.transform(&mut prod, Direction::Evaluate);
            lag_offsets.iter().map(|&o| prod[o] * scale).collect()
        })
        .collect();

    let n = q_count * l;
    let mut matrix = CMatrix::zeros(n, n);
    for (&(p, q), block) in pairs.iter().zip(&blocks) {
        for s in 0..l {
            for t in 0..l {
                matrix[(p * l + s, q * l + t)] = block[s * l + t];
            }
        }
    }
    matrix.symmetrize();
    Ok(GramMatrix {
        matrix,
        method: GramMethod::Fft,
        channels: q_count,
        support_size: l,
        transforms: Some((q_count, q_count * q_count)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ComplexImageStack, Domain};
    use crate::kernel::{make_support, KernelShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_calib(dims: &[usize], q: usize, seed: u64) -> CalibrationRegion {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = q * voxel_count(dims);
        let data = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        CalibrationRegion::from_stack(
            ComplexImageStack::new(dims.to_vec(), q, data, Domain::Kspace).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn shapes() {
        let c = random_calib(&[24, 24], 32, 1);
        let m = build_calib_matrix(&c, &make_support(KernelShape::Rect, 3, 2)).unwrap();
        assert_eq!((m.rows(), m.cols()), (324, 1568));
        let e = build_calib_matrix(&c, &make_support(KernelShape::Ellipsoid, 3, 2)).unwrap();
        assert_eq!((e.rows(), e.cols()), (324, 32 * 29));
    }

    #[test]
    fn identity_kernel_is_the_samples() {
        let c = random_calib(&[8, 8], 1, 2);
        let m = build_calib_matrix(&c, &make_support(KernelShape::Rect, 0, 2)).unwrap();
        assert_eq!((m.rows(), m.cols()), (64, 1));
        assert_eq!(m.matrix.column(0), c.grid().channel(0));

        let g = gram_explicit(&m);
        let energy: f64 = c.grid().channel(0).iter().map(|v| v.norm_sqr()).sum();
        assert!((g.matrix[(0, 0)].re - energy).abs() < 1e-12 * energy);
        let f = gram_fft(&c, &make_support(KernelShape::Rect, 0, 2)).unwrap();
        assert!((f.matrix[(0, 0)] - g.matrix[(0, 0)]).norm() < 1e-12 * energy);
    }

    #[test]
    fn entries_follow_shift_rule() {
        let c = random_calib(&[7, 6], 2, 3);
        let sup = make_support(KernelShape::Rect, 1, 2);
        let m = build_calib_matrix(&c, &sup).unwrap();
        let valid = [5usize, 4];
        for row in 0..m.rows() {
            let n = [(row / valid[1] + 1) as i64, (row % valid[1] + 1) as i64];
            for q in 0..2 {
                for (i, o) in sup.offsets().iter().enumerate() {
                    let src = [(n[0] - o[0]) as usize, (n[1] - o[1]) as usize];
                    assert_eq!(
                        m.matrix[(row, q * 9 + i)],
                        c.grid().channel(q)[ravel(&src, &[7, 6])]
                    );
                }
            }
        }
    }

    #[test]
    fn too_small() {
        let c = random_calib(&[6, 8], 1, 4);
        assert!(matches!(
            build_calib_matrix(&c, &make_support(KernelShape::Rect, 3, 2)),
            Err(Error::CalibrationTooSmall { .. })
        ));
        assert!(gram_fft(&c, &make_support(KernelShape::Ellipsoid, 3, 2)).is_err());
    }

    #[test]
    fn explicit_gram_matches_triple_loop() {
        let c = random_calib(&[12, 12], 3, 5);
        let m = build_calib_matrix(&c, &make_support(KernelShape::Rect, 1, 2)).unwrap();
        let g = gram_explicit(&m);
        let n = m.cols();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::default();
                for r in 0..m.rows() {
                    acc += m.matrix[(r, i)].conj() * m.matrix[(r, j)];
                }
                worst = worst.max((acc - g.matrix[(i, j)]).norm());
            }
        }
        assert!(worst < 1e-12 * g.matrix.frobenius());
        assert!(g.matrix.hermitian_defect() < 1e-14);
    }

    #[test]
    fn fft_gram_structure() {
        let c = random_calib(&[10, 9], 3, 6);
        let sup = make_support(KernelShape::Ellipsoid, 2, 2);
        let g = gram_fft(&c, &sup).unwrap();
        assert_eq!(g.transforms, Some((3, 9)));
        let l = sup.size();
        // block (p,q) = block (q,p)^H
        for p in 0..3 {
            for q in 0..3 {
                let a = g.block(p, q);
                let b = g.block(q, p).adjoint();
                assert!((0..l * l).all(|i| (a.data()[i] - b.data()[i]).norm() < 1e-12));
            }
        }
        // entries depend only on the lag n_s - n_t
        let offs = sup.offsets();
        let b = g.block(0, 2);
        for s in 0..l {
            for t in 0..l {
                for s2 in 0..l {
                    for t2 in 0..l {
                        let d1: Vec<i64> = offs[s].iter().zip(&offs[t]).map(|(a, b)| a - b).collect();
                        let d2: Vec<i64> =
                            offs[s2].iter().zip(&offs[t2]).map(|(a, b)| a - b).collect();
                        if d1 == d2 {
                            assert!((b[(s, t)] - b[(s2, t2)]).norm() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fft_gram_matches_unmasked_correlation() {
        // direct lag sum over the whole region, no row mask
        let c = random_calib(&[9, 8], 2, 7);
        let sup = make_support(KernelShape::Rect, 1, 2);
        let g = gram_fft(&c, &sup).unwrap();
        let dims = [9i64, 8];
        let l = sup.size();
        for p in 0..2 {
            for q in 0..2 {
                for s in 0..l {
                    for t in 0..l {
                        let d: Vec<i64> = sup.offsets()[s]
                            .iter()
                            .zip(&sup.offsets()[t])
                            .map(|(a, b)| a - b)
                            .collect();
                        let mut acc = Complex64::default();
                        for m0 in 0..dims[0] {
                            for m1 in 0..dims[1] {
                                let (u0, u1) = (m0 + d[0], m1 + d[1]);
                                if u0 < 0 || u1 < 0 || u0 >= dims[0] || u1 >= dims[1] {
                                    continue;
                                }
                                acc += c.grid().channel(p)[(m0 * dims[1] + m1) as usize].conj()
                                    * c.grid().channel(q)[(u0 * dims[1] + u1) as usize];
                            }
                        }
                        assert!((acc - g.matrix[(p * l + s, q * l + t)]).norm() < 1e-10);
                    }
                }
            }
        }
    }
}
