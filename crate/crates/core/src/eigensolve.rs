//! Per-voxel extremal eigenpairs of a [`GramField`].

use num_complex::Complex64;
use rayon::prelude::*;

use crate::linalg::hermitian_eigen_slice;
use crate::spatial::GramField;

pub const DEFAULT_POWER_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremal {
    Smallest,
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Dense,
    Power,
}

impl std::str::FromStr for EigenMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(EigenMethod::Dense),
            "power" => Ok(EigenMethod::Power),
            other => Err(format!("unknown eigen method {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub channels: usize,
    /// Unit vectors, `channels` entries per voxel.
    pub vectors: Vec<Complex64>,
    pub values: Vec<f64>,
    /// Runner-up eigenvalue per voxel (dense path only).
    pub second_values: Option<Vec<f64>>,
    pub iterations_used: usize,
}

impl EigenResult {
    pub fn vector(&self, v: usize) -> &[Complex64] {
        &self.vectors[v * self.channels..(v + 1) * self.channels]
    }

    pub fn voxels(&self) -> usize {
        self.values.len()
    }
}

pub fn eig_dense_field(field: &GramField, which: Extremal) -> EigenResult {
    let qc = field.channels;
    let n = field.voxels();
    let per_voxel: Vec<(Vec<Complex64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|v| {
            let e = hermitian_eigen_slice(field.matrix(v), qc);
            let (i, j) = match which {
                Extremal::Smallest => (0, 1.min(qc - 1)),
                Extremal::Largest => (qc - 1, qc.saturating_sub(2)),
            };
            (e.vectors[i].clone(), e.values[i], e.values[j])
        })
        .collect();
    let mut vectors = Vec::with_capacity(n * qc);
    let mut values = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for (vec, a, b) in per_voxel {
        vectors.extend(vec);
        values.push(a);
        second.push(b);
    }
    EigenResult {
        channels: qc,
        vectors,
        values,
        second_values: Some(second),
        iterations_used: 0,
    }
}

fn apply(m: &[Complex64], v: &[Complex64], out: &mut [Complex64]) {
    let q = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * q..(i + 1) * q].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn normalize(v: &mut [Complex64]) -> f64 {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Deterministic starting vector: normalized all-ones.
pub fn power_init(q: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0 / (q as f64).sqrt(), 0.0); q]
}

fn rayleigh(m: &[Complex64], v: &[Complex64], scratch: &mut [Complex64]) -> f64 {
    apply(m, v, scratch);
    v.iter().zip(scratch.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

/// First multiply with the fallback restart at `e_1` when the starting
/// vector is annihilated.
fn first_step(m: &[Complex64], v: &mut [Complex64], scratch: &mut [Complex64]) {
    apply(m, v, scratch);
    if normalize(scratch) < 1e-14 {
        v.iter_mut().for_each(|x| *x = Complex64::default());
        v[0] = Complex64::new(1.0, 0.0);
        apply(m, v, scratch);
        if normalize(scratch) < 1e-14 {
            return;
        }
    }
    v.copy_from_slice(scratch);
}

/// Power iteration on a single `q x q` matrix; returns (vector, Rayleigh quotient).
pub fn power_iterate(m: &[Complex64], q: usize, iters: usize) -> (Vec<Complex64>, f64) {
    let mut v = power_init(q);
    let mut scratch = vec![Complex64::default(); q];
    for it in 0..iters {
        if it == 0 {
            first_step(m, &mut v, &mut scratch);
        } else {
            apply(m, &v, &mut scratch);
            if normalize(&mut scratch) > 0.0 {
                v.copy_from_slice(&scratch);
            }
        }
    }
    let val = rayleigh(m, &v, &mut scratch);
    (v, val)
}

/// `iters` rounds of `v <- normalize(B(x) v)` applied to every voxel in
/// lockstep; the field should be in ESPIRiT form so the target eigenpair
/// is the dominant one.
pub fn eig_power_field(field: &GramField, iters: usize) -> EigenResult {
    let qc = field.channels;
    let n = field.voxels();
    let init = power_init(qc);
    let mut vectors: Vec<Complex64> = (0..n).flat_map(|_| init.iter().copied()).collect();
    for it in 0..iters {
        vectors
            .par_chunks_mut(qc)
            .enumerate()
            .for_each_init(
                || vec![Complex64::default(); qc],
                |scratch, (v, vec)| {
                    let m = field.matrix(v);
                    if it == 0 {
                        first_step(m, vec, scratch);
                    } else {
                        apply(m, vec, scratch);
                        if normalize(scratch) > 0.0 {
                            vec.copy_from_slice(scratch);
                        }
                    }
                },
            );
    }
    let values: Vec<f64> = vectors
        .par_chunks(qc)
        .enumerate()
        .map_init(
            || vec![Complex64::default(); qc],
            |scratch, (v, vec)| rayleigh(field.matrix(v), vec, scratch),
        )
        .collect();
    EigenResult {
        channels: qc,
        vectors,
        values,
        second_values: None,
        iterations_used: iters,
    }
}

/// Angle between two vectors modulo a unit phase.
pub fn phase_free_angle(a: &[Complex64], b: &[Complex64]) -> f64 {
    let ab: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let c = (ab.norm() / (na * nb)).min(1.0);
    // acos loses precision near 1; use the sine of the residual instead
    let resid: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / na * (ab / ab.norm().max(f64::MIN_POSITIVE)) - y / nb).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if c > 0.9 {
        2.0 * (0.5 * resid).min(1.0).asin()
    } else {
        c.acos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;
    use crate::spatial::FieldForm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_field(m: &CMatrix, voxels: usize, form: FieldForm) -> GramField {
        GramField {
            dims: vec![voxels],
            channels: m.rows(),
            form,
            values: (0..voxels).flat_map(|_| m.data().iter().copied()).collect(),
        }
    }

    fn random_psd_field(q: usize, voxels: usize, seed: u64) -> GramField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        for _ in 0..voxels {
            let a = CMatrix::from_vec(
                q,
                q,
                (0..q * q)
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            );
            let mut m = a.adjoint().matmul(&a);
            m.symmetrize();
            values.extend_from_slice(m.data());
        }
        GramField {
            dims: vec![voxels],
            channels: q,
            form: FieldForm::Espirit,
            values,
        }
    }

    #[test]
    fn dense_smallest() {
        let f = uniform_field(&CMatrix::from_diag(&[3.0, 1.0, 0.01]), 2, FieldForm::Gram);
        let r = eig_dense_field(&f, Extremal::Smallest);
        assert!((r.values[1] - 0.01).abs() < 1e-15);
        assert!((r.vector(1)[2].norm() - 1.0).abs() < 1e-15);
        assert_eq!(r.second_values.as_ref().unwrap()[0], 1.0);
    }

    #[test]
    fn dense_identity_degenerate() {
        let f = uniform_field(&CMatrix::identity(3), 1, FieldForm::Gram);
        let r = eig_dense_field(&f, Extremal::Largest);
        assert!((r.values[0] - 1.0).abs() < 1e-15);
        assert_eq!(r.values[0] - r.second_values.as_ref().unwrap()[0], 0.0);
        assert!((crate::linalg::norm(r.vector(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_residuals() {
        let f = random_psd_field(5, 50, 3);
        for which in [Extremal::Smallest, Extremal::Largest] {
            let r = eig_dense_field(&f, which);
            for v in 0..50 {
                let m = CMatrix::from_vec(5, 5, f.matrix(v).to_vec());
                let mv = m.mul_vec(r.vector(v));
                let res: f64 = mv
                    .iter()
                    .zip(r.vector(v))
                    .map(|(a, b)| (a - b * r.values[v]).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(res < 1e-9);
                assert!((crate::linalg::norm(r.vector(v)) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn power_gap_ten() {
        let f = uniform_field(&CMatrix::from_diag(&[1.0, 0.1]), 3, FieldForm::Espirit);
        let r = eig_power_field(&f, 10);
        assert_eq!(r.iterations_used, 10);
        for v in 0..3 {
            let e1 = [Complex64::new(1.0, 0.0), Complex64::default()];
            assert!(phase_free_angle(r.vector(v), &e1) < 1e-9);
        }
    }

    #[test]
    fn power_identity_keeps_init() {
        let f = uniform_field(&CMatrix::identity(4), 2, FieldForm::Espirit);
        let r = eig_power_field(&f, 10);
        let init = power_init(4);
        for v in 0..2 {
            for (a, b) in r.vector(v).iter().zip(&init) {
                assert!((a - b).norm() < 1e-15);
            }
            assert!((r.values[v] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn power_fallback_reinit() {
        // all-ones lies in the kernel of this projector
        let m = CMatrix::from_vec(
            2,
            2,
            vec![
                Complex64::new(0.5, 0.0),
                Complex64::new(-0.5, 0.0),
                Complex64::new(-0.5, 0.0),
                Complex64::new(0.5, 0.0),
            ],
        );
        let (v, val) = power_iterate(m.data(), 2, 10);
        assert!((val - 1.0).abs() < 1e-12);
        assert!((v[0] + v[1]).norm() < 1e-12);
    }

    #[test]
    fn batched_matches_single_voxel() {
        let f = random_psd_field(4, 40, 5);
        let r = eig_power_field(&f, 10);
        for v in 0..40 {
            let (vec, val) = power_iterate(f.matrix(v), 4, 10);
            assert!((val - r.values[v]).abs() < 1e-12);
            for (a, b) in vec.iter().zip(r.vector(v)) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rayleigh_non_decreasing() {
        let f = random_psd_field(4, 30, 6);
        for v in 0..30 {
            let mut prev = f64::NEG_INFINITY;
            for it in 0..12 {
                let (_, val) = power_iterate(f.matrix(v), 4, it);
                assert!(val >= prev - 1e-12, "voxel {v} iter {it}");
                prev = val;
            }
        }
    }

    #[test]
    fn angle_helper() {
        let a = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let ph = Complex64::from_polar(2.0, 0.3);
        let b: Vec<Complex64> = a.iter().map(|x| x * ph).collect();
        assert!(phase_free_angle(&a, &b) < 1e-15);
        let c = [Complex64::new(0.0, 1.0), Complex64::new(1.0, 0.0)];
        assert!((phase_free_angle(&a, &c) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
