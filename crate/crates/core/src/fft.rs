//! Centered multidimensional DFTs on row-major grids.
//!
//! All transforms here are unnormalized unless the name says otherwise.
//! "Centered" means index `n/2` is the origin on both sides of the transform,
//! so for a k-space grid `X` and image grid `x`:
//!
//! ```text
//! forward:  X[k] = sum_j x[j] exp(-i 2 pi (k - c)(j - c) / n)
//! evaluate: x[j] = sum_k X[k] exp(+i 2 pi (k - c)(j - c) / n)
//! ```
//!
//! `evaluate` is the image-domain evaluation of a finite lag sequence, i.e.
//! `h(x) = sum_n h[n] exp(i 2 pi n.x)` at every voxel.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::grid::{voxel_count, FovConvention, FILTER_PHASE_SIGN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// k-space from image samples (negative exponent).
    Forward,
    /// Image samples from k-space/lag samples (positive exponent).
    Evaluate,
}

impl Direction {
    fn rustfft(self) -> FftDirection {
        let evaluate_is_inverse = FILTER_PHASE_SIGN > 0.0;
        match (self, evaluate_is_inverse) {
            (Direction::Evaluate, true) | (Direction::Forward, false) => FftDirection::Inverse,
            _ => FftDirection::Forward,
        }
    }
}

/// Reusable per-axis plans for one grid shape.
#[derive(Clone)]
pub struct NdFft {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    evaluate: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for NdFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NdFft").field("dims", &self.dims).finish()
    }
}

impl NdFft {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims
            .iter()
            .map(|&n| planner.plan_fft(n, Direction::Forward.rustfft()))
            .collect();
        let evaluate = dims
            .iter()
            .map(|&n| planner.plan_fft(n, Direction::Evaluate.rustfft()))
            .collect();
        Self {
            dims: dims.to_vec(),
            forward,
            evaluate,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        voxel_count(&self.dims)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plain (origin at index 0) unnormalized transform along every axis.
    pub fn transform(&self, data: &mut [Complex64], dir: Direction) {
        assert_eq!(data.len(), self.len());
        for axis in 0..self.dims.len() {
            self.transform_axis(data, axis, dir);
        }
    }

    /// Origin-at-center transform; see module docs.
    pub fn transform_centered(&self, data: &mut [Complex64], dir: Direction) {
        let mut scratch = vec![Complex64::default(); data.len()];
        roll(data, &mut scratch, &self.dims, false);
        self.transform(&mut scratch, dir);
        roll(&scratch, data, &self.dims, true);
    }

    /// Centered transform scaled by `1/sqrt(N)` (unitary).
    pub fn transform_centered_unitary(&self, data: &mut [Complex64], dir: Direction) {
        self.transform_centered(data, dir);
        let s = 1.0 / (self.len() as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= s);
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, dir: Direction) {
        let n = self.dims[axis];
        if n == 1 {
            return;
        }
        let plan = match dir {
            Direction::Forward => &self.forward[axis],
            Direction::Evaluate => &self.evaluate[axis],
        };
        let inner: usize = self.dims[axis + 1..].iter().product();
        let outer: usize = self.dims[..axis].iter().product();
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        if inner == 1 {
            plan.process_with_scratch(data, &mut scratch);
            return;
        }
        let mut lane = vec![Complex64::default(); n];
        for o in 0..outer {
            let base = o * n * inner;
            for i in 0..inner {
                for (k, l) in lane.iter_mut().enumerate() {
                    *l = data[base + k * inner + i];
                }
                plan.process_with_scratch(&mut lane, &mut scratch);
                for (k, l) in lane.iter().enumerate() {
                    data[base + k * inner + i] = *l;
                }
            }
        }
    }
}

/// Circularly shift so that the conventional center moves to index 0
/// (`to_center == false`) or back (`to_center == true`).
fn roll(src: &[Complex64], dst: &mut [Complex64], dims: &[usize], to_center: bool) {
    let d = dims.len();
    let shifts: Vec<usize> = dims
        .iter()
        .map(|&n| {
            let c = FovConvention::center(n);
            if to_center {
                c
            } else {
                n - c
            }
        })
        .collect();
    let mut idx = vec![0usize; d];
    for (flat, v) in src.iter().enumerate() {
        crate::grid::unravel(flat, dims, &mut idx);
        let mut out = 0;
        for a in 0..d {
            out = out * dims[a] + (idx[a] + shifts[a]) % dims[a];
        }
        dst[out] = *v;
    }
}

/// Number of complex multiplications attributed to one radix-2 transform of
/// `n` points, `(n/2) log2 n`; used for cost bookkeeping only.
pub fn nominal_mults(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    0.5 * n as f64 * (n as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{unravel, FovConvention};
    use std::f64::consts::PI;

    fn direct(data: &[Complex64], dims: &[usize], sign: f64) -> Vec<Complex64> {
        let n = data.len();
        let mut ki = vec![0; dims.len()];
        let mut ji = vec![0; dims.len()];
        (0..n)
            .map(|k| {
                unravel(k, dims, &mut ki);
                let mut acc = Complex64::default();
                for (j, v) in data.iter().enumerate() {
                    unravel(j, dims, &mut ji);
                    let mut ph = 0.0;
                    for a in 0..dims.len() {
                        let c = FovConvention::center(dims[a]) as f64;
                        ph += (ki[a] as f64 - c) * (ji[a] as f64 - c) / dims[a] as f64;
                    }
                    acc += v * Complex64::from_polar(1.0, sign * 2.0 * PI * ph);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn centered_matches_direct_sum() {
        for dims in [vec![5usize, 4], vec![3, 6], vec![7], vec![2, 3, 4]] {
            let n = voxel_count(&dims);
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let plans = NdFft::new(&dims);
            for (dir, sign) in [(Direction::Forward, -1.0), (Direction::Evaluate, 1.0)] {
                let mut y = x.clone();
                plans.transform_centered(&mut y, dir);
                let z = direct(&x, &dims, sign);
                for (a, b) in y.iter().zip(&z) {
                    assert!((a - b).norm() < 1e-10, "{dims:?} {dir:?}");
                }
            }
        }
    }

    #[test]
    fn unitary_round_trip() {
        let dims = [6, 5];
        let x: Vec<Complex64> = (0..30).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let plans = NdFft::new(&dims);
        let mut y = x.clone();
        plans.transform_centered_unitary(&mut y, Direction::Forward);
        plans.transform_centered_unitary(&mut y, Direction::Evaluate);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
