//! Dense complex matrices and a cyclic Jacobi Hermitian eigensolver.

use num_complex::Complex64;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::default(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::default() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `(A + A^H) / 2` in place.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for i in 0..n {
            self.data[i * n + i].im = 0.0;
            for j in i + 1..n {
                let avg = (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5;
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg.conj();
            }
        }
    }

    /// `|A - A^H|_F / |A|_F` (0 for the zero matrix).
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.rows;
        let mut num = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += (self.data[i * n + j] - self.data[j * n + i].conj()).norm_sqr();
            }
        }
        let den = self.frobenius();
        if den == 0.0 {
            0.0
        } else {
            num.sqrt() / den
        }
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// `vectors[i]` is the unit eigenvector for `values[i]`.
    pub vectors: Vec<Vec<Complex64>>,
    pub sweeps: usize,
}

pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 30;

#[derive(Clone, Copy)]
struct Rotation {
    p: usize,
    q: usize,
    c: f64,
    s: f64,
    /// `e s` and `e c` with `e = a_pq / |a_pq|`.
    se: Complex64,
    ce: Complex64,
    lo: f64,
    hi: f64,
}

/// Pairs of round `round` of a round-robin tournament on `m` (even) players;
/// each pair appears in exactly one of the `m - 1` rounds.
fn tournament_pair(round: usize, slot: usize, m: usize) -> (usize, usize) {
    let seat = |pos: usize| if pos == 0 { 0 } else { 1 + (pos - 1 + round) % (m - 1) };
    let (x, y) = (seat(slot), seat(m - 1 - slot));
    (x.min(y), x.max(y))
}

#[inline(always)]
fn sweeps_impl(
    a: &mut [Complex64],
    vt: &mut [Complex64],
    n: usize,
    total: f64,
    target: f64,
    skip: f64,
    off_norm: &dyn Fn(&[Complex64]) -> f64,
) -> usize {
    let m = n + n % 2;
    let mut round_rots: Vec<Rotation> = Vec::with_capacity(m / 2);
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS && total > 0.0 && n > 1 && off_norm(a) > target {
        sweeps += 1;
        for round in 0..m - 1 {
            round_rots.clear();
            for slot in 0..m / 2 {
                let (p, q) = tournament_pair(round, slot, m);
                if q >= n {
                    continue;
                }
                let apq = a[p * n + q];
                let r = apq.norm();
                if r <= skip || r < 1e-300 {
                    continue;
                }
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let e = apq / r;
                let zeta = (aqq - app) / (2.0 * r);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                round_rots.push(Rotation {
                    p,
                    q,
                    c,
                    s,
                    se: e * s,
                    ce: e * c,
                    lo: app - t * r,
                    hi: aqq + t * r,
                });
            }
            if round_rots.is_empty() {
                continue;
            }
            // Every index belongs to at most one pair, so rows p and q can be
            // finished (left rotation, then all right rotations) in one pass.
            for rot in &round_rots {
                let (head, tail) = a.split_at_mut(rot.q * n);
                let rp = &mut head[rot.p * n..(rot.p + 1) * n];
                let rq = &mut tail[..n];
                for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = xp * rot.c - rot.se * xq;
                    *y = xp * rot.s + rot.ce * xq;
                }
                for row in [rp, rq] {
                    for r2 in &round_rots {
                        let (xp, xq) = (row[r2.p], row[r2.q]);
                        row[r2.p] = xp * r2.c - r2.se.conj() * xq;
                        row[r2.q] = xp * r2.s + r2.ce.conj() * xq;
                    }
                }
                let (sc, cc) = (rot.se.conj(), rot.ce.conj());
                let (head, tail) = vt.split_at_mut(rot.q * n);
                let vp = &mut head[rot.p * n..(rot.p + 1) * n];
                let vq = &mut tail[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = xp * rot.c - sc * xq;
                    *y = xp * rot.s + cc * xq;
                }
            }
            // rows untouched by this round (skipped pairs) still need the
            // right rotations
            if round_rots.len() * 2 < n {
                let mut touched = vec![false; n];
                for rot in &round_rots {
                    touched[rot.p] = true;
                    touched[rot.q] = true;
                }
                for (k, row) in a.chunks_exact_mut(n).enumerate() {
                    if touched[k] {
                        continue;
                    }
                    for rot in &round_rots {
                        let (xp, xq) = (row[rot.p], row[rot.q]);
                        row[rot.p] = xp * rot.c - rot.se.conj() * xq;
                        row[rot.q] = xp * rot.s + rot.ce.conj() * xq;
                    }
                }
            }
            for rot in &round_rots {
                a[rot.p * n + rot.p] = Complex64::new(rot.lo, 0.0);
                a[rot.q * n + rot.q] = Complex64::new(rot.hi, 0.0);
                a[rot.p * n + rot.q] = Complex64::default();
                a[rot.q * n + rot.p] = Complex64::default();
            }
        }
    }

    sweeps
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn sweeps_avx2(
    a: &mut [Complex64],
    vt: &mut [Complex64],
    n: usize,
    total: f64,
    target: f64,
    skip: f64,
    off_norm: &dyn Fn(&[Complex64]) -> f64,
) -> usize {
    sweeps_impl(a, vt, n, total, target, skip, off_norm)
}

/// Same arithmetic either way; the AVX2 build only changes code generation.
fn run_sweeps(
    a: &mut [Complex64],
    vt: &mut [Complex64],
    n: usize,
    total: f64,
    target: f64,
    skip: f64,
    off_norm: &dyn Fn(&[Complex64]) -> f64,
) -> usize {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { sweeps_avx2(a, vt, n, total, target, skip, off_norm) };
        }
    }
    sweeps_impl(a, vt, n, total, target, skip, off_norm)
}

/// Cyclic Jacobi on a Hermitian matrix given as an `n x n` row-major slice.
///
/// Each sweep visits every off-diagonal pair once in round-robin order, so
/// a round consists of disjoint (commuting) rotations that are applied to
/// all rows first and then to all columns, keeping memory access
/// contiguous. Stops once the off-diagonal Frobenius norm drops below
/// `JACOBI_TOLERANCE * |A|_F` or after `JACOBI_MAX_SWEEPS` sweeps. Callers
/// symmetrize first.
pub fn hermitian_eigen_slice(a: &[Complex64], n: usize) -> HermitianEigen {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    // rows of `vt` are the columns of the accumulated unitary
    let mut vt = vec![Complex64::default(); n * n];
    for i in 0..n {
        vt[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let total: f64 = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let target = JACOBI_TOLERANCE * total;
    // entries this small cannot keep the off-diagonal norm above target
    let skip = target / n.max(1) as f64;

    let off_norm = |a: &[Complex64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += a[i * n + j].norm_sqr();
            }
        }
        (2.0 * s).sqrt()
    };

    let sweeps = run_sweeps(&mut a, &mut vt, n, total, target, skip, &off_norm);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].re.total_cmp(&a[j * n + j].re));
    HermitianEigen {
        values: order.iter().map(|&i| a[i * n + i].re).collect(),
        vectors: order.iter().map(|&i| vt[i * n..(i + 1) * n].to_vec()).collect(),
        sweeps,
    }
}

pub fn hermitian_eigen(a: &CMatrix) -> HermitianEigen {
    assert_eq!(a.rows(), a.cols(), "eigen needs a square matrix");
    hermitian_eigen_slice(a.data(), a.rows())
}

pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        m.symmetrize();
        m
    }

    #[test]
    fn diagonal_input() {
        let e = hermitian_eigen(&CMatrix::from_diag(&[3.0, 1.0, 0.01]));
        assert_eq!(e.values, vec![0.01, 1.0, 3.0]);
        assert!((e.vectors[0][2].norm() - 1.0).abs() < 1e-15);
        assert_eq!(e.sweeps, 0);
    }

    #[test]
    fn residuals_and_orthonormality() {
        for (n, seed) in [(2, 1), (5, 2), (17, 3), (40, 4), (150, 5), (203, 6)] {
            let m = random_hermitian(n, seed);
            let e = hermitian_eigen(&m);
            let scale = m.frobenius();
            for (lam, v) in e.values.iter().zip(&e.vectors) {
                let mv = m.mul_vec(v);
                let res: f64 = mv
                    .iter()
                    .zip(v)
                    .map(|(a, b)| (a - b * lam).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(res < 1e-10 * scale, "n={n} residual {res}");
            }
            for i in 0..n {
                for j in 0..n {
                    let d = dot(&e.vectors[i], &e.vectors[j]);
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).norm() < 1e-12);
                }
            }
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn tournament_covers_every_pair_once() {
        for m in [2usize, 4, 8, 10] {
            let mut seen = std::collections::HashSet::new();
            for round in 0..m - 1 {
                let mut used = vec![false; m];
                for slot in 0..m / 2 {
                    let (p, q) = tournament_pair(round, slot, m);
                    assert!(p < q && !used[p] && !used[q]);
                    used[p] = true;
                    used[q] = true;
                    assert!(seen.insert((p, q)));
                }
            }
            assert_eq!(seen.len(), m * (m - 1) / 2);
        }
    }

    #[test]
    fn trace_preserved() {
        let m = random_hermitian(12, 9);
        let e = hermitian_eigen(&m);
        assert!((e.values.iter().sum::<f64>() - m.trace().re).abs() < 1e-12);
    }

    #[test]
    fn symmetrize_is_hermitian() {
        let mut m = CMatrix::from_vec(
            2,
            2,
            vec![
                Complex64::new(1.0, 0.5),
                Complex64::new(2.0, 1.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(3.0, 0.0),
            ],
        );
        m.symmetrize();
        assert_eq!(m.hermitian_defect(), 0.0);
        assert_eq!(m[(0, 1)], Complex64::new(1.0, 0.5));
    }
}
