//! Synthetic multichannel scenes with known maps and support.
//!
//! Coil maps are built from Fourier coefficients on `rect(tau_gen)` so they
//! are exactly bandlimited on the discrete grid. The phantom is compactly
//! supported with at least 10% of the field of view free on every side.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{Direction, NdFft};
use crate::grid::{unravel, voxel_count, wrapped_offset, ComplexImageStack, Domain, FovConvention};
use crate::kernel::{make_support, KernelShape, KernelSupport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Disk,
    /// Nested rectangles with distinct intensities.
    Shepp,
}

impl std::str::FromStr for PhantomKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "disk" => Ok(PhantomKind::Disk),
            "shepp" | "rectangles" => Ok(PhantomKind::Shepp),
            other => Err(format!("unknown phantom {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneOptions {
    /// Strength of a smooth, non-bandlimited Gaussian window multiplied onto
    /// every map (0 keeps the maps exactly bandlimited).
    pub window_perturbation: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            window_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub channels: usize,
    pub dims: Vec<usize>,
    pub tau_gen: usize,
    pub seed: u64,
    pub phantom_kind: PhantomKind,
    /// `rect(tau_gen)` in enumeration order.
    pub gen_support: KernelSupport,
    /// Per-channel Fourier coefficients on `gen_support`.
    pub map_coeffs: Vec<Vec<Complex64>>,
    pub true_maps: ComplexImageStack,
    /// Single-channel real-valued image.
    pub phantom: ComplexImageStack,
    pub support_mask: Vec<bool>,
}

/// Fraction of the field of view (per side) kept empty around the phantom.
pub const PHANTOM_MARGIN: f64 = 0.12;

fn phantom_value(kind: PhantomKind, x: &[f64]) -> f64 {
    let lim = 0.5 - PHANTOM_MARGIN;
    // gentle interior texture, strictly positive
    let texture = |x: &[f64]| {
        1.0 + 0.15
            * x.iter()
                .enumerate()
                .map(|(a, v)| (2.0 * std::f64::consts::PI * (1.3 + 0.4 * a as f64) * v).cos())
                .product::<f64>()
    };
    match kind {
        PhantomKind::Disk => {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2.sqrt() < lim {
                texture(x)
            } else {
                0.0
            }
        }
        PhantomKind::Shepp => {
            let inside = |half: &[f64], center: &[f64]| {
                x.iter()
                    .enumerate()
                    .all(|(a, v)| (v - center.get(a).copied().unwrap_or(0.0)).abs() < half.get(a).copied().unwrap_or(lim))
            };
            if !inside(&[lim, 0.8 * lim], &[0.0, 0.0]) {
                return 0.0;
            }
            let mut val = 0.8;
            if inside(&[0.12, 0.08], &[-0.15, 0.1]) {
                val += 0.7;
            }
            if inside(&[0.1, 0.15], &[0.15, -0.05]) {
                val -= 0.4;
            }
            if inside(&[0.05, 0.05], &[0.0, 0.0]) {
                val += 0.3;
            }
            val * texture(x)
        }
    }
}

fn random_map_coeffs(support: &KernelSupport, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let l = support.size();
    let tau = support.tau().max(1) as f64;
    let mut coeffs: Vec<Complex64> = support
        .offsets()
        .iter()
        .map(|n| {
            let r2: f64 = n.iter().map(|v| (*v as f64).powi(2)).sum();
            let w = (-r2 / (tau * tau)).exp();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im) * w
        })
        .collect();
    let dc = support.index_of(&vec![0; support.rank()]).expect("support holds the origin");
    coeffs[dc] = Complex64::default();
    // keep |c(x)| >= 0.15 everywhere: DC of unit size, the rest sums to 0.85
    let spread: f64 = coeffs.iter().map(|c| c.norm()).sum();
    if spread > 0.0 {
        coeffs.iter_mut().for_each(|c| *c *= 0.85 / spread);
    }
    coeffs[dc] = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
    debug_assert_eq!(coeffs.len(), l);
    coeffs
}

fn evaluate_coeffs(coeffs: &[Complex64], support: &KernelSupport, dims: &[usize], plans: &NdFft) -> Vec<Complex64> {
    let mut buf = vec![Complex64::default(); voxel_count(dims)];
    for (n, c) in support.offsets().iter().zip(coeffs) {
        buf[wrapped_offset(n, dims)] += c;
    }
    plans.transform_centered(&mut buf, Direction::Evaluate);
    buf
}

pub fn make_scene(
    channels: usize,
    dims: &[usize],
    tau_gen: usize,
    seed: u64,
    phantom_kind: PhantomKind,
) -> Result<SyntheticScene> {
    make_scene_with(channels, dims, tau_gen, seed, phantom_kind, SceneOptions::default())
}

pub fn make_scene_with(
    channels: usize,
    dims: &[usize],
    tau_gen: usize,
    seed: u64,
    phantom_kind: PhantomKind,
    options: SceneOptions,
) -> Result<SyntheticScene> {
    if channels == 0 || dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "scene needs channels >= 1 and positive dims, got {channels} x {dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen_support = make_support(KernelShape::Rect, tau_gen, dims.len());
    let plans = NdFft::new(dims);
    let n = voxel_count(dims);

    let mut map_coeffs = Vec::with_capacity(channels);
    let mut maps = Vec::with_capacity(channels * n);
    for _ in 0..channels {
        let c = random_map_coeffs(&gen_support, &mut rng);
        maps.extend(evaluate_coeffs(&c, &gen_support, dims, &plans));
        map_coeffs.push(c);
    }

    let mut idx = vec![0usize; dims.len()];
    let mut phantom = Vec::with_capacity(n);
    let mut window = Vec::with_capacity(n);
    for v in 0..n {
        unravel(v, dims, &mut idx);
        let x = FovConvention::coordinates(&idx, dims);
        phantom.push(Complex64::new(phantom_value(phantom_kind, &x), 0.0));
        let r2: f64 = x.iter().map(|a| a * a).sum();
        window.push(1.0 + options.window_perturbation * (-r2 / (2.0 * 0.15 * 0.15)).exp());
    }
    if options.window_perturbation != 0.0 {
        for (i, m) in maps.iter_mut().enumerate() {
            *m *= window[i % n];
        }
    }
    let support_mask = phantom.iter().map(|p| p.re != 0.0).collect();

    Ok(SyntheticScene {
        channels,
        dims: dims.to_vec(),
        tau_gen,
        seed,
        phantom_kind,
        gen_support,
        map_coeffs,
        true_maps: ComplexImageStack::new(dims.to_vec(), channels, maps, Domain::Image)?,
        phantom: ComplexImageStack::new(dims.to_vec(), 1, phantom, Domain::Image)?,
        support_mask,
    })
}

impl SyntheticScene {
    /// Channel images `c_q(x) rho(x)`.
    pub fn coil_images(&self) -> ComplexImageStack {
        let n = voxel_count(&self.dims);
        let rho = self.phantom.channel(0);
        let data = (0..self.channels)
            .flat_map(|q| {
                let c = self.true_maps.channel(q);
                (0..n).map(move |v| c[v] * rho[v])
            })
            .collect();
        ComplexImageStack::new(self.dims.clone(), self.channels, data, Domain::Image)
            .expect("consistent scene")
    }

    /// Copy of the scene with one more channel `sum_q w_q c_q`.
    pub fn append_combined_channel(&self, weights: &[Complex64]) -> Result<SyntheticScene> {
        if weights.len() != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} channels",
                weights.len(),
                self.channels
            )));
        }
        let n = voxel_count(&self.dims);
        let mut coeff = vec![Complex64::default(); self.gen_support.size()];
        let mut map = vec![Complex64::default(); n];
        for (q, w) in weights.iter().enumerate() {
            for (a, b) in coeff.iter_mut().zip(&self.map_coeffs[q]) {
                *a += w * b;
            }
            for (a, b) in map.iter_mut().zip(self.true_maps.channel(q)) {
                *a += w * b;
            }
        }
        let mut out = self.clone();
        out.channels += 1;
        out.map_coeffs.push(coeff);
        let mut data = self.true_maps.data().to_vec();
        data.extend(map);
        out.true_maps = ComplexImageStack::new(self.dims.clone(), out.channels, data, Domain::Image)?;
        Ok(out)
    }
}

/// Full Nyquist-grid k-space: unitary centered DFT of each `c_q rho`, plus
/// i.i.d. complex Gaussian noise with standard deviation `noise_sigma` per
/// real and imaginary component.
pub fn forward_kspace(scene: &SyntheticScene, noise_sigma: f64, seed: u64) -> ComplexImageStack {
    let plans = NdFft::new(&scene.dims);
    let mut images = scene.coil_images();
    let n = images.voxels();
    for q in 0..scene.channels {
        plans.transform_centered_unitary(images.channel_mut(q), Direction::Forward);
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for v in images.data_mut().iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re, im) * noise_sigma;
        }
    }
    debug_assert_eq!(images.data().len(), n * scene.channels);
    images.with_domain(Domain::Kspace)
}

/// Analytic cross-relation annihilators: for each `(i, j)`,
/// `h[n, i] = -c~_j[n]` and `h[n, j] = +c~_i[n]` on `support`, zero elsewhere.
pub fn cross_relation_filters(
    scene: &SyntheticScene,
    support: &KernelSupport,
    pairs: &[(usize, usize)],
) -> Result<Vec<Vec<Complex64>>> {
    let l = support.size();
    let positions: Vec<usize> = scene
        .gen_support
        .offsets()
        .iter()
        .map(|n| {
            support.index_of(n).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "support (tau {}) does not contain map band offset {n:?}",
                    support.tau()
                ))
            })
        })
        .collect::<Result<_>>()?;
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= scene.channels || j >= scene.channels || i == j {
                return Err(Error::InvalidArgument(format!("bad channel pair ({i}, {j})")));
            }
            let mut h = vec![Complex64::default(); scene.channels * l];
            for (k, &pos) in positions.iter().enumerate() {
                h[i * l + pos] = -scene.map_coeffs[j][k];
                h[j * l + pos] = scene.map_coeffs[i][k];
            }
            Ok(h)
        })
        .collect()
}
