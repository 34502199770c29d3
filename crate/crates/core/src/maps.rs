//! Map assembly: normalization, sinc interpolation, support masking and the
//! end-to-end estimation pipeline.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::MemoryLedger;
use crate::calibration::{build_calib_matrix, fft_pad_dims, gram_explicit, gram_fft, GramMethod};
use crate::eigensolve::{eig_dense_field, eig_power_field, EigenMethod, Extremal, DEFAULT_POWER_ITERS};
use crate::error::{Error, Result};
use crate::fft::{Direction, NdFft};
use crate::grid::{unravel, voxel_count, CalibrationRegion, ComplexImageStack, Domain, FovConvention};
use crate::kernel::{make_support, KernelShape};
use crate::nullspace::{extract_nullspace, singular_spectrum_report, DEFAULT_THRESHOLD_RATIO};
use crate::spatial::{
    aggregate_w, fast_field_scratch_bytes, filter_field_naive, gram_field_fast, gram_field_naive,
    projected_filter_field_bytes, to_espirit_field, FieldMethod, GramField,
    DEFAULT_FILTER_FIELD_CAP,
};

pub const DEFAULT_GRID_PAD: usize = 24;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.05;
/// Gaussian apodization sigma as a fraction of the calibration extent.
pub const DEFAULT_APOD_WIDTH: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Full,
    Reduced,
}

impl std::str::FromStr for GridMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(GridMode::Full),
            "reduced" => Ok(GridMode::Reduced),
            other => Err(format!("unknown grid mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMethod {
    /// Smallest eigenvector of `G(x)`.
    Nullspace,
    /// Largest eigenvector of `B(x) = I - G(x)/|L|`.
    Espirit,
}

impl std::str::FromStr for MapMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "nullspace" => Ok(MapMethod::Nullspace),
            "espirit" => Ok(MapMethod::Espirit),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kernel: KernelShape,
    pub tau: usize,
    pub gram: GramMethod,
    pub nullspace_threshold: f64,
    pub grid: GridMode,
    pub grid_pad: usize,
    pub field: FieldMethod,
    pub method: MapMethod,
    pub eig: EigenMethod,
    pub power_iters: usize,
    pub mask_threshold: f64,
    pub apod_width: f64,
    /// Largest `H(x)` (complex values) the naive field path may allocate.
    pub field_cap: usize,
}

impl PipelineConfig {
    /// Rectangular kernel, explicit Gram, full grid, dense per-voxel eigensolver.
    pub fn baseline() -> Self {
        Self {
            kernel: KernelShape::Rect,
            tau: 3,
            gram: GramMethod::Explicit,
            nullspace_threshold: DEFAULT_THRESHOLD_RATIO,
            grid: GridMode::Full,
            grid_pad: DEFAULT_GRID_PAD,
            field: FieldMethod::Fast,
            method: MapMethod::Nullspace,
            eig: EigenMethod::Dense,
            power_iters: DEFAULT_POWER_ITERS,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            apod_width: DEFAULT_APOD_WIDTH,
            field_cap: DEFAULT_FILTER_FIELD_CAP,
        }
    }

    /// Ellipsoidal kernel, FFT Gram, reduced grid + interpolation, power iteration.
    pub fn pisco() -> Self {
        Self {
            kernel: KernelShape::Ellipsoid,
            gram: GramMethod::Fft,
            grid: GridMode::Reduced,
            eig: EigenMethod::Power,
            ..Self::baseline()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "baseline" => Some(Self::baseline()),
            "pisco" => Some(Self::pisco()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub convention: String,
    /// Voxels whose raw map vector was zero (left at zero).
    pub zero_voxels: usize,
    /// Voxels where the coil-combined reference vanished (phase left as is).
    pub unreferenced_voxels: usize,
    /// Gaussian apodization standard deviation per axis, k-space index units.
    pub apod_sigma: Vec<f64>,
    /// Whether maps were re-normalized to unit sum-of-squares after interpolation.
    pub renormalized_after_interpolation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config: PipelineConfig,
    pub calib_dims: Vec<usize>,
    pub full_dims: Vec<usize>,
    pub grid_dims: Vec<usize>,
    pub channels: usize,
    pub support_size: usize,
    pub nullspace_dim: usize,
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    /// Image-domain maps on `full_dims`.
    pub maps: ComplexImageStack,
    /// `lambda_min(G)/|L|`, or `1 - lambda_max(B)` on the power path.
    pub lambda_min_map: Vec<f64>,
    pub support_mask: Vec<bool>,
    pub normalization: NormalizationRecord,
    pub provenance: Provenance,
    /// `sigma_n / sigma_1` of the calibration matrix.
    pub spectrum: Vec<f64>,
    pub timings: Vec<StageTiming>,
    pub memory: MemoryLedger,
    /// Projected bytes for materializing `H(x)` on the estimation grid.
    pub projected_filter_field_bytes: u64,
}

/// Per axis `min(calib + pad, full)`.
pub fn reduced_grid_dims(calib_dims: &[usize], pad: usize, full_dims: &[usize]) -> Vec<usize> {
    calib_dims
        .iter()
        .zip(full_dims)
        .map(|(&c, &f)| (c + pad).min(f))
        .collect()
}

/// `true` where `lambda < threshold`.
pub fn support_mask(lambda_min_map: &[f64], threshold: f64) -> Vec<bool> {
    lambda_min_map.iter().map(|&l| l < threshold).collect()
}

fn sos_normalize(maps: &mut ComplexImageStack) -> usize {
    let n = maps.voxels();
    let qc = maps.channels();
    let mut zero = 0;
    for v in 0..n {
        let s: f64 = (0..qc).map(|q| maps.data()[q * n + v].norm_sqr()).sum::<f64>().sqrt();
        if s > 0.0 {
            for q in 0..qc {
                maps.data_mut()[q * n + v] /= s;
            }
        } else {
            zero += 1;
        }
    }
    zero
}

/// Zero-filled, Gaussian-apodized reconstruction of the calibration data on
/// `dims` (one image per channel), using the calibration samples with
/// `|k| < E/2` on every axis.
pub fn apodized_reference(calib: &CalibrationRegion, dims: &[usize], apod_width: f64) -> (ComplexImageStack, Vec<f64>) {
    let cdims = calib.dims();
    let sigma: Vec<f64> = cdims.iter().map(|&e| apod_width * e as f64).collect();
    let plans = NdFft::new(dims);
    let n = voxel_count(dims);
    let nc = voxel_count(cdims);
    let mut data = vec![Complex64::default(); calib.channels() * n];
    let mut idx = vec![0usize; cdims.len()];
    // grid offset and weight of every calibration sample that fits
    let mut placed: Vec<(usize, usize, f64)> = Vec::with_capacity(nc);
    'samples: for v in 0..nc {
        unravel(v, cdims, &mut idx);
        let mut flat = 0;
        let mut w = 1.0;
        for a in 0..cdims.len() {
            let k = idx[a] as i64 - FovConvention::center(cdims[a]) as i64;
            // drop the unpaired edge sample of even extents so a real image
            // yields a real reference
            if cdims[a] % 2 == 0 && k == -(cdims[a] as i64 / 2) {
                continue 'samples;
            }
            let pos = k + FovConvention::center(dims[a]) as i64;
            if pos < 0 || pos >= dims[a] as i64 {
                continue 'samples;
            }
            flat = flat * dims[a] + pos as usize;
            if sigma[a] > 0.0 {
                w *= (-(k as f64).powi(2) / (2.0 * sigma[a] * sigma[a])).exp();
            }
        }
        placed.push((v, flat, w));
    }
    data.par_chunks_mut(n).enumerate().for_each(|(q, dst)| {
        let ch = calib.grid().channel(q);
        for &(v, flat, w) in &placed {
            dst[flat] = ch[v] * w;
        }
        plans.transform_centered(dst, Direction::Evaluate);
    });
    (
        ComplexImageStack::new(dims.to_vec(), calib.channels(), data, Domain::Image)
            .expect("consistent reference"),
        sigma,
    )
}

/// Unit sum-of-squares per voxel, then rotate each voxel's phase so the
/// coil combination `sum_q conj(c_q) rho_q` of the apodized calibration
/// reconstruction is real and non-negative.
pub fn normalize_maps(
    raw: &ComplexImageStack,
    calib: &CalibrationRegion,
    apod_width: f64,
) -> Result<(ComplexImageStack, NormalizationRecord)> {
    if raw.channels() != calib.channels() || raw.dims().len() != calib.dims().len() {
        return Err(Error::DimensionMismatch(format!(
            "maps {}x{:?} vs calibration {}x{:?}",
            raw.channels(),
            raw.dims(),
            calib.channels(),
            calib.dims()
        )));
    }
    let mut maps = raw.clone().with_domain(Domain::Image);
    let zero_voxels = sos_normalize(&mut maps);
    let (reference, sigma) = apodized_reference(calib, raw.dims(), apod_width);
    let n = maps.voxels();
    let qc = maps.channels();
    let mut unreferenced = 0;
    for v in 0..n {
        let z: Complex64 = (0..qc)
            .map(|q| maps.data()[q * n + v].conj() * reference.data()[q * n + v])
            .sum();
        let mag = z.norm();
        if mag > 0.0 && mag.is_finite() {
            let ph = z / mag;
            for q in 0..qc {
                maps.data_mut()[q * n + v] *= ph;
            }
        } else {
            unreferenced += 1;
        }
    }
    Ok((
        maps,
        NormalizationRecord {
            convention: "sum-of-squares magnitude; phase of apodized coil combination removed"
                .into(),
            zero_voxels,
            unreferenced_voxels: unreferenced,
            apod_sigma: sigma,
            renormalized_after_interpolation: false,
        },
    ))
}

/// Resample one axis of a channel-major stack by periodic sinc interpolation.
fn interpolate_axis(data: &[Complex64], dims: &[usize], channels: usize, axis: usize, target: usize) -> Vec<Complex64> {
    let src = dims[axis];
    let mut out_dims = dims.to_vec();
    out_dims[axis] = target;
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product::<usize>() * channels;
    let fwd = NdFft::new(&[src]);
    let inv = NdFft::new(&[target]);
    let (cs, ct) = (FovConvention::center(src) as i64, FovConvention::center(target) as i64);
    let scale = 1.0 / src as f64;
    let nyquist = (src % 2 == 0 && target > src).then_some(-cs);

    let mut out = vec![Complex64::default(); outer * target * inner];
    out.par_chunks_mut(target * inner)
        .zip(data.par_chunks(src * inner))
        .for_each(|(dst, srcblk)| {
            let mut lane = vec![Complex64::default(); src];
            let mut wide = vec![Complex64::default(); target];
            for i in 0..inner {
                for (k, l) in lane.iter_mut().enumerate() {
                    *l = srcblk[k * inner + i];
                }
                fwd.transform_centered(&mut lane, Direction::Forward);
                wide.iter_mut().for_each(|w| *w = Complex64::default());
                for (k, l) in lane.iter().enumerate() {
                    let freq = k as i64 - cs;
                    if Some(freq) == nyquist {
                        // split the unpaired bin symmetrically
                        wide[(ct + freq) as usize] += l * 0.5;
                        wide[(ct - freq) as usize] += l * 0.5;
                    } else {
                        wide[(ct + freq) as usize] += l;
                    }
                }
                inv.transform_centered(&mut wide, Direction::Evaluate);
                for (k, w) in wide.iter().enumerate() {
                    dst[k * inner + i] = w * scale;
                }
            }
        });
    out
}

/// Periodic sinc interpolation of every channel to `full_dims` via
/// zero-padded centered spectra (separable, axis by axis).
pub fn interpolate_maps(lowres: &ComplexImageStack, full_dims: &[usize]) -> Result<ComplexImageStack> {
    if full_dims.len() != lowres.dims().len()
        || full_dims.iter().zip(lowres.dims()).any(|(f, l)| f < l)
    {
        return Err(Error::DimensionMismatch(format!(
            "cannot interpolate {:?} to {full_dims:?}",
            lowres.dims()
        )));
    }
    let mut dims = lowres.dims().to_vec();
    let mut data = lowres.data().to_vec();
    for (axis, &target) in full_dims.iter().enumerate() {
        if dims[axis] == target {
            continue;
        }
        data = interpolate_axis(&data, &dims, lowres.channels(), axis, target);
        dims[axis] = target;
    }
    ComplexImageStack::new(dims, lowres.channels(), data, lowres.domain())
}

struct Stopwatch {
    timings: Vec<StageTiming>,
    started: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.started).as_secs_f64(),
        });
        self.started = now;
    }
}

const C64: u64 = std::mem::size_of::<Complex64>() as u64;

/// Support, Gram, nullspace, per-voxel field, eigensolve, normalization,
/// optional interpolation and masking.
pub fn estimate_maps(calib: &CalibrationRegion, full_dims: &[usize], cfg: &PipelineConfig) -> Result<SensitivityResult> {
    let cdims = calib.dims();
    if full_dims.len() != cdims.len() || full_dims.iter().zip(cdims).any(|(f, c)| f < c) {
        return Err(Error::DimensionMismatch(format!(
            "output grid {full_dims:?} smaller than calibration {cdims:?}"
        )));
    }
    let qc = calib.channels();
    let mut clock = Stopwatch::new();
    let mut ledger = MemoryLedger::default();

    let support = make_support(cfg.kernel, cfg.tau, cdims.len());
    let l = support.size();
    let gdim = (qc * l) as u64;

    ledger.begin_stage("gram");
    let gram = match cfg.gram {
        GramMethod::Explicit => {
            let c = build_calib_matrix(calib, &support)?;
            let c_bytes = (c.rows() * c.cols()) as u64 * C64;
            ledger.alloc(c_bytes);
            let g = gram_explicit(&c);
            ledger.alloc(gdim * gdim * C64);
            ledger.free(c_bytes);
            g
        }
        GramMethod::Fft => {
            let pad = voxel_count(&fft_pad_dims(cdims, cfg.tau)) as u64;
            let scratch = (qc as u64 + rayon::current_num_threads() as u64) * pad * C64;
            ledger.alloc(scratch);
            let g = gram_fft(calib, &support)?;
            ledger.alloc(gdim * gdim * C64);
            ledger.free(scratch);
            g
        }
    };
    clock.lap("gram");

    ledger.begin_stage("nullspace");
    ledger.alloc(2 * gdim * gdim * C64);
    let basis = extract_nullspace(&gram, cfg.nullspace_threshold)?;
    ledger.free(2 * gdim * gdim * C64);
    ledger.free(gdim * gdim * C64);
    let basis_bytes = (basis.dim() as u64) * gdim * C64;
    ledger.alloc(basis_bytes);
    drop(gram);
    clock.lap("nullspace");

    let grid_dims = match cfg.grid {
        GridMode::Full => full_dims.to_vec(),
        GridMode::Reduced => reduced_grid_dims(cdims, cfg.grid_pad, full_dims),
    };
    let n = voxel_count(&grid_dims);
    let field_bytes = (n * qc * qc) as u64 * C64;

    ledger.begin_stage("field");
    let gfield: GramField = match cfg.field {
        FieldMethod::Fast => {
            let w_bytes = gdim * gdim * C64;
            let scratch = fast_field_scratch_bytes(qc, n);
            ledger.alloc(w_bytes + scratch);
            let w = aggregate_w(&basis)?;
            let g = gram_field_fast(&w, &support, &grid_dims)?;
            ledger.alloc(field_bytes);
            ledger.free(w_bytes + scratch);
            g
        }
        FieldMethod::Naive => {
            let h_bytes = projected_filter_field_bytes(basis.dim(), qc, n);
            let h = filter_field_naive(&basis, &support, &grid_dims, cfg.field_cap)?;
            ledger.alloc(h_bytes);
            let g = gram_field_naive(&h);
            ledger.alloc(field_bytes);
            ledger.free(h_bytes);
            g
        }
    };
    clock.lap("field");

    ledger.begin_stage("eigen");
    let vec_bytes = (n * qc) as u64 * C64;
    let (eig, lambda) = match (cfg.method, cfg.eig) {
        (MapMethod::Nullspace, EigenMethod::Dense) => {
            ledger.alloc(vec_bytes);
            let e = eig_dense_field(&gfield, Extremal::Smallest);
            let lam: Vec<f64> = e.values.iter().map(|v| v / l as f64).collect();
            (e, lam)
        }
        (MapMethod::Espirit, EigenMethod::Dense) | (_, EigenMethod::Power) => {
            ledger.alloc(field_bytes + vec_bytes);
            let b = to_espirit_field(&gfield, l);
            let e = if cfg.eig == EigenMethod::Dense {
                eig_dense_field(&b, Extremal::Largest)
            } else {
                eig_power_field(&b, cfg.power_iters)
            };
            ledger.free(field_bytes);
            let lam: Vec<f64> = e.values.iter().map(|v| 1.0 - v).collect();
            (e, lam)
        }
    };
    drop(gfield);
    ledger.free(field_bytes);
    clock.lap("eigen");

    ledger.begin_stage("normalize");
    let mut raw = vec![Complex64::default(); qc * n];
    for v in 0..n {
        for (q, c) in eig.vector(v).iter().enumerate() {
            raw[q * n + v] = *c;
        }
    }
    drop(eig);
    let raw = ComplexImageStack::new(grid_dims.clone(), qc, raw, Domain::Image)?;
    ledger.alloc(2 * vec_bytes);
    let (mut maps, mut record) = normalize_maps(&raw, calib, cfg.apod_width)?;
    ledger.free(2 * vec_bytes);
    clock.lap("normalize");

    let mut lambda_full = lambda;
    if grid_dims.as_slice() != full_dims {
        ledger.begin_stage("interpolate");
        let full_bytes = (voxel_count(full_dims) * (qc + 1)) as u64 * C64;
        ledger.alloc(full_bytes);
        maps = interpolate_maps(&maps, full_dims)?;
        let lam_stack = ComplexImageStack::new(
            grid_dims.clone(),
            1,
            lambda_full.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            Domain::Image,
        )?;
        lambda_full = interpolate_maps(&lam_stack, full_dims)?
            .data()
            .iter()
            .map(|v| v.re)
            .collect();
        record.zero_voxels = sos_normalize(&mut maps);
        record.renormalized_after_interpolation = true;
        ledger.free(full_bytes);
        clock.lap("interpolate");
    }
    ledger.free(vec_bytes + basis_bytes);

    let mask = support_mask(&lambda_full, cfg.mask_threshold);
    clock.lap("mask");

    Ok(SensitivityResult {
        maps,
        lambda_min_map: lambda_full,
        support_mask: mask,
        normalization: record,
        provenance: Provenance {
            config: cfg.clone(),
            calib_dims: cdims.to_vec(),
            full_dims: full_dims.to_vec(),
            grid_dims: grid_dims.clone(),
            channels: qc,
            support_size: l,
            nullspace_dim: basis.dim(),
        },
        spectrum: singular_spectrum_report(&basis),
        timings: clock.timings,
        memory: ledger,
        projected_filter_field_bytes: projected_filter_field_bytes(basis.dim(), qc, n),
    })
}
