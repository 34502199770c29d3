use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use senskit::grid::ComplexImageStack;
use senskit::io::load_stack;

use crate::output::{read_json, with_suffix, write_pgm};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub dims: Vec<usize>,
    pub channels: usize,
    /// Max over voxels of the componentwise difference after aligning the
    /// global phase of each voxel's map vector.
    pub max_map_difference: f64,
    /// Same, restricted to voxels inside both masks.
    pub max_map_difference_in_mask: f64,
    pub residual_a: Option<f64>,
    pub residual_b: Option<f64>,
    pub residual_difference: Option<f64>,
    pub mask_dice: f64,
}

/// Per-voxel difference `a - b e^{i phi}` with `phi` chosen to minimize it.
fn aligned_difference(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let inner: Complex64 = b.iter().zip(a).map(|(x, y)| x.conj() * y).sum();
    let rot = if inner.norm() > 0.0 { inner / inner.norm() } else { Complex64::new(1.0, 0.0) };
    a.iter().zip(b).map(|(x, y)| x - y * rot).collect()
}

fn dice(a: &[bool], b: &[bool]) -> f64 {
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let total = (a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count()) as f64;
    if total == 0.0 {
        1.0
    } else {
        2.0 * both / total
    }
}

fn load_mask(prefix: &Path) -> Result<Vec<bool>, CliError> {
    let m = load_stack(with_suffix(prefix, "_mask"))?;
    Ok(m.data().iter().map(|v| v.re > 0.5).collect())
}

fn load_residual(prefix: &Path) -> Option<f64> {
    read_json(&with_suffix(prefix, "_provenance.json")).ok()?.get("residual")?.as_f64()
}

pub fn compare(a: &Path, b: &Path, output: &Path) -> Result<Comparison, CliError> {
    let ma = load_stack(with_suffix(a, "_maps"))?;
    let mb = load_stack(with_suffix(b, "_maps"))?;
    if ma.dims() != mb.dims() || ma.channels() != mb.channels() {
        return Err(CliError::Dimension(format!(
            "maps {:?} x {} vs {:?} x {}",
            ma.dims(),
            ma.channels(),
            mb.dims(),
            mb.channels()
        )));
    }
    let (mask_a, mask_b) = (load_mask(a)?, load_mask(b)?);
    if mask_a.len() != ma.voxels() || mask_b.len() != ma.voxels() {
        return Err(CliError::Dimension("mask size differs from maps".into()));
    }

    let (n, qc) = (ma.voxels(), ma.channels());
    let mut diff = vec![Complex64::default(); qc * n];
    let (mut worst, mut worst_in_mask) = (0.0f64, 0.0f64);
    for v in 0..n {
        let d = aligned_difference(&ma.voxel_vector(v), &mb.voxel_vector(v));
        let m = d.iter().map(|x| x.norm()).fold(0.0, f64::max);
        worst = worst.max(m);
        if mask_a[v] && mask_b[v] {
            worst_in_mask = worst_in_mask.max(m);
        }
        for (q, x) in d.into_iter().enumerate() {
            diff[q * n + v] = x;
        }
    }
    let diff = ComplexImageStack::new(ma.dims().to_vec(), qc, diff, ma.domain())?;
    for q in 0..qc {
        let mag: Vec<f64> = diff.channel(q).iter().map(|x| x.norm()).collect();
        write_pgm(&with_suffix(output, &format!("_diff_coil{q}.pgm")), ma.dims(), &mag)?;
    }

    let (ra, rb) = (load_residual(a), load_residual(b));
    Ok(Comparison {
        dims: ma.dims().to_vec(),
        channels: qc,
        max_map_difference: worst,
        max_map_difference_in_mask: worst_in_mask,
        residual_a: ra,
        residual_b: rb,
        residual_difference: ra.zip(rb).map(|(x, y)| (x - y).abs()),
        mask_dice: dice(&mask_a, &mask_b),
    })
}
