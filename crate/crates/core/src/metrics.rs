//! Normalized projection residual of multichannel data onto the map subspace.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{Direction, NdFft};
use crate::grid::{ComplexImageStack, Domain};
use crate::maps::PipelineConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub value: f64,
    pub dataset: String,
    pub config: Option<PipelineConfig>,
}

/// Channel images of a k-space stack (centered unitary inverse transform).
pub fn to_image_domain(data: &ComplexImageStack) -> ComplexImageStack {
    if data.domain() == Domain::Image {
        return data.clone();
    }
    let plans = NdFft::new(data.dims());
    let mut out = data.clone().with_domain(Domain::Image);
    let n = out.voxels();
    out.data_mut()
        .par_chunks_mut(n)
        .for_each(|ch| plans.transform_centered_unitary(ch, Direction::Evaluate));
    out
}

/// `||rho - P(x) rho|| / ||rho||` with `P(x)` the projector onto `c(x)`.
pub fn projection_residual(data: &ComplexImageStack, maps: &ComplexImageStack) -> Result<ResidualReport> {
    if data.dims() != maps.dims() || data.channels() != maps.channels() {
        return Err(Error::DimensionMismatch(format!(
            "data {}x{:?} vs maps {}x{:?}",
            data.channels(),
            data.dims(),
            maps.channels(),
            maps.dims()
        )));
    }
    let img = to_image_domain(data);
    let n = img.voxels();
    let qc = img.channels();
    let (num, den) = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut cc = 0.0;
            let mut cr = Complex64::default();
            let mut rr = 0.0;
            for q in 0..qc {
                let c = maps.data()[q * n + v];
                let r = img.data()[q * n + v];
                cc += c.norm_sqr();
                cr += c.conj() * r;
                rr += r.norm_sqr();
            }
            let coef = if cc > 0.0 { cr / cc } else { Complex64::default() };
            let resid: f64 = (0..qc)
                .map(|q| (img.data()[q * n + v] - maps.data()[q * n + v] * coef).norm_sqr())
                .sum();
            (resid, rr)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let value = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    Ok(ResidualReport {
        value,
        dataset: String::new(),
        config: None,
    })
}
