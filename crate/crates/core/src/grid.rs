//! Gridded multichannel complex data and the shared index conventions.
//!
//! Storage is channel-major: channel `q` occupies `data[q * N..(q + 1) * N]`,
//! and within a channel voxels are row-major (last axis fastest).
//!
//! Centering: along an axis of extent `n` the origin (k-space DC, or image
//! coordinate zero) sits at index `n / 2`. Image index `j` maps to the
//! continuous coordinate `(j - n/2) / n`, so voxel 0 lies on the `-1/2` side
//! of the unit field of view.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which domain a stack's samples live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    Kspace,
}

/// Sign of the exponent in the image-domain filter evaluation
/// `h(x) = sum_n h[n] exp(FILTER_PHASE_SIGN * i 2 pi n.x)`.
///
/// The centered forward DFT uses the opposite sign. Every module that moves
/// between lag/k-space and voxel grids goes through [`crate::fft`], which is
/// pinned to this constant.
pub const FILTER_PHASE_SIGN: f64 = 1.0;

/// Unit-hypercube field of view `{x : |x|_inf < 1/2}` sampled uniformly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FovConvention;

impl FovConvention {
    /// Index of the origin along an axis of the given extent.
    pub fn center(extent: usize) -> usize {
        extent / 2
    }

    /// Continuous coordinate of voxel `index` along an axis.
    pub fn coordinate(index: usize, extent: usize) -> f64 {
        (index as f64 - Self::center(extent) as f64) / extent as f64
    }

    /// Continuous coordinates of a voxel given its multi-index.
    pub fn coordinates(index: &[usize], dims: &[usize]) -> Vec<f64> {
        index
            .iter()
            .zip(dims)
            .map(|(&i, &n)| Self::coordinate(i, n))
            .collect()
    }
}

pub fn voxel_count(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Row-major strides for `dims`.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Decompose a flat row-major offset into a multi-index.
pub fn unravel(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for a in (0..dims.len()).rev() {
        out[a] = flat % dims[a];
        flat /= dims[a];
    }
}

pub fn ravel(index: &[usize], dims: &[usize]) -> usize {
    index
        .iter()
        .zip(dims)
        .fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Flat offset of the grid cell holding signed (centered) position `pos`,
/// wrapping periodically.
pub fn wrapped_offset(pos: &[i64], dims: &[usize]) -> usize {
    pos.iter().zip(dims).fold(0, |acc, (&p, &n)| {
        let n_i = n as i64;
        let idx = (p + FovConvention::center(n) as i64).rem_euclid(n_i) as usize;
        acc * n + idx
    })
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("at least one axis required".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "axis extents must be >= 1, got {dims:?}"
        )));
    }
    Ok(())
}

/// Multichannel complex samples on a rectilinear grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImageStack {
    dims: Vec<usize>,
    channels: usize,
    data: Vec<Complex64>,
    domain: Domain,
}

impl ComplexImageStack {
    pub fn new(
        dims: Vec<usize>,
        channels: usize,
        data: Vec<Complex64>,
        domain: Domain,
    ) -> Result<Self> {
        validate_dims(&dims)?;
        let expected = channels * voxel_count(&dims);
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {channels} channels of {dims:?} (expected {expected})",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            channels,
            data,
            domain,
        })
    }

    pub fn zeros(dims: Vec<usize>, channels: usize, domain: Domain) -> Result<Self> {
        let n = channels * voxel_count(&dims);
        Self::new(dims, channels, vec![Complex64::default(); n], domain)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn voxels(&self) -> usize {
        voxel_count(&self.dims)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn channel(&self, q: usize) -> &[Complex64] {
        let n = self.voxels();
        &self.data[q * n..(q + 1) * n]
    }

    pub fn channel_mut(&mut self, q: usize) -> &mut [Complex64] {
        let n = self.voxels();
        &mut self.data[q * n..(q + 1) * n]
    }

    /// The `Q`-vector of channel values at flat voxel `v`.
    pub fn voxel_vector(&self, v: usize) -> Vec<Complex64> {
        let n = self.voxels();
        (0..self.channels).map(|q| self.data[q * n + v]).collect()
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }
}

/// Centered block of k-space used for calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRegion {
    grid: ComplexImageStack,
    center_offset: Vec<usize>,
}

impl CalibrationRegion {
    /// Wrap a k-space stack whose origin sits at the conventional center.
    pub fn from_stack(grid: ComplexImageStack) -> Result<Self> {
        if grid.domain() != Domain::Kspace {
            return Err(Error::InvalidArgument(
                "calibration data must be in k-space".into(),
            ));
        }
        let center_offset = grid.dims().iter().map(|&n| FovConvention::center(n)).collect();
        Ok(Self {
            grid,
            center_offset,
        })
    }

    pub fn grid(&self) -> &ComplexImageStack {
        &self.grid
    }

    pub fn dims(&self) -> &[usize] {
        self.grid.dims()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    pub fn center_offset(&self) -> &[usize] {
        &self.center_offset
    }
}

/// Cut the centered calibration block of extents `size` out of `stack`.
pub fn extract_calibration(stack: &ComplexImageStack, size: &[usize]) -> Result<CalibrationRegion> {
    if stack.domain() != Domain::Kspace {
        return Err(Error::InvalidArgument(
            "calibration must be extracted from k-space".into(),
        ));
    }
    if size.len() != stack.dims().len() {
        return Err(Error::DimensionMismatch(format!(
            "calibration size {size:?} vs data dims {:?}",
            stack.dims()
        )));
    }
    validate_dims(size)?;
    if size.iter().zip(stack.dims()).any(|(s, d)| s > d) {
        return Err(Error::DimensionMismatch(format!(
            "calibration size {size:?} exceeds data dims {:?}",
            stack.dims()
        )));
    }

    let parent = stack.dims();
    let start: Vec<usize> = parent
        .iter()
        .zip(size)
        .map(|(&d, &s)| FovConvention::center(d) - FovConvention::center(s))
        .collect();
    let n_out = voxel_count(size);
    let mut data = Vec::with_capacity(stack.channels() * n_out);
    let mut idx = vec![0usize; size.len()];
    let mut src = vec![0usize; size.len()];
    for q in 0..stack.channels() {
        let ch = stack.channel(q);
        for v in 0..n_out {
            unravel(v, size, &mut idx);
            for a in 0..size.len() {
                src[a] = start[a] + idx[a];
            }
            data.push(ch[ravel(&src, parent)]);
        }
    }
    let grid = ComplexImageStack::new(size.to_vec(), stack.channels(), data, Domain::Kspace)?;
    CalibrationRegion::from_stack(grid)
}
