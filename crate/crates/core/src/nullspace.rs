//! Approximate nullspace of `C` from the eigendecomposition of its Gram.

use num_complex::Complex64;

use crate::calibration::GramMatrix;
use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;

pub const DEFAULT_THRESHOLD_RATIO: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct NullspaceBasis {
    /// Orthonormal filters, each of length `Q * |L|` in calibration column order.
    pub filters: Vec<Vec<Complex64>>,
    /// Singular values of `C`, descending.
    pub spectrum: Vec<f64>,
    pub threshold_ratio: f64,
    pub channels: usize,
    pub support_size: usize,
}

impl NullspaceBasis {
    pub fn dim(&self) -> usize {
        self.filters.len()
    }

    pub fn filter_len(&self) -> usize {
        self.channels * self.support_size
    }

    /// Basis from explicitly given filters (assumed orthonormal); used for
    /// fixtures and for feeding analytic filters through the spatial path.
    pub fn from_filters(filters: Vec<Vec<Complex64>>, channels: usize, support_size: usize) -> Self {
        for f in &filters {
            assert_eq!(f.len(), channels * support_size, "filter length");
        }
        Self {
            filters,
            spectrum: Vec::new(),
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
            channels,
            support_size,
        }
    }
}

/// Eigenvectors of `G` whose singular value `sqrt(max(lambda, 0))` falls
/// strictly below `threshold_ratio * sigma_1`.
pub fn extract_nullspace(g: &GramMatrix, threshold_ratio: f64) -> Result<NullspaceBasis> {
    if !(threshold_ratio > 0.0 && threshold_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold ratio {threshold_ratio} outside (0, 1)"
        )));
    }
    let eig = hermitian_eigen(&g.matrix);
    // ascending eigenvalues -> descending singular values
    let spectrum: Vec<f64> = eig.values.iter().rev().map(|&l| l.max(0.0).sqrt()).collect();
    let sigma1 = spectrum.first().copied().unwrap_or(0.0);
    let cut = threshold_ratio * sigma1;
    let filters: Vec<Vec<Complex64>> = eig
        .values
        .iter()
        .zip(eig.vectors)
        .filter(|(l, _)| l.max(0.0).sqrt() < cut)
        .map(|(_, v)| v)
        .collect();
    if filters.is_empty() {
        return Err(Error::EmptyNullspace { threshold_ratio });
    }
    Ok(NullspaceBasis {
        filters,
        spectrum,
        threshold_ratio,
        channels: g.channels,
        support_size: g.support_size,
    })
}

/// `sigma_n / sigma_1`, descending.
pub fn singular_spectrum_report(basis: &NullspaceBasis) -> Vec<f64> {
    let s1 = match basis.spectrum.first() {
        Some(&s) if s > 0.0 => s,
        _ => return vec![0.0; basis.spectrum.len()],
    };
    basis.spectrum.iter().map(|s| s / s1).collect()
}

/// CSV text with header `index,sigma_normalized`.
pub fn spectrum_csv(basis: &NullspaceBasis) -> String {
    let mut out = String::from("index,sigma_normalized\n");
    for (i, v) in singular_spectrum_report(basis).iter().enumerate() {
        out.push_str(&format!("{i},{v:.17e}\n"));
    }
    out
}
