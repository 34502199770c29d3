//! Benchmark harness: repeated timed runs of two pipeline arms across
//! calibration sizes, with an allocation ledger for the large buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{extract_calibration, CalibrationRegion, ComplexImageStack};
use crate::maps::{estimate_maps, PipelineConfig, SensitivityResult};
use crate::metrics::projection_residual;

pub const MIN_REPS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StagePeak {
    pub stage: String,
    pub peak_bytes: u64,
}

/// Accounting of the pipeline's large buffers (Grams, fields, eigenvectors).
/// Small temporaries are not tracked, so peaks are lower bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryLedger {
    pub current: u64,
    pub peak: u64,
    pub stages: Vec<StagePeak>,
}

impl MemoryLedger {
    pub fn begin_stage(&mut self, stage: &str) {
        self.stages.push(StagePeak {
            stage: stage.to_string(),
            peak_bytes: self.current,
        });
    }

    pub fn alloc(&mut self, bytes: u64) {
        self.current += bytes;
        self.peak = self.peak.max(self.current);
        if let Some(s) = self.stages.last_mut() {
            s.peak_bytes = s.peak_bytes.max(self.current);
        }
    }

    pub fn free(&mut self, bytes: u64) {
        self.current = self.current.saturating_sub(bytes);
    }

    pub fn stage_peak(&self, stage: &str) -> Option<u64> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.peak_bytes)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMedian {
    pub stage: String,
    pub median_seconds: f64,
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchCell {
    pub calib_size: usize,
    pub arm: String,
    pub stages: Vec<StageMedian>,
    pub total_median_seconds: f64,
    /// Accounted (measured) peak over the whole run.
    pub peak_bytes: u64,
    /// Accounted peak of the per-voxel field stage.
    pub field_stage_peak_bytes: u64,
    /// Projected (never allocated) size of `H(x)` on the estimation grid.
    pub projected_filter_field_bytes: u64,
    pub residual: f64,
    pub nullspace_dim: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Speedup {
    pub calib_size: usize,
    /// Total median time of the first arm over the second.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub threads: usize,
    pub reps: usize,
    pub arms: Vec<Arm>,
    pub cells: Vec<BenchCell>,
    pub speedups: Vec<Speedup>,
}

fn failed_cell(calib_size: usize, arm: &str, e: Error) -> BenchCell {
    BenchCell {
        calib_size,
        arm: arm.to_string(),
        stages: Vec::new(),
        total_median_seconds: f64::NAN,
        peak_bytes: 0,
        field_stage_peak_bytes: 0,
        projected_filter_field_bytes: 0,
        residual: f64::NAN,
        nullspace_dim: 0,
        error: Some(e.to_string()),
    }
}

struct Samples {
    per_stage: Vec<(String, Vec<f64>)>,
    totals: Vec<f64>,
    last: Option<SensitivityResult>,
    error: Option<Error>,
}

impl Samples {
    fn record(&mut self, run: SensitivityResult) {
        let mut total = 0.0;
        for t in &run.timings {
            total += t.seconds;
            match self.per_stage.iter_mut().find(|(s, _)| *s == t.stage) {
                Some((_, v)) => v.push(t.seconds),
                None => self.per_stage.push((t.stage.clone(), vec![t.seconds])),
            }
        }
        self.totals.push(total);
        self.last = Some(run);
    }
}

/// One size of the benchmark grid: its calibration region (or the reason
/// it could not be extracted) and one sample set per arm.
struct SizeRun {
    size: usize,
    calib: std::result::Result<CalibrationRegion, String>,
    samples: Vec<Samples>,
}

/// One warm-up per cell, then `reps` rounds in which every cell (size and
/// arm) runs once, so slow drift of the machine affects all cells alike.
fn run_grid(kspace: &ComplexImageStack, arms: &[Arm], sizes: &[usize], reps: usize) -> Vec<BenchCell> {
    let mut runs: Vec<SizeRun> = sizes
        .iter()
        .map(|&size| {
            let dims: Vec<usize> = vec![size; kspace.dims().len()];
            let calib = extract_calibration(kspace, &dims).map_err(|e| e.to_string());
            let samples = arms
                .iter()
                .map(|arm| Samples {
                    per_stage: Vec::new(),
                    totals: Vec::new(),
                    last: None,
                    error: match &calib {
                        Ok(c) => estimate_maps(c, kspace.dims(), &arm.config).err(),
                        Err(_) => None,
                    },
                })
                .collect();
            SizeRun { size, calib, samples }
        })
        .collect();
    for _ in 0..reps {
        for run in runs.iter_mut() {
            let Ok(calib) = &run.calib else { continue };
            for (arm, smp) in arms.iter().zip(run.samples.iter_mut()) {
                if smp.error.is_some() {
                    continue;
                }
                match estimate_maps(calib, kspace.dims(), &arm.config) {
                    Ok(r) => smp.record(r),
                    Err(e) => smp.error = Some(e),
                }
            }
        }
    }
    runs.into_iter().flat_map(|run| finish_size(kspace, arms, run)).collect()
}

fn finish_size(kspace: &ComplexImageStack, arms: &[Arm], run: SizeRun) -> Vec<BenchCell> {
    let size = run.size;
    if let Err(msg) = run.calib {
        return arms
            .iter()
            .map(|a| failed_cell(size, &a.name, Error::InvalidArgument(msg.clone())))
            .collect();
    }
    arms.iter()
        .zip(run.samples)
        .map(|(arm, smp)| {
            if let Some(e) = smp.error {
                return failed_cell(size, &arm.name, e);
            }
            let last = smp.last.expect("at least one repetition");
            let residual = match projection_residual(kspace, &last.maps) {
                Ok(r) => r.value,
                Err(e) => return failed_cell(size, &arm.name, e),
            };
            BenchCell {
                calib_size: size,
                arm: arm.name.clone(),
                stages: smp
                    .per_stage
                    .into_iter()
                    .map(|(stage, v)| StageMedian {
                        peak_bytes: last.memory.stage_peak(&stage).unwrap_or(0),
                        median_seconds: median(&v),
                        stage,
                    })
                    .collect(),
                total_median_seconds: median(&smp.totals),
                peak_bytes: last.memory.peak,
                field_stage_peak_bytes: last.memory.stage_peak("field").unwrap_or(0),
                projected_filter_field_bytes: last.projected_filter_field_bytes,
                residual,
                nullspace_dim: last.provenance.nullspace_dim,
                error: None,
            }
        })
        .collect()
}

/// Runs every arm at every calibration size (square/cubic calibration
/// regions), `reps` timed repetitions after one warm-up, on a pool of
/// `threads` workers. Failing cells are recorded, not propagated.
pub fn run_benchmark(
    kspace: &ComplexImageStack,
    arms: &[Arm],
    calib_sizes: &[usize],
    reps: usize,
    threads: usize,
) -> Result<BenchReport> {
    if reps < MIN_REPS {
        return Err(Error::InvalidArgument(format!("at least {MIN_REPS} repetitions required, got {reps}")));
    }
    if arms.is_empty() || calib_sizes.is_empty() {
        return Err(Error::InvalidArgument("need at least one arm and one calibration size".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let cells = pool.install(|| run_grid(kspace, arms, calib_sizes, reps));
    let speedups = if arms.len() >= 2 {
        calib_sizes
            .iter()
            .map(|&size| {
                let t = |name: &str| {
                    cells
                        .iter()
                        .find(|c| c.calib_size == size && c.arm == name)
                        .map_or(f64::NAN, |c| c.total_median_seconds)
                };
                Speedup {
                    calib_size: size,
                    ratio: t(&arms[0].name) / t(&arms[1].name),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(BenchReport {
        threads,
        reps,
        arms: arms.to_vec(),
        cells,
        speedups,
    })
}

impl BenchReport {
    /// Rows `calib_size,arm,stage,median_seconds,peak_bytes,residual`; one
    /// row per stage plus a `total` row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("calib_size,arm,stage,median_seconds,peak_bytes,residual\n");
        for c in &self.cells {
            for s in &c.stages {
                out.push_str(&format!(
                    "{},{},{},{:.9},{},{:.9}\n",
                    c.calib_size, c.arm, s.stage, s.median_seconds, s.peak_bytes, c.residual
                ));
            }
            out.push_str(&format!(
                "{},{},total,{:.9},{},{:.9}\n",
                c.calib_size, c.arm, c.total_median_seconds, c.peak_bytes, c.residual
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_tracks_stage_peaks() {
        let mut l = MemoryLedger::default();
        l.begin_stage("a");
        l.alloc(100);
        l.alloc(50);
        l.free(120);
        l.begin_stage("b");
        l.alloc(10);
        assert_eq!(l.stage_peak("a"), Some(150));
        assert_eq!(l.stage_peak("b"), Some(40));
        assert_eq!(l.peak, 150);
        assert_eq!(l.current, 40);
        assert_eq!(l.stage_peak("c"), None);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
