//! Cost benchmark: counts unique similarity evaluations of the cocoa and cmc
//! objectives over a grid of modality counts and batch sizes, and times them.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::losses::{cmc_loss, cocoa_loss, count_formula, CocoaHyper, CountedMethod, OpCounter, SimilarityKind};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: CountedMethod,
    pub views: usize,
    pub batch: usize,
    pub measured_count: u64,
    pub formula_count: u64,
    /// Median over repeats of one loss evaluation.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: CountedMethod, views: usize, batch: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.views == views && r.batch == batch)
    }

    /// cmc count divided by cocoa count at one grid point.
    pub fn count_ratio(&self, views: usize, batch: usize) -> Option<f64> {
        let cmc = self.row(CountedMethod::Cmc, views, batch)?;
        let cocoa = self.row(CountedMethod::Cocoa, views, batch)?;
        Some(cmc.measured_count as f64 / cocoa.measured_count as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut out = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            out.serialize(row).map_err(|e| csv_error(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn random_views(views: usize, batch: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<EmbeddingSet> {
    let tensors = (0..views)
        .map(|_| {
            let data = (0..batch * dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
            Tensor::new(vec![batch, dim], data)
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(tensors)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn evaluate(method: CountedMethod, z: &EmbeddingSet, counter: &mut OpCounter) -> Result<f64> {
    let out = match method {
        CountedMethod::Cocoa => cocoa_loss(z, &CocoaHyper { tau: 0.1, lambda: 1.0 }, counter)?,
        CountedMethod::Cmc => cmc_loss(z, 0.1, SimilarityKind::Cosine, counter)?,
    };
    Ok(out.value)
}

/// Evaluates both counted objectives on random embeddings for every `(V, N)`
/// pair, checking the measured count against the closed form.
pub fn run_bench(views: &[usize], batches: &[usize], dim: usize, repeats: usize, seed: u64) -> Result<BenchReport> {
    if views.is_empty() || batches.is_empty() {
        return Err(Error::Config("bench needs at least one V and one N".into()));
    }
    if let Some(v) = views.iter().find(|&&v| v < 2) {
        return Err(Error::Config(format!("bench V must be ≥ 2, got {v}")));
    }
    if let Some(n) = batches.iter().find(|&&n| n < 2) {
        return Err(Error::Config(format!("bench N must be ≥ 2, got {n}")));
    }
    if dim == 0 || repeats == 0 {
        return Err(Error::Config("bench dimension and repeats must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for method in [CountedMethod::Cocoa, CountedMethod::Cmc] {
        for &v in views {
            for &n in batches {
                let z = random_views(v, n, dim, &mut rng)?;
                let formula = count_formula(method, v, n);
                let mut times = Vec::with_capacity(repeats);
                let mut measured = 0;
                for _ in 0..repeats {
                    let mut counter = OpCounter::new();
                    let start = Instant::now();
                    std::hint::black_box(evaluate(method, &z, &mut counter)?);
                    times.push(start.elapsed().as_secs_f64());
                    measured = counter.similarity_evaluations;
                    if measured != formula {
                        return Err(Error::CounterMismatch {
                            method: method.name().into(),
                            views: v,
                            batch: n,
                            measured,
                            formula,
                        });
                    }
                }
                rows.push(BenchRow {
                    method,
                    views: v,
                    batch: n,
                    measured_count: measured,
                    formula_count: formula,
                    wall_seconds: median(&mut times),
                });
            }
        }
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_counts() {
        let r = run_bench(&[2, 3], &[2, 4], 4, 3, 0).unwrap();
        assert_eq!(r.rows.len(), 8);
        assert_eq!(r.row(CountedMethod::Cocoa, 3, 4).unwrap().measured_count, 30);
        assert_eq!(r.row(CountedMethod::Cmc, 3, 4).unwrap().measured_count, 48);
        assert_eq!(r.count_ratio(2, 2), Some(1.0));
    }

    #[test]
    fn rejects_degenerate_grid() {
        assert!(matches!(run_bench(&[1], &[8], 4, 1, 0), Err(Error::Config(_))));
        assert!(matches!(run_bench(&[2], &[1], 4, 1, 0), Err(Error::Config(_))));
        assert!(matches!(run_bench(&[], &[8], 4, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/bench.csv");
        run_bench(&[2], &[4, 8], 3, 1, 1).unwrap().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("method,views,batch,measured_count,formula_count"));
        assert!(lines[1].starts_with("cocoa,2,4,"));
    }
}
