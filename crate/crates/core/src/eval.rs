//! Kernel two-sample statistics on raw feature vectors.
//!
//! [`mmd2_unbiased`] is the unbiased estimate of the squared maximum mean
//! discrepancy: within-set sums skip the diagonal, the cross term does not.
//! [`permutation_test`] calibrates it against label shuffles of the pooled
//! sample.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n ≥ 2` finite feature vectors of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 samples, got {}", rows.len())));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("samples must share a nonzero dimension".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("samples must be finite".into()));
        }
        Ok(Self { dim, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn cmp_total(&self, other: &SampleSet) -> Ordering {
        let a = self.rows.iter().flatten();
        let b = other.rows.iter().flatten();
        a.zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.rows.len().cmp(&other.rows.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-‖x − y‖² / (2 h²))`.
    Gaussian { bandwidth: f64 },
    /// `(x·y / d + coef0)^degree`, the kernel behind KID.
    Polynomial { degree: i32, coef0: f64 },
}

impl Kernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Kernel::Gaussian { bandwidth })
    }

    pub fn kid() -> Self {
        Kernel::Polynomial { degree: 3, coef0: 1.0 }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Gaussian { bandwidth } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Polynomial { degree, coef0 } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot / x.len() as f64 + coef0).powi(degree)
            }
        }
    }
}

fn check_dims(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.dim != y.dim {
        return Err(Error::ShapeMismatch(format!("sample dimensions differ: {} vs {}", x.dim, y.dim)));
    }
    Ok(())
}

/// `Σ_{i<j} k(a_i, a_j)`, row sums accumulated in index order.
fn within_sum(rows: &[Vec<f64>], kernel: &Kernel) -> f64 {
    let per_row: Vec<f64> = (0..rows.len())
        .into_par_iter()
        .map(|i| rows[i + 1..].iter().map(|r| kernel.eval(&rows[i], r)).sum::<f64>())
        .collect();
    per_row.iter().sum()
}

fn cross_sum(a: &[Vec<f64>], b: &[Vec<f64>], kernel: &Kernel) -> f64 {
    let per_row: Vec<f64> = a.par_iter().map(|x| b.iter().map(|y| kernel.eval(x, y)).sum::<f64>()).collect();
    per_row.iter().sum()
}

/// Unbiased squared MMD. Symmetric in its arguments bit for bit.
pub fn mmd2_with_kernel(x: &SampleSet, y: &SampleSet, kernel: &Kernel) -> Result<f64> {
    check_dims(x, y)?;
    // Fixed argument order keeps the floating-point sums identical under swap.
    let (x, y) = if x.cmp_total(y) == Ordering::Greater { (y, x) } else { (x, y) };
    let (n, m) = (x.len() as f64, y.len() as f64);
    let kxx = 2.0 * within_sum(&x.rows, kernel) / (n * (n - 1.0));
    let kyy = 2.0 * within_sum(&y.rows, kernel) / (m * (m - 1.0));
    let kxy = cross_sum(&x.rows, &y.rows, kernel) / (n * m);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Unbiased squared MMD with a Gaussian kernel of the given bandwidth.
pub fn mmd2_unbiased(x: &SampleSet, y: &SampleSet, bandwidth: f64) -> Result<f64> {
    mmd2_with_kernel(x, y, &Kernel::gaussian(bandwidth)?)
}

/// Median pairwise Euclidean distance over the pooled sample.
pub fn median_bandwidth(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    check_dims(x, y)?;
    let pooled: Vec<&Vec<f64>> = x.rows.iter().chain(&y.rows).collect();
    let mut dists: Vec<f64> = (0..pooled.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let pooled = &pooled;
            (i + 1..pooled.len())
                .map(move |j| pooled[i].iter().zip(pooled[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect();
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::InvalidParameter("median pairwise distance is zero".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

impl PermutationTest {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Permutation test of `H0: X and Y share a distribution`, using the pooled
/// Gram matrix so each shuffle costs one pass over it.
pub fn permutation_test<R: Rng + ?Sized>(
    x: &SampleSet,
    y: &SampleSet,
    kernel: &Kernel,
    permutations: usize,
    rng: &mut R,
) -> Result<PermutationTest> {
    check_dims(x, y)?;
    let pooled: Vec<&Vec<f64>> = x.rows.iter().chain(&y.rows).collect();
    let total = pooled.len();
    let gram: Vec<Vec<f64>> =
        (0..total).into_par_iter().map(|i| (0..i).map(|j| kernel.eval(pooled[i], pooled[j])).collect()).collect();

    let (n, m) = (x.len() as f64, y.len() as f64);
    let statistic_for = |in_x: &[bool]| {
        let sums: Vec<[f64; 3]> = (0..total)
            .into_par_iter()
            .map(|i| {
                let mut s = [0.0; 3];
                for (j, &k) in gram[i].iter().enumerate() {
                    let slot = match (in_x[i], in_x[j]) {
                        (true, true) => 0,
                        (false, false) => 1,
                        _ => 2,
                    };
                    s[slot] += k;
                }
                s
            })
            .collect();
        let s = sums.iter().fold([0.0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
        2.0 * s[0] / (n * (n - 1.0)) + 2.0 * s[1] / (m * (m - 1.0)) - 2.0 * s[2] / (n * m)
    };

    let mut labels: Vec<bool> = (0..total).map(|i| i < x.len()).collect();
    let statistic = statistic_for(&labels);
    let mut exceed = 0;
    for _ in 0..permutations {
        labels.shuffle(rng);
        if statistic_for(&labels) >= statistic {
            exceed += 1;
        }
    }
    Ok(PermutationTest { statistic, p_value: (1 + exceed) as f64 / (1 + permutations) as f64, permutations })
}

/// JSON summary emitted by the `mmd` subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    pub mmd2: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub bandwidth: f64,
}

/// Statistic with the median-heuristic bandwidth unless one is given.
pub fn mmd_report(x: &SampleSet, y: &SampleSet, bandwidth: Option<f64>) -> Result<MmdReport> {
    let bandwidth = match bandwidth {
        Some(b) => b,
        None => median_bandwidth(x, y)?,
    };
    Ok(MmdReport { mmd2: mmd2_unbiased(x, y, bandwidth)?, n_x: x.len(), n_y: y.len(), bandwidth })
}

/// Sample mean and unbiased sample covariance.
pub fn moments(x: &SampleSet) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if x.len() < 2 {
        return Err(Error::InvalidParameter("moments need at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let d = x.dim;
    let mut mean = vec![0.0; d];
    for r in &x.rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for r in &x.rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n - 1.0);
    Ok((mean, cov))
}
