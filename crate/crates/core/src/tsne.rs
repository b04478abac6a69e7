//! Exact t-SNE on a precomputed distance matrix.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::distances::{DistanceMatrix, Metric};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_sd: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            seed: 1,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_sd: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `n × 2`, rows in the order of the input matrix.
    pub coords: Array2<f64>,
    pub call_ids: Vec<String>,
    /// KL divergence of the (unexaggerated) affinities at every iteration.
    pub kl_history: Vec<f64>,
    pub perplexity: f64,
    pub seed: u64,
}

impl Embedding {
    /// CSV with `call_id,x,y,label`; `labels` follows the row order.
    pub fn write_csv(&self, path: impl AsRef<Path>, labels: Option<&[String]>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["call_id", "x", "y", "label"])?;
        for (i, id) in self.call_ids.iter().enumerate() {
            let label = labels.map(|l| l[i].as_str()).unwrap_or("");
            w.write_record([
                id.as_str(),
                &self.coords[[i, 0]].to_string(),
                &self.coords[[i, 1]].to_string(),
                label,
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Row-conditional affinities `p_{j|i}` whose entropy (nats) matches
/// `ln(perplexity)`, found by bisection on the precision of each row.
pub fn conditional_probabilities(d: &Array2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let n = d.nrows();
    let target = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[[i, j]]).collect();
            let p = calibrate_row(&row, target).ok_or(Error::PerplexityInfeasible { perplexity, point: i })?;
            let mut full = Vec::with_capacity(n);
            let mut it = p.into_iter();
            for j in 0..n {
                full.push(if j == i { 0.0 } else { it.next().unwrap() });
            }
            Ok(full)
        })
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_vec((n, n), rows.concat()).expect("square"))
}

fn row_distribution(row: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = row.iter().map(|&v| (-(v - min) * beta).exp()).collect();
    let sum: f64 = w.iter().sum();
    let mean_shift: f64 = w.iter().zip(row).map(|(wi, &v)| wi * (v - min)).sum::<f64>() / sum;
    let entropy = sum.ln() + beta * mean_shift;
    (w.into_iter().map(|v| v / sum).collect(), entropy)
}

fn calibrate_row(row: &[f64], target: f64) -> Option<Vec<f64>> {
    const TOL: f64 = 1e-10;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let spread = row.iter().copied().fold(0.0f64, f64::max) - row.iter().copied().fold(f64::INFINITY, f64::min);
    if spread > 0.0 {
        beta = 1.0 / spread;
    }
    for _ in 0..500 {
        let (p, h) = row_distribution(row, beta);
        if (h - target).abs() < TOL {
            return Some(p);
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
        if !beta.is_finite() || (hi.is_finite() && hi - lo <= f64::EPSILON * hi) {
            break;
        }
    }
    None
}

fn kl_divergence(p: &Array2<f64>, q_num: &Array2<f64>, q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num.iter())
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &num)| pij * (pij / (num / q_sum).max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// 2-D t-SNE of the calls in `dm`. Distances are squared first when the
/// matrix is tagged Euclidean, otherwise used as given. The computation runs
/// in call-id order, so permuting the input permutes the output rows and
/// nothing else.
pub fn tsne<T: Real>(dm: &DistanceMatrix<T>, config: &TsneConfig) -> Result<Embedding> {
    let n = dm.len();
    if !(config.perplexity > 0.0) || (n as f64) <= 3.0 * config.perplexity {
        return Err(Error::TooFewCalls {
            needed: (3.0 * config.perplexity).floor() as usize + 1,
            got: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dm.call_ids()[a].cmp(&dm.call_ids()[b]).then(a.cmp(&b)));
    let square = dm.metric_tag.is_some_and(|t| t.metric == Metric::Euclidean);
    let d = Array2::from_shape_fn((n, n), |(i, j)| {
        let v = dm.get(order[i], order[j]).as_f64();
        if square {
            v * v
        } else {
            v
        }
    });
    let cond = conditional_probabilities(&d, config.perplexity)?;
    let p = Array2::from_shape_fn((n, n), |(i, j)| {
        ((cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64)).max(if i == j { 0.0 } else { 1e-12 })
    });

    let normal = Normal::new(0.0, config.init_sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl_history = Vec::with_capacity(config.iters);

    for iter in 0..config.iters {
        let exaggerate = iter < config.exaggeration_iters;
        let scale = if exaggerate { config.exaggeration } else { 1.0 };
        let momentum = if iter < config.exaggeration_iters {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let num = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                1.0 / (1.0 + dx * dx + dy * dy)
            }
        });
        let row_sums: Vec<f64> = num.rows().into_iter().map(|r| r.sum()).collect();
        let q_sum: f64 = row_sums.iter().sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (scale * p[[i, j]] - num[[i, j]] / q_sum) * num[[i, j]];
                    g[0] += w * (y[[i, 0]] - y[[j, 0]]);
                    g[1] += w * (y[[i, 1]] - y[[j, 1]]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        let kl = kl_divergence(&p, &num, q_sum);
        if !kl.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: "t-SNE KL divergence".into(),
            });
        }
        kl_history.push(kl);
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                let same_sign = (g > 0.0) == (update[[i, c]] > 0.0);
                gains[[i, c]] = if same_sign { gains[[i, c]] * 0.8 } else { gains[[i, c]] + 0.2 };
                gains[[i, c]] = gains[[i, c]].max(0.01);
                update[[i, c]] = momentum * update[[i, c]] - config.learning_rate * gains[[i, c]] * g;
                y[[i, c]] += update[[i, c]];
            }
        }
        for c in 0..2 {
            let mean = y.column(c).sum() / n as f64;
            y.column_mut(c).mapv_inplace(|v| v - mean);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: "t-SNE coordinates diverged".into(),
            });
        }
    }

    let mut coords = Array2::zeros((n, 2));
    for (canonical, &original) in order.iter().enumerate() {
        coords.row_mut(original).assign(&y.row(canonical));
    }
    Ok(Embedding {
        coords,
        call_ids: dm.call_ids().to_vec(),
        kl_history,
        perplexity: config.perplexity,
        seed: config.seed,
    })
}
