//! Large-margin nearest-neighbour metric learning on pooled spectrogram
//! pixels, and the importance maps derived from the learned projection.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectra::Spectrogram;

pub const DEFAULT_FRAMES: usize = 48;
pub const DEFAULT_BANDS: usize = 64;
pub const DEFAULT_MU: f64 = 0.5;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_OUT_DIM: usize = 64;
const SCALE_FLOOR: f64 = 1e-8;

/// Fixed-size pixel vector: the first `frames` frames (padded with the pad
/// value), each averaged into `bands` equal groups of bins, time-major.
pub fn featurize<T: Real>(spec: &Spectrogram<T>, frames: usize, bands: usize) -> Result<Vec<T>> {
    let n_bins = spec.n_bins();
    if frames == 0 || bands == 0 || bands > n_bins {
        return Err(Error::InvalidParameter(format!(
            "cannot pool {n_bins} bins into {frames}x{bands}"
        )));
    }
    let pad = spec.pad_value();
    let mut out = Vec::with_capacity(frames * bands);
    for t in 0..frames {
        if t >= spec.n_frames() {
            out.extend(std::iter::repeat_n(pad, bands));
            continue;
        }
        let row = spec.values.row(t);
        for b in 0..bands {
            let (lo, hi) = (b * n_bins / bands, (b + 1) * n_bins / bands);
            let sum: T = row.slice(ndarray::s![lo..hi]).sum();
            out.push(sum / T::from_usize_lossy(hi - lo));
        }
    }
    Ok(out)
}

/// Bin range `[lo, hi)` pooled into band `b`.
pub fn band_bins(b: usize, n_bins: usize, bands: usize) -> (usize, usize) {
    (b * n_bins / bands, (b + 1) * n_bins / bands)
}

/// Standardized feature vectors with their labels and pixel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    /// `n × d`, each column zero-mean with unit scale (unless constant).
    pub vectors: Array2<T>,
    pub pixel_shape: (usize, usize),
    pub labels: Vec<String>,
    pub mean: Array1<T>,
    pub scale: Array1<T>,
}

impl<T: Real> FeatureMatrix<T> {
    /// Standardizes `raw` (`n × d`) per column.
    pub fn new(raw: Array2<T>, labels: Vec<String>, pixel_shape: (usize, usize)) -> Result<Self> {
        let (n, d) = raw.dim();
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!("{} labels for {n} vectors", labels.len())));
        }
        if pixel_shape.0 * pixel_shape.1 != d {
            return Err(Error::ShapeMismatch(format!("pixel shape {pixel_shape:?} for {d} features")));
        }
        if n == 0 {
            return Err(Error::TooFewCalls { needed: 1, got: 0 });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        let mean = raw.mean_axis(Axis(0)).unwrap();
        let scale = raw
            .std_axis(Axis(0), T::zero())
            .mapv(|s| s.max(T::lit(SCALE_FLOOR)));
        let vectors = (&raw - &mean) / &scale;
        Ok(Self {
            vectors,
            pixel_shape,
            labels,
            mean,
            scale,
        })
    }

    pub fn from_spectrograms(specs: &[Spectrogram<T>], labels: Vec<String>, frames: usize, bands: usize) -> Result<Self> {
        let d = frames * bands;
        let mut raw = Array2::zeros((specs.len(), d));
        for (mut row, s) in raw.rows_mut().into_iter().zip(specs) {
            row.assign(&Array1::from(featurize(s, frames, bands)?));
        }
        Self::new(raw, labels, (frames, bands))
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Applies the stored standardization to an unseen raw vector.
    pub fn standardize(&self, raw: &[T]) -> Result<Array1<T>> {
        if raw.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("{} features, expected {}", raw.len(), self.dim())));
        }
        Ok((&Array1::from(raw.to_vec()) - &self.mean) / &self.scale)
    }

    fn subset(&self, keep: &[usize]) -> Self {
        Self {
            vectors: self.vectors.select(Axis(0), keep),
            labels: keep.iter().map(|&i| self.labels[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Learned linear map `L` (`d' × d`) and its per-feature importance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMetric<T> {
    pub projection: Array2<T>,
    /// `importance[j] = Σ_r L[r][j]²`.
    pub importance: Vec<T>,
    /// Objective value at the start and after every accepted step.
    pub loss_history: Vec<T>,
    pub pixel_shape: Option<(usize, usize)>,
    /// Rows of the training matrix that took part (classes too small for
    /// `k` target neighbours are left out).
    pub used: Vec<usize>,
}

impl<T: Real> LinearMetric<T> {
    pub fn from_projection(projection: Array2<T>, pixel_shape: Option<(usize, usize)>) -> Self {
        let importance = column_sq_norms(projection.view());
        Self {
            projection,
            importance,
            loss_history: Vec::new(),
            pixel_shape,
            used: Vec::new(),
        }
    }

    /// Projects row vectors `x` (`n × d`) to `n × d'`.
    pub fn transform(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.projection.t())
    }
}

/// Writes `L` as little-endian `rows, cols` (u32) then row-major f64.
pub fn write_projection<T: Real>(metric: &LinearMetric<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (r, c) = metric.projection.dim();
    let mut bytes = Vec::with_capacity(8 + r * c * 8);
    bytes.extend_from_slice(&(r as u32).to_le_bytes());
    bytes.extend_from_slice(&(c as u32).to_le_bytes());
    for v in metric.projection.iter() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_projection(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::ShapeMismatch(format!("{} is not a projection file", path.display()));
    if bytes.len() < 8 {
        return Err(bad());
    }
    let r = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + r * c * 8 {
        return Err(bad());
    }
    let values = bytes[8..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((r, c), values).map_err(|_| bad())
}

fn column_sq_norms<T: Real>(l: ArrayView2<T>) -> Vec<T> {
    l.columns().into_iter().map(|c| c.iter().map(|&v| v * v).sum()).collect()
}

/// Squared Euclidean distances between all rows.
fn sq_distances<T: Real>(z: ArrayView2<T>) -> Array2<T> {
    let gram = z.dot(&z.t());
    let n = z.nrows();
    let diag: Vec<T> = (0..n).map(|i| gram[[i, i]]).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            T::zero()
        } else {
            (diag[i] + diag[j] - gram[[i, j]] - gram[[i, j]]).max(T::zero())
        }
    })
}

/// The `k` nearest same-class rows of each row under Euclidean distance
/// (ties by index).
pub fn target_neighbours<T: Real>(x: ArrayView2<T>, labels: &[String], k: usize) -> Result<Vec<Vec<usize>>> {
    let d = sq_distances(x);
    (0..x.nrows())
        .map(|i| {
            let mut same: Vec<usize> = (0..x.nrows()).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if same.len() < k {
                return Err(Error::TooFewCalls { needed: k + 1, got: same.len() + 1 });
            }
            same.sort_by(|&a, &b| d[[i, a]].partial_cmp(&d[[i, b]]).unwrap().then(a.cmp(&b)));
            same.truncate(k);
            Ok(same)
        })
        .collect()
}

/// LMNN objective `(1−mu)·pull + mu·push` at projection `l`, and optionally
/// its gradient with respect to `l`.
pub fn objective<T: Real>(
    x: ArrayView2<T>,
    labels: &[String],
    targets: &[Vec<usize>],
    l: ArrayView2<T>,
    mu: T,
    with_gradient: bool,
) -> (T, Option<Array2<T>>) {
    let n = x.nrows();
    let z = x.dot(&l.t());
    let d = sq_distances(z.view());
    let one = T::one();
    let pull_w = one - mu;
    // Per-row losses and pair weights, merged in index order afterwards so the
    // sum does not depend on scheduling.
    let rows: Vec<(T, Vec<(usize, usize, T)>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut loss = T::zero();
            let mut weights = Vec::new();
            for &j in &targets[i] {
                let dij = d[[i, j]];
                loss += pull_w * dij;
                let mut w_ij = pull_w;
                for m in 0..n {
                    if labels[m] == labels[i] {
                        continue;
                    }
                    let h = one + dij - d[[i, m]];
                    if h > T::zero() {
                        loss += mu * h;
                        w_ij += mu;
                        if with_gradient {
                            weights.push((i, m, -mu));
                        }
                    }
                }
                if with_gradient {
                    weights.push((i, j, w_ij));
                }
            }
            (loss, weights)
        })
        .collect();
    let loss = rows.iter().map(|r| r.0).sum();
    if !with_gradient {
        return (loss, None);
    }
    // Σ_pairs w·(x_a − x_b)(x_a − x_b)ᵀ = Xᵀ (D − S) X with S = A + Aᵀ.
    let mut lap = Array2::<T>::zeros((n, n));
    for (_, ws) in &rows {
        for &(a, b, w) in ws {
            lap[[a, b]] -= w;
            lap[[b, a]] -= w;
            lap[[a, a]] += w;
            lap[[b, b]] += w;
        }
    }
    let c = x.t().dot(&lap.dot(&x));
    let grad = l.dot(&c) * T::lit(2.0);
    (loss, Some(grad))
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LmnnConfig {
    pub k: usize,
    pub mu: f64,
    pub max_iters: usize,
    /// Stop when an accepted step improves the loss by less than this
    /// fraction.
    pub rel_tol: f64,
    /// Output dimension `d'`: the leading principal axes of the training
    /// vectors. `None` keeps every direction the data span.
    pub out_dim: Option<usize>,
}

impl Default for LmnnConfig {
    fn default() -> Self {
        Self {
            k: 3,
            mu: DEFAULT_MU,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: 1e-7,
            out_dim: Some(DEFAULT_OUT_DIM),
        }
    }
}

/// Orthonormal coordinates of the rows of `x` in their own span: returns
/// `(y, q)` with `y = x·q` (`n × r`) and `q` (`d × r`) orthonormal.
fn span_coordinates<T: Real>(x: ArrayView2<T>) -> (Array2<T>, Array2<T>) {
    let n = x.nrows();
    let gram = x.dot(&x.t());
    let g = nalgebra::DMatrix::from_fn(n, n, |i, j| gram[[i, j]].as_f64());
    let eig = g.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut order: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > top * 1e-10).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let r = order.len();
    // q = xᵀ v Λ^{-1/2}; y = x q = v Λ^{1/2}.
    let v = Array2::from_shape_fn((n, r), |(i, c)| T::lit(eig.eigenvectors[(i, order[c])]));
    let inv_sqrt = Array1::from_iter(order.iter().map(|&c| T::lit(eig.eigenvalues[c].sqrt().recip())));
    let q = x.t().dot(&(&v * &inv_sqrt));
    let y = x.dot(&q);
    (y, q)
}

/// Gradient descent on the LMNN objective.
///
/// All pairwise differences lie in the row span of the standardized data.
/// With `Q` its orthonormal principal axes (leading ones first, cut to
/// `out_dim`), the projection is `L = M Qᵀ` and the descent runs on the
/// small matrix `M` from `M = I`: the identity start truncated to the
/// retained axes. Directions outside them carry no weight, so they stay out
/// of the importance map.
pub fn lmnn_fit<T: Real>(features: &FeatureMatrix<T>, config: &LmnnConfig) -> Result<LinearMetric<T>> {
    if !(0.0..=1.0).contains(&config.mu) {
        return Err(Error::InvalidParameter(format!("mu {} outside [0, 1]", config.mu)));
    }
    let used = eligible_rows(&features.labels, config.k);
    let data = features.subset(&used);
    let mut classes = data.labels.clone();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let (mut y, mut q) = span_coordinates(data.vectors.view());
    if let Some(keep) = config.out_dim {
        if keep == 0 {
            return Err(Error::InvalidParameter("out_dim must be positive".into()));
        }
        let keep = keep.min(y.ncols());
        y = y.slice(ndarray::s![.., ..keep]).to_owned();
        q = q.slice(ndarray::s![.., ..keep]).to_owned();
    }
    let r = y.ncols();
    let targets = target_neighbours(y.view(), &data.labels, config.k)?;
    let mu = T::lit(config.mu);
    let mut m = Array2::<T>::eye(r);
    let eval = |m: &Array2<T>, grad: bool| objective(y.view(), &data.labels, &targets, m.view(), mu, grad);
    let (mut loss, grad) = eval(&m, true);
    let mut grad = grad.unwrap();
    check_finite(loss, 0)?;
    let mut history = vec![loss];
    let norm = |a: &Array2<T>| a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let g0 = norm(&grad);
    let mut step = if g0 > T::zero() { T::lit(0.01) * norm(&m) / g0 } else { T::zero() };
    for iter in 1..=config.max_iters {
        if grad.iter().all(|&g| g == T::zero()) || step == T::zero() {
            break;
        }
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &m - &(&grad * step);
            let (l, _) = eval(&candidate, false);
            check_finite(l, iter)?;
            if l <= loss {
                accepted = Some((candidate, l));
                break;
            }
            step = step * T::lit(0.5);
        }
        let Some((next, next_loss)) = accepted else {
            break;
        };
        let improvement = loss - next_loss;
        let moved = &next - &m;
        m = next;
        loss = next_loss;
        history.push(loss);
        if improvement <= T::lit(config.rel_tol) * loss.abs() {
            break;
        }
        let next_grad = eval(&m, true).1.unwrap();
        // Barzilai-Borwein step from the last move; fall back to growing the
        // accepted step when the curvature estimate is not positive.
        let changed = &next_grad - &grad;
        let curvature = (&moved * &changed).sum();
        step = if curvature > T::zero() {
            (&moved * &moved).sum() / curvature
        } else {
            step * T::lit(1.1)
        };
        grad = next_grad;
    }
    log::debug!("lmnn: {} accepted steps, loss {:?} -> {:?}", history.len() - 1, history[0], loss);
    let projection = m.dot(&q.t());
    let mut metric = LinearMetric::from_projection(projection, Some(features.pixel_shape));
    metric.loss_history = history;
    metric.used = used;
    Ok(metric)
}

fn check_finite<T: Real>(loss: T, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            iteration,
            detail: format!("objective evaluated to {loss}"),
        })
    }
}

/// Rows whose class has at least `k + 1` members.
fn eligible_rows(labels: &[String], k: usize) -> Vec<usize> {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    for (class, &c) in &counts {
        if c < k + 1 {
            log::warn!("dropping class {class}: {c} members, need {}", k + 1);
        }
    }
    (0..labels.len()).filter(|&i| counts[labels[i].as_str()] > k).collect()
}

/// Importance vector reshaped to the pixel grid (frames × bands).
pub fn importance_map<T: Real>(metric: &LinearMetric<T>) -> Result<Array2<T>> {
    let shape = metric
        .pixel_shape
        .ok_or_else(|| Error::ShapeMismatch("metric has no pixel shape".into()))?;
    Array2::from_shape_vec(shape, metric.importance.clone()).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Replaces each entry by its rank among all entries (ties get their average
/// rank), scaled so the smallest maps to 0 and the largest to 1.
pub fn rank_transform<T: Real>(map: &Array2<T>) -> Array2<T> {
    let values: Vec<T> = map.iter().copied().collect();
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![T::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = T::lit((i + j) as f64 / 2.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let denom = if n > 1 { T::from_usize_lossy(n - 1) } else { T::zero() };
    let scaled = ranks
        .into_iter()
        .map(|r| if denom > T::zero() { r / denom } else { T::lit(0.5) })
        .collect();
    Array2::from_shape_vec(map.dim(), scaled).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn spec(values: Array2<f64>, is_log: bool) -> Spectrogram<f64> {
        Spectrogram {
            values,
            frame_hop: 256,
            frame_size: 1024,
            sample_rate: 48000,
            is_log,
            time_origin: 512,
            floor_db: is_log.then_some(-80.0),
        }
    }

    fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
    }

    fn class_labels(n: usize, classes: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{}", i % classes)).collect()
    }

    fn brute_force_loss(x: &Array2<f64>, labels: &[String], targets: &[Vec<usize>], mu: f64) -> f64 {
        let sq = |a: usize, b: usize| x.row(a).iter().zip(x.row(b)).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        let mut pull = 0.0;
        let mut push = 0.0;
        for i in 0..x.nrows() {
            for &j in &targets[i] {
                pull += sq(i, j);
                for l in 0..x.nrows() {
                    if labels[l] != labels[i] {
                        push += (1.0 + sq(i, j) - sq(i, l)).max(0.0);
                    }
                }
            }
        }
        (1.0 - mu) * pull + mu * push
    }

    #[test]
    fn featurize_constants_and_padding() {
        let ones = spec(Array2::ones((48, 513)), false);
        assert!(featurize(&ones, 48, 64).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let short = spec(Array2::from_elem((10, 513), -20.0), true);
        let f = featurize(&short, 48, 64).unwrap();
        assert_eq!(f.len(), 48 * 64);
        assert!(f[10 * 64..].iter().all(|&v| v == -80.0));
        assert!(f[..10 * 64].iter().all(|&v| v == -20.0));
    }

    #[test]
    fn featurize_matches_direct_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = spec(Array2::from_shape_fn((60, 513), |_| rng.random::<f64>()), false);
        let f = featurize(&s, 48, 64).unwrap();
        let grid = Array2::from_shape_vec((48, 64), f).unwrap();
        for t in 0..48 {
            for b in 0..64 {
                let lo = b * 513 / 64;
                let hi = (b + 1) * 513 / 64;
                let mut acc = 0.0;
                for bin in lo..hi {
                    acc += s.values[[t, bin]];
                }
                assert!((grid[[t, b]] - acc / (hi - lo) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardization_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut raw = gaussian(12, 6, &mut rng);
        raw.column_mut(3).fill(4.0);
        let fm = FeatureMatrix::new(raw.clone(), class_labels(12, 2), (2, 3)).unwrap();
        for i in 0..12 {
            let again = fm.standardize(raw.row(i).as_slice().unwrap()).unwrap();
            assert_eq!(again, fm.vectors.row(i));
        }
        assert_eq!(fm.scale[3], 1e-8);
        assert!(fm.vectors.column(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_loss_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(30, 5, &mut rng);
        let labels = class_labels(30, 3);
        let targets = target_neighbours(x.view(), &labels, 3).unwrap();
        let (loss, _) = objective(x.view(), &labels, &targets, Array2::eye(5).view(), 0.5, false);
        let oracle = brute_force_loss(&x, &labels, &targets, 0.5);
        assert!((loss - oracle).abs() <= 1e-9 * oracle.abs(), "{loss} vs {oracle}");
    }

    #[test]
    fn pull_term_is_target_distance_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(12, 4, &mut rng);
        let labels = class_labels(12, 2);
        let targets = target_neighbours(x.view(), &labels, 3).unwrap();
        let (pull, _) = objective(x.view(), &labels, &targets, Array2::eye(4).view(), 0.0, false);
        let direct: f64 = (0..12)
            .flat_map(|i| targets[i].iter().map(move |&j| (i, j)))
            .map(|(i, j)| (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum())
            .sum();
        assert!((pull - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(10, 5, &mut rng) * 0.7;
        let labels = class_labels(10, 2);
        let targets = target_neighbours(x.view(), &labels, 3).unwrap();
        let l = Array2::eye(5) + gaussian(5, 5, &mut rng) * 0.1;
        let (_, g) = objective(x.view(), &labels, &targets, l.view(), 0.5, true);
        let g = g.unwrap();
        let h = 1e-6;
        for r in 0..5 {
            for c in 0..5 {
                let mut lp = l.clone();
                lp[[r, c]] += h;
                let mut lm = l.clone();
                lm[[r, c]] -= h;
                let fp = objective(x.view(), &labels, &targets, lp.view(), 0.5, false).0;
                let fm = objective(x.view(), &labels, &targets, lm.view(), 0.5, false).0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[[r, c]]).abs() <= 1e-4 * g[[r, c]].abs().max(1.0), "({r},{c}) {fd} vs {}", g[[r, c]]);
            }
        }
    }

    #[test]
    fn separated_classes_have_no_impostors() {
        let mut x = Array2::zeros((8, 3));
        for i in 0..8 {
            x[[i, 0]] = if i < 4 { 0.01 * i as f64 } else { 5.0 + 0.01 * i as f64 };
        }
        let labels: Vec<String> = (0..8).map(|i| if i < 4 { "a" } else { "b" }.to_string()).collect();
        let targets = target_neighbours(x.view(), &labels, 3).unwrap();
        let eye = Array2::eye(3);
        let (full, _) = objective(x.view(), &labels, &targets, eye.view(), 0.5, false);
        let (pull, _) = objective(x.view(), &labels, &targets, eye.view(), 0.0, false);
        assert!((full - 0.5 * pull).abs() < 1e-12);
    }

    #[test]
    fn fit_improves_training_knn_and_loss_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 40;
        let labels = class_labels(n, 4);
        // Class identity lives only in features 0..2; the rest is loud noise.
        let mut raw = gaussian(n, 12, &mut rng) * 3.0;
        for i in 0..n {
            let c = (i % 4) as f64;
            raw[[i, 0]] = c + 0.1 * rng.sample::<f64, _>(StandardNormal);
            raw[[i, 1]] = (c * 1.7) % 3.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        let fm = FeatureMatrix::new(raw, labels.clone(), (3, 4)).unwrap();
        let metric = lmnn_fit(&fm, &LmnnConfig::default()).unwrap();
        assert!(metric.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(metric.loss_history.last() < metric.loss_history.first());
        let acc = |z: &Array2<f64>| {
            let d = sq_distances(z.view());
            let mut correct = 0;
            for i in 0..n {
                let mut o: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                o.sort_by(|&a, &b| d[[i, a]].partial_cmp(&d[[i, b]]).unwrap().then(a.cmp(&b)));
                let same = o[..3].iter().filter(|&&j| labels[j] == labels[i]).count();
                correct += usize::from(same >= 2);
            }
            correct as f64 / n as f64
        };
        let before = acc(&fm.vectors);
        let after = acc(&metric.transform(fm.vectors.view()));
        assert!(after >= before, "{after} < {before}");
        let imp = metric.importance.clone();
        let noise_mean = imp[2..].iter().sum::<f64>() / 10.0;
        assert!(imp[0] > noise_mean && imp[1] > noise_mean);
        let cols = column_sq_norms(metric.projection.view());
        for (a, b) in cols.iter().zip(&imp) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn output_dimension_keeps_leading_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fm = FeatureMatrix::new(gaussian(30, 20, &mut rng), class_labels(30, 3), (4, 5)).unwrap();
        let cut = lmnn_fit(&fm, &LmnnConfig { max_iters: 3, out_dim: Some(4), ..LmnnConfig::default() }).unwrap();
        assert_eq!(cut.projection.dim(), (4, 20));
        let full = lmnn_fit(&fm, &LmnnConfig { max_iters: 0, out_dim: None, ..LmnnConfig::default() }).unwrap();
        // Centred rows span at most n - 1 directions; at M = I the map is the
        // orthogonal projector onto that span.
        assert_eq!(full.projection.dim(), (20, 20));
        let p = full.projection.t().dot(&full.projection);
        assert!((&p.dot(&p) - &p).iter().all(|v| v.abs() < 1e-9));
        assert!(lmnn_fit(&fm, &LmnnConfig { out_dim: Some(0), ..LmnnConfig::default() }).is_err());
    }

    #[test]
    fn small_classes_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut labels = class_labels(12, 2);
        labels.push("tiny".into());
        labels.push("tiny".into());
        let fm = FeatureMatrix::new(gaussian(14, 4, &mut rng), labels, (2, 2)).unwrap();
        let metric = lmnn_fit(&fm, &LmnnConfig { max_iters: 5, ..LmnnConfig::default() }).unwrap();
        assert_eq!(metric.used, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn importance_of_simple_projections() {
        let m = LinearMetric::from_projection(Array2::<f64>::eye(6), Some((2, 3)));
        assert_eq!(importance_map(&m).unwrap(), Array2::<f64>::ones((2, 3)));
        let mut l = Array2::<f64>::eye(4);
        l[[0, 0]] = 2.0;
        let m = LinearMetric::from_projection(l, Some((2, 2)));
        assert_eq!(m.importance, vec![4.0, 1.0, 1.0, 1.0]);
        let bad = LinearMetric::from_projection(Array2::<f64>::eye(4), Some((3, 3)));
        assert!(importance_map(&bad).is_err());
    }

    #[test]
    fn rank_transform_examples() {
        let a = Array2::from_shape_vec((1, 3), vec![1.0, 10.0, 100.0]).unwrap();
        assert_eq!(rank_transform(&a).into_raw_vec_and_offset().0, vec![0.0, 0.5, 1.0]);
        let c = Array2::from_elem((3, 4), 7.0);
        assert!(rank_transform(&c).iter().all(|&v| v == 0.5));
        let t = Array2::from_shape_vec((1, 4), vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(rank_transform(&t).into_raw_vec_and_offset().0, vec![0.0, 0.5, 0.5, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rank_transform_is_scale_invariant_and_bounded(
            v in prop::collection::vec(-1e3f64..1e3, 1..40), c in 0.01f64..100.0
        ) {
            let n = v.len();
            let m = Array2::from_shape_vec((1, n), v).unwrap();
            let r = rank_transform(&m);
            prop_assert_eq!(&r, &rank_transform(&m.mapv(|x| x * c)));
            prop_assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn rank_transform_is_permutation_equivariant(
            v in prop::collection::vec(-10i32..10, 2..30), seed in 0u64..1000
        ) {
            use rand::seq::SliceRandom;
            let n = v.len();
            let vals: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let m = Array2::from_shape_vec((1, n), vals.clone()).unwrap();
            let pm = Array2::from_shape_vec((1, n), perm.iter().map(|&i| vals[i]).collect()).unwrap();
            let r = rank_transform(&m);
            let pr = rank_transform(&pm);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(pr[[0, k]], r[[0, i]]);
            }
        }
    }

    #[test]
    fn projection_file_round_trips() {
        let l = Array2::from_shape_fn((3, 4), |(i, j)| i as f64 - 0.25 * j as f64);
        let m = LinearMetric::from_projection(l.clone(), None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.bin");
        write_projection(&m, &path).unwrap();
        assert_eq!(read_projection(&path).unwrap(), l);
        std::fs::write(&path, [0u8; 5]).unwrap();
        assert!(read_projection(&path).is_err());
    }
}
