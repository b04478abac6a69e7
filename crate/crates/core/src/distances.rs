//! Pairwise spectrogram distances with a rigid alignment search.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectra::Spectrogram;

pub const DEFAULT_MAX_SHIFT_MS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Manhattan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Mag,
    Log,
}

/// Which audio the representation is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Raw,
    LpcResidual,
    LpcFilter,
}

/// Which time-frequency analysis is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Stft,
    AdftUnrefined,
    AdftRefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetricTag {
    pub metric: Metric,
    pub scale: Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RepresentationTag {
    pub source: Source,
    pub transform: Transform,
}

impl RepresentationTag {
    pub const fn new(source: Source, transform: Transform) -> Self {
        Self { source, transform }
    }

    /// The LPC filter is one spectrum per call, so only the STFT grid applies.
    pub fn is_valid(&self) -> bool {
        !(self.source == Source::LpcFilter && self.transform != Transform::Stft)
    }

    /// All valid source/transform combinations.
    pub fn all() -> Vec<RepresentationTag> {
        let mut out = Vec::new();
        for source in [Source::Raw, Source::LpcResidual, Source::LpcFilter] {
            for transform in [Transform::Stft, Transform::AdftUnrefined, Transform::AdftRefined] {
                let tag = RepresentationTag { source, transform };
                if tag.is_valid() {
                    out.push(tag);
                }
            }
        }
        out
    }
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::InvalidParameter(format!(
                        "unknown {} '{other}'", stringify!($ty).to_lowercase()
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Metric { Euclidean => "euclidean", Manhattan => "manhattan" });
keyword_enum!(Scale { Mag => "mag", Log => "log" });
keyword_enum!(Source { Raw => "raw", LpcResidual => "lpc_residual", LpcFilter => "lpc_filter" });
keyword_enum!(Transform { Stft => "stft", AdftUnrefined => "adft_unrefined", AdftRefined => "adft_refined" });

impl fmt::Display for RepresentationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.source, self.transform)
    }
}

impl FromStr for RepresentationTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (source, transform) = s
            .trim()
            .split_once('/')
            .ok_or_else(|| Error::InvalidParameter(format!("representation '{s}' is not source/transform")))?;
        let tag = RepresentationTag {
            source: source.parse()?,
            transform: transform.parse()?,
        };
        if !tag.is_valid() {
            return Err(Error::InvalidParameter(format!("{tag} is not a valid combination")));
        }
        Ok(tag)
    }
}

impl fmt::Display for MetricTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.metric, self.scale)
    }
}

impl FromStr for MetricTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (metric, scale) = s
            .trim()
            .split_once('/')
            .ok_or_else(|| Error::InvalidParameter(format!("metric tag '{s}' is not metric/scale")))?;
        Ok(MetricTag {
            metric: metric.parse()?,
            scale: scale.parse()?,
        })
    }
}

/// Symmetric matrix of pairwise distances over a labelled call set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    values: Array2<T>,
    call_ids: Vec<String>,
    pub metric_tag: Option<MetricTag>,
    pub representation_tag: Option<RepresentationTag>,
}

impl<T: Real> DistanceMatrix<T> {
    /// Validates shape, symmetry, zero diagonal, finiteness and
    /// non-negativity.
    pub fn new(values: Array2<T>, call_ids: Vec<String>) -> Result<Self> {
        let n = call_ids.len();
        if values.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "{n} ids for a {:?} matrix",
                values.dim()
            )));
        }
        for i in 0..n {
            if values[[i, i]] != T::zero() {
                return Err(Error::InvalidParameter(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[[i, j]];
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::InvalidParameter(format!("invalid distance at ({i}, {j})")));
                }
                if v != values[[j, i]] {
                    return Err(Error::InvalidParameter(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            values,
            call_ids,
            metric_tag: None,
            representation_tag: None,
        })
    }

    pub fn with_tags(mut self, metric: Option<MetricTag>, representation: Option<RepresentationTag>) -> Self {
        self.metric_tag = metric;
        self.representation_tag = representation;
        self
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn call_ids(&self) -> &[String] {
        &self.call_ids
    }

    pub fn len(&self) -> usize {
        self.call_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.call_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[[i, j]]
    }

    /// Applies `f` to every off-diagonal entry.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        let mut values = self.values.mapv(&f);
        for i in 0..self.len() {
            values[[i, i]] = T::zero();
        }
        Ok(Self::new(values, self.call_ids.clone())?.with_tags(self.metric_tag, self.representation_tag))
    }

    /// Reorders rows and columns: entry `i` of the result is entry `order[i]`
    /// of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.len();
        let values = Array2::from_shape_fn((n, n), |(i, j)| self.values[[order[i], order[j]]]);
        Self {
            values,
            call_ids: order.iter().map(|&i| self.call_ids[i].clone()).collect(),
            metric_tag: self.metric_tag,
            representation_tag: self.representation_tag,
        }
    }

    fn tag_line(&self) -> String {
        let mut parts = Vec::new();
        if let Some(m) = self.metric_tag {
            parts.push(format!("metric={m}"));
        }
        if let Some(r) = self.representation_tag {
            parts.push(format!("representation={r}"));
        }
        parts.join(" ")
    }

    fn apply_tag_line(&mut self, line: &str) -> Result<()> {
        for part in line.split_whitespace() {
            match part.split_once('=') {
                Some(("metric", v)) => self.metric_tag = Some(v.parse()?),
                Some(("representation", v)) => self.representation_tag = Some(v.parse()?),
                _ => {}
            }
        }
        Ok(())
    }

    /// CSV: an optional `# metric=… representation=…` line, a header row of
    /// call ids, then one row of distances per call.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let tags = self.tag_line();
        if !tags.is_empty() {
            writeln!(file, "# {tags}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        w.write_record(&self.call_ids)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| format!("{:e}", v.as_f64())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tag_line = String::new();
        let body: String = text
            .lines()
            .filter(|l| {
                if let Some(rest) = l.strip_prefix('#') {
                    tag_line.push_str(rest);
                    tag_line.push(' ');
                    false
                } else {
                    true
                }
            })
            .map(|l| format!("{l}\n"))
            .collect();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(body.as_bytes());
        let mut records = r.records();
        let ids: Vec<String> = records
            .next()
            .ok_or_else(|| Error::ShapeMismatch("empty distance CSV".into()))??
            .iter()
            .map(str::to_string)
            .collect();
        let n = ids.len();
        let mut data = Vec::with_capacity(n * n);
        for rec in records {
            for field in rec?.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad distance '{field}'")))?;
                data.push(T::lit(v));
            }
        }
        let values = Array2::from_shape_vec((n, n), data).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let mut dm = Self::new(values, ids)?;
        dm.apply_tag_line(&tag_line)?;
        Ok(dm)
    }

    /// Compact binary: the 16-byte spectrogram-style header `(n, n, 0, 0)`,
    /// row-major little-endian f64 values, then a u32 count and
    /// length-prefixed UTF-8 strings: the tag line followed by the call ids.
    pub fn write_bin(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let n = self.len() as u32;
        let mut bytes = Vec::new();
        for v in [n, n, 0, 0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.values.iter() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        let tags = self.tag_line();
        let strings: Vec<&str> = std::iter::once(tags.as_str())
            .chain(self.call_ids.iter().map(String::as_str))
            .collect();
        bytes.extend_from_slice(&(strings.len() as u32).to_le_bytes());
        for s in strings {
            bytes.extend_from_slice(&(s.len() as u32).to_le_bytes());
            bytes.extend_from_slice(s.as_bytes());
        }
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn read_bin(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0, path };
        let n = cur.u32()? as usize;
        let m = cur.u32()? as usize;
        cur.u32()?;
        cur.u32()?;
        if n != m {
            return Err(Error::ShapeMismatch(format!("distance matrix is {n}x{m}")));
        }
        let data: Vec<T> = cur
            .take(8 * n * n)?
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let count = cur.u32()? as usize;
        let mut strings = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let s = std::str::from_utf8(cur.take(len)?)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?
                .to_string();
            strings.push(s);
        }
        if strings.len() != n + 1 {
            return Err(Error::ShapeMismatch("call id block does not match matrix size".into()));
        }
        let tags = strings.remove(0);
        let values = Array2::from_shape_vec((n, n), data).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let mut dm = Self::new(values, strings)?;
        dm.apply_tag_line(&tags)?;
        Ok(dm)
    }

    /// Reads either format, choosing by extension (`.csv` or binary).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::read_csv(path)
        } else {
            Self::read_bin(path)
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            self.write_csv(path)
        } else {
            self.write_bin(path)
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + len)
            .ok_or_else(|| Error::ShapeMismatch(format!("{} is truncated", self.path.display())))?;
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Number of whole-frame shifts covering `±max_shift_ms`, rounded to the
/// nearest frame (4 at 48 kHz with a 256-sample hop).
pub fn max_shift_frames(max_shift_ms: f64, hop: usize, sample_rate: u32) -> usize {
    if max_shift_ms <= 0.0 {
        return 0;
    }
    (max_shift_ms * 1e-3 * f64::from(sample_rate) / hop as f64).round() as usize
}

#[inline]
fn row_cost<T: Real>(a: ArrayView1<T>, b: ArrayView1<T>, metric: Metric) -> T {
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    match metric {
        Metric::Euclidean => a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum(),
        Metric::Manhattan => a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum(),
    }
}

#[inline]
fn pad_cost<T: Real>(a: ArrayView1<T>, pad: T, metric: Metric) -> T {
    match metric {
        Metric::Euclidean => a.iter().map(|&x| (x - pad) * (x - pad)).sum(),
        Metric::Manhattan => a.iter().map(|&x| (x - pad).abs()).sum(),
    }
}

/// Prepared operand for repeated distance evaluations.
struct Operand<'a, T> {
    spec: &'a Spectrogram<T>,
    /// Cost of each frame against the pad value.
    pad_costs: Vec<T>,
}

impl<'a, T: Real> Operand<'a, T> {
    fn new(spec: &'a Spectrogram<T>, metric: Metric) -> Self {
        let pad = spec.pad_value();
        let pad_costs = spec.values.rows().into_iter().map(|r| pad_cost(r, pad, metric)).collect();
        Self { spec, pad_costs }
    }
}

/// Sum of pixel costs of `a[t]` against `b[t + shift]` over the union of both
/// supports, with missing frames taken as the pad value. Returns `None` once
/// the partial sum exceeds `bound`.
fn shifted_cost<T: Real>(a: &Operand<T>, b: &Operand<T>, shift: isize, metric: Metric, bound: T) -> Option<T> {
    let ta = a.spec.n_frames() as isize;
    let tb = b.spec.n_frames() as isize;
    let lo = 0.min(-shift);
    let hi = ta.max(tb - shift);
    let mut acc = T::zero();
    for t in lo..hi {
        let u = t + shift;
        let in_a = (0..ta).contains(&t);
        let in_b = (0..tb).contains(&u);
        acc += match (in_a, in_b) {
            (true, true) => row_cost(a.spec.values.row(t as usize), b.spec.values.row(u as usize), metric),
            (true, false) => a.pad_costs[t as usize],
            (false, true) => b.pad_costs[u as usize],
            (false, false) => T::zero(),
        };
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}

fn check_compatible<T: Real>(a: &Spectrogram<T>, b: &Spectrogram<T>) -> Result<()> {
    if a.n_bins() != b.n_bins() {
        return Err(Error::ShapeMismatch(format!("{} vs {} bins", a.n_bins(), b.n_bins())));
    }
    if a.frame_hop != b.frame_hop || a.sample_rate != b.sample_rate {
        return Err(Error::ShapeMismatch("spectrograms use different hops or sample rates".into()));
    }
    if a.is_log != b.is_log || a.pad_value() != b.pad_value() {
        return Err(Error::ShapeMismatch("spectrograms mix magnitude and log scales".into()));
    }
    if !a.values.is_standard_layout() || !b.values.is_standard_layout() {
        return Err(Error::ShapeMismatch("spectrogram values must be row-major".into()));
    }
    Ok(())
}

fn aligned_distance<T: Real>(a: &Operand<T>, b: &Operand<T>, metric: Metric, max_shift: usize) -> T {
    let mut best = T::infinity();
    let shifts = std::iter::once(0isize).chain((1..=max_shift as isize).flat_map(|s| [-s, s]));
    for s in shifts {
        if let Some(c) = shifted_cost(a, b, s, metric, best) {
            if c < best {
                best = c;
            }
        }
    }
    let pixels = T::from_usize_lossy(a.spec.n_frames().max(b.spec.n_frames()) * a.spec.n_bins());
    match metric {
        Metric::Euclidean => best.sqrt() / pixels,
        Metric::Manhattan => best / pixels,
    }
}

/// Minimum over whole-frame shifts within `±max_shift_ms` of the metric
/// between two onset-aligned spectrograms, divided by the pixel count of the
/// longer call (Euclidean: `sqrt(Σd²)/N`; Manhattan: `Σ|d|/N`).
pub fn spec_distance<T: Real>(a: &Spectrogram<T>, b: &Spectrogram<T>, metric: Metric, max_shift_ms: f64) -> Result<T> {
    check_compatible(a, b)?;
    let max_shift = max_shift_frames(max_shift_ms, a.frame_hop, a.sample_rate);
    Ok(aligned_distance(
        &Operand::new(a, metric),
        &Operand::new(b, metric),
        metric,
        max_shift,
    ))
}

/// Full symmetric matrix of [`spec_distance`] values. Pairs are evaluated in
/// parallel; each entry is computed independently so the result does not
/// depend on scheduling.
pub fn pairwise_matrix<T: Real>(
    specs: &[Spectrogram<T>],
    ids: &[String],
    metric: Metric,
    max_shift_ms: f64,
) -> Result<DistanceMatrix<T>> {
    let n = specs.len();
    if n < 2 {
        return Err(Error::TooFewCalls { needed: 2, got: n });
    }
    if ids.len() != n {
        return Err(Error::ShapeMismatch(format!("{} ids for {n} spectrograms", ids.len())));
    }
    for s in &specs[1..] {
        check_compatible(&specs[0], s)?;
    }
    let max_shift = max_shift_frames(max_shift_ms, specs[0].frame_hop, specs[0].sample_rate);
    let operands: Vec<Operand<T>> = specs.iter().map(|s| Operand::new(s, metric)).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<T> = pairs
        .par_iter()
        .map(|&(i, j)| aligned_distance(&operands[i], &operands[j], metric, max_shift))
        .collect();
    let mut values = Array2::zeros((n, n));
    for (&(i, j), &d) in pairs.iter().zip(&dists) {
        values[[i, j]] = d;
        values[[j, i]] = d;
    }
    DistanceMatrix::new(values, ids.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(values: Array2<f64>) -> Spectrogram<f64> {
        Spectrogram {
            values,
            frame_hop: 256,
            frame_size: 1024,
            sample_rate: 48000,
            is_log: false,
            time_origin: 512,
            floor_db: None,
        }
    }

    fn random_spec(frames: usize, bins: usize, seed: u64) -> Spectrogram<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        spec(Array2::from_shape_fn((frames, bins), |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        }))
    }

    #[test]
    fn shift_window_is_four_frames() {
        assert_eq!(max_shift_frames(20.0, 256, 48000), 4);
        assert_eq!(max_shift_frames(0.0, 256, 48000), 0);
    }

    #[test]
    fn identical_spectrograms_are_at_zero() {
        let a = random_spec(20, 33, 1);
        for m in [Metric::Euclidean, Metric::Manhattan] {
            assert_eq!(spec_distance(&a, &a, m, 20.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_frame_shift_is_recovered() {
        let a = random_spec(30, 17, 2);
        let mut shifted = Array2::zeros((32, 17));
        shifted.slice_mut(ndarray::s![2.., ..]).assign(&a.values);
        let b = spec(shifted);
        for m in [Metric::Euclidean, Metric::Manhattan] {
            assert_eq!(spec_distance(&a, &b, m, 20.0).unwrap(), 0.0);
            assert!(spec_distance(&a, &b, m, 0.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn hand_computed_normalization() {
        let a = spec(Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap());
        let b = spec(Array2::from_shape_vec((1, 2), vec![3.0, 4.0]).unwrap());
        assert_eq!(spec_distance(&a, &b, Metric::Euclidean, 0.0).unwrap(), 2.5);
        assert_eq!(spec_distance(&a, &b, Metric::Manhattan, 0.0).unwrap(), 3.5);
    }

    #[test]
    fn log_padding_uses_the_floor() {
        let mut a = spec(Array2::from_elem((3, 4), -80.0));
        a.is_log = true;
        a.floor_db = Some(-80.0);
        let mut b = a.clone();
        b.values = Array2::from_elem((1, 4), -80.0);
        assert_eq!(spec_distance(&a, &b, Metric::Manhattan, 0.0).unwrap(), 0.0);
        let m = spec(Array2::zeros((1, 4)));
        assert!(spec_distance(&a, &m, Metric::Manhattan, 0.0).is_err());
    }

    #[test]
    fn bin_mismatch_is_an_error() {
        let a = random_spec(5, 10, 1);
        let b = random_spec(5, 11, 1);
        assert!(matches!(
            spec_distance(&a, &b, Metric::Manhattan, 20.0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn matrix_matches_direct_calls() {
        let specs: Vec<_> = (0..3).map(|i| random_spec(10 + i, 9, i as u64)).collect();
        let ids: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let dm = pairwise_matrix(&specs, &ids, Metric::Manhattan, 20.0).unwrap();
        assert_eq!(dm.get(0, 1), spec_distance(&specs[0], &specs[1], Metric::Manhattan, 20.0).unwrap());
        assert_eq!(dm.get(2, 1), spec_distance(&specs[1], &specs[2], Metric::Manhattan, 20.0).unwrap());
        let same = pairwise_matrix(&[specs[0].clone(), specs[0].clone()], &ids[..2], Metric::Euclidean, 20.0).unwrap();
        assert_eq!(same.values(), &Array2::<f64>::zeros((2, 2)));
        assert!(matches!(
            pairwise_matrix(&specs[..1], &ids[..1], Metric::Euclidean, 20.0),
            Err(Error::TooFewCalls { .. })
        ));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let specs: Vec<_> = (0..4).map(|i| random_spec(8, 5, i as u64)).collect();
        let ids: Vec<String> = (0..4).map(|i| format!("call_{i}")).collect();
        let dm = pairwise_matrix(&specs, &ids, Metric::Euclidean, 20.0)
            .unwrap()
            .with_tags(
                Some(MetricTag {
                    metric: Metric::Euclidean,
                    scale: Scale::Log,
                }),
                Some(RepresentationTag::new(Source::LpcResidual, Transform::AdftRefined)),
            );
        let dir = tempfile::tempdir().unwrap();
        for name in ["d.csv", "d.bin"] {
            let p = dir.path().join(name);
            dm.write(&p).unwrap();
            let back = DistanceMatrix::<f64>::read(&p).unwrap();
            assert_eq!(back, dm, "{name}");
        }
    }

    #[test]
    fn tags_parse() {
        assert_eq!(
            "lpc_filter/stft".parse::<RepresentationTag>().unwrap(),
            RepresentationTag::new(Source::LpcFilter, Transform::Stft)
        );
        assert!("lpc_filter/adft_refined".parse::<RepresentationTag>().is_err());
        assert!("raw".parse::<RepresentationTag>().is_err());
        assert_eq!(RepresentationTag::all().len(), 7);
        assert_eq!("manhattan/log".parse::<MetricTag>().unwrap().to_string(), "manhattan/log");
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let asym = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(DistanceMatrix::new(asym, ids.clone()).is_err());
        let diag = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(DistanceMatrix::new(diag, ids.clone()).is_err());
        let neg = Array2::from_shape_vec((2, 2), vec![0.0, -1.0, -1.0, 0.0]).unwrap();
        assert!(DistanceMatrix::new(neg, ids).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn shift_search_never_hurts_and_is_symmetric(
            ta in 1usize..20, tb in 1usize..20, sa in 0u64..1000, sb in 0u64..1000, euclid in any::<bool>()
        ) {
            let metric = if euclid { Metric::Euclidean } else { Metric::Manhattan };
            let a = random_spec(ta, 7, sa);
            let b = random_spec(tb, 7, sb);
            let wide = spec_distance(&a, &b, metric, 20.0).unwrap();
            let none = spec_distance(&a, &b, metric, 0.0).unwrap();
            prop_assert!(wide <= none);
            prop_assert_eq!(wide, spec_distance(&b, &a, metric, 20.0).unwrap());
        }

        #[test]
        fn distances_are_absolutely_homogeneous(c in 0.1f64..10.0, seed in 0u64..500) {
            let a = random_spec(12, 6, seed);
            let b = random_spec(9, 6, seed + 1);
            let scale = |s: &Spectrogram<f64>| spec(s.values.mapv(|v| v * c));
            for m in [Metric::Euclidean, Metric::Manhattan] {
                let d = spec_distance(&a, &b, m, 20.0).unwrap();
                let dc = spec_distance(&scale(&a), &scale(&b), m, 20.0).unwrap();
                prop_assert!((dc - c * d).abs() <= 1e-9 * (c * d).max(1e-12));
            }
        }
    }
}
