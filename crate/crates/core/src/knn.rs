//! Leave-one-out k-nearest-neighbour classification over a distance matrix.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{DistanceMatrix, MetricTag, RepresentationTag};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub per_class_recall: BTreeMap<String, f64>,
    /// Sorted class labels; rows and columns of `confusion` follow this order.
    pub classes: Vec<String>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub chance_level: f64,
    pub n_calls: usize,
    pub k: usize,
    pub metric: Option<MetricTag>,
    pub representation: Option<RepresentationTag>,
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = self.representation {
            writeln!(f, "representation  {r}")?;
        }
        if let Some(m) = self.metric {
            writeln!(f, "metric          {m}")?;
        }
        writeln!(f, "calls           {}", self.n_calls)?;
        writeln!(f, "k               {}", self.k)?;
        writeln!(f, "accuracy        {:.2}%", 100.0 * self.accuracy)?;
        writeln!(f, "chance level    {:.2}%", 100.0 * self.chance_level)?;
        writeln!(f)?;
        writeln!(f, "{:<16} {:>6} {:>8}", "class", "calls", "recall")?;
        for (i, c) in self.classes.iter().enumerate() {
            let count: usize = self.confusion[i].iter().sum();
            writeln!(f, "{:<16} {:>6} {:>7.1}%", c, count, 100.0 * self.per_class_recall[c])?;
        }
        Ok(())
    }
}

fn by_distance<T: Real>(row: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Indices of the `k` nearest calls to `query`, nearest first, excluding the
/// query itself. Equal distances are ordered by index.
pub fn nearest_neighbours<T: Real>(dm: &DistanceMatrix<T>, query: usize, k: usize) -> Result<Vec<usize>> {
    let n = dm.len();
    if n <= k {
        return Err(Error::TooFewCalls { needed: k + 1, got: n });
    }
    if query >= n {
        return Err(Error::InvalidParameter(format!("query {query} out of range for {n} calls")));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let row = dm.values().row(query);
    let row = row.as_slice().expect("row-major distance matrix");
    let mut others: Vec<usize> = (0..n).filter(|&j| j != query).collect();
    let cmp = by_distance(row);
    others.select_nth_unstable_by(k - 1, &cmp);
    others.truncate(k);
    others.sort_by(&cmp);
    Ok(others)
}

/// Majority label among the `k` nearest neighbours. A tied vote goes to the
/// tied class owning the single nearest neighbour.
pub fn knn_predict<'a, T: Real>(
    dm: &DistanceMatrix<T>,
    labels: &'a [String],
    query: usize,
    k: usize,
) -> Result<&'a str> {
    if labels.len() != dm.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} calls",
            labels.len(),
            dm.len()
        )));
    }
    let neighbours = nearest_neighbours(dm, query, k)?;
    let mut votes: Vec<(&str, usize)> = Vec::new();
    for &j in &neighbours {
        match votes.iter_mut().find(|(l, _)| *l == labels[j]) {
            Some(v) => v.1 += 1,
            None => votes.push((&labels[j], 1)),
        }
    }
    // `votes` is in order of first appearance, i.e. of each class's nearest
    // neighbour, so the first maximum wins ties.
    let best = votes.iter().map(|v| v.1).max().unwrap_or(0);
    Ok(votes.iter().find(|v| v.1 == best).map(|v| v.0).unwrap())
}

/// Predicts every call with itself held out and summarizes the result.
pub fn loo_accuracy<T: Real>(dm: &DistanceMatrix<T>, labels: &[String], k: usize) -> Result<ClassificationReport> {
    let n = dm.len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} calls", labels.len())));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let predictions: Vec<&str> = (0..n)
        .into_par_iter()
        .map(|q| knn_predict(dm, labels, q, k))
        .collect::<Result<_>>()?;
    let index = |l: &str| classes.binary_search_by(|c| c.as_str().cmp(l)).unwrap();
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    for (truth, pred) in labels.iter().zip(&predictions) {
        confusion[index(truth)][index(pred)] += 1;
    }
    let correct: usize = (0..classes.len()).map(|i| confusion[i][i]).sum();
    let counts: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let per_class_recall = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), confusion[i][i] as f64 / counts[i] as f64))
        .collect();
    Ok(ClassificationReport {
        accuracy: correct as f64 / n as f64,
        per_class_recall,
        chance_level: chance_level(labels),
        classes,
        confusion,
        n_calls: n,
        k,
        metric: dm.metric_tag,
        representation: dm.representation_tag,
    })
}

/// Relative frequency of the most common label.
pub fn chance_level(labels: &[String]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    *counts.values().max().unwrap() as f64 / labels.len() as f64
}
