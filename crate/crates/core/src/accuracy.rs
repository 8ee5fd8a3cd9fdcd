//! Accuracy assessment against a reference label raster.
//!
//! Confusion tables are indexed `counts[classified][reference]`. User's
//! accuracy normalizes by row (commission), producer's by column (omission).
//! A zero denominator yields `None`, never 0.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::grid::{LabelRaster, NODATA};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
    class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub overall: f64,
    pub users: Vec<Option<f64>>,
    pub producers: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    /// Row-major `counts[c * n + q]`: classified `c`, reference `q`.
    pub fn from_counts(class_names: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let n = class_names.len();
        if counts.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for {n} classes",
                counts.len()
            )));
        }
        Ok(Self {
            n_classes: n,
            counts,
            class_names,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, classified: usize, reference: usize) -> u64 {
        self.counts[classified * self.n_classes + reference]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|q| self.get(c, q)).sum()
    }

    pub fn col_total(&self, q: usize) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, q)).sum()
    }

    pub fn report(&self) -> Result<AccuracyReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidArgument("confusion matrix is empty".into()));
        }
        let n = self.n_classes;
        let diag: u64 = (0..n).map(|c| self.get(c, c)).sum();
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        Ok(AccuracyReport {
            overall: diag as f64 / total as f64,
            users: (0..n).map(|c| ratio(self.get(c, c), self.row_total(c))).collect(),
            producers: (0..n).map(|q| ratio(self.get(q, q), self.col_total(q))).collect(),
        })
    }
}

fn ensure_comparable(pred: &LabelRaster, reference: &LabelRaster) -> Result<()> {
    let (a, b) = (pred.shape(), reference.shape());
    if a.width() != b.width() || a.height() != b.height() || a.n_classes() != b.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{}x{} vs reference {}x{}x{}",
            a.width(),
            a.height(),
            a.n_classes(),
            b.width(),
            b.height(),
            b.n_classes()
        )));
    }
    Ok(())
}

/// Cross-tabulates `pred` against `reference` over `sample` (or every pixel).
/// Pixels that are NODATA in either raster are skipped.
pub fn confusion(
    pred: &LabelRaster,
    reference: &LabelRaster,
    sample: Option<&[usize]>,
) -> Result<ConfusionMatrix> {
    ensure_comparable(pred, reference)?;
    let n = reference.shape().n_classes();
    let n_pixels = reference.shape().n_pixels();
    let mut counts = vec![0u64; n * n];
    let (p, r) = (pred.values(), reference.values());
    let mut tally = |i: usize| {
        if p[i] != NODATA && r[i] != NODATA {
            counts[p[i] as usize * n + r[i] as usize] += 1;
        }
    };
    match sample {
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n_pixels) {
                return Err(Error::InvalidArgument(format!(
                    "sample index {bad} outside grid of {n_pixels} pixels"
                )));
            }
            idx.iter().for_each(|&i| tally(i));
        }
        None => (0..n_pixels).for_each(tally),
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArgument("empty effective sample".into()));
    }
    ConfusionMatrix::from_counts(reference.shape().class_names().to_vec(), counts)
}

/// Pixel indices of each reference class, in raster order.
#[derive(Debug, Clone)]
pub struct Strata {
    class_names: Vec<String>,
    members: Vec<Vec<usize>>,
}

impl Strata {
    pub fn new(reference: &LabelRaster) -> Self {
        let mut members = vec![Vec::new(); reference.shape().n_classes()];
        for (i, &v) in reference.values().iter().enumerate() {
            if v != NODATA {
                members[v as usize].push(i);
            }
        }
        Self {
            class_names: reference.shape().class_names().to_vec(),
            members,
        }
    }

    fn check(&self, per_class: usize, with_replacement: bool) -> Result<()> {
        if per_class == 0 {
            return Err(Error::InvalidArgument("per_class must be >= 1".into()));
        }
        for (c, m) in self.members.iter().enumerate() {
            if m.is_empty() || (!with_replacement && m.len() < per_class) {
                return Err(Error::InsufficientClass {
                    class: self.class_names[c].clone(),
                    available: m.len(),
                    required: per_class,
                });
            }
        }
        Ok(())
    }

    /// `per_class` indices from every class, grouped by class.
    pub fn sample(&self, per_class: usize, seed: u64, with_replacement: bool) -> Result<Vec<usize>> {
        self.check(per_class, with_replacement)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(per_class * self.members.len());
        for m in &self.members {
            if with_replacement {
                out.extend((0..per_class).map(|_| m[rng.random_range(0..m.len())]));
            } else {
                out.extend(index::sample(&mut rng, m.len(), per_class).iter().map(|k| m[k]));
            }
        }
        Ok(out)
    }
}

pub fn stratified_sample(
    reference: &LabelRaster,
    per_class: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<Vec<usize>> {
    Strata::new(reference).sample(per_class, seed, with_replacement)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub n_iterations: usize,
    pub per_iteration: Vec<AccuracyReport>,
    pub per_class_sample_size: usize,
    pub seed: u64,
    pub class_names: Vec<String>,
}

/// Stratified Monte Carlo validation; iteration `i` samples with seed `seed + i`.
pub fn monte_carlo_assess(
    pred: &LabelRaster,
    reference: &LabelRaster,
    n_iterations: usize,
    per_class: usize,
    seed: u64,
) -> Result<MonteCarloResult> {
    let mut out = monte_carlo_assess_many(&[pred], reference, n_iterations, per_class, seed)?;
    Ok(out.pop().expect("one prediction in, one result out"))
}

/// Monte Carlo validation of several maps on the same per-iteration samples,
/// so results are paired iteration by iteration.
pub fn monte_carlo_assess_many(
    preds: &[&LabelRaster],
    reference: &LabelRaster,
    n_iterations: usize,
    per_class: usize,
    seed: u64,
) -> Result<Vec<MonteCarloResult>> {
    if n_iterations == 0 {
        return Err(Error::InvalidArgument("n_iterations must be >= 1".into()));
    }
    for p in preds {
        ensure_comparable(p, reference)?;
    }
    let strata = Strata::new(reference);
    strata.check(per_class, false)?;
    let per_iter: Vec<Vec<AccuracyReport>> = (0..n_iterations)
        .into_par_iter()
        .map(|i| {
            let idx = strata.sample(per_class, seed.wrapping_add(i as u64), false)?;
            preds
                .iter()
                .map(|p| confusion(p, reference, Some(&idx))?.report())
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..preds.len())
        .map(|k| MonteCarloResult {
            n_iterations,
            per_iteration: per_iter.iter().map(|it| it[k].clone()).collect(),
            per_class_sample_size: per_class,
            seed,
            class_names: strata.class_names.clone(),
        })
        .collect())
}

/// Metric series across iterations, undefined values dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Overall,
    Users(usize),
    Producers(usize),
}

impl MonteCarloResult {
    pub fn series(&self, metric: Metric) -> Vec<Option<f64>> {
        self.per_iteration
            .iter()
            .map(|r| match metric {
                Metric::Overall => Some(r.overall),
                Metric::Users(c) => r.users[c],
                Metric::Producers(c) => r.producers[c],
            })
            .collect()
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        mean(&self.series(metric).into_iter().flatten().collect::<Vec<_>>())
    }

    pub fn std_dev(&self, metric: Metric) -> Option<f64> {
        std_dev(&self.series(metric).into_iter().flatten().collect::<Vec<_>>())
    }

    pub fn metrics(&self) -> Vec<(String, Metric)> {
        let mut out = vec![("oa".to_string(), Metric::Overall)];
        for (c, name) in self.class_names.iter().enumerate() {
            out.push((format!("ua_{name}"), Metric::Users(c)));
        }
        for (c, name) in self.class_names.iter().enumerate() {
            out.push((format!("pa_{name}"), Metric::Producers(c)));
        }
        out
    }

    /// `iter,oa,ua_<class>...,pa_<class>...`; undefined values are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let metrics = self.metrics();
        let mut header = vec!["iter".to_string()];
        header.extend(metrics.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        let columns: Vec<Vec<Option<f64>>> = metrics.iter().map(|(_, m)| self.series(*m)).collect();
        for i in 0..self.n_iterations {
            let mut row = vec![i.to_string()];
            row.extend(columns.iter().map(|col| fmt_opt(col[i])));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = mean(x)?;
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (x.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Two-sided Student-t CDF tail, `P(|T| >= |t|)` with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs n >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    let m = mean(&d).expect("n >= 2");
    let sd = std_dev(&d).expect("n >= 2");
    if m == 0.0 {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    let t = if sd == 0.0 {
        m.signum() * f64::INFINITY
    } else {
        m / (sd / (n as f64).sqrt())
    };
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, df as f64),
        df,
    })
}

/// A reference point labeled by an investigator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPoint {
    pub row: usize,
    pub col: usize,
    pub label: u8,
}

/// Share of labeled points whose label matches the reference pixel.
/// Points on NODATA reference pixels are ignored.
pub fn agreement_ratio(samples: &[LabeledPoint], reference: &LabelRaster) -> Result<f64> {
    let shape = reference.shape();
    let mut seen = 0usize;
    let mut hits = 0usize;
    for s in samples {
        if s.row >= shape.height() || s.col >= shape.width() {
            return Err(Error::InvalidArgument(format!(
                "sample ({}, {}) outside {}x{} grid",
                s.row,
                s.col,
                shape.width(),
                shape.height()
            )));
        }
        let r = reference.get(s.row, s.col);
        if r == NODATA {
            continue;
        }
        seen += 1;
        hits += usize::from(r == s.label);
    }
    if seen == 0 {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    Ok(hits as f64 / seen as f64)
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("series differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(
            "correlation needs at least 3 points".into(),
        ));
    }
    let (mx, my) = (mean(x).unwrap(), mean(y).unwrap());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
