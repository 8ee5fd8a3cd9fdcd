//! MAP estimation of per-investigator concentration parameters.
//!
//! Model, per sampled pixel `i` and investigator `j`:
//!
//! ```text
//! p_ij ~ Dirichlet(kappa_j * theta_i),  theta_i ~ Dirichlet(alpha),  kappa_j ~ Gamma(2, 1)
//! ```
//!
//! Block coordinate ascent alternates a theta step (the weighted posterior
//! mean with the current kappa as weights, accepted per pixel only when it
//! does not lower that pixel's objective) with an exact 1-D maximization of
//! each `kappa_j` by safeguarded Newton in `log kappa`. Both steps are
//! non-decreasing in the joint log-posterior.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::fusion::{check_same_shape, FusionConfig};
use crate::grid::ProbabilityRaster;

pub const DEFAULT_SUBSAMPLE: usize = 10_000;
pub const MIN_SUBSAMPLE: usize = 100;
pub const KAPPA_MIN: f64 = 1e-3;
pub const KAPPA_MAX: f64 = 1e3;
pub const MAX_OUTER_ITER: usize = 200;
pub const REL_TOL: f64 = 1e-6;

/// `log Dirichlet(p | alpha)`.
pub fn dirichlet_log_density(p: &[f64], alpha: &[f64]) -> Result<f64> {
    if p.len() != alpha.len() || p.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities vs {} parameters",
            p.len(),
            alpha.len()
        )));
    }
    if p.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidValue("probabilities must be strictly positive".into()));
    }
    if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidValue("parameters must be strictly positive".into()));
    }
    Ok(dirichlet_log_density_unchecked(p, alpha))
}

fn dirichlet_log_density_unchecked(p: &[f64], alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let mut out = ln_gamma(total);
    for (&x, &a) in p.iter().zip(alpha) {
        out += (a - 1.0) * x.ln() - ln_gamma(a);
    }
    out
}

/// Second derivative of `ln Gamma`.
pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * 5.0 / 66.0))))
}

/// `log Gamma(kappa; shape 2, rate 1)`.
fn log_kappa_prior(kappa: f64) -> f64 {
    kappa.ln() - kappa
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEstimate {
    pub kappa: Vec<f64>,
    pub log_posterior: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Joint log-posterior after each outer iteration.
    pub trace: Vec<f64>,
    /// Pixels the objective was evaluated on.
    pub pixels: Vec<usize>,
    /// Latent class probabilities at `pixels` (interleaved) that the final
    /// kappa step was taken against.
    pub theta: Vec<f64>,
}

/// Sampled data in pixel-major layout: `logp[(i * J + j) * C + c]`.
struct Problem {
    n: usize,
    j: usize,
    c: usize,
    logp: Vec<f64>,
    p: Vec<f64>,
    alpha: Vec<f64>,
    ln_gamma_alpha: f64,
}

impl Problem {
    fn p(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.j + j) * self.c;
        &self.p[o..o + self.c]
    }

    fn logp(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.j + j) * self.c;
        &self.logp[o..o + self.c]
    }

    /// Pixel `i`'s share of the joint objective, kappa prior excluded.
    fn pixel_term(&self, i: usize, theta: &[f64], kappa: &[f64]) -> f64 {
        let mut out = self.ln_gamma_alpha;
        for (&t, &a) in theta.iter().zip(&self.alpha) {
            out += (a - 1.0) * t.ln() - ln_gamma(a);
        }
        for (j, &k) in kappa.iter().enumerate() {
            out += ln_gamma(k);
            for (&t, &lp) in theta.iter().zip(self.logp(i, j)) {
                out += (k * t - 1.0) * lp - ln_gamma(k * t);
            }
        }
        out
    }

    fn objective(&self, theta: &[f64], kappa: &[f64]) -> f64 {
        let c = self.c;
        let data: f64 = (0..self.n)
            .map(|i| self.pixel_term(i, &theta[i * c..(i + 1) * c], kappa))
            .sum();
        data + kappa.iter().map(|&k| log_kappa_prior(k)).sum::<f64>()
    }

    /// Weighted posterior mean with kappa as weights.
    fn theta_proposal(&self, i: usize, kappa: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.alpha);
        for (j, &k) in kappa.iter().enumerate() {
            for (o, &p) in out.iter_mut().zip(self.p(i, j)) {
                *o += k * p;
            }
        }
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= s);
    }
}

/// The kappa-dependent part of investigator `j`'s objective for fixed theta.
struct KappaObjective<'a> {
    theta: &'a [f64],
    c: usize,
    /// `sum_i sum_c theta_ic log p_ijc`
    cross: f64,
    /// `sum_i sum_c log p_ijc`
    log_sum: f64,
}

impl KappaObjective<'_> {
    fn value(&self, k: f64) -> f64 {
        let n = self.theta.len() / self.c;
        let mut g = n as f64 * ln_gamma(k);
        for &t in self.theta {
            g -= ln_gamma(k * t);
        }
        g + k * self.cross - self.log_sum + log_kappa_prior(k)
    }

    /// First and second derivative in kappa.
    fn derivatives(&self, k: f64) -> (f64, f64) {
        let n = self.theta.len() / self.c;
        let mut d1 = n as f64 * digamma(k);
        let mut d2 = n as f64 * trigamma(k);
        for &t in self.theta {
            let kt = k * t;
            d1 -= t * digamma(kt);
            d2 -= t * t * trigamma(kt);
        }
        (d1 + self.cross + 1.0 / k - 1.0, d2 - 1.0 / (k * k))
    }

    /// Stationary point of the objective inside `[KAPPA_MIN, KAPPA_MAX]`,
    /// found by Newton on `s = ln kappa` with bisection fallback.
    fn maximize(&self, start: f64) -> f64 {
        let (mut lo, mut hi) = (KAPPA_MIN.ln(), KAPPA_MAX.ln());
        if self.derivatives(KAPPA_MIN).0 <= 0.0 {
            return KAPPA_MIN;
        }
        if self.derivatives(KAPPA_MAX).0 >= 0.0 {
            return KAPPA_MAX;
        }
        let mut s = start.clamp(KAPPA_MIN, KAPPA_MAX).ln();
        for _ in 0..100 {
            let k = s.exp();
            let (d1, d2) = self.derivatives(k);
            if d1 > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            // dF/ds = k f', d2F/ds2 = k f' + k^2 f''
            let fs = k * d1;
            let fss = k * d1 + k * k * d2;
            let newton = s - fs / fss;
            let next = if fss < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - s).abs() < 1e-13 || hi - lo < 1e-13 {
                s = next;
                break;
            }
            s = next;
        }
        s.exp()
    }
}

fn sample_pixels(n_pixels: usize, subsample: Option<usize>, seed: u64) -> Result<Vec<usize>> {
    match subsample {
        Some(s) if s < MIN_SUBSAMPLE => Err(Error::InvalidArgument(format!(
            "subsample too small: {s} < {MIN_SUBSAMPLE}"
        ))),
        Some(s) if s < n_pixels => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = index::sample(&mut rng, n_pixels, s).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
        _ => Ok((0..n_pixels).collect()),
    }
}

/// Infers one concentration parameter per map. `subsample = None` uses the
/// whole grid; the seed only drives pixel subsampling.
pub fn estimate_weights(
    maps: &[&ProbabilityRaster],
    config: &FusionConfig,
    subsample: Option<usize>,
    seed: u64,
) -> Result<WeightEstimate> {
    if maps.len() < 2 {
        return Err(Error::InvalidArgument(
            "weight inference needs at least 2 maps".into(),
        ));
    }
    let shape = check_same_shape(maps)?;
    let (n_maps, c) = (maps.len(), shape.n_classes());
    let alpha = match &config.prior_alpha {
        Some(a) if a.len() != c || a.iter().any(|&v| !(v > 0.0)) => {
            return Err(Error::InvalidArgument("invalid prior alpha".into()))
        }
        Some(a) => a.clone(),
        None => vec![1.0; c],
    };
    let pixels = sample_pixels(shape.n_pixels(), subsample, seed)?;
    let n = pixels.len();

    let mut p = Vec::with_capacity(n * n_maps * c);
    for &px in &pixels {
        for m in maps {
            p.extend_from_slice(m.pixel(px));
        }
    }
    let logp = p.iter().map(|v| v.ln()).collect();
    let problem = Problem {
        n,
        j: n_maps,
        c,
        logp,
        p,
        ln_gamma_alpha: ln_gamma(alpha.iter().sum()),
        alpha,
    };

    let mut kappa = vec![1.0; n_maps];
    let mut theta = vec![0.0; n * c];
    for i in 0..n {
        problem.theta_proposal(i, &kappa, &mut theta[i * c..(i + 1) * c]);
    }
    let mut trace = vec![problem.objective(&theta, &kappa)];
    let mut converged = false;
    let mut iterations = 0;
    let mut proposal = vec![0.0; c];

    while iterations < MAX_OUTER_ITER {
        iterations += 1;

        // theta step
        if iterations > 1 {
            for i in 0..n {
                problem.theta_proposal(i, &kappa, &mut proposal);
                let cur = &mut theta[i * c..(i + 1) * c];
                if problem.pixel_term(i, &proposal, &kappa) >= problem.pixel_term(i, cur, &kappa) {
                    cur.copy_from_slice(&proposal);
                }
            }
        }

        // kappa step
        let mut max_rel = 0.0f64;
        for j in 0..n_maps {
            let mut cross = 0.0;
            let mut log_sum = 0.0;
            for i in 0..n {
                for (&t, &lp) in theta[i * c..(i + 1) * c].iter().zip(problem.logp(i, j)) {
                    cross += t * lp;
                    log_sum += lp;
                }
            }
            let obj = KappaObjective {
                theta: &theta,
                c,
                cross,
                log_sum,
            };
            let old = kappa[j];
            let new = obj.maximize(old);
            if obj.value(new) >= obj.value(old) {
                kappa[j] = new;
                max_rel = max_rel.max((new - old).abs() / old);
            }
        }

        let value = problem.objective(&theta, &kappa);
        let prev = *trace.last().expect("initial objective recorded");
        debug_assert!(
            value >= prev - 1e-9 * prev.abs().max(1.0),
            "objective decreased: {prev} -> {value}"
        );
        trace.push(value);
        if max_rel < REL_TOL {
            converged = true;
            break;
        }
    }

    Ok(WeightEstimate {
        kappa,
        log_posterior: *trace.last().expect("non-empty trace"),
        iterations,
        converged,
        trace,
        pixels,
        theta,
    })
}

/// `investigator_id,kappa` with 17 significant digits.
pub fn write_weights_csv<W: Write>(out: W, ids: &[String], kappa: &[f64]) -> Result<()> {
    if ids.len() != kappa.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids for {} weights",
            ids.len(),
            kappa.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["investigator_id", "kappa"])?;
    for (id, k) in ids.iter().zip(kappa) {
        w.write_record([id.clone(), format!("{k:.16e}")])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_weights_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let k: f64 = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::InvalidValue(format!("bad kappa for {id:?}")))?;
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidValue(format!("kappa for {id:?} must be positive")));
        }
        out.push((id, k));
    }
    Ok(out)
}
