//! Closed-form Dirichlet fusion of investigator probability maps.
//!
//! Each observed probability vector acts as a fractional pseudo-count, so
//! with prior `Dirichlet(alpha)` and weights `w_j` the per-pixel posterior
//! is `Dirichlet(alpha + sum_j w_j p_j)` and its mean is
//!
//! ```text
//! E[theta_c] = (alpha_c + sum_j w_j p_jc) / (sum_c' alpha_c' + sum_j w_j)
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{argmax, GridShape, LabelRaster, ProbabilityRaster};

/// Value substituted for exact zeros before renormalizing.
pub const DEFAULT_EPSILON: f64 = 1e-10;

// Pixels per rayon task.
const PIXEL_CHUNK: usize = 4096;

/// Replaces zero components by `epsilon` and renormalizes in place.
pub fn regularize(p: &mut [f64], epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut any_positive = false;
    for &v in p.iter() {
        if !v.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite probability {v}")));
        }
        if v < 0.0 {
            return Err(Error::InvalidValue(format!("negative probability {v}")));
        }
        any_positive |= v > 0.0;
    }
    if !any_positive {
        return Err(Error::Degenerate("all-zero probability vector".into()));
    }
    let mut sum = 0.0;
    for v in p.iter_mut() {
        if *v == 0.0 {
            *v = epsilon;
        }
        sum += *v;
    }
    for v in p.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub epsilon: f64,
    /// Prior parameter per class; `None` means all ones.
    pub prior_alpha: Option<Vec<f64>>,
    /// Weight per input map; `None` means all ones.
    pub weights: Option<Vec<f64>>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            prior_alpha: None,
            weights: None,
        }
    }
}

impl FusionConfig {
    pub fn weighted(weights: Vec<f64>) -> Self {
        Self {
            weights: Some(weights),
            ..Self::default()
        }
    }

    fn resolve(&self, n_maps: usize, n_classes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        let alpha = match &self.prior_alpha {
            Some(a) if a.len() != n_classes => {
                return Err(Error::InvalidArgument(format!(
                    "prior has {} components for {n_classes} classes",
                    a.len()
                )))
            }
            Some(a) => a.clone(),
            None => vec![1.0; n_classes],
        };
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument(
                "prior components must be positive".into(),
            ));
        }
        let weights = match &self.weights {
            Some(w) if w.len() != n_maps => {
                return Err(Error::InvalidArgument(format!(
                    "weight count mismatch: {} weights for {n_maps} maps",
                    w.len()
                )))
            }
            Some(w) => w.clone(),
            None => vec![1.0; n_maps],
        };
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        Ok((alpha, weights))
    }
}

/// Per-pixel posterior Dirichlet parameters and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    shape: GridShape,
    alpha_post: Vec<f64>,
    mean: Vec<f64>,
}

impl PosteriorField {
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    /// Pixel-interleaved posterior parameters.
    pub fn alpha_post(&self) -> &[f64] {
        &self.alpha_post
    }

    /// Pixel-interleaved posterior means.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn pixel_mean(&self, index: usize) -> &[f64] {
        let c = self.shape.n_classes();
        &self.mean[index * c..(index + 1) * c]
    }

    pub fn pixel_alpha(&self, index: usize) -> &[f64] {
        let c = self.shape.n_classes();
        &self.alpha_post[index * c..(index + 1) * c]
    }

    /// The posterior mean as a probability raster.
    pub fn mean_raster(&self) -> ProbabilityRaster {
        ProbabilityRaster::from_normalized(self.shape.clone(), self.mean.clone())
    }
}

pub(crate) fn check_same_shape(maps: &[&ProbabilityRaster]) -> Result<GridShape> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one input map is required".into()))?;
    for (j, m) in maps.iter().enumerate().skip(1) {
        first
            .shape()
            .ensure_same(m.shape(), &format!("map {j} differs from map 0"))?;
    }
    Ok(first.shape().clone())
}

/// Fuses `maps` into the per-pixel conjugate posterior.
pub fn fuse(maps: &[&ProbabilityRaster], config: &FusionConfig) -> Result<PosteriorField> {
    let shape = check_same_shape(maps)?;
    let c = shape.n_classes();
    let (alpha, weights) = config.resolve(maps.len(), c)?;
    let denom = alpha.iter().sum::<f64>() + weights.iter().sum::<f64>();

    let n = shape.n_pixels();
    let mut alpha_post = vec![0.0; n * c];
    let mut mean = vec![0.0; n * c];
    alpha_post
        .par_chunks_mut(PIXEL_CHUNK * c)
        .zip(mean.par_chunks_mut(PIXEL_CHUNK * c))
        .enumerate()
        .for_each(|(chunk, (a_out, m_out))| {
            let first = chunk * PIXEL_CHUNK;
            for (k, (a_px, m_px)) in a_out
                .chunks_exact_mut(c)
                .zip(m_out.chunks_exact_mut(c))
                .enumerate()
            {
                a_px.copy_from_slice(&alpha);
                for (map, &w) in maps.iter().zip(&weights) {
                    for (a, &p) in a_px.iter_mut().zip(map.pixel(first + k)) {
                        *a += w * p;
                    }
                }
                for (m, &a) in m_px.iter_mut().zip(a_px.iter()) {
                    *m = a / denom;
                }
            }
        });
    Ok(PosteriorField {
        shape,
        alpha_post,
        mean,
    })
}

/// Most probable class under the posterior mean, lowest index on ties.
pub fn fused_label_map(field: &PosteriorField) -> LabelRaster {
    let c = field.shape.n_classes();
    let values = field
        .mean
        .chunks_exact(c)
        .map(|px| argmax(px) as u8)
        .collect();
    LabelRaster::new(field.shape.clone(), values).expect("argmax is always in range")
}

/// Per-pixel plurality vote over the maps' hard labels, lowest index on ties.
pub fn plurality_composite(maps: &[&ProbabilityRaster]) -> Result<LabelRaster> {
    let shape = check_same_shape(maps)?;
    let c = shape.n_classes();
    let mut votes = vec![0u32; c];
    let values = (0..shape.n_pixels())
        .map(|i| {
            votes.iter_mut().for_each(|v| *v = 0);
            for m in maps {
                votes[argmax(m.pixel(i))] += 1;
            }
            let mut best = 0;
            for (k, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelRaster::new(shape, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn raster(c: usize, pixels: &[&[f64]]) -> ProbabilityRaster {
        let shape = GridShape::with_classes(pixels.len(), 1, c).unwrap();
        ProbabilityRaster::new(shape, pixels.concat()).unwrap()
    }

    #[test]
    fn regularize_examples() {
        let mut p = vec![1.0, 0.0, 0.0, 0.0];
        regularize(&mut p, 1e-10).unwrap();
        let s = 1.0 + 3e-10;
        assert_eq!(p, vec![1.0 / s, 1e-10 / s, 1e-10 / s, 1e-10 / s]);
        assert_relative_eq!(p[0], 1.0 - 3e-10, max_relative = 1e-15);

        let mut p = vec![0.5, 0.5, 0.0, 0.0];
        regularize(&mut p, 1e-10).unwrap();
        assert_relative_eq!(p[0], 0.5 / 1.0000000002, max_relative = 1e-15);
        assert_relative_eq!(p[2], 1e-10 / 1.0000000002, max_relative = 1e-15);

        assert!(matches!(
            regularize(&mut [0.0; 4], 1e-10),
            Err(Error::Degenerate(_))
        ));
        assert!(regularize(&mut [0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn two_identical_one_hot_maps() {
        let a = raster(4, &[&[1.0, 0.0, 0.0, 0.0]]);
        let f = fuse(&[&a, &a], &FusionConfig::default()).unwrap();
        let m = f.pixel_mean(0);
        assert_relative_eq!(m[0], 0.5, epsilon = 1e-9);
        for &v in &m[1..] {
            assert_relative_eq!(v, 1.0 / 6.0, epsilon = 1e-9);
        }
        assert_eq!(fused_label_map(&f).values(), &[0]);
    }

    #[test]
    fn single_uniform_map_stays_uniform() {
        let a = raster(4, &[&[0.25; 4]]);
        let f = fuse(&[&a], &FusionConfig::default()).unwrap();
        for &v in f.pixel_mean(0) {
            assert_relative_eq!(v, 0.25, max_relative = 1e-15);
        }
        assert_eq!(fused_label_map(&f).values(), &[0]);
    }

    #[test]
    fn three_votes_three_classes() {
        let a = raster(3, &[&[1.0, 0.0, 0.0]]);
        let b = raster(3, &[&[0.0, 1.0, 0.0]]);
        let f = fuse(&[&a, &a, &b], &FusionConfig::default()).unwrap();
        let m = f.pixel_mean(0);
        for (v, e) in m.iter().zip([3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0]) {
            assert_relative_eq!(*v, e, epsilon = 1e-9);
        }
    }

    #[test]
    fn label_map_examples() {
        let shape = GridShape::with_classes(1, 1, 4).unwrap();
        let field = |mean: Vec<f64>| PosteriorField {
            shape: shape.clone(),
            alpha_post: mean.clone(),
            mean,
        };
        let label = |m: Vec<f64>| fused_label_map(&field(m)).values()[0];
        assert_eq!(label(vec![0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]), 0);
        assert_eq!(label(vec![0.25; 4]), 0);
        assert_eq!(label(vec![0.1, 0.2, 0.3, 0.4]), 3);
    }

    #[test]
    fn input_errors() {
        let a = raster(4, &[&[0.25; 4]]);
        let b = raster(4, &[&[0.25; 4], &[0.25; 4]]);
        assert!(fuse(&[], &FusionConfig::default()).is_err());
        assert!(matches!(
            fuse(&[&a, &b], &FusionConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(fuse(&[&a, &a], &FusionConfig::weighted(vec![1.0])).is_err());
        assert!(fuse(&[&a], &FusionConfig::weighted(vec![-1.0])).is_err());
        let bad_prior = FusionConfig {
            prior_alpha: Some(vec![1.0, 0.0, 1.0, 1.0]),
            ..FusionConfig::default()
        };
        assert!(fuse(&[&a], &bad_prior).is_err());
    }

    #[test]
    fn plurality_ties_go_low() {
        let a = raster(3, &[&[0.9, 0.1, 0.0], &[0.0, 0.0, 1.0]]);
        let b = raster(3, &[&[0.1, 0.9, 0.0], &[0.0, 0.0, 1.0]]);
        let c = raster(3, &[&[0.0, 0.9, 0.1], &[1.0, 0.0, 0.0]]);
        assert_eq!(plurality_composite(&[&a, &b]).unwrap().values(), &[0, 2]);
        assert_eq!(plurality_composite(&[&a, &b, &c]).unwrap().values(), &[1, 2]);
    }

    fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, c).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn permutation_invariance(
            px in prop::collection::vec(simplex(4), 2..6),
            ws in prop::collection::vec(0.1f64..5.0, 6),
        ) {
            let maps: Vec<_> = px.iter().map(|p| raster(4, &[p])).collect();
            let w: Vec<f64> = ws[..maps.len()].to_vec();
            let refs: Vec<_> = maps.iter().collect();
            let f = fuse(&refs, &FusionConfig::weighted(w.clone())).unwrap();
            let rrefs: Vec<_> = refs.iter().rev().copied().collect();
            let rw: Vec<f64> = w.iter().rev().copied().collect();
            let g = fuse(&rrefs, &FusionConfig::weighted(rw)).unwrap();
            for (a, b) in f.mean().iter().zip(g.mean()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn class_relabeling_equivariance(
            px in prop::collection::vec(simplex(3), 1..5),
            alpha in prop::collection::vec(0.1f64..3.0, 3),
        ) {
            let perm = [2usize, 0, 1];
            let permute = |v: &[f64]| perm.iter().map(|&k| v[k]).collect::<Vec<f64>>();
            let maps: Vec<_> = px.iter().map(|p| raster(3, &[p])).collect();
            let pmaps: Vec<_> = px.iter().map(|p| raster(3, &[&permute(p)])).collect();
            let cfg = FusionConfig { prior_alpha: Some(alpha.clone()), ..Default::default() };
            let pcfg = FusionConfig { prior_alpha: Some(permute(&alpha)), ..Default::default() };
            let f = fuse(&maps.iter().collect::<Vec<_>>(), &cfg).unwrap();
            let g = fuse(&pmaps.iter().collect::<Vec<_>>(), &pcfg).unwrap();
            let expect = permute(f.pixel_mean(0));
            for (a, b) in expect.iter().zip(g.pixel_mean(0)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn one_hot_vote_increases_class(
            px in prop::collection::vec(simplex(4), 1..5),
            class in 0usize..4,
        ) {
            let maps: Vec<_> = px.iter().map(|p| raster(4, &[p])).collect();
            let mut onehot = vec![0.0; 4];
            onehot[class] = 1.0;
            let extra = raster(4, &[&onehot]);
            let before = fuse(&maps.iter().collect::<Vec<_>>(), &FusionConfig::default()).unwrap();
            let mut refs: Vec<_> = maps.iter().collect();
            refs.push(&extra);
            let after = fuse(&refs, &FusionConfig::default()).unwrap();
            prop_assert!(after.pixel_mean(0)[class] > before.pixel_mean(0)[class]);
        }

        #[test]
        fn vanishing_weights_recover_prior(
            px in prop::collection::vec(simplex(4), 1..5),
            alpha in prop::collection::vec(0.5f64..3.0, 4),
        ) {
            let maps: Vec<_> = px.iter().map(|p| raster(4, &[p])).collect();
            let cfg = FusionConfig {
                prior_alpha: Some(alpha.clone()),
                weights: Some(vec![1e-9; maps.len()]),
                ..Default::default()
            };
            let f = fuse(&maps.iter().collect::<Vec<_>>(), &cfg).unwrap();
            let total: f64 = alpha.iter().sum();
            for (m, a) in f.pixel_mean(0).iter().zip(&alpha) {
                prop_assert!((m - a / total).abs() < 1e-8);
            }
        }

        #[test]
        fn one_hot_inputs_count_votes(classes in prop::collection::vec(0usize..4, 1..12)) {
            let maps: Vec<_> = classes
                .iter()
                .map(|&k| {
                    let mut v = vec![0.0; 4];
                    v[k] = 1.0;
                    raster(4, &[&v])
                })
                .collect();
            let f = fuse(&maps.iter().collect::<Vec<_>>(), &FusionConfig::default()).unwrap();
            let j = classes.len() as f64;
            for c in 0..4 {
                let votes = classes.iter().filter(|&&k| k == c).count() as f64;
                prop_assert!((f.pixel_alpha(0)[c] - 1.0 - votes).abs() <= j * 3.0 * DEFAULT_EPSILON + 1e-12);
            }
            let m = f.pixel_mean(0);
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let a = f.pixel_alpha(0);
            let s: f64 = a.iter().sum();
            for (mv, av) in m.iter().zip(a) {
                prop_assert!((mv - av / s).abs() < 1e-12);
            }
        }
    }
}
