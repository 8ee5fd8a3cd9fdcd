//! Synthetic scenes and investigator maps with planted reliability.
//!
//! Scenes are power diagrams: seeded blob centres own the pixels closest to
//! them, with a per-class additive offset tuned until class areas match the
//! requested mix. Cells are convex, so every blob is one contiguous patch.
//!
//! Investigator maps corrupt the truth pixel by pixel (redraw from a
//! confusion-kernel row with probability `noise_rate`, self-transitions
//! allowed) and soften the resulting label into a Dirichlet-distributed
//! probability vector. Pixel `i` draws from ChaCha stream `i` of the
//! investigator's seed, so output does not depend on evaluation order.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridShape, LabelRaster, ProbabilityRaster, NODATA};
use crate::raster_io::{save_label_raster, save_probability_raster};

/// Largest allowed gap between requested and realized class fractions.
pub const MIX_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: GridShape,
    pub n_blobs: usize,
    pub class_mix: Vec<f64>,
    pub seed: u64,
}

impl SceneSpec {
    /// Equal class mix.
    pub fn balanced(shape: GridShape, n_blobs: usize, seed: u64) -> Self {
        let c = shape.n_classes();
        Self {
            shape,
            n_blobs,
            class_mix: vec![1.0 / c as f64; c],
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.shape.n_classes();
        if self.class_mix.len() != c {
            return Err(Error::InvalidArgument(format!(
                "class_mix has {} entries for {c} classes",
                self.class_mix.len()
            )));
        }
        if self.class_mix.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidArgument(
                "class fractions must be positive".into(),
            ));
        }
        let total: f64 = self.class_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "class_mix sums to {total}, not 1"
            )));
        }
        let area = self.shape.n_pixels() as f64;
        if let Some((c, f)) = self
            .class_mix
            .iter()
            .enumerate()
            .find(|(_, &f)| f * area < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "infeasible mix: class {c} fraction {f} covers under one pixel"
            )));
        }
        if self.n_blobs < c {
            return Err(Error::InvalidArgument(format!(
                "need at least one blob per class ({c}), got {}",
                self.n_blobs
            )));
        }
        Ok(())
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<LabelRaster> {
    spec.validate()?;
    let (w, h, c) = (spec.shape.width(), spec.shape.height(), spec.shape.n_classes());
    let area = (w * h) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let sites: Vec<(f64, f64)> = (0..spec.n_blobs)
        .map(|_| (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64))
        .collect();
    let mix = WeightedIndex::new(&spec.class_mix).expect("validated mix");
    let mut site_class: Vec<usize> = (0..c)
        .chain((c..spec.n_blobs).map(|_| mix.sample(&mut rng)))
        .collect();
    site_class.shuffle(&mut rng);
    let mut blobs_per_class = vec![0usize; c];
    site_class.iter().for_each(|&k| blobs_per_class[k] += 1);

    let mut offset = vec![0.0f64; c];
    let mut labels = vec![0u8; w * h];
    let mut best: Option<(f64, Vec<u8>)> = None;
    for _ in 0..400 {
        let mut counts = vec![0usize; c];
        for (i, label) in labels.iter_mut().enumerate() {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let mut best_site = 0;
            let mut best_d = f64::INFINITY;
            for (s, &(sx, sy)) in sites.iter().enumerate() {
                let d = (x - sx).powi(2) + (y - sy).powi(2) - offset[site_class[s]];
                if d < best_d {
                    best_d = d;
                    best_site = s;
                }
            }
            let k = site_class[best_site];
            *label = k as u8;
            counts[k] += 1;
        }
        let gaps: Vec<f64> = (0..c)
            .map(|k| spec.class_mix[k] - counts[k] as f64 / area)
            .collect();
        let worst = gaps.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if best.as_ref().is_none_or(|(b, _)| worst < *b) {
            best = Some((worst, labels.clone()));
        }
        if worst <= 0.005 {
            break;
        }
        for k in 0..c {
            offset[k] += 0.5 * gaps[k] * area / (blobs_per_class[k] as f64 * std::f64::consts::PI);
        }
    }
    let (worst, labels) = best.expect("at least one pass");
    if worst > MIX_TOLERANCE {
        return Err(Error::Degenerate(format!(
            "could not match class mix within {MIX_TOLERANCE} (off by {worst:.3}); try more blobs"
        )));
    }
    LabelRaster::new(spec.shape.clone(), labels)
}

/// Row-stochastic `C x C` kernel with every row uniform.
pub fn uniform_kernel(n_classes: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / n_classes as f64; n_classes]; n_classes]
}

/// Uniform kernel except row `from`, which puts `mass` on both `from` and
/// `to` and spreads the remainder over the other classes. Needs
/// `1/C <= mass <= 1/2` for the diagonal to dominate.
pub fn biased_kernel(n_classes: usize, from: usize, to: usize, mass: f64) -> Vec<Vec<f64>> {
    assert!(from != to && n_classes >= 2);
    let mut k = uniform_kernel(n_classes);
    let others = n_classes - 2;
    let rest = if others == 0 { 0.0 } else { (1.0 - 2.0 * mass) / others as f64 };
    k[from] = vec![rest; n_classes];
    k[from][from] = mass;
    k[from][to] = mass;
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigatorSpec {
    pub noise_rate: f64,
    pub confusion_kernel: Vec<Vec<f64>>,
    pub softness: f64,
    pub seed: u64,
}

impl InvestigatorSpec {
    pub fn uniform(n_classes: usize, noise_rate: f64, softness: f64, seed: u64) -> Self {
        Self {
            noise_rate,
            confusion_kernel: uniform_kernel(n_classes),
            softness,
            seed,
        }
    }

    fn validate(&self, n_classes: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidArgument(format!(
                "noise_rate {} outside [0, 1)",
                self.noise_rate
            )));
        }
        if !(self.softness > 0.0 && self.softness.is_finite()) {
            return Err(Error::InvalidArgument("softness must be positive".into()));
        }
        let k = &self.confusion_kernel;
        if k.len() != n_classes || k.iter().any(|r| r.len() != n_classes) {
            return Err(Error::DimensionMismatch(format!(
                "confusion kernel must be {n_classes}x{n_classes}"
            )));
        }
        for (a, row) in k.iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "kernel row {a} is not a probability vector"
                )));
            }
            if row.iter().any(|&v| v > row[a]) {
                return Err(Error::InvalidArgument(format!(
                    "kernel row {a}: diagonal must dominate"
                )));
            }
        }
        Ok(())
    }
}

pub fn generate_investigator(truth: &LabelRaster, spec: &InvestigatorSpec) -> Result<ProbabilityRaster> {
    let shape = truth.shape();
    let c = shape.n_classes();
    spec.validate(c)?;
    if truth.values().contains(&NODATA) {
        return Err(Error::InvalidArgument(
            "truth raster must not contain NODATA".into(),
        ));
    }
    let rows: Vec<WeightedIndex<f64>> = spec
        .confusion_kernel
        .iter()
        .map(|r| WeightedIndex::new(r).expect("validated kernel row"))
        .collect();
    let peak = Gamma::new(1.0 + spec.softness, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("softness: {e}")))?;
    let base = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut values = vec![0.0; shape.n_pixels() * c];
    values
        .par_chunks_mut(c)
        .zip(truth.values().par_iter())
        .enumerate()
        .for_each(|(i, (px, &y))| {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            let mut label = y as usize;
            if rng.random::<f64>() < spec.noise_rate {
                label = rows[label].sample(&mut rng);
            }
            let mut sum = 0.0;
            for (k, v) in px.iter_mut().enumerate() {
                *v = if k == label {
                    peak.sample(&mut rng)
                } else {
                    Exp1.sample(&mut rng)
                };
                sum += *v;
            }
            px.iter_mut().for_each(|v| *v /= sum);
        });
    ProbabilityRaster::new(shape.clone(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedInvestigator {
    pub id: String,
    #[serde(flatten)]
    pub spec: InvestigatorSpec,
}

/// A scene plus the investigators that map it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scene: SceneSpec,
    pub investigators: Vec<NamedInvestigator>,
}

pub struct Simulation {
    pub truth: LabelRaster,
    pub maps: Vec<(String, ProbabilityRaster)>,
}

impl Scenario {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("scenario: {e}")))
    }

    pub fn run(&self) -> Result<Simulation> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.investigators.iter().find(|i| !seen.insert(&i.id)) {
            return Err(Error::InvalidArgument(format!("duplicate investigator id {:?}", dup.id)));
        }
        let truth = generate_scene(&self.scene)?;
        let maps = self
            .investigators
            .iter()
            .map(|inv| Ok((inv.id.clone(), generate_investigator(&truth, &inv.spec)?)))
            .collect::<Result<_>>()?;
        Ok(Simulation { truth, maps })
    }

    /// Writes `truth` and every investigator raster into `dir`.
    pub fn materialize(&self, dir: &Path) -> Result<Simulation> {
        let sim = self.run()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_label_raster(&sim.truth, &dir.join("truth"))?;
        let maps_dir = dir.join("maps");
        for (id, map) in &sim.maps {
            save_probability_raster(map, &maps_dir.join(id))?;
        }
        Ok(sim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::hard_classify;

    fn shape(w: usize, h: usize, c: usize) -> GridShape {
        GridShape::with_classes(w, h, c).unwrap()
    }

    #[test]
    fn scene_contract() {
        let spec = SceneSpec::balanced(shape(64, 64, 4), 16, 7);
        let truth = generate_scene(&spec).unwrap();
        for n in truth.class_counts() {
            let f = n as f64 / 4096.0;
            assert!((0.1875..=0.3125).contains(&f), "{f}");
        }
        assert_eq!(truth, generate_scene(&spec).unwrap());
        assert_ne!(
            truth,
            generate_scene(&SceneSpec { seed: 8, ..spec.clone() }).unwrap()
        );
    }

    #[test]
    fn scene_mix_respected_across_seeds() {
        for seed in 0..30 {
            let spec = SceneSpec {
                shape: shape(48, 40, 3),
                n_blobs: 10,
                class_mix: vec![0.5, 0.3, 0.2],
                seed,
            };
            let truth = generate_scene(&spec).unwrap();
            for (n, t) in truth.class_counts().iter().zip(&spec.class_mix) {
                assert!((*n as f64 / 1920.0 - t).abs() <= MIX_TOLERANCE);
            }
        }
    }

    #[test]
    fn infeasible_mix() {
        let spec = SceneSpec {
            shape: shape(8, 8, 2),
            n_blobs: 4,
            class_mix: vec![1.0 - 1e-6, 1e-6],
            seed: 0,
        };
        assert!(generate_scene(&spec).unwrap_err().to_string().contains("infeasible"));
        let spec = SceneSpec {
            class_mix: vec![0.5, 0.6],
            ..spec
        };
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn noiseless_sharp_investigator_reproduces_truth() {
        let truth = generate_scene(&SceneSpec::balanced(shape(32, 32, 4), 8, 1)).unwrap();
        let inv = generate_investigator(&truth, &InvestigatorSpec::uniform(4, 0.0, 1e6, 5)).unwrap();
        assert_eq!(hard_classify(&inv), truth);
    }

    #[test]
    fn disagreement_matches_binomial_expectation() {
        let truth = generate_scene(&SceneSpec::balanced(shape(100, 100, 4), 12, 2)).unwrap();
        let inv = generate_investigator(&truth, &InvestigatorSpec::uniform(4, 0.3, 1e6, 3)).unwrap();
        let hard = hard_classify(&inv);
        let diff = hard
            .values()
            .iter()
            .zip(truth.values())
            .filter(|(a, b)| a != b)
            .count() as f64
            / 10_000.0;
        // self-transitions allowed: 0.3 * (1 - 1/C)
        assert!((diff - 0.225).abs() <= 0.02, "{diff}");
    }

    #[test]
    fn seeds_matter() {
        let truth = generate_scene(&SceneSpec::balanced(shape(16, 16, 3), 6, 2)).unwrap();
        let a = generate_investigator(&truth, &InvestigatorSpec::uniform(3, 0.2, 5.0, 1)).unwrap();
        let b = generate_investigator(&truth, &InvestigatorSpec::uniform(3, 0.2, 5.0, 2)).unwrap();
        assert_ne!(hard_classify(&a), hard_classify(&b));
        let again = generate_investigator(&truth, &InvestigatorSpec::uniform(3, 0.2, 5.0, 1)).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn kernel_validation() {
        let truth = generate_scene(&SceneSpec::balanced(shape(8, 8, 3), 3, 2)).unwrap();
        let mut spec = InvestigatorSpec::uniform(3, 0.2, 5.0, 1);
        spec.confusion_kernel[0] = vec![0.2, 0.8, 0.0];
        assert!(generate_investigator(&truth, &spec).is_err());
        spec.confusion_kernel = biased_kernel(3, 0, 1, 0.45);
        assert!(generate_investigator(&truth, &spec).is_ok());
        spec.noise_rate = 1.0;
        assert!(generate_investigator(&truth, &spec).is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let scenario = Scenario {
            scene: SceneSpec::balanced(shape(8, 8, 3), 3, 2),
            investigators: vec![NamedInvestigator {
                id: "inv_00".into(),
                spec: InvestigatorSpec::uniform(3, 0.1, 4.0, 9),
            }],
        };
        let text = serde_json::to_string(&scenario).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), scenario);
        let bad = text.replace("\"width\":8", "\"width\":0");
        assert!(serde_json::from_str::<Scenario>(&bad).is_err());
    }
}
