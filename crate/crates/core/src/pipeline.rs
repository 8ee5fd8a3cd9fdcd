//! End-to-end sweep: fuse investigator maps every requested way, score each
//! result against a reference, and write a comparison table.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! manifest.json                 planned outputs and their status
//! summary.csv                   one row per variant
//! ttest.csv                     every metric of every variant vs the baseline
//! iji.csv                       IJI of every variant and every input map
//! investigators.csv             per-input mean OA and IJI
//! weights.csv                   inferred kappa (weighted mode)
//! clusters/<method>_k<k>.json   cluster models
//! variants/<name>/fused_prob    posterior mean raster
//! variants/<name>/alpha_post    posterior parameter raster
//! variants/<name>/fused_label   label raster
//! variants/<name>/mc.csv        Monte Carlo accuracy per iteration
//! ```
//!
//! The baseline row (`plurality-baseline`) is the per-pixel plurality vote of
//! the inputs' hard labels, not a classifier trained on pooled samples.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy::{fmt_opt, monte_carlo_assess_many, paired_t_test, Metric, MonteCarloResult};
use crate::cluster::{cluster, cluster_subsets, ClusterMethod, EntropyFeatureMatrix};
use crate::error::{Error, Result};
use crate::fusion::{fuse, fused_label_map, plurality_composite, FusionConfig, PosteriorField};
use crate::grid::{hard_classify, LabelRaster, ProbabilityRaster};
use crate::landscape::{write_iji_csv, IjiRecord};
use crate::raster_io::{
    load_label_raster, load_probability_raster, read_header, save_f32_raster, save_label_raster,
    save_probability_raster, DType,
};
use crate::weights::{estimate_weights, write_weights_csv, DEFAULT_SUBSAMPLE};

pub const BASELINE: &str = "plurality-baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Unweighted,
    Weighted,
    Clustered,
}

fn default_k_values() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_methods() -> Vec<ClusterMethod> {
    vec![ClusterMethod::KMeans, ClusterMethod::KMedoids]
}
fn default_modes() -> Vec<FusionMode> {
    vec![FusionMode::Unweighted, FusionMode::Weighted, FusionMode::Clustered]
}
fn default_mc_iterations() -> usize {
    100
}
fn default_per_class() -> usize {
    300
}
fn default_subsample() -> usize {
    DEFAULT_SUBSAMPLE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub reference: PathBuf,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<ClusterMethod>,
    #[serde(default = "default_modes")]
    pub fusion_modes: Vec<FusionMode>,
    #[serde(default = "default_mc_iterations")]
    pub mc_iterations: usize,
    #[serde(default = "default_per_class")]
    pub per_class_samples: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Pixels sampled for weight inference.
    #[serde(default = "default_subsample")]
    pub weight_subsample: usize,
}

impl PipelineConfig {
    /// Reads a config; relative paths are taken relative to the file.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("pipeline config: {e}")))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input_dir, &mut cfg.reference, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks that need no input data.
    pub fn validate(&self) -> Result<()> {
        if let Some(&k) = self.k_values.iter().find(|&&k| k < 2) {
            return Err(Error::InvalidArgument(format!("k = {k} in k_values; need k >= 2")));
        }
        if self.mc_iterations == 0 {
            return Err(Error::InvalidArgument("mc_iterations must be >= 1".into()));
        }
        if self.per_class_samples == 0 {
            return Err(Error::InvalidArgument("per_class_samples must be >= 1".into()));
        }
        if self.fusion_modes.contains(&FusionMode::Clustered) && self.methods.is_empty() {
            return Err(Error::InvalidArgument(
                "clustered fusion requested without a cluster method".into(),
            ));
        }
        Ok(())
    }

    fn clustering(&self) -> bool {
        self.fusion_modes.contains(&FusionMode::Clustered) && !self.k_values.is_empty()
    }
}

/// One fused output, with the input maps it drew on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantPlan {
    pub name: String,
    pub members: Vec<String>,
    pub outputs: Vec<String>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_investigators: usize,
    pub variants: Vec<VariantPlan>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub name: String,
    pub n_maps: usize,
    pub label: LabelRaster,
    pub mc: MonteCarloResult,
    pub iji: IjiRecord,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub manifest: Manifest,
    pub variants: Vec<VariantResult>,
    pub output_dir: PathBuf,
}

impl PipelineReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Investigator rasters in `dir`, ordered by file name.
pub fn load_investigator_maps(dir: &Path) -> Result<Vec<(String, ProbabilityRaster)>> {
    let mut headers: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    headers.sort();
    let mut out = Vec::new();
    for h in headers {
        if read_header(&h)?.dtype != DType::F32 {
            continue;
        }
        let id = h
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad file name {}", h.display())))?
            .to_string();
        out.push((id, load_probability_raster(&h)?));
    }
    Ok(out)
}

struct Job {
    name: String,
    members: Vec<usize>,
    weights: Option<Vec<f64>>,
    baseline: bool,
}

fn group_name(method: ClusterMethod, k: usize, g: usize) -> String {
    format!("{method}_k{k}g{g}")
}

fn variant_outputs(name: &str) -> Vec<String> {
    ["fused_prob.json", "alpha_post.json", "fused_label.json", "mc.csv"]
        .iter()
        .filter(|f| name != BASELINE || **f == "fused_label.json" || **f == "mc.csv")
        .map(|f| format!("variants/{name}/{f}"))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_text(&dir.join("manifest.json"), &text)
}

fn csv_string(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn save_posterior(dir: &Path, field: &PosteriorField) -> Result<()> {
    save_probability_raster(&field.mean_raster(), &dir.join("fused_prob"))?;
    let s = field.shape();
    let bands: Vec<String> = s.class_names().iter().map(|n| format!("alpha_{n}")).collect();
    save_f32_raster(&dir.join("alpha_post"), s.width(), s.height(), &bands, field.alpha_post())
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let maps = load_investigator_maps(&config.input_dir)?;
    if maps.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no investigator rasters in {}",
            config.input_dir.display()
        )));
    }
    let n_maps = maps.len();
    let shape = maps[0].1.shape().clone();
    for (id, m) in &maps {
        shape.ensure_same(m.shape(), &format!("investigator {id}"))?;
    }
    if config.clustering() && n_maps < 2 {
        return Err(Error::InvalidArgument(
            "clustering needs at least 2 investigator maps".into(),
        ));
    }
    if config.clustering() {
        if let Some(&k) = config.k_values.iter().find(|&&k| k > n_maps) {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds the {n_maps} investigator maps"
            )));
        }
    }
    if config.fusion_modes.contains(&FusionMode::Weighted) && n_maps < 2 {
        return Err(Error::InvalidArgument(
            "weighted fusion needs at least 2 investigator maps".into(),
        ));
    }
    let reference = load_label_raster(&config.reference)?;
    shape.ensure_same(reference.shape(), "reference raster")?;

    let ids: Vec<String> = maps.iter().map(|(id, _)| id.clone()).collect();
    let rasters: Vec<&ProbabilityRaster> = maps.iter().map(|(_, m)| m).collect();
    let out = &config.output_dir;
    let all: Vec<usize> = (0..n_maps).collect();

    // plan
    let modes: std::collections::BTreeSet<FusionMode> = config.fusion_modes.iter().copied().collect();
    let mut files = vec![
        "summary.csv".to_string(),
        "ttest.csv".into(),
        "iji.csv".into(),
        "investigators.csv".into(),
    ];
    let mut jobs = vec![Job {
        name: BASELINE.into(),
        members: all.clone(),
        weights: None,
        baseline: true,
    }];
    if modes.contains(&FusionMode::Unweighted) {
        jobs.push(Job {
            name: "unweighted".into(),
            members: all.clone(),
            weights: None,
            baseline: false,
        });
    }
    if modes.contains(&FusionMode::Weighted) {
        files.push("weights.csv".into());
        jobs.push(Job {
            name: "weighted".into(),
            members: all.clone(),
            weights: None,
            baseline: false,
        });
    }
    let mut cluster_plan = Vec::new();
    if config.clustering() {
        let mut methods = config.methods.clone();
        methods.dedup();
        let mut ks = config.k_values.clone();
        ks.sort_unstable();
        ks.dedup();
        for &method in &methods {
            for &k in &ks {
                files.push(format!("clusters/{method}_k{k}.json"));
                cluster_plan.push((method, k));
                for g in 1..=k {
                    jobs.push(Job {
                        name: group_name(method, k, g),
                        members: Vec::new(),
                        weights: None,
                        baseline: false,
                    });
                }
            }
        }
    }
    let mut manifest = Manifest {
        seed: config.seed,
        n_investigators: n_maps,
        variants: jobs
            .iter()
            .map(|j| VariantPlan {
                name: j.name.clone(),
                members: Vec::new(),
                outputs: variant_outputs(&j.name),
                status: "planned".into(),
            })
            .collect(),
        files,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_manifest(out, &manifest)?;

    // weights
    if let Some(job) = jobs.iter_mut().find(|j| j.name == "weighted") {
        let est = estimate_weights(
            &rasters,
            &FusionConfig::default(),
            Some(config.weight_subsample),
            config.seed,
        )?;
        let text = csv_string(|b| write_weights_csv(b, &ids, &est.kappa))?;
        write_text(&out.join("weights.csv"), &text)?;
        job.weights = Some(est.kappa);
    }

    // clusters
    if !cluster_plan.is_empty() {
        let features = EntropyFeatureMatrix::from_maps(&rasters)?;
        let models: Vec<_> = cluster_plan
            .par_iter()
            .map(|&(method, k)| cluster(method, &features, k, config.seed).map(|m| (method, k, m)))
            .collect::<Result<_>>()?;
        fs::create_dir_all(out.join("clusters")).map_err(|e| Error::io(out.join("clusters"), e))?;
        for (method, k, model) in models {
            model.save(&out.join(format!("clusters/{method}_k{k}.json")), &features)?;
            let subsets = cluster_subsets(&all, &model)?;
            for (g, members) in subsets.into_iter().enumerate() {
                let name = group_name(method, k, g + 1);
                let job = jobs.iter_mut().find(|j| j.name == name).expect("planned group");
                job.members = members.into_iter().copied().collect();
            }
        }
    }

    // fuse
    let labels: Vec<LabelRaster> = jobs
        .par_iter()
        .map(|job| {
            let dir = out.join("variants").join(&job.name);
            let members: Vec<&ProbabilityRaster> = job.members.iter().map(|&j| rasters[j]).collect();
            let label = if job.baseline {
                plurality_composite(&members)?
            } else {
                let cfg = match &job.weights {
                    Some(w) => FusionConfig::weighted(job.members.iter().map(|&j| w[j]).collect()),
                    None => FusionConfig::default(),
                };
                let field = fuse(&members, &cfg)?;
                save_posterior(&dir, &field)?;
                fused_label_map(&field)
            };
            save_label_raster(&label, &dir.join("fused_label"))?;
            Ok(label)
        })
        .collect::<Result<_>>()?;
    for (plan, job) in manifest.variants.iter_mut().zip(&jobs) {
        plan.members = job.members.iter().map(|&j| ids[j].clone()).collect();
    }

    // assess variants and inputs on shared samples
    let hard: Vec<LabelRaster> = rasters.iter().map(|m| hard_classify(m)).collect();
    let mut targets: Vec<&LabelRaster> = labels.iter().collect();
    targets.extend(hard.iter());
    let mut mc = monte_carlo_assess_many(
        &targets,
        &reference,
        config.mc_iterations,
        config.per_class_samples,
        config.seed,
    )?;
    let input_mc = mc.split_off(labels.len());

    let mut variants = Vec::with_capacity(jobs.len());
    for ((job, label), result) in jobs.iter().zip(labels).zip(mc) {
        let text = csv_string(|b| result.write_csv(b))?;
        write_text(&out.join("variants").join(&job.name).join("mc.csv"), &text)?;
        variants.push(VariantResult {
            name: job.name.clone(),
            n_maps: job.members.len(),
            iji: IjiRecord::evaluate(job.name.clone(), &label),
            label,
            mc: result,
        });
    }
    for plan in &mut manifest.variants {
        plan.status = "done".into();
    }
    write_manifest(out, &manifest)?;

    write_reports(out, &variants, &ids, &hard, &input_mc)?;
    Ok(PipelineReport {
        manifest,
        variants,
        output_dir: out.clone(),
    })
}

fn write_reports(
    out: &Path,
    variants: &[VariantResult],
    ids: &[String],
    hard: &[LabelRaster],
    input_mc: &[MonteCarloResult],
) -> Result<()> {
    let baseline = &variants[0];
    debug_assert_eq!(baseline.name, BASELINE);
    let metrics = baseline.mc.metrics();

    // t-tests: iterations where both sides define the metric
    let mut tests: BTreeMap<(usize, usize), Option<crate::accuracy::TTest>> = BTreeMap::new();
    for (vi, v) in variants.iter().enumerate().skip(1) {
        for (mi, (_, metric)) in metrics.iter().enumerate() {
            let (a, b): (Vec<f64>, Vec<f64>) = v
                .mc
                .series(*metric)
                .into_iter()
                .zip(baseline.mc.series(*metric))
                .filter_map(|(x, y)| Some((x?, y?)))
                .unzip();
            tests.insert((vi, mi), paired_t_test(&a, &b).ok());
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "metric", "t", "p", "df"])?;
    for ((vi, mi), t) in &tests {
        w.write_record([
            variants[*vi].name.clone(),
            metrics[*mi].0.clone(),
            fmt_opt(t.map(|t| t.t)),
            fmt_opt(t.map(|t| t.p)),
            t.map(|t| t.df.to_string()).unwrap_or_default(),
        ])?;
    }
    write_text(&out.join("ttest.csv"), &finish(w)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant".to_string(), "n".into()];
    header.extend(metrics.iter().map(|(n, _)| n.clone()));
    header.extend(["oa_sd", "iji", "t_oa", "p_oa"].map(String::from));
    w.write_record(&header)?;
    for (vi, v) in variants.iter().enumerate() {
        let mut row = vec![v.name.clone(), v.n_maps.to_string()];
        row.extend(metrics.iter().map(|(_, m)| fmt_opt(v.mc.mean(*m))));
        row.push(fmt_opt(v.mc.std_dev(Metric::Overall)));
        row.push(fmt_opt(v.iji.iji));
        let t = tests.get(&(vi, 0)).copied().flatten();
        row.push(fmt_opt(t.map(|t| t.t)));
        row.push(fmt_opt(t.map(|t| t.p)));
        w.write_record(&row)?;
    }
    write_text(&out.join("summary.csv"), &finish(w)?)?;

    let mut records: Vec<IjiRecord> = variants.iter().map(|v| v.iji.clone()).collect();
    let input_iji: Vec<IjiRecord> = ids
        .iter()
        .zip(hard)
        .map(|(id, h)| IjiRecord::evaluate(id.clone(), h))
        .collect();
    records.extend(input_iji.iter().cloned());
    write_text(&out.join("iji.csv"), &csv_string(|b| write_iji_csv(b, &records))?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["investigator_id", "oa", "oa_sd", "iji"])?;
    for ((id, mc), iji) in ids.iter().zip(input_mc).zip(&input_iji) {
        w.write_record([
            id.clone(),
            fmt_opt(mc.mean(Metric::Overall)),
            fmt_opt(mc.std_dev(Metric::Overall)),
            fmt_opt(iji.iji),
        ])?;
    }
    write_text(&out.join("investigators.csv"), &finish(w)?)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
