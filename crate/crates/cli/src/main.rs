use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dirfuse::accuracy::{confusion, monte_carlo_assess, Metric};
use dirfuse::cluster::{cluster, cluster_subsets, ClusterMethod, EntropyFeatureMatrix};
use dirfuse::entropy::entropy_map;
use dirfuse::landscape::{write_iji_csv, IjiRecord};
use dirfuse::pipeline::{load_investigator_maps, run_pipeline, PipelineConfig};
use dirfuse::raster_io::{
    load_label_raster, load_probability_raster, read_header, save_entropy_raster, save_f32_raster,
    save_label_raster, save_probability_raster, DType,
};
use dirfuse::synth::Scenario;
use dirfuse::weights::{estimate_weights, read_weights_csv, write_weights_csv, DEFAULT_SUBSAMPLE};
use dirfuse::{fuse, fused_label_map, hard_classify, Error, FusionConfig, LabelRaster, Result};

#[derive(Parser)]
#[command(name = "dirfuse", version, about = "Dirichlet fusion of land-cover probability rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic truth map and investigator rasters.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fuse the investigator rasters in a directory.
    Fuse {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// `auto` to infer weights, or a weights CSV.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        cluster: Option<ClusterMethod>,
        #[arg(short, long, requires = "cluster")]
        k: Option<usize>,
        /// 1-based cluster group to fuse.
        #[arg(long, requires = "cluster")]
        group: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
        subsample: usize,
    },
    /// Per-pixel Shannon entropy of a probability raster.
    Entropy {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Accuracy of a map against a reference label raster.
    Assess {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Monte Carlo iterations; omit for a full-grid comparison.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 300)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-iteration CSV destination.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Interspersion and Juxtaposition Index of a map.
    Iji { map: PathBuf },
    /// Run the full sweep described by a JSON config.
    Pipeline { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { scenario, output } => {
            let sim = Scenario::from_json_file(&scenario)?.materialize(&output)?;
            println!(
                "wrote truth and {} investigator maps to {}",
                sim.maps.len(),
                output.display()
            );
            Ok(())
        }
        Command::Fuse {
            input,
            output,
            weights,
            cluster: method,
            k,
            group,
            seed,
            subsample,
        } => fuse_command(&input, &output, weights.as_deref(), method, k, group, seed, subsample),
        Command::Entropy { input, output } => {
            save_entropy_raster(&entropy_map(&load_probability_raster(&input)?), &output)
        }
        Command::Assess {
            pred,
            reference,
            mc,
            per_class,
            seed,
            output,
        } => assess_command(&pred, &reference, mc, per_class, seed, output.as_deref()),
        Command::Iji { map } => {
            let labels = load_any_labels(&map)?;
            let id = map.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
            let stdout = std::io::stdout();
            write_iji_csv(stdout.lock(), &[IjiRecord::evaluate(id, &labels)])
        }
        Command::Pipeline { config } => {
            let report = run_pipeline(&PipelineConfig::from_json_file(&config)?)?;
            println!(
                "{} variants written to {}",
                report.variants.len(),
                report.output_dir.display()
            );
            Ok(())
        }
    }
}

/// Label raster as stored, or the hard classification of a probability raster.
fn load_any_labels(path: &Path) -> Result<LabelRaster> {
    match read_header(path)?.dtype {
        DType::U8 => load_label_raster(path),
        DType::F32 => Ok(hard_classify(&load_probability_raster(path)?)),
    }
}

#[allow(clippy::too_many_arguments)]
fn fuse_command(
    input: &Path,
    output: &Path,
    weights: Option<&str>,
    method: Option<ClusterMethod>,
    k: Option<usize>,
    group: Option<usize>,
    seed: u64,
    subsample: usize,
) -> Result<()> {
    let mut maps = load_investigator_maps(input)?;
    if maps.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no investigator rasters in {}",
            input.display()
        )));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;

    let mut kappa: Option<Vec<f64>> = match weights {
        None => None,
        Some("auto") => {
            let rasters: Vec<_> = maps.iter().map(|(_, m)| m).collect();
            let est = estimate_weights(&rasters, &FusionConfig::default(), Some(subsample), seed)?;
            let ids: Vec<String> = maps.iter().map(|(id, _)| id.clone()).collect();
            let path = output.join("weights.csv");
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_weights_csv(file, &ids, &est.kappa)?;
            Some(est.kappa)
        }
        Some(file) => {
            let table = read_weights_csv(Path::new(file))?;
            let k = maps
                .iter()
                .map(|(id, _)| {
                    table
                        .iter()
                        .find(|(w, _)| w == id)
                        .map(|&(_, v)| v)
                        .ok_or_else(|| Error::InvalidArgument(format!("no weight for map {id:?}")))
                })
                .collect::<Result<_>>()?;
            Some(k)
        }
    };

    if let Some(method) = method {
        let (Some(k), Some(group)) = (k, group) else {
            return Err(Error::InvalidArgument("--cluster needs -k and --group".into()));
        };
        if group == 0 || group > k {
            return Err(Error::InvalidArgument(format!("--group must be in 1..={k}")));
        }
        let rasters: Vec<_> = maps.iter().map(|(_, m)| m).collect();
        let features = EntropyFeatureMatrix::from_maps(&rasters)?;
        let model = cluster(method, &features, k, seed)?;
        let indices: Vec<usize> = (0..maps.len()).collect();
        let members: Vec<usize> = cluster_subsets(&indices, &model)?[group - 1]
            .iter()
            .map(|&&j| j)
            .collect();
        kappa = kappa.map(|w| members.iter().map(|&j| w[j]).collect());
        let mut keep = members.iter().peekable();
        let mut j = 0;
        maps.retain(|_| {
            let hit = keep.peek() == Some(&&j);
            if hit {
                keep.next();
            }
            j += 1;
            hit
        });
        println!(
            "group {group}: {}",
            maps.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>().join(",")
        );
    }

    let rasters: Vec<_> = maps.iter().map(|(_, m)| m).collect();
    let config = match kappa {
        Some(w) => FusionConfig::weighted(w),
        None => FusionConfig::default(),
    };
    let field = fuse(&rasters, &config)?;
    save_probability_raster(&field.mean_raster(), &output.join("fused_prob"))?;
    let s = field.shape();
    let bands: Vec<String> = s.class_names().iter().map(|n| format!("alpha_{n}")).collect();
    save_f32_raster(&output.join("alpha_post"), s.width(), s.height(), &bands, field.alpha_post())?;
    save_label_raster(&fused_label_map(&field), &output.join("fused_label"))
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into())
}

fn assess_command(
    pred: &Path,
    reference: &Path,
    mc: Option<usize>,
    per_class: usize,
    seed: u64,
    output: Option<&Path>,
) -> Result<()> {
    let pred = load_any_labels(pred)?;
    let reference = load_label_raster(reference)?;
    let names = reference.shape().class_names().to_vec();
    let mut out = std::io::stdout().lock();
    let mut line = |s: String| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match mc {
        None => {
            let report = confusion(&pred, &reference, None)?.report()?;
            line(format!("oa\t{}", fmt(Some(report.overall))))?;
            for (c, name) in names.iter().enumerate() {
                line(format!(
                    "{name}\tua {}\tpa {}",
                    fmt(report.users[c]),
                    fmt(report.producers[c])
                ))?;
            }
        }
        Some(n) => {
            let res = monte_carlo_assess(&pred, &reference, n, per_class, seed)?;
            line(format!(
                "oa\tmean {}\tsd {}",
                fmt(res.mean(Metric::Overall)),
                fmt(res.std_dev(Metric::Overall))
            ))?;
            for (c, name) in names.iter().enumerate() {
                line(format!(
                    "{name}\tua {}\tpa {}",
                    fmt(res.mean(Metric::Users(c))),
                    fmt(res.mean(Metric::Producers(c)))
                ))?;
            }
            if let Some(path) = output {
                let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
                res.write_csv(file)?;
            }
        }
    }
    Ok(())
}
