//! Subcommands. Every command resolves the run configuration, works inside
//! the run directory `<out>/<config hash>/` and writes a `summary.json` next
//! to its outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use myoseg_core::fitting::FitResult;
use myoseg_core::imaging::map_contour_into;
use myoseg_core::metrics::{self, SummaryStats};
use myoseg_core::pipeline::{self, prepare_sub_image, PipelineConfig};
use myoseg_core::shape_model::build_model;
use myoseg_core::synth::{SynthSample, KEY_INDICES};
use myoseg_core::{Image2D, LandmarkSet, ShapeModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::experiments::{self, Variant};
use crate::formats::{self, Entry, ManifestRow};
use crate::{model_io, parallel, pgm};

#[derive(Debug, Parser)]
#[command(
    name = "myoseg",
    version,
    about = "Shape-model-guided random forest myocardium segmentation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core (overrides `jobs`).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Parent directory of run directories (overrides `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus: training, test and sequence sets.
    SynthGen,
    /// Build the point distribution model from annotated training images.
    BuildShapeModel {
        /// Training manifest [default: <run>/data/train/manifest.csv].
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output model [default: <run>/shape_model.json].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the pixel classification forest.
    TrainForest {
        /// Training manifest [default: <run>/data/train/manifest.csv].
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Shape model [default: <run>/shape_model.json].
        #[arg(long)]
        shape_model: Option<PathBuf>,
        /// Output forest [default: <run>/forest.json].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Segment every image of a manifest independently.
    Segment(SegmentArgs),
    /// Segment the frames of a manifest as one temporally coupled sequence.
    SegmentSeq(SegmentArgs),
    /// Score predicted contours against ground-truth landmarks.
    Evaluate {
        /// Predicted contours [default: <run>/segment/contours.csv].
        #[arg(long)]
        predicted: Option<PathBuf>,
        /// Manifest with ground-truth landmarks [default: <run>/data/test/manifest.csv].
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory [default: <run>/evaluate].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Forest Jaccard per feature variant and tree depth.
    DepthStudy {
        /// Output directory [default: <run>/depth-study].
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Images and boxes [default: <run>/data/test/manifest.csv, or
    /// <run>/data/seq_00/manifest.csv for sequences].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Shape model [default: <run>/shape_model.json].
    #[arg(long)]
    pub shape_model: Option<PathBuf>,
    /// Forest [default: <run>/forest.json].
    #[arg(long)]
    pub forest: Option<PathBuf>,
    /// Output directory [default: <run>/segment or <run>/segment-seq].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Resolved configuration and its run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
}

impl Run {
    pub fn open(opts: &GlobalOpts) -> Result<Self, CliError> {
        let mut cfg = match &opts.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = opts.seed {
            cfg.seed = s;
        }
        if let Some(j) = opts.jobs {
            cfg.jobs = j;
        }
        if let Some(o) = &opts.out {
            cfg.out = o.to_string_lossy().into_owned();
        }
        let cfg = cfg.resolved();
        cfg.validate()?;
        let dir = Path::new(&cfg.out).join(cfg.hash());
        create_dir(&dir)?;
        let snapshot = dir.join("config.toml");
        std::fs::write(&snapshot, cfg.to_toml()).map_err(|e| CliError::io(&snapshot, e))?;
        Ok(Self { cfg, dir })
    }

    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.dir.join(default))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format("CSV output", path, e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::format("CSV output", path, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Parses the command line, runs the command and returns the directory
/// holding its outputs.
pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let run = Run::open(&cli.global)?;
    let jobs = run.cfg.jobs;
    parallel::with_jobs(jobs, move || execute(&run, cli.command))
}

fn execute(run: &Run, command: Command) -> Result<PathBuf, CliError> {
    match command {
        Command::SynthGen => synth_gen(run),
        Command::BuildShapeModel { manifest, output } => build_shape_model(
            run,
            &run.path(&manifest, "data/train/manifest.csv"),
            &run.path(&output, "shape_model.json"),
        ),
        Command::TrainForest {
            manifest,
            shape_model,
            output,
        } => train_forest(
            run,
            &run.path(&manifest, "data/train/manifest.csv"),
            &run.path(&shape_model, "shape_model.json"),
            &run.path(&output, "forest.json"),
        ),
        Command::Segment(a) => segment(run, &a, false),
        Command::SegmentSeq(a) => segment(run, &a, true),
        Command::Evaluate {
            predicted,
            manifest,
            output,
        } => evaluate(
            run,
            &run.path(&predicted, "segment/contours.csv"),
            &run.path(&manifest, "data/test/manifest.csv"),
            &run.path(&output, "evaluate"),
        ),
        Command::DepthStudy { output } => depth_study(run, &run.path(&output, "depth-study")),
    }
}

/// Writes images, masks, boxes, landmarks and a manifest for one set.
pub fn write_set(dir: &Path, samples: &[SynthSample]) -> Result<(), CliError> {
    for sub in ["images", "masks"] {
        create_dir(&dir.join(sub))?;
    }
    let rows = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let name = format!("{i:04}.pgm");
            pgm::write(&dir.join("images").join(&name), &s.image)?;
            pgm::write_mask(&dir.join("masks").join(&name), &s.mask)?;
            Ok(ManifestRow {
                image: format!("images/{name}"),
                boxes: "boxes.csv".into(),
                box_row: i,
                landmarks: Some("landmarks.csv".into()),
                landmark_row: Some(i),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let boxes: Vec<_> = samples.iter().map(|s| s.bbox).collect();
    let shapes: Vec<_> = samples.iter().map(|s| s.landmarks.clone()).collect();
    formats::write_boxes(&dir.join("boxes.csv"), &boxes)?;
    formats::write_landmarks(&dir.join("landmarks.csv"), KEY_INDICES, &shapes)?;
    formats::write_manifest(&dir.join("manifest.csv"), &rows)
}

#[derive(Serialize)]
struct SynthSummary {
    n_train: usize,
    n_test: usize,
    sequences: usize,
    frames: usize,
    width: usize,
    height: usize,
}

fn synth_gen(run: &Run) -> Result<PathBuf, CliError> {
    let c = &run.cfg;
    let data = run.dir.join("data");
    let (train, test) = experiments::corpus(&c.synth, c.corpus.n_train, c.corpus.n_test)?;
    write_set(&data.join("train"), &train)?;
    write_set(&data.join("test"), &test)?;
    for i in 0..c.study.sequences {
        let frames = experiments::sequence_frames(&c.synth, i, c.study.frames)?;
        write_set(&data.join(format!("seq_{i:02}")), &frames)?;
    }
    write_json(
        &data.join("summary.json"),
        &SynthSummary {
            n_train: train.len(),
            n_test: test.len(),
            sequences: c.study.sequences,
            frames: c.study.frames,
            width: c.synth.width,
            height: c.synth.height,
        },
    )?;
    Ok(data)
}

fn annotated(entries: &[Entry], path: &Path) -> Result<Vec<LandmarkSet>, CliError> {
    entries
        .iter()
        .map(|e| {
            e.landmarks
                .clone()
                .ok_or_else(|| CliError::format("manifest", path, format!("{} has no landmarks", e.image.display())))
        })
        .collect()
}

#[derive(Serialize)]
struct ModelSummary {
    n_shapes: usize,
    m: usize,
    k: usize,
    eigenvalues: Vec<f64>,
    explained_variance: f64,
    sha256: String,
}

fn build_shape_model(run: &Run, manifest: &Path, output: &Path) -> Result<PathBuf, CliError> {
    let (entries, _) = formats::read_manifest(manifest)?;
    let p = &run.cfg.pipeline;
    let shapes: Vec<LandmarkSet> = annotated(&entries, manifest)?
        .iter()
        .zip(&entries)
        .map(|(lm, e)| map_contour_into(lm, &e.bbox, p.sub_w, p.sub_h))
        .collect();
    let model = build_model(&shapes, &run.cfg.shape)?;
    model_io::save_shape_model(output, &model)?;
    let dir = output.parent().unwrap_or(Path::new(".")).to_path_buf();
    write_json(
        &dir.join("shape_model.summary.json"),
        &ModelSummary {
            n_shapes: shapes.len(),
            m: model.m,
            k: model.k,
            explained_variance: model.eigenvalues.iter().sum::<f64>() / model.total_variance,
            eigenvalues: model.eigenvalues.clone(),
            sha256: model_io::checksum(&model),
        },
    )?;
    Ok(dir)
}

fn load_images(entries: &[Entry]) -> Result<Vec<Image2D>, CliError> {
    entries.par_iter().map(|e| pgm::read(&e.image)).collect()
}

#[derive(Serialize)]
struct ForestSummary {
    n_images: usize,
    n_trees: usize,
    max_depth: usize,
    nodes: usize,
    sm_tables: usize,
    width: usize,
    height: usize,
}

fn train_forest(run: &Run, manifest: &Path, model_path: &Path, output: &Path) -> Result<PathBuf, CliError> {
    let model = model_io::load_shape_model(model_path)?;
    let (entries, _) = formats::read_manifest(manifest)?;
    let shapes = annotated(&entries, manifest)?;
    if let Some(s) = shapes.iter().find(|s| s.len() != model.m) {
        return Err(CliError::ModelMismatch(format!(
            "landmark sets have {} points, shape model expects {}",
            s.len(),
            model.m
        )));
    }
    let images = load_images(&entries)?;
    let p = &run.cfg.pipeline;
    let dataset = images
        .par_iter()
        .zip(&shapes)
        .zip(&entries)
        .map(|((img, lm), e)| {
            let prep = experiments::prepare_one(img, lm, &e.bbox, p.sub_w, p.sub_h)?;
            Ok((prep.sub, prep.mask))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let forest = parallel::train_forest(&dataset, &run.cfg.train, &model)?;
    model_io::save_forest(output, &forest, &model)?;
    let dir = output.parent().unwrap_or(Path::new(".")).to_path_buf();
    let (width, height) = forest.dims();
    write_json(
        &dir.join("forest.summary.json"),
        &ForestSummary {
            n_images: dataset.len(),
            n_trees: forest.trees.len(),
            max_depth: forest.trees.iter().map(|t| t.depth()).max().unwrap_or(0),
            nodes: forest.trees.iter().map(|t| t.nodes.len()).sum(),
            sm_tables: forest.tables.len(),
            width,
            height,
        },
    )?;
    Ok(dir)
}

/// Loads both models and checks that the forest fits the configured
/// sub-image resolution.
fn load_models(
    shape: &Path,
    forest: &Path,
    p: &PipelineConfig,
) -> Result<(ShapeModel, myoseg_core::forest::Forest), CliError> {
    let model = model_io::load_shape_model(shape)?;
    let forest = model_io::load_forest(forest, &model)?;
    if forest.dims() != (p.sub_w, p.sub_h) {
        let (w, h) = forest.dims();
        return Err(CliError::ModelMismatch(format!(
            "forest was trained on {w}x{h} sub-images, pipeline uses {}x{}",
            p.sub_w, p.sub_h
        )));
    }
    Ok((model, forest))
}

#[derive(Serialize)]
struct FitRecord {
    image: String,
    energy: f64,
    n_evals: usize,
    converged: bool,
    b: Vec<f64>,
    theta: [f64; 4],
}

impl FitRecord {
    fn new(image: &Path, f: &FitResult) -> Self {
        Self {
            image: image.to_string_lossy().into_owned(),
            energy: f.energy,
            n_evals: f.n_evals,
            converged: f.converged,
            b: f.b.0.clone(),
            theta: f.theta.to_array(),
        }
    }
}

#[derive(Serialize)]
struct SegmentSummary {
    n_images: usize,
    temporal: bool,
    mean_energy: f64,
    converged: usize,
}

fn segment(run: &Run, a: &SegmentArgs, temporal: bool) -> Result<PathBuf, CliError> {
    let (manifest_default, out_default) = if temporal {
        ("data/seq_00/manifest.csv", "segment-seq")
    } else {
        ("data/test/manifest.csv", "segment")
    };
    let manifest = run.path(&a.manifest, manifest_default);
    let out = run.path(&a.output, out_default);
    let p = &run.cfg.pipeline;
    let (model, forest) = load_models(
        &run.path(&a.shape_model, "shape_model.json"),
        &run.path(&a.forest, "forest.json"),
        p,
    )?;
    let (entries, keys) = formats::read_manifest(&manifest)?;
    if entries.is_empty() {
        return Err(CliError::format("manifest", &manifest, "no images"));
    }
    let images = load_images(&entries)?;
    let segs = if temporal {
        let subs = images
            .par_iter()
            .zip(&entries)
            .map(|(img, e)| prepare_sub_image(img, &e.bbox, p.sub_w, p.sub_h))
            .collect::<Result<Vec<_>, _>>()?;
        let maps = parallel::predict_maps(&forest, &subs)?;
        let boxes: Vec<_> = entries.iter().map(|e| e.bbox).collect();
        pipeline::segment_sequence_maps(maps, &boxes, &model, p)?
    } else {
        images
            .par_iter()
            .zip(&entries)
            .map(|(img, e)| pipeline::segment_image(img, &e.bbox, &forest, &model, p))
            .collect::<Result<Vec<_>, _>>()?
    };
    create_dir(&out.join("prob"))?;
    let mut fits = String::new();
    for (i, (s, e)) in segs.iter().zip(&entries).enumerate() {
        pgm::write(&out.join("prob").join(format!("{i:04}.pgm")), &s.prob_map)?;
        fits.push_str(&serde_json::to_string(&FitRecord::new(&e.image, &s.fit)).expect("record serializes"));
        fits.push('\n');
    }
    let fits_path = out.join("fits.jsonl");
    std::fs::write(&fits_path, fits).map_err(|e| CliError::io(&fits_path, e))?;
    let contours: Vec<LandmarkSet> = segs.iter().map(|s| s.contour.clone()).collect();
    formats::write_landmarks(&out.join("contours.csv"), keys.unwrap_or(KEY_INDICES), &contours)?;
    write_json(
        &out.join("summary.json"),
        &SegmentSummary {
            n_images: segs.len(),
            temporal,
            mean_energy: experiments::mean(&segs.iter().map(|s| s.fit.energy).collect::<Vec<_>>()),
            converged: segs.iter().filter(|s| s.fit.converged).count(),
        },
    )?;
    Ok(out)
}

#[derive(Serialize)]
struct EvalRow {
    image: String,
    jaccard: f64,
    mad_px: f64,
    hd_px: f64,
    endo_area: f64,
    myo_area: f64,
    ref_endo_area: f64,
    ref_myo_area: f64,
}

#[derive(Serialize)]
struct BlandAltmanRow {
    quantity: &'static str,
    image: String,
    mean: f64,
    difference: f64,
}

/// Agreement statistics without the per-case Bland-Altman pairs, which go
/// to their own table.
#[derive(Serialize)]
struct Agreement {
    n: usize,
    corr: f64,
    bias: f64,
    std: f64,
    t_stat: f64,
    p_value: f64,
}

impl From<&SummaryStats> for Agreement {
    fn from(s: &SummaryStats) -> Self {
        Self {
            n: s.n,
            corr: s.corr,
            bias: s.bias,
            std: s.std,
            t_stat: s.t_stat,
            p_value: s.p_value,
        }
    }
}

#[derive(Serialize)]
struct EvalSummary {
    n: usize,
    mean_jaccard: f64,
    mean_mad_px: f64,
    mean_hd_px: f64,
    /// `None` when either area series is constant or too short.
    endo_area: Option<Agreement>,
    myo_area: Option<Agreement>,
}

fn evaluate(_run: &Run, predicted: &Path, manifest: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let (header, contours) = formats::read_landmarks(predicted)?;
    let (entries, _) = formats::read_manifest(manifest)?;
    let truth = annotated(&entries, manifest)?;
    if contours.len() != truth.len() {
        return Err(CliError::format(
            "predicted contours",
            predicted,
            format!("{} contours for {} manifest images", contours.len(), truth.len()),
        ));
    }
    let scores = contours
        .par_iter()
        .zip(&truth)
        .zip(&entries)
        .map(|((c, t), e)| {
            let img = pgm::read(&e.image)?;
            let (w, h) = img.dims();
            Ok(score_keys(c, t, w, h, header.keys)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    create_dir(out)?;
    let names: Vec<String> = entries.iter().map(|e| e.image.to_string_lossy().into_owned()).collect();
    let rows: Vec<EvalRow> = scores
        .iter()
        .zip(&names)
        .map(|(s, n)| EvalRow {
            image: n.clone(),
            jaccard: s.jaccard,
            mad_px: s.mad,
            hd_px: s.hd,
            endo_area: s.endo_area,
            myo_area: s.myo_area,
            ref_endo_area: s.ref_endo_area,
            ref_myo_area: s.ref_myo_area,
        })
        .collect();
    write_csv(&out.join("evaluation.csv"), &rows)?;

    let series =
        |f: fn(&experiments::CaseScore) -> (f64, f64)| -> (Vec<f64>, Vec<f64>) { scores.iter().map(f).unzip() };
    let (endo_p, endo_r) = series(|s| (s.endo_area, s.ref_endo_area));
    let (myo_p, myo_r) = series(|s| (s.myo_area, s.ref_myo_area));
    let endo = metrics::summarize(&endo_p, &endo_r).ok();
    let myo = metrics::summarize(&myo_p, &myo_r).ok();
    let mut ba = Vec::new();
    for (quantity, stats) in [("endo_area", &endo), ("myo_area", &myo)] {
        if let Some(s) = stats {
            for ((mean, difference), n) in s.bland_altman.iter().zip(&names) {
                ba.push(BlandAltmanRow {
                    quantity,
                    image: n.clone(),
                    mean: *mean,
                    difference: *difference,
                });
            }
        }
    }
    write_csv(&out.join("bland_altman.csv"), &ba)?;
    let col = |f: fn(&experiments::CaseScore) -> f64| experiments::mean(&scores.iter().map(f).collect::<Vec<_>>());
    write_json(
        &out.join("summary.json"),
        &EvalSummary {
            n: scores.len(),
            mean_jaccard: col(|s| s.jaccard),
            mean_mad_px: col(|s| s.mad),
            mean_hd_px: col(|s| s.hd),
            endo_area: endo.as_ref().map(Agreement::from),
            myo_area: myo.as_ref().map(Agreement::from),
        },
    )?;
    Ok(out.to_path_buf())
}

fn score_keys(
    contour: &LandmarkSet,
    truth: &LandmarkSet,
    w: usize,
    h: usize,
    keys: [usize; 4],
) -> myoseg_core::Result<experiments::CaseScore> {
    let mut s = experiments::score(contour, truth, w, h)?;
    if keys != KEY_INDICES {
        let a = metrics::areas(contour, keys)?;
        let r = metrics::areas(truth, keys)?;
        s.endo_area = a.endo_area;
        s.myo_area = a.myo_area;
        s.ref_endo_area = r.endo_area;
        s.ref_myo_area = r.myo_area;
    }
    Ok(s)
}

#[derive(Serialize)]
struct DepthSummary {
    rows: usize,
    best_variant: String,
    best_depth: usize,
    best_mean_jaccard: f64,
}

fn depth_study(run: &Run, out: &Path) -> Result<PathBuf, CliError> {
    let c = &run.cfg;
    let variants = c
        .study
        .variants
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<Vec<_>, _>>()?;
    let (train, test) = experiments::corpus(&c.synth, c.corpus.n_train, c.corpus.n_test)?;
    let (p_train, p_test) = (
        experiments::prepare(&train, c.pipeline.sub_w, c.pipeline.sub_h)?,
        experiments::prepare(&test, c.pipeline.sub_w, c.pipeline.sub_h)?,
    );
    let model = experiments::shape_model(&p_train, &c.shape)?;
    let rows = experiments::depth_study(&p_train, &p_test, &model, &c.train, &variants, &c.study.depths)?;
    create_dir(out)?;
    write_csv(&out.join("depth_study.csv"), &rows)?;
    let best = rows.iter().fold(None::<&experiments::DepthRow>, |b, r| match b {
        Some(b) if b.mean_jaccard >= r.mean_jaccard => Some(b),
        _ => Some(r),
    });
    if let Some(b) = best {
        write_json(
            &out.join("summary.json"),
            &DepthSummary {
                rows: rows.len(),
                best_variant: b.variant.into(),
                best_depth: b.depth,
                best_mean_jaccard: b.mean_jaccard,
            },
        )?;
    }
    Ok(out.to_path_buf())
}
