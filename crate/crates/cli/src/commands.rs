//! One function per subcommand. `run_all` calls the same functions in
//! order, so a full run and a manual sequence produce the same files.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use eigencl::analysis::{detection, pca, staging, transfer};
use eigencl::clustering::{self, ClusterModel, ValidityReport};
use eigencl::data::{self, Dataset};
use eigencl::encoder::Encoder;
use eigencl::pipeline::{self, KChoice, Staging};
use eigencl::trainer::{self, GridSpec};
use eigencl::{util, Error};
use serde::Serialize;

use crate::artifacts::{self as art, json_bytes, read_json};
use crate::config::RunConfig;
use crate::manifest::{Manifest, Step};

pub struct Ctx {
    pub cfg: RunConfig,
    pub force: bool,
}

impl Ctx {
    fn step(&self, command: &'static str, cfg: &RunConfig) -> anyhow::Result<Step<'_>> {
        std::fs::create_dir_all(&self.cfg.out).map_err(|e| Error::io(&self.cfg.out, e))?;
        Ok(Step::new(
            command,
            &self.cfg.out,
            self.force,
            cfg.seed,
            serde_json::to_value(cfg)?,
        ))
    }

    fn dataset(&self, step: &mut Step) -> anyhow::Result<Dataset> {
        let path = match &self.cfg.dataset {
            Some(p) => step.external(p)?,
            None => step.artifact("dataset.csv")?,
        };
        data::load_dataset(&path).with_context(|| format!("loading dataset {}", path.display()))
    }
}

pub fn synth(ctx: &Ctx, n: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = ctx.cfg.clone();
    let Some(s) = cfg.synth.as_mut() else {
        bail!(Error::Config(
            "the config names a dataset file; there is nothing to synthesize".into()
        ));
    };
    if let Some(n) = n {
        s.n_patches = n;
    }
    s.validate()?;
    let ds = data::synthesize(s)?;
    let mut step = ctx.step("synth", &cfg)?;
    step.write("dataset.csv", &data::dataset_csv(&ds)?)?;
    step.finish()?;
    println!(
        "synth: {} patches over {} dates -> {}",
        ds.len(),
        ds.n_dates(),
        ctx.cfg.out.join("dataset.csv").display()
    );
    Ok(())
}

pub fn eigen(ctx: &Ctx) -> anyhow::Result<()> {
    let mut step = ctx.step("eigen", &ctx.cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let p = ctx.cfg.pipeline(ds.n_dates());
    let s = pipeline::spectral_step(&ds, &p)?;
    step.write("weights.csv", &art::weights_csv(&ds, &s.weights)?)?;
    step.write(
        "spectrum.csv",
        &art::spectrum_csv(&s.basis.eigenvalues, &s.explained)?,
    )?;
    step.finish()?;
    println!(
        "eigen: principal explained ratio {:.4}, weight-NDRE Pearson r {:.4} (gamma {:.4})",
        s.explained[0], s.correlation, s.gamma
    );
    Ok(())
}

pub fn train(ctx: &Ctx) -> anyhow::Result<()> {
    let mut step = ctx.step("train", &ctx.cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let w = art::read_weights(&step.artifact("weights.csv")?, &ds)?;
    let p = ctx.cfg.pipeline(ds.n_dates());
    let (enc, hist) = trainer::train(&ds, &w, &p.encoder, &p.train)?;
    step.write("model.json", enc.to_json()?.as_bytes())?;
    step.write("history.csv", &art::history_csv(&hist)?)?;
    step.finish()?;
    println!(
        "train: {} epochs, final mean loss {:.6}",
        hist.epochs.len(),
        hist.final_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn embed(ctx: &Ctx) -> anyhow::Result<()> {
    let mut step = ctx.step("embed", &ctx.cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let enc = Encoder::load(step.artifact("model.json")?)?;
    let b = trainer::embed_dataset(&enc, &ds)?;
    step.write("embeddings.csv", &art::embeddings_csv(&b.patch_ids, &b.z)?)?;
    step.finish()?;
    println!("embed: {} x {} embeddings", b.z.nrows(), b.z.ncols());
    Ok(())
}

pub fn cluster(ctx: &Ctx, k: Option<KChoice>) -> anyhow::Result<()> {
    let mut cfg = ctx.cfg.clone();
    if let Some(k) = k {
        cfg.clustering.k = k;
    }
    let mut step = ctx.step("cluster", &cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let z = art::read_embeddings(&step.artifact("embeddings.csv")?, &ds)?;
    let (model, elbow) = pipeline::cluster_step(&z, &cfg.clustering, cfg.seed)?;
    let v = clustering::validity(&z, &model.labels)?;
    step.write(
        "clusters.csv",
        &art::labels_csv(&ds.patch_ids(), &model.labels)?,
    )?;
    step.write("cluster_model.json", &json_bytes(&model)?)?;
    step.write("validity.json", &json_bytes(&v)?)?;
    match &elbow {
        Some(e) => step.write("elbow.csv", &art::elbow_csv(&e.inertias)?)?,
        None => remove_stale(&ctx.cfg.out.join("elbow.csv"))?,
    }
    step.finish()?;
    if let Some(e) = &elbow {
        let note = if e.low_confidence {
            " (low confidence)"
        } else {
            ""
        };
        println!("cluster: elbow selected k = {}{note}", e.k);
    }
    println!(
        "cluster: k = {}, silhouette {:.4}, Davies-Bouldin {:.4}, Calinski-Harabasz {:.1}",
        model.k, v.silhouette, v.davies_bouldin, v.calinski_harabasz
    );
    Ok(())
}

fn remove_stale(path: &Path) -> anyhow::Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e).into()),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct StageStats<'a> {
    #[serde(flatten)]
    anova: &'a eigencl::analysis::stats::StatReport,
    ari_cluster_vs_stage: clustering::AriInterval,
}

pub fn stage(ctx: &Ctx) -> anyhow::Result<()> {
    let mut step = ctx.step("stage", &ctx.cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let model: ClusterModel = read_json(&step.artifact("cluster_model.json")?)?;
    let labels = checked_labels(&model, &ds)?;
    let p = ctx.cfg.pipeline(ds.n_dates());
    let st = pipeline::staging_step(&ds, labels, model.k, p.staging)?;
    let stages = detection::patch_stages(&ds, &st.thresholds);
    let profiles = staging::cluster_profiles(&ds, labels)?;
    let stats = pipeline::stats_step(&ds, labels, model.k, &p.stats, p.seed)?;
    let ari = pipeline::ari_step(labels, &stages, p.bootstrap_resamples, p.seed)?;
    step.write("stages.csv", &art::stages_csv(&ds, labels, &stages)?)?;
    step.write("thresholds.json", &json_bytes(&st)?)?;
    step.write("profiles.csv", &art::profiles_csv(&ds, &profiles)?)?;
    step.write(
        "stats.json",
        &json_bytes(&StageStats {
            anova: &stats,
            ari_cluster_vs_stage: ari,
        })?,
    )?;
    step.finish()?;
    let cuts = st.thresholds.cuts();
    println!(
        "stage: cuts {:.4} / {:.4} / {:.4} ({:?})",
        cuts[0], cuts[1], cuts[2], st.mode
    );
    let worst_p = stats.pairwise.iter().map(|r| r.p).fold(0.0, f64::max);
    println!(
        "stage: ANOVA F {:.2}, p {:.3e}; largest Tukey p {:.3e}; ARI vs NDRE stages {:.4} [{:.4}, {:.4}]",
        stats.anova_f, stats.anova_p, worst_p, ari.ari, ari.lo, ari.hi
    );
    Ok(())
}

fn checked_labels<'m>(model: &'m ClusterModel, ds: &Dataset) -> anyhow::Result<&'m [usize]> {
    if model.labels.len() != ds.len() {
        bail!(Error::Contract(format!(
            "cluster model has {} labels for {} patches",
            model.labels.len(),
            ds.len()
        )));
    }
    Ok(&model.labels)
}

pub fn detect(ctx: &Ctx) -> anyhow::Result<()> {
    let mut step = ctx.step("detect", &ctx.cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let enc = Encoder::load(step.artifact("model.json")?)?;
    let model: ClusterModel = read_json(&step.artifact("cluster_model.json")?)?;
    let st: Staging = read_json(&step.artifact("thresholds.json")?)?;
    let labels = checked_labels(&model, &ds)?;
    let r = detection::run_detection(
        &enc,
        &model,
        labels,
        &st.cluster_mean_ndre,
        &st.thresholds,
        &ds,
        ctx.cfg.crossing_threshold,
    )?;
    step.write("detection.csv", &art::detection_csv(&r.rows)?)?;
    step.write("lead_time.json", &json_bytes(&r.summary)?)?;
    step.write("lead_histogram.csv", &art::histogram_csv(&r.histogram)?)?;
    step.finish()?;
    let s = &r.summary;
    if s.no_stress_events {
        println!(
            "detect: no patch crosses NDRE {}; lead time undefined",
            s.threshold
        );
    } else {
        println!(
            "detect: {} of {} crossing patches flagged early (fraction {:.3}); mean lead {:.2} d, max {:.2} d",
            s.n_early,
            s.n_crossing,
            s.fraction_early.unwrap_or(f64::NAN),
            s.mean_lead_days.unwrap_or(f64::NAN),
            s.max_lead_days.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

pub fn classify(ctx: &Ctx) -> anyhow::Result<()> {
    let mut step = ctx.step("classify", &ctx.cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let z = art::read_embeddings(&step.artifact("embeddings.csv")?, &ds)?;
    let stages = art::read_stages(&step.artifact("stages.csv")?, &ds)?;
    let p = ctx.cfg.pipeline(ds.n_dates());
    let r = pipeline::classify_step(&z, &stages, &p.classify, p.seed)?;
    step.write("classification.json", &json_bytes(&r)?)?;
    step.finish()?;
    println!(
        "classify: k-NN (k = {}) accuracy {:.4}, macro-F1 {:.4}; logistic regression accuracy {:.4}, macro-F1 {:.4}",
        r.k_neighbors, r.knn.accuracy, r.knn.macro_f1, r.logreg.accuracy, r.logreg.macro_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct InDomain {
    silhouette: Option<f64>,
    mean_lead_days: Option<f64>,
    silhouette_retention: Option<f64>,
    lead_ratio: Option<f64>,
}

#[derive(Serialize)]
struct TransferFile<'a> {
    #[serde(flatten)]
    report: &'a transfer::TransferReport,
    in_domain: InDomain,
}

pub fn transfer(ctx: &Ctx, dataset: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = ctx.cfg.clone();
    if let Some(p) = dataset {
        cfg.transfer.dataset = Some(p.to_path_buf());
        cfg.transfer.synth = None;
    }
    let mut step = ctx.step("transfer", &cfg)?;
    let enc = Encoder::load(step.artifact("model.json")?)?;
    let model: ClusterModel = read_json(&step.artifact("cluster_model.json")?)?;
    let st: Staging = read_json(&step.artifact("thresholds.json")?)?;
    let shifted = match cfg.transfer_synth()? {
        Some(s) => {
            let ds = data::synthesize(&s)?;
            step.write("transfer_dataset.csv", &data::dataset_csv(&ds)?)?;
            ds
        }
        None => {
            let p = step.external(
                cfg.transfer
                    .dataset
                    .as_deref()
                    .expect("checked by transfer_synth"),
            )?;
            data::load_dataset(&p)
                .with_context(|| format!("loading transfer dataset {}", p.display()))?
        }
    };
    let frozen = transfer::FrozenModel {
        encoder: &enc,
        clusters: &model,
        thresholds: st.thresholds,
        cluster_mean_ndre: &st.cluster_mean_ndre,
    };
    let out = transfer::transfer_evaluate(&frozen, &shifted, cfg.crossing_threshold)?;

    let sil = match step.optional_artifact("validity.json")? {
        Some(p) => Some(read_json::<ValidityReport>(&p)?.silhouette),
        None => None,
    };
    let lead = match step.optional_artifact("lead_time.json")? {
        Some(p) => read_json::<detection::LeadTimeSummary>(&p)?.mean_lead_days,
        None => None,
    };
    let r = &out.report;
    let in_domain = InDomain {
        silhouette: sil,
        mean_lead_days: lead,
        silhouette_retention: sil.map(|s| r.silhouette / s),
        lead_ratio: lead.zip(r.lead.mean_lead_days).map(|(a, b)| b / a),
    };
    step.write(
        "transfer_detection.csv",
        &art::detection_csv(&out.detection.rows)?,
    )?;
    step.write(
        "transfer.json",
        &json_bytes(&TransferFile {
            report: r,
            in_domain,
        })?,
    )?;
    step.finish()?;
    println!(
        "transfer: {} patches, silhouette {:.4}, stage agreement {:.4}, mean lead {:.2} d; frozen model unchanged",
        r.n_patches,
        r.silhouette,
        r.stage_agreement,
        r.lead.mean_lead_days.unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn gridsearch(ctx: &Ctx, small: bool) -> anyhow::Result<()> {
    let mut cfg = ctx.cfg.clone();
    if small {
        cfg.grid = GridSpec {
            metric: cfg.grid.metric,
            ..GridSpec::small()
        };
    }
    let mut step = ctx.step("gridsearch", &cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let w = art::read_weights(&step.artifact("weights.csv")?, &ds)?;
    let p = cfg.pipeline(ds.n_dates());
    let base = trainer::TrainConfig {
        epochs: cfg.grid_epochs,
        ..p.train
    };
    let g = trainer::grid_search(&ds, &w, &cfg.grid, &p.encoder, &base)?;
    step.write("grid.csv", &art::grid_csv(&g)?)?;
    step.write("grid.json", &json_bytes(&g)?)?;
    step.finish()?;
    let failed = g.cells.iter().filter(|c| c.error.is_some()).count();
    let best = &g.cells[g.ranking[0]];
    println!(
        "gridsearch: {} cells ({failed} failed); best by {:?}: lambda {}, tau {}, sigma {}, margin {} (silhouette {:.4})",
        g.cells.len(),
        g.metric,
        best.hyper.lambda,
        best.hyper.tau,
        best.hyper.sigma,
        best.hyper.margin,
        best.silhouette.unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct SpectralBrief {
    principal_explained_ratio: f64,
    weight_ndre_pearson: f64,
}

#[derive(Serialize)]
struct Report {
    n_patches: usize,
    n_dates: usize,
    k: usize,
    projection_method: String,
    projection_explained_ratio: [f64; 2],
    validity: ValidityReport,
    /// Against the generator's stages, when the dataset carries them.
    ari_vs_truth: Option<f64>,
    spectral: Option<SpectralBrief>,
    /// Summaries of whichever downstream steps have run.
    sections: BTreeMap<String, serde_json::Value>,
}

pub fn report(ctx: &Ctx) -> anyhow::Result<()> {
    let mut step = ctx.step("report", &ctx.cfg)?;
    let ds = ctx.dataset(&mut step)?;
    let z = art::read_embeddings(&step.artifact("embeddings.csv")?, &ds)?;
    let model: ClusterModel = read_json(&step.artifact("cluster_model.json")?)?;
    let labels = checked_labels(&model, &ds)?;
    let proj = pca::pca_2d(&z)?;
    let ari_vs_truth = match ds.truth() {
        Some(t) => {
            let truth: Vec<usize> = t.iter().map(|t| t.stage.index()).collect();
            Some(clustering::adjusted_rand_index(labels, &truth)?)
        }
        None => None,
    };
    let spectral = match (
        step.optional_artifact("spectrum.csv")?,
        step.optional_artifact("weights.csv")?,
    ) {
        (Some(sp), Some(wp)) => {
            let w = art::read_weights(&wp, &ds)?;
            Some(SpectralBrief {
                principal_explained_ratio: art::read_principal_ratio(&sp)?,
                weight_ndre_pearson: util::pearson(&w.w, &ds.mean_ndre())?,
            })
        }
        _ => None,
    };
    let mut sections = BTreeMap::new();
    for name in [
        "stats.json",
        "lead_time.json",
        "classification.json",
        "transfer.json",
    ] {
        if let Some(p) = step.optional_artifact(name)? {
            let v: serde_json::Value = read_json(&p)?;
            sections.insert(name.trim_end_matches(".json").to_string(), v);
        }
    }
    let r = Report {
        n_patches: ds.len(),
        n_dates: ds.n_dates(),
        k: model.k,
        projection_method: proj.method.clone(),
        projection_explained_ratio: proj.explained_ratio,
        validity: clustering::validity(&z, labels)?,
        ari_vs_truth,
        spectral,
        sections,
    };
    step.write(
        "projection.csv",
        &art::projection_csv(&ds, &proj.coords, labels)?,
    )?;
    step.write("report.json", &json_bytes(&r)?)?;
    step.finish()?;
    println!(
        "report: PCA projection explains {:.3} + {:.3} of embedding variance",
        proj.explained_ratio[0], proj.explained_ratio[1]
    );
    if let Some(a) = ari_vs_truth {
        println!("report: ARI of clusters against generator stages {a:.4}");
    }
    Ok(())
}

/// Every command except `gridsearch`, in dependency order.
pub fn run_all(ctx: &Ctx) -> anyhow::Result<()> {
    if ctx.cfg.synth.is_some() {
        synth(ctx, None)?;
    }
    eigen(ctx)?;
    train(ctx)?;
    embed(ctx)?;
    cluster(ctx, None)?;
    stage(ctx)?;
    detect(ctx)?;
    classify(ctx)?;
    if ctx.cfg.dataset.is_some() && ctx.cfg.transfer == Default::default() {
        log::warn!("no transfer corpus configured; skipping transfer");
    } else {
        transfer(ctx, None)?;
    }
    report(ctx)?;

    // The run-all manifest lists every data file the chain produced.
    let mut step = ctx.step("run-all", &ctx.cfg)?;
    if let Some(p) = &ctx.cfg.dataset {
        step.external(p)?;
    }
    for cmd in [
        "synth", "eigen", "train", "embed", "cluster", "stage", "detect", "classify", "transfer",
        "report",
    ] {
        let path = Manifest::path(&ctx.cfg.out, cmd);
        if path.exists() {
            for (name, hash) in Manifest::load(&path)?.outputs {
                step.record_output(&name, hash);
            }
        }
    }
    step.finish()?;
    Ok(())
}
