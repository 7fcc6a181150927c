//! End-to-end pipeline: generate data, pretrain, embed, probe, analyze, and
//! emit one consolidated report. Every stage writes its artifact under the
//! output directory; the report JSON contains no timing information, so two
//! runs with the same config and seed produce byte-identical reports.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::analytics::{
    anomaly_scores, class_centers, center_similarity, concentration_gradient, detect_novel,
    mean_similarity_matrix, nearest_class, pairwise_stats, pca2, CenterSet, ClassGradient,
    PairwiseStats, SimilarityMatrix,
};
use crate::config::RunConfig;
use crate::contrastive::{train_ssl, ContrastiveConfig, TrainLog};
use crate::data::{generate_dataset, SyntheticSample};
use crate::embedding::EmbeddingSet;
use crate::encoder::{encode, init_params, EncoderArch, EncoderParams};
use crate::error::{Error, Result};
use crate::io;
use crate::probe::{evaluate, label_fraction_curve, train_probe, Metrics};
use crate::rng::SplitMix64;

/// Seed-stream labels for the pipeline stages.
mod stream {
    pub const TRAIN_SPLIT: u64 = 10;
    pub const VAL_SPLIT: u64 = 11;
    pub const TEST_SPLIT: u64 = 12;
    pub const SSL: u64 = 13;
    pub const PROBE: u64 = 14;
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSummary {
    pub classes: Vec<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SslSummary {
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub loss_trace: Vec<f64>,
    pub lr_trace: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeSummary {
    pub val_accuracy: f64,
    pub test: Metrics,
    /// Same probe protocol on the frozen randomly-initialized encoder.
    pub random_encoder_test_accuracy: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FractionAccuracy {
    pub fraction: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SampleAnalysis {
    pub id: String,
    pub label: Option<String>,
    pub nearest_class: String,
    /// Anomaly score (1 - cosine) to the nearest center.
    pub anomaly_score: f64,
    pub max_similarity: f64,
    pub novel: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AnalysisReport {
    pub novel_threshold: f64,
    pub healthy_label: String,
    /// Mean row-to-center cosine similarities; present when the evaluated
    /// set is fully labeled.
    pub mean_similarity: Option<SimilarityMatrix>,
    pub center_similarity: SimilarityMatrix,
    pub pairwise: PairwiseStats,
    pub samples: Vec<SampleAnalysis>,
    /// Dose-response summaries; present when labels and doses exist.
    pub gradient: Option<Vec<ClassGradient>>,
    pub pca_explained: Option<[f64; 2]>,
}

/// The consolidated pipeline report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Report {
    pub seed: u64,
    pub dataset: DatasetSummary,
    pub ssl: SslSummary,
    pub probe: ProbeSummary,
    pub label_efficiency: Vec<FractionAccuracy>,
    pub analysis: AnalysisReport,
}

/// Flatten dataset images into an encoder batch.
fn batch_of(samples: &[SyntheticSample]) -> Array2<f32> {
    let side = samples[0].image.side();
    let mut batch = Array2::zeros((samples.len(), side * side));
    for (i, s) in samples.iter().enumerate() {
        for (k, v) in s.image.flat().into_iter().enumerate() {
            batch[[i, k]] = v;
        }
    }
    batch
}

/// Backbone representations of a dataset as an embedding set.
pub fn embed_dataset(
    arch: &EncoderArch,
    params: &EncoderParams,
    samples: &[SyntheticSample],
) -> Result<EmbeddingSet> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("cannot embed an empty dataset".into()));
    }
    let reps = encode(arch, params, &batch_of(samples))?;
    EmbeddingSet::new(
        samples.iter().map(|s| s.id.clone()).collect(),
        reps,
        samples.iter().map(|s| Some(s.label.clone())).collect(),
        samples.iter().map(|s| Some(s.concentration)).collect(),
    )
}

/// Build the contrastive config for a run; the schedule spans exactly the
/// number of optimizer steps the run will take.
pub fn contrastive_config(cfg: &RunConfig, n_train: usize, seed: u64) -> ContrastiveConfig {
    let steps_per_epoch = if cfg.ssl.batch_size == 0 {
        0
    } else {
        n_train / cfg.ssl.batch_size
    };
    let total = (cfg.ssl.epochs * steps_per_epoch) as u64;
    ContrastiveConfig {
        temperature: cfg.ssl.temperature,
        batch_size: cfg.ssl.batch_size,
        epochs: cfg.ssl.epochs,
        schedule: cfg.ssl.schedule(total),
        augment: cfg.ssl.augment.clone(),
        momentum: cfg.ssl.momentum,
        weight_decay: cfg.ssl.weight_decay,
        seed,
    }
}

/// Analyze an embedding set against centers; shared by the pipeline and the
/// `analyze` subcommand.
pub fn analyze_embeddings(
    set: &EmbeddingSet,
    centers: &CenterSet,
    novel_threshold: f64,
    healthy_label: &str,
    with_pca: bool,
) -> Result<(AnalysisReport, Option<Array2<f64>>)> {
    let fully_labeled = set.labels.iter().all(|l| l.is_some());
    let mean_similarity = if fully_labeled {
        Some(mean_similarity_matrix(set, centers)?)
    } else {
        None
    };
    let pairwise = pairwise_stats(set)?;
    let novelty = detect_novel(set, centers, novel_threshold)?;
    let mut samples = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let scores = anomaly_scores(set.reps.row(i), centers)?;
        let k = nearest_class(&scores);
        samples.push(SampleAnalysis {
            id: set.ids[i].clone(),
            label: set.labels[i].clone(),
            nearest_class: centers.classes[k].clone(),
            anomaly_score: scores[k],
            max_similarity: novelty.max_similarity[i],
            novel: novelty.novel[i],
        });
    }
    let has_doses = set.concentrations.iter().any(|c| c.is_some());
    let gradient = if fully_labeled && has_doses {
        Some(concentration_gradient(set, healthy_label)?)
    } else {
        None
    };
    let (pca_explained, coords) = if with_pca {
        let p = pca2(set)?;
        (Some(p.explained), Some(p.coords))
    } else {
        (None, None)
    };
    Ok((
        AnalysisReport {
            novel_threshold,
            healthy_label: healthy_label.to_string(),
            mean_similarity,
            center_similarity: center_similarity(centers),
            pairwise,
            samples,
            gradient,
            pca_explained,
        },
        coords,
    ))
}

/// PCA coordinates as a small CSV next to the report.
pub fn write_pca_csv(path: &Path, set: &EmbeddingSet, coords: &Array2<f64>) -> Result<()> {
    let mut out = String::from("id,label,pc1,pc2\n");
    for i in 0..set.len() {
        out.push_str(&format!(
            "{},{},{:.9e},{:.9e}\n",
            set.ids[i],
            set.labels[i].as_deref().unwrap_or(""),
            coords[[i, 0]],
            coords[[i, 1]]
        ));
    }
    io::atomic_write(path, out.as_bytes())
}

pub struct PipelineOutput {
    pub report: Report,
    pub report_path: PathBuf,
}

/// Run the complete pipeline under `out_dir`. `progress` receives one line
/// per stage (pass a no-op when quiet).
pub fn run_pipeline(
    cfg: &RunConfig,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<PipelineOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let root = SplitMix64::new(cfg.seed);
    let split_seed = |tag: u64| root.child(&[tag]).next_u64();

    // Stage 1: synthesize the three splits and stage them on disk; training
    // consumes the quantized on-disk images, exactly like the split CLI path.
    progress("generating synthetic datasets");
    let train_cfg = cfg.data.synthetic(cfg.data.n_per_class);
    let val_cfg = cfg.data.synthetic(cfg.data.n_val_per_class);
    let test_cfg = cfg.data.synthetic(cfg.data.n_test_per_class);
    let splits = [
        ("train", &train_cfg, split_seed(stream::TRAIN_SPLIT)),
        ("val", &val_cfg, split_seed(stream::VAL_SPLIT)),
        ("test", &test_cfg, split_seed(stream::TEST_SPLIT)),
    ];
    let mut datasets = Vec::new();
    for (name, synth_cfg, seed) in splits {
        let samples = generate_dataset(synth_cfg, seed)?;
        let dir = out_dir.join("data").join(name);
        io::write_dataset(&dir, &samples)?;
        datasets.push(io::read_dataset(&dir)?);
    }
    let test = datasets.pop().expect("three splits");
    let val = datasets.pop().expect("three splits");
    let train = datasets.pop().expect("three splits");

    // Stage 2: self-supervised pretraining.
    progress("pretraining encoder");
    let arch = cfg.arch.arch_for(cfg.data.image_size);
    let ssl_seed = split_seed(stream::SSL);
    let contrastive = contrastive_config(cfg, train.len(), ssl_seed);
    let images: Vec<_> = train.iter().map(|s| s.image.clone()).collect();
    let (params, log) = train_ssl(&arch, &contrastive, &images)?;
    let ckpt_path = out_dir.join("encoder.ckpt");
    io::save_encoder_checkpoint(
        &ckpt_path,
        &arch,
        &contrastive.schedule,
        contrastive.schedule.total_steps,
        ssl_seed,
        &params,
    )?;
    write_train_log(&out_dir.join("encoder.trainlog.json"), &log)?;

    // Stage 3: embeddings for every split, from the trained and the frozen
    // randomly-initialized encoder.
    progress("embedding splits");
    let emb_train = embed_dataset(&arch, &params, &train)?;
    let emb_val = embed_dataset(&arch, &params, &val)?;
    let emb_test = embed_dataset(&arch, &params, &test)?;
    let emb_dir = out_dir.join("embeddings");
    io::write_embeddings(&emb_train, &emb_dir.join("train.csv"))?;
    io::write_embeddings(&emb_val, &emb_dir.join("val.csv"))?;
    io::write_embeddings(&emb_test, &emb_dir.join("test.csv"))?;

    let random_params = init_params(&arch, ssl_seed)?;
    let rnd_train = embed_dataset(&arch, &random_params, &train)?;
    let rnd_val = embed_dataset(&arch, &random_params, &val)?;
    let rnd_test = embed_dataset(&arch, &random_params, &test)?;

    // Stage 4: linear probes on frozen representations.
    progress("training linear probes");
    let probe_seed = split_seed(stream::PROBE);
    let probe_cfg = crate::probe::ProbeConfig {
        seed: probe_seed,
        ..cfg.probe.clone()
    };
    let (probe, val_accuracy) = train_probe(&emb_train, &emb_val, &probe_cfg)?;
    io::save_probe_checkpoint(&out_dir.join("probe.ckpt"), &probe, probe_seed)?;
    let test_metrics = evaluate(&probe, &emb_test)?;
    let (random_probe, _) = train_probe(&rnd_train, &rnd_val, &probe_cfg)?;
    let random_acc = evaluate(&random_probe, &rnd_test)?.accuracy;

    // Stage 5: label efficiency.
    progress("label-efficiency sweep");
    let label_efficiency: Vec<FractionAccuracy> = label_fraction_curve(
        &emb_train,
        &emb_val,
        &emb_test,
        &cfg.analysis.label_fractions,
        &probe_cfg,
    )?
    .into_iter()
    .map(|(fraction, test_accuracy)| FractionAccuracy {
        fraction,
        test_accuracy,
    })
    .collect();

    // Stage 6: latent-space analytics with train-derived centers, evaluated
    // on the test split.
    progress("latent-space analysis");
    let centers = class_centers(&emb_train)?;
    let (analysis, coords) = analyze_embeddings(
        &emb_test,
        &centers,
        cfg.analysis.novel_threshold,
        &cfg.analysis.healthy_label,
        true,
    )?;
    if let Some(coords) = &coords {
        write_pca_csv(&out_dir.join("pca.csv"), &emb_test, coords)?;
    }

    let report = Report {
        seed: cfg.seed,
        dataset: DatasetSummary {
            classes: cfg.data.class_names.clone(),
            n_train: train.len(),
            n_val: val.len(),
            n_test: test.len(),
            image_size: cfg.data.image_size,
        },
        ssl: SslSummary {
            epochs: cfg.ssl.epochs,
            batch_size: cfg.ssl.batch_size,
            temperature: cfg.ssl.temperature,
            first_epoch_loss: log.epoch_loss.first().copied().unwrap_or(0.0),
            final_epoch_loss: log.epoch_loss.last().copied().unwrap_or(0.0),
            loss_trace: log.epoch_loss.clone(),
            lr_trace: log.epoch_lr.clone(),
        },
        probe: ProbeSummary {
            val_accuracy,
            test: test_metrics,
            random_encoder_test_accuracy: random_acc,
        },
        label_efficiency,
        analysis,
    };
    let report_path = out_dir.join("report.json");
    write_report(&report_path, &report)?;
    progress("done");
    Ok(PipelineOutput {
        report,
        report_path,
    })
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)
        .map_err(|e| Error::format(format!("report serialization: {e}")))?;
    bytes.push(b'\n');
    io::atomic_write(path, &bytes)
}

/// The train log keeps wall-clock timings and is therefore not part of the
/// deterministic report.
pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(log)
        .map_err(|e| Error::format(format!("train log serialization: {e}")))?;
    bytes.push(b'\n');
    io::atomic_write(path, &bytes)
}
