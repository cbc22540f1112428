//! End-to-end stages shared by the command line and the HTTP API: embedding,
//! training, generation, evaluation, simulation and the work-directory report.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{
    DesignDataset, DesignParams, DesignRecord, Mode, ModeCounts, ParameterBounds, Provenance,
};
use crate::embedding::{self, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::geometry;
use crate::gmm::{self, FitConfig, FitReport, GmmModel, ModelSpace};
use crate::kinematics::{self, KinematicsConfig, ModeClassification, Trajectory};
use crate::matrix::FeatureMatrix;
use crate::metrics::{self, DistanceSpace, DiversityReport, NoveltyReport};
use crate::preprocess::{self, FeatureSchema};
use crate::util;
use crate::workdir::{self, EmbeddingRow, EmbeddingSidecar, GeneratedFile, Workdir};

/// Neighbours averaged when decoding an embedding-space point.
pub const DEFAULT_DECODE_K: usize = 5;

/// Seeded subset of `0..n` of size `min(k, n)`, in ascending order.
fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Largest usable perplexity for `n` points, capped at `wanted`.
fn usable_perplexity(n: usize, wanted: f64) -> Result<f64> {
    let limit = (n as f64 - 1.0) / 3.0;
    if n < 10 || limit <= 1.0 {
        return Err(Error::Data(format!("{n} rows are too few to embed")));
    }
    Ok(if wanted < limit { wanted } else { (limit - 1e-6).floor().max(1.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub tsne: EmbeddingConfig,
    /// Embed a seeded subsample of at most this many rows.
    pub sample: Option<usize>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            tsne: EmbeddingConfig::default(),
            sample: None,
        }
    }
}

/// t-SNE of the encoded dataset (or a seeded subsample of it).
pub fn embed_dataset(
    data: &DesignDataset,
    cfg: &EmbedConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(Vec<EmbeddingRow>, EmbeddingSidecar)> {
    let schema = preprocess::fit_schema(data)?;
    let ids = sample_indices(data.len(), cfg.sample.unwrap_or(usize::MAX), cfg.tsne.seed);
    let designs: Vec<&DesignParams> = ids.iter().map(|&i| &data.rows[i].params).collect();
    let x = preprocess::encode_all(designs.iter().copied(), &schema)?;
    let emb = embedding::tsne_embed_with_progress(&x, &cfg.tsne, &mut progress)?;
    let rows = ids
        .iter()
        .enumerate()
        .map(|(k, &i)| EmbeddingRow {
            row_id: i,
            dim1: emb.coords.get(k, 0),
            dim2: emb.coords.get(k, 1),
            mode_label: data.rows[i].params.mode,
        })
        .collect();
    let sidecar = EmbeddingSidecar {
        config: emb.config,
        kl_divergence: emb.kl_divergence,
        kl_trace: emb.kl_trace,
        calibration_warnings: emb.calibration_warnings,
        source_rows: data.len(),
        embedded_rows: ids.len(),
        data_sha256: dataset_digest(data)?,
    };
    Ok((rows, sidecar))
}

fn dataset_digest(data: &DesignDataset) -> Result<String> {
    Ok(util::sha256_hex(&crate::design_space::designs_to_csv(&data.rows, None)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub fit: FitConfig,
    pub seed: u64,
    pub space: ModelSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 3,
            fit: FitConfig::default(),
            seed: 0,
            space: ModelSpace::Feature,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: GmmModel,
    pub report: FitReport,
    pub schema: FeatureSchema,
}

/// Fits the mixture on encoded features, or on embedding coordinates when
/// `cfg.space` is [`ModelSpace::Embedding`] (then `embedding` is required).
pub fn train(data: &DesignDataset, cfg: &TrainConfig, embedding: Option<&[EmbeddingRow]>) -> Result<Trained> {
    let schema = preprocess::fit_schema(data)?;
    let x = match cfg.space {
        ModelSpace::Feature => preprocess::encode_all(data.params(), &schema)?,
        ModelSpace::Embedding => {
            let rows = embedding.ok_or_else(|| {
                Error::Config("embedding-space training needs an embedding file".into())
            })?;
            check_embedding_rows(rows, data.len())?;
            workdir::embedding_coords(rows)
        }
    };
    let (model, report) = gmm::fit(&x, cfg.k, &cfg.fit, cfg.seed)?;
    let model = model
        .with_space(cfg.space)
        .with_schema_fingerprint(schema.fingerprint());
    Ok(Trained {
        model,
        report,
        schema,
    })
}

fn check_embedding_rows(rows: &[EmbeddingRow], n: usize) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Data("embedding file has no rows".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.row_id >= n) {
        return Err(Error::Data(format!(
            "embedding row_id {} does not exist in a dataset of {n} rows",
            r.row_id
        )));
    }
    Ok(())
}

/// What an embedding-space sample is decoded against: embedded coordinates
/// and the encoded features of the rows they embed.
#[derive(Debug, Clone)]
pub struct DecodeSource {
    pub coords: FeatureMatrix,
    pub features: FeatureMatrix,
    pub row_ids: Vec<usize>,
    pub k: usize,
}

impl DecodeSource {
    pub fn new(data: &DesignDataset, schema: &FeatureSchema, rows: &[EmbeddingRow], k: usize) -> Result<Self> {
        check_embedding_rows(rows, data.len())?;
        let row_ids: Vec<usize> = rows.iter().map(|r| r.row_id).collect();
        let features = preprocess::encode_all(row_ids.iter().map(|&i| &data.rows[i].params), schema)?;
        Ok(DecodeSource {
            coords: workdir::embedding_coords(rows),
            features,
            row_ids,
            k,
        })
    }

    /// Inverse-decodes an embedding point to a feature vector and the
    /// `(dataset id, embedding distance)` of the neighbours used.
    pub fn decode_point(&self, point: &[f64], k: usize) -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
        let d = embedding::inverse_decode(&self.coords, &self.features, point, k)?;
        let ids = d.neighbors.iter().map(|&(i, dist)| (self.row_ids[i], dist)).collect();
        Ok((d.vector, ids))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDesign {
    pub params: DesignParams,
    pub repair_distance: f64,
    /// Mixture component the sample was drawn from.
    pub component: usize,
    /// The raw sample (feature vector or embedding point).
    pub latent: Vec<f64>,
    /// Dataset rows averaged by the inverse decoder (embedding space only).
    pub neighbors: Vec<usize>,
}

/// Samples `n` designs from the model and decodes them into valid designs.
pub fn generate(
    model: &GmmModel,
    schema: &FeatureSchema,
    bounds: &ParameterBounds,
    n: usize,
    seed: u64,
    source: Option<&DecodeSource>,
) -> Result<Vec<GeneratedDesign>> {
    if let Some(fp) = model.schema_fingerprint() {
        if fp != schema.fingerprint() {
            return Err(Error::Data(
                "model was trained with a different feature schema".into(),
            ));
        }
    }
    let (samples, labels) = model.sample(n, seed)?;
    samples
        .rows()
        .zip(labels)
        .map(|(z, component)| {
            let (vector, neighbors) = match model.space() {
                ModelSpace::Feature => (z.to_vec(), Vec::new()),
                ModelSpace::Embedding => {
                    let src = source.ok_or_else(|| {
                        Error::Config("embedding-space model needs the embedding and dataset to decode".into())
                    })?;
                    let (v, nb) = src.decode_point(z, src.k)?;
                    (v, nb.into_iter().map(|(id, _)| id).collect())
                }
            };
            let decoded = preprocess::decode(&vector, schema, bounds)?;
            Ok(GeneratedDesign {
                params: decoded.params,
                repair_distance: decoded.repair_distance,
                component,
                latent: z.to_vec(),
                neighbors,
            })
        })
        .collect()
}

pub fn generated_file(designs: &[GeneratedDesign]) -> GeneratedFile {
    GeneratedFile {
        rows: designs
            .iter()
            .map(|d| DesignRecord {
                params: d.params,
                provenance: Provenance::Generated,
            })
            .collect(),
        repair_distance: designs.iter().map(|d| d.repair_distance).collect(),
    }
}

/// Mode counts of generated designs.
pub fn generated_counts(designs: &[GeneratedDesign]) -> ModeCounts {
    ModeCounts::from_designs(designs.iter().map(|d| &d.params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateConfig {
    /// Rows drawn from each set for the joint hull embedding.
    pub hull_sample: usize,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            hull_sample: 50,
            perplexity: 30.0,
            tsne_iterations: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullPoint {
    pub set: String,
    /// Row index within its own file.
    pub row: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetCounts {
    pub training: ModeCounts,
    pub generated: ModeCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_training: usize,
    pub n_generated: usize,
    /// Nearest-training distances in standardized encoded space.
    pub novelty: NoveltyReport,
    /// Nearest-training distances within the joint hull embedding.
    pub novelty_embedding: NoveltyReport,
    pub diversity: DiversityReport,
    /// Embedded points behind the hulls, for overlay plots.
    pub hull_points: Vec<HullPoint>,
    pub perplexity_used: f64,
    pub mode_counts: SetCounts,
    /// Generated designs that pass every geometric feasibility check.
    pub generated_feasible: usize,
    pub config: EvaluateConfig,
}

/// Novelty of the generated set against the training set, and diversity of
/// seeded subsamples of both, embedded jointly with t-SNE.
pub fn evaluate(
    training: &DesignDataset,
    generated: &[DesignRecord],
    cfg: &EvaluateConfig,
) -> Result<MetricsReport> {
    if generated.is_empty() {
        return Err(Error::Data("no generated designs to evaluate".into()));
    }
    let schema = preprocess::fit_schema(training)?;
    let x_train = preprocess::encode_all(training.params(), &schema)?;
    let x_gen = preprocess::encode_all(generated.iter().map(|r| &r.params), &schema)?;
    let novelty = metrics::novelty(&x_gen, &x_train, DistanceSpace::Encoded)?;

    let train_ids = sample_indices(training.len(), cfg.hull_sample, cfg.seed);
    let gen_ids = sample_indices(generated.len(), cfg.hull_sample, cfg.seed.wrapping_add(1));
    let joint = x_train.select_rows(&train_ids).vstack(&x_gen.select_rows(&gen_ids))?;
    let perplexity_used = usable_perplexity(joint.nrows(), cfg.perplexity)?;
    let tsne = EmbeddingConfig {
        perplexity: perplexity_used,
        iterations: cfg.tsne_iterations,
        seed: cfg.seed,
        ..EmbeddingConfig::default()
    };
    let emb = embedding::tsne_embed(&joint, &tsne)?;
    let nt = train_ids.len();
    let point = |k: usize| [emb.coords.get(k, 0), emb.coords.get(k, 1)];
    let train_pts: Vec<[f64; 2]> = (0..nt).map(point).collect();
    let gen_pts: Vec<[f64; 2]> = (nt..joint.nrows()).map(point).collect();
    let diversity = metrics::diversity_report(&gen_pts, &train_pts);
    let novelty_embedding = metrics::novelty(
        &FeatureMatrix::from_rows(&gen_pts)?,
        &FeatureMatrix::from_rows(&train_pts)?,
        DistanceSpace::Embedding,
    )?;
    let hull_points = train_ids
        .iter()
        .zip(&train_pts)
        .map(|(&row, p)| ("training", row, p))
        .chain(gen_ids.iter().zip(&gen_pts).map(|(&row, p)| ("generated", row, p)))
        .map(|(set, row, p)| HullPoint {
            set: set.into(),
            row,
            x: p[0],
            y: p[1],
        })
        .collect();

    let generated_feasible = generated
        .iter()
        .filter(|r| geometry::geometric_feasibility(&r.params, &training.bounds).is_feasible())
        .count();
    Ok(MetricsReport {
        n_training: training.len(),
        n_generated: generated.len(),
        novelty,
        novelty_embedding,
        diversity,
        hull_points,
        perplexity_used,
        mode_counts: SetCounts {
            training: training.mode_counts(),
            generated: ModeCounts::from_designs(generated.iter().map(|r| &r.params)),
        },
        generated_feasible,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureResult {
    pub pressure: f64,
    pub tip: [f64; 3],
    pub classification: ModeClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub design: DesignParams,
    pub sweep: Vec<PressureResult>,
    /// Classification at the configured classification pressure.
    pub classification: ModeClassification,
    /// Whether the classification agrees with the design's own mode.
    pub agrees_with_mode: bool,
    pub config: KinematicsConfig,
}

/// Trajectory sweep over the configured pressures plus mode classification.
pub fn simulate(
    p: &DesignParams,
    bounds: &ParameterBounds,
    cfg: &KinematicsConfig,
) -> Result<(Vec<Trajectory>, SimulationSummary)> {
    let sweep = kinematics::trajectory_sweep(p, bounds, cfg)?;
    let at = kinematics::backbone_trajectory(p, cfg.classification_pressure, bounds, cfg)?;
    let classification = kinematics::classify_mode(&at);
    let summary = SimulationSummary {
        design: *p,
        sweep: sweep
            .iter()
            .map(|t| PressureResult {
                pressure: t.pressure,
                tip: t.tip(),
                classification: kinematics::classify_mode(t),
            })
            .collect(),
        classification,
        agrees_with_mode: classification.class.mode() == Some(p.mode),
        config: cfg.clone(),
    };
    Ok((sweep, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub present: bool,
    pub bytes: Option<u64>,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub sampled: usize,
    pub augmented: usize,
    pub mode_counts: ModeCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub k: usize,
    pub space: ModelSpace,
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
    pub max_decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSummary {
    pub rows: usize,
    pub mode_counts: ModeCounts,
    pub modes_present: usize,
    pub mean_repair_distance: f64,
    pub feasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSummary {
    pub rows: usize,
    pub kl_divergence: f64,
    pub calibration_warnings: usize,
    /// Mean silhouette of the embedded points under their mode labels.
    pub mode_silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub d_new: f64,
    pub d_new_embedding: f64,
    pub area_training: f64,
    pub area_generated: f64,
    pub area_ratio: Option<f64>,
    pub hull_vertices_training: usize,
    pub hull_vertices_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSimulation {
    pub mode: Mode,
    pub classification: ModeClassification,
    pub agrees_with_mode: bool,
}

/// Everything a finished work directory says, in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub artifacts: Vec<ArtifactEntry>,
    pub dataset: Option<DatasetSummary>,
    pub fit: Option<FitSummary>,
    pub generated: Option<GeneratedSummary>,
    pub embedding: Option<EmbeddingSummary>,
    pub metrics: Option<MetricsSummary>,
    pub reference_designs: Vec<ReferenceSimulation>,
}

const REPORTED_ARTIFACTS: [&str; 10] = [
    workdir::BOUNDS_FILE,
    workdir::DATA_FILE,
    workdir::SCHEMA_FILE,
    workdir::MODEL_FILE,
    workdir::FIT_FILE,
    workdir::GENERATED_FILE,
    workdir::EMBEDDING_FILE,
    workdir::EMBEDDING_SIDECAR_FILE,
    workdir::METRICS_FILE,
    workdir::HULLS_FILE,
];

/// Summarizes whatever artifacts the work directory holds; absent artifacts
/// leave their section empty.
pub fn build_report(wd: &Workdir) -> Result<PipelineReport> {
    let bounds = wd.bounds()?;
    let mut artifacts = Vec::new();
    for name in REPORTED_ARTIFACTS {
        let p = wd.path(name);
        let entry = if p.is_file() {
            let bytes = std::fs::read(&p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            ArtifactEntry {
                name: name.into(),
                present: true,
                bytes: Some(bytes.len() as u64),
                sha256: Some(util::sha256_hex(&bytes)),
            }
        } else {
            ArtifactEntry {
                name: name.into(),
                present: false,
                bytes: None,
                sha256: None,
            }
        };
        artifacts.push(entry);
    }
    let present = |name: &str| wd.path(name).is_file();

    let data = if present(workdir::DATA_FILE) {
        Some(DesignDataset::read_csv(&wd.path(workdir::DATA_FILE), bounds.clone())?)
    } else {
        None
    };
    let dataset = data.as_ref().map(|d| DatasetSummary {
        rows: d.len(),
        sampled: d.rows.iter().filter(|r| r.provenance == Provenance::Sampled).count(),
        augmented: d.rows.iter().filter(|r| r.provenance == Provenance::Augmented).count(),
        mode_counts: d.mode_counts(),
    });

    let fit = if present(workdir::FIT_FILE) && present(workdir::MODEL_FILE) {
        let report: FitReport = workdir::read_json(&wd.path(workdir::FIT_FILE))?;
        let model = GmmModel::load(&wd.path(workdir::MODEL_FILE))?;
        Some(FitSummary {
            k: model.k(),
            space: model.space(),
            iterations: report.iterations,
            converged: report.converged,
            final_log_likelihood: report.final_log_likelihood(),
            max_decrease: report.max_decrease(),
        })
    } else {
        None
    };

    let generated = if present(workdir::GENERATED_FILE) {
        let g = workdir::read_generated_csv(&wd.path(workdir::GENERATED_FILE))?;
        let counts = ModeCounts::from_designs(g.rows.iter().map(|r| &r.params));
        Some(GeneratedSummary {
            rows: g.rows.len(),
            modes_present: Mode::ALL.iter().filter(|m| counts.get(**m) > 0).count(),
            mode_counts: counts,
            mean_repair_distance: if g.rows.is_empty() {
                0.0
            } else {
                util::pairwise_sum(&g.repair_distance) / g.rows.len() as f64
            },
            feasible: g
                .rows
                .iter()
                .filter(|r| geometry::geometric_feasibility(&r.params, &bounds).is_feasible())
                .count(),
        })
    } else {
        None
    };

    let embedding = if present(workdir::EMBEDDING_FILE) && present(workdir::EMBEDDING_SIDECAR_FILE) {
        let rows = workdir::read_embedding_csv(&wd.path(workdir::EMBEDDING_FILE))?;
        let side: EmbeddingSidecar = workdir::read_json(&wd.path(workdir::EMBEDDING_SIDECAR_FILE))?;
        let labels: Vec<usize> = rows.iter().map(|r| r.mode_label as usize).collect();
        Some(EmbeddingSummary {
            rows: rows.len(),
            kl_divergence: side.kl_divergence,
            calibration_warnings: side.calibration_warnings,
            mode_silhouette: metrics::silhouette_score(&workdir::embedding_coords(&rows), &labels)?,
        })
    } else {
        None
    };

    let metrics = if present(workdir::METRICS_FILE) {
        let m: MetricsReport = workdir::read_json(&wd.path(workdir::METRICS_FILE))?;
        Some(MetricsSummary {
            d_new: m.novelty.d_new,
            d_new_embedding: m.novelty_embedding.d_new,
            area_training: m.diversity.area_training,
            area_generated: m.diversity.area_generated,
            area_ratio: m.diversity.area_ratio,
            hull_vertices_training: m.diversity.hull_training.vertices.len(),
            hull_vertices_generated: m.diversity.hull_generated.vertices.len(),
        })
    } else {
        None
    };

    let cfg = KinematicsConfig::default();
    let reference_designs = Mode::ALL
        .iter()
        .map(|&mode| {
            let p = DesignParams::reference(mode);
            let (_, s) = simulate(&p, &bounds, &cfg)?;
            Ok(ReferenceSimulation {
                mode,
                classification: s.classification,
                agrees_with_mode: s.agrees_with_mode,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PipelineReport {
        artifacts,
        dataset,
        fit,
        generated,
        embedding,
        metrics,
        reference_designs,
    })
}

fn counts_line(c: &ModeCounts) -> String {
    format!("bending {}, twisting {}, mixed {}", c.bending, c.twisting, c.mixed)
}

/// Human-readable rendering of a [`PipelineReport`].
pub fn summary_text(r: &PipelineReport) -> String {
    let mut s = String::from("Pneu-net generative design pipeline\n\n");
    let missing: Vec<&str> = r.artifacts.iter().filter(|a| !a.present).map(|a| a.name.as_str()).collect();
    s += &format!(
        "artifacts: {} present{}\n",
        r.artifacts.len() - missing.len(),
        if missing.is_empty() {
            String::new()
        } else {
            format!(", missing: {}", missing.join(", "))
        }
    );
    if let Some(d) = &r.dataset {
        s += &format!(
            "dataset: {} rows ({} sampled, {} augmented); {}\n",
            d.rows,
            d.sampled,
            d.augmented,
            counts_line(&d.mode_counts)
        );
    }
    if let Some(f) = &r.fit {
        s += &format!(
            "model: K = {} in {:?} space, {} EM iterations, converged {}, log-likelihood {:.6}\n",
            f.k, f.space, f.iterations, f.converged, f.final_log_likelihood
        );
    }
    if let Some(e) = &r.embedding {
        s += &format!(
            "embedding: {} rows, KL {:.4}, calibration warnings {}, mode silhouette {}\n",
            e.rows,
            e.kl_divergence,
            e.calibration_warnings,
            e.mode_silhouette.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
    }
    if let Some(g) = &r.generated {
        s += &format!(
            "generated: {} designs, {} of 3 modes present ({}); mean repair distance {:.4}; {} geometrically feasible\n",
            g.rows,
            g.modes_present,
            counts_line(&g.mode_counts),
            g.mean_repair_distance,
            g.feasible
        );
    }
    if let Some(m) = &r.metrics {
        s += &format!(
            "novelty: d_new = {:.6} (encoded), {:.6} (hull embedding)\n",
            m.d_new, m.d_new_embedding
        );
        s += &format!(
            "diversity: hull area training {:.4}, generated {:.4}, ratio {}\n",
            m.area_training,
            m.area_generated,
            m.area_ratio.map_or("undefined".into(), |v| format!("{v:.4}"))
        );
    }
    for rs in &r.reference_designs {
        s += &format!(
            "reference {} design: simulated as {} (torsion {:.1} deg, in-plane bend {:.1} deg){}\n",
            rs.mode,
            rs.classification.class,
            rs.classification.torsion_deg,
            rs.classification.in_plane_bend_deg,
            if rs.agrees_with_mode { "" } else { " MISMATCH" }
        );
    }
    s
}
