//! End-to-end orchestration: simulate → preprocess → train → predict →
//! smooth → cluster → evaluate, with every stage reading and writing plain
//! files in one output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{self, add_noise, compute_multipath, prb_frequencies, synthesize_ctf, ArrayConfig};
use crate::clustering::{
    cluster_instant, write_assignments_csv, AssignmentRow, ClusterParams, FeatureMode, HeadingScale,
    NormalizationFrame, NormalizeConfig,
};
use crate::evaluation::{export_cdf, MetricsReport};
use crate::neural::{Network, TrainConfig};
use crate::positioning::{
    self, predict_batch, read_predictions_csv, smooth_by_user, split_chronological, write_predictions_csv,
    PositioningModelSpec, PredictionRecord, PredictionRow, Scaler,
};
use crate::scene::{
    generate_campaign, split_virtual_users, write_trajectories_csv, Pattern, Scenario, ScenarioConfig, UserTrack,
};
use crate::srs::{read_snapshots_csv, write_snapshots_csv, Label, LabeledSnapshot, RawSrsGrid, SnapshotPipeline};
use crate::{derive_seed, Error, Result};

pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const SNAPSHOTS_CSV: &str = "snapshots.csv";
pub const FIRST_POSE_CTF: &str = "ctf_first_pose.bin";
pub const MODEL_STEM: &str = "model";
pub const SCALER_JSON: &str = "scaler.json";
pub const LOSS_CSV: &str = "loss.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_RAW_CSV: &str = "metrics_raw.csv";
pub const CDF_POSITION_CSV: &str = "cdf_position.csv";
pub const CDF_HEADING_CSV: &str = "cdf_heading.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 50 epochs
    Desk,
    /// 200 epochs
    Full,
}

impl Profile {
    pub fn epochs(self) -> usize {
        match self {
            Profile::Desk => 50,
            Profile::Full => 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub params: Vec<ClusterParams>,
    pub heading_weight: f64,
    pub heading_scale: HeadingScale,
    /// Min-max per instant instead of the fixed scenario bounding box.
    pub per_instant_normalization: bool,
    /// Cluster every `stride`-th aligned instant.
    pub stride: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            params: ClusterParams::table(),
            heading_weight: 0.5,
            heading_scale: HeadingScale::SinCos,
            per_instant_normalization: false,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub array: ArrayConfig,
    /// Probability that a PRSG update is missing from an SRS report.
    pub p_miss: f64,
    pub model: PositioningModelSpec,
    pub train: TrainConfig,
    pub clustering: ClusteringConfig,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_profile(Scenario::Los, Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn for_profile(scenario: Scenario, profile: Profile) -> Self {
        Self {
            scenario: ScenarioConfig::for_scenario(scenario),
            array: ArrayConfig::default(),
            p_miss: 0.1,
            model: PositioningModelSpec::default(),
            train: TrainConfig {
                epochs: profile.epochs(),
                ..TrainConfig::default()
            },
            clustering: ClusteringConfig::default(),
            split_ratio: 0.8,
            seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.array.validate()?;
        self.model.validate()?;
        if self.array.ue_layers != self.scenario.ue_antenna.layer_boresights_deg.len() {
            return Err(Error::InvalidConfig(
                "array.ue_layers must match the UE antenna layer count".into(),
            ));
        }
        if self.array.rows() != crate::srs::SNAPSHOT_LEN {
            return Err(Error::InvalidConfig(format!(
                "array produces {} beam rows, snapshots need {}",
                self.array.rows(),
                crate::srs::SNAPSHOT_LEN
            )));
        }
        if !(0.0..=1.0).contains(&self.p_miss) {
            return Err(Error::InvalidConfig("p_miss must be in [0, 1]".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidConfig("split_ratio must be in (0, 1)".into()));
        }
        if self.clustering.stride == 0 {
            return Err(Error::InvalidConfig("clustering.stride must be >= 1".into()));
        }
        for p in &self.clustering.params {
            p.validate()?;
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    /// Mobility pattern of a virtual user (users `2k`, `2k + 1` come from lap `k`).
    pub fn pattern_of(user: usize) -> Pattern {
        Pattern::ALL[(user / 2) % Pattern::ALL.len()]
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[STREAM_TRAIN]),
            ..self.train.clone()
        }
    }
}

const STREAM_SNAPSHOT: u64 = 0x5a;
const STREAM_TRAIN: u64 = 0x7e;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<UserTrack>> {
    cfg.validate()?;
    Ok(split_virtual_users(&generate_campaign(&cfg.scenario)?))
}

/// Full-band noisy SRS report for one pose.
fn srs_report(
    cfg: &ExperimentConfig,
    pose: &crate::scene::Pose,
    prb_freqs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(RawSrsGrid, channel::CtfMatrix)> {
    let mpcs = compute_multipath(pose, &cfg.scenario, &cfg.array)?;
    let mut ctf = synthesize_ctf(&mpcs, &cfg.array, prb_freqs)?;
    if let Some(snr) = cfg.array.snr_db {
        add_noise(&mut ctf, snr, rng);
    }
    let mut raw = RawSrsGrid::from_ctf(&ctf);
    raw.mask_random(cfg.p_miss, rng);
    Ok((raw, ctf))
}

/// Turns every pose into a labeled snapshot. Users run in parallel; each
/// user's stream is forward-filled in time order.
pub fn preprocess(cfg: &ExperimentConfig, users: &[UserTrack]) -> Result<Vec<LabeledSnapshot>> {
    let prb_freqs = prb_frequencies();
    let per_user: Vec<Result<Vec<LabeledSnapshot>>> = users
        .par_iter()
        .map(|u| {
            let mut pipeline = SnapshotPipeline::new();
            u.poses
                .iter()
                .enumerate()
                .map(|(k, pose)| {
                    let seed = derive_seed(cfg.seed, &[STREAM_SNAPSHOT, u.user as u64, k as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let (raw, _) = srs_report(cfg, pose, &prb_freqs, &mut rng)?;
                    Ok(LabeledSnapshot {
                        snapshot: pipeline.process(&raw, pose.t, u.user)?,
                        label: Label {
                            x: pose.x,
                            y: pose.y,
                            heading: pose.heading,
                        },
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_user {
        out.extend(r?);
    }
    Ok(out)
}

/// Clean-plus-noise CTF of every user's first pose, for inspection.
pub fn first_pose_ctfs(cfg: &ExperimentConfig, users: &[UserTrack]) -> Result<Vec<channel::CtfMatrix>> {
    let prb_freqs = prb_frequencies();
    users
        .iter()
        .filter_map(|u| u.poses.first().map(|p| (u.user, p)))
        .map(|(user, pose)| {
            let seed = derive_seed(cfg.seed, &[STREAM_SNAPSHOT, user as u64, 0]);
            Ok(srs_report(cfg, pose, &prb_freqs, &mut ChaCha8Rng::seed_from_u64(seed))?.1)
        })
        .collect()
}

pub fn train(cfg: &ExperimentConfig, samples: &[LabeledSnapshot]) -> Result<positioning::TrainedPositioner> {
    let (train_set, _) = split_chronological(samples, cfg.split_ratio);
    positioning::fit(&train_set, &cfg.model, &cfg.train_config())
}

/// Raw and smoothed predictions of the held-out part of every stream.
pub fn predict(
    cfg: &ExperimentConfig,
    model: &Network,
    scaler: &Scaler,
    samples: &[LabeledSnapshot],
) -> Result<(Vec<PredictionRow>, Vec<PredictionRow>)> {
    let (_, test) = split_chronological(samples, cfg.split_ratio);
    let snapshots: Vec<_> = test.iter().map(|s| s.snapshot.clone()).collect();
    let raw = predict_batch(model, &snapshots, scaler)?;
    let smoothed = smooth_by_user(&raw);
    let pair = |recs: Vec<PredictionRecord>| -> Vec<PredictionRow> {
        recs.into_iter()
            .zip(&test)
            .map(|(pred, s)| PredictionRow { pred, truth: s.label })
            .collect()
    };
    Ok((pair(raw), pair(smoothed)))
}

/// Groups predictions by instant on the common reporting grid.
pub fn align_instants(records: &[PredictionRecord], interval: f64) -> BTreeMap<i64, Vec<PredictionRecord>> {
    let mut by_instant: BTreeMap<i64, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        let k = (r.t / interval).round() as i64;
        by_instant.entry(k).or_default().push(PredictionRecord {
            t: k as f64 * interval,
            ..*r
        });
    }
    for recs in by_instant.values_mut() {
        recs.sort_by_key(|r| r.user);
    }
    by_instant
}

/// Assignment tables keyed by `(method, eps_or_threshold)`, each holding
/// rows for both feature modes.
pub fn cluster(
    cfg: &ExperimentConfig,
    smoothed: &[PredictionRecord],
) -> Result<Vec<(ClusterParams, Vec<AssignmentRow>)>> {
    let instants = align_instants(smoothed, cfg.scenario.sample_interval);
    let frame = if cfg.clustering.per_instant_normalization {
        NormalizationFrame::PerInstant
    } else {
        NormalizationFrame::BoundingBox(cfg.scenario.bounding_box())
    };
    let selected: Vec<&Vec<PredictionRecord>> = instants.values().step_by(cfg.clustering.stride).collect();
    cfg.clustering
        .params
        .iter()
        .map(|params| {
            let per_instant: Vec<Result<Vec<AssignmentRow>>> = selected
                .par_iter()
                .map(|recs| {
                    let mut rows = Vec::new();
                    for mode in [FeatureMode::Position, FeatureMode::PositionHeading] {
                        let norm = NormalizeConfig {
                            frame,
                            mode,
                            heading_scale: cfg.clustering.heading_scale,
                            heading_weight: cfg.clustering.heading_weight,
                        };
                        let a = cluster_instant(recs, &norm, params)?;
                        rows.extend(recs.iter().zip(&a.labels).map(|(r, &(_, label))| AssignmentRow {
                            record: *r,
                            label,
                            params: *params,
                            mode,
                        }));
                    }
                    Ok(rows)
                })
                .collect();
            let mut rows = Vec::new();
            for r in per_instant {
                rows.extend(r?);
            }
            Ok((*params, rows))
        })
        .collect()
}

pub fn assignment_file_name(params: &ClusterParams) -> String {
    let kind = match params.method {
        crate::clustering::Method::Dbscan => "eps",
        crate::clustering::Method::Hierarchical => "threshold",
    };
    format!("assignments_{}_{}{:.2}.csv", params.method, kind, params.scale())
}

/// Metric tables for smoothed and raw predictions, plus error CDFs.
pub fn evaluate(cfg: &ExperimentConfig, rows: &[PredictionRow], out: &Path) -> Result<(MetricsReport, MetricsReport)> {
    let smoothed: Vec<PredictionRow> = rows.iter().filter(|r| r.pred.smoothed).copied().collect();
    let raw: Vec<PredictionRow> = rows.iter().filter(|r| !r.pred.smoothed).copied().collect();
    let scenario = cfg.scenario.scenario;
    let report = MetricsReport::build(scenario, &smoothed, ExperimentConfig::pattern_of)?;
    report.write_csv(&out.join(METRICS_CSV))?;
    let raw_report = if raw.is_empty() {
        MetricsReport::default()
    } else {
        let r = MetricsReport::build(scenario, &raw, ExperimentConfig::pattern_of)?;
        r.write_csv(&out.join(METRICS_RAW_CSV))?;
        r
    };
    let dist: Vec<f64> = smoothed
        .iter()
        .map(|r| (r.pred.x - r.truth.x).hypot(r.pred.y - r.truth.y))
        .collect();
    let heading: Vec<f64> = smoothed
        .iter()
        .map(|r| positioning::heading_error(r.pred.heading, r.truth.heading))
        .collect();
    export_cdf(&dist, &out.join(CDF_POSITION_CSV))?;
    export_cdf(&heading, &out.join(CDF_HEADING_CSV))?;
    Ok((report, raw_report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEntry {
    pub user: usize,
    pub pattern: Pattern,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub config_sha256: String,
    pub users: Vec<UserEntry>,
    pub snapshot_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub parameter_count: usize,
    pub final_train_loss: f64,
    /// Output file name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub metrics: MetricsReport,
    pub raw_metrics: MetricsReport,
}

/// Writes the resolved config.
pub fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let p = out.join(CONFIG_JSON);
    fs::write(&p, cfg.to_json()?).map_err(|e| Error::io(&p, e))
}

pub fn stage_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<UserTrack>> {
    (|| {
        write_config(cfg, out)?;
        let users = simulate(cfg)?;
        write_trajectories_csv(&out.join(TRAJECTORIES_CSV), &users)?;
        Ok(users)
    })()
    .map_err(|e: Error| e.in_stage("simulate"))
}

pub fn stage_preprocess(cfg: &ExperimentConfig, users: &[UserTrack], out: &Path) -> Result<Vec<LabeledSnapshot>> {
    (|| {
        let samples = preprocess(cfg, users)?;
        write_snapshots_csv(&out.join(SNAPSHOTS_CSV), &samples)?;
        channel::write_ctf_binary(&out.join(FIRST_POSE_CTF), &first_pose_ctfs(cfg, users)?)?;
        Ok(samples)
    })()
    .map_err(|e: Error| e.in_stage("preprocess"))
}

pub fn stage_train(
    cfg: &ExperimentConfig,
    samples: &[LabeledSnapshot],
    out: &Path,
) -> Result<positioning::TrainedPositioner> {
    (|| {
        let trained = train(cfg, samples)?;
        trained.model.save(&out.join(MODEL_STEM))?;
        trained.scaler.save(&out.join(SCALER_JSON))?;
        let p = out.join(LOSS_CSV);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["epoch", "loss"])?;
        for e in &trained.loss_curve {
            w.write_record(&[e.epoch.to_string(), e.loss.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        Ok(trained)
    })()
    .map_err(|e: Error| e.in_stage("train"))
}

pub fn stage_predict(
    cfg: &ExperimentConfig,
    model: &Network,
    scaler: &Scaler,
    samples: &[LabeledSnapshot],
    out: &Path,
) -> Result<Vec<PredictionRow>> {
    (|| {
        let (raw, smoothed) = predict(cfg, model, scaler, samples)?;
        let mut rows = raw;
        rows.extend(smoothed);
        write_predictions_csv(&out.join(PREDICTIONS_CSV), &rows)?;
        Ok(rows)
    })()
    .map_err(|e: Error| e.in_stage("predict"))
}

pub fn stage_cluster(cfg: &ExperimentConfig, rows: &[PredictionRow], out: &Path) -> Result<Vec<PathBuf>> {
    (|| {
        let smoothed: Vec<PredictionRecord> = rows.iter().filter(|r| r.pred.smoothed).map(|r| r.pred).collect();
        let mut files = Vec::new();
        for (params, table) in cluster(cfg, &smoothed)? {
            let p = out.join(assignment_file_name(&params));
            write_assignments_csv(&p, &table)?;
            files.push(p);
        }
        Ok(files)
    })()
    .map_err(|e: Error| e.in_stage("cluster"))
}

pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    rows: &[PredictionRow],
    out: &Path,
) -> Result<(MetricsReport, MetricsReport)> {
    evaluate(cfg, rows, out).map_err(|e| e.in_stage("evaluate"))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::io(&path, std::io::ErrorKind::NotFound.into()))
    }
}

pub fn load_snapshots(out: &Path) -> Result<Vec<LabeledSnapshot>> {
    read_snapshots_csv(&require(out.join(SNAPSHOTS_CSV))?)
}

pub fn load_model(out: &Path) -> Result<(Network, Scaler)> {
    Ok((
        Network::load(&out.join(MODEL_STEM))?,
        Scaler::load(&require(out.join(SCALER_JSON))?)?,
    ))
}

pub fn load_predictions(out: &Path) -> Result<Vec<PredictionRow>> {
    read_predictions_csv(&require(out.join(PREDICTIONS_CSV))?)
}

/// Runs every stage and writes a manifest with the config hash and the
/// SHA-256 of every output.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    ensure_dir(out)?;
    let users = stage_simulate(cfg, out)?;
    let samples = stage_preprocess(cfg, &users, out)?;
    let trained = stage_train(cfg, &samples, out)?;
    let rows = stage_predict(cfg, &trained.model, &trained.scaler, &samples, out)?;
    let assignment_files = stage_cluster(cfg, &rows, out)?;
    let (metrics, raw_metrics) = stage_evaluate(cfg, &rows, out)?;

    let (train_set, test_set) = split_chronological(&samples, cfg.split_ratio);
    let mut names: Vec<String> = [
        CONFIG_JSON,
        TRAJECTORIES_CSV,
        SNAPSHOTS_CSV,
        FIRST_POSE_CTF,
        "ctf_first_pose.bin.json",
        "model.json",
        "model.bin",
        SCALER_JSON,
        LOSS_CSV,
        PREDICTIONS_CSV,
        METRICS_CSV,
        METRICS_RAW_CSV,
        CDF_POSITION_CSV,
        CDF_HEADING_CSV,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(
        assignment_files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())),
    );
    let mut files = BTreeMap::new();
    for n in names {
        files.insert(n.clone(), sha256_file(&out.join(&n))?);
    }
    let manifest = Manifest {
        format_version: 1,
        scenario: cfg.scenario.scenario,
        seed: cfg.seed,
        config_sha256: cfg.hash()?,
        users: users
            .iter()
            .map(|u| UserEntry {
                user: u.user,
                pattern: u.pattern,
                samples: u.poses.len(),
            })
            .collect(),
        snapshot_count: samples.len(),
        train_count: train_set.len(),
        test_count: test_set.len(),
        parameter_count: trained.model.parameter_count(),
        final_train_loss: trained.loss_curve.last().map_or(f64::NAN, |e| e.loss),
        files,
    };
    let mp = out.join(MANIFEST_JSON);
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
    Ok(RunSummary {
        out_dir: out.to_path_buf(),
        manifest,
        metrics,
        raw_metrics,
    })
}
