//! CNN + FNN regressor from 128-value snapshots to position and heading,
//! with previous-prediction smoothing and wrapped heading errors.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::neural::{self, EpochLoss, LayerKind, LayerSpec, Network, Shape, TrainConfig};
use crate::srs::{Label, LabeledSnapshot, Snapshot, SNAPSHOT_LEN};
use crate::{wrap_degrees, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HeadingEncoding {
    #[default]
    SinCos,
    Degrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositioningModelSpec {
    pub conv_layers: Vec<LayerSpec>,
    /// Hidden dense widths; the output layer is appended.
    pub dense_widths: Vec<usize>,
    /// UE layers as channels, beams as positions.
    pub input_channels: usize,
    pub input_len: usize,
    pub heading_encoding: HeadingEncoding,
}

impl Default for PositioningModelSpec {
    fn default() -> Self {
        Self {
            conv_layers: vec![LayerSpec::conv1d(16, 5), LayerSpec::conv1d(32, 3)],
            dense_widths: vec![512, 256, 128, 64, 64, 32, 16],
            input_channels: 2,
            input_len: 64,
            heading_encoding: HeadingEncoding::SinCos,
        }
    }
}

impl PositioningModelSpec {
    pub fn output_dim(&self) -> usize {
        match self.heading_encoding {
            HeadingEncoding::SinCos => 4,
            HeadingEncoding::Degrees => 3,
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for c in &self.conv_layers {
            specs.push(*c);
            specs.push(LayerSpec::relu());
        }
        specs.push(LayerSpec::flatten());
        for &w in &self.dense_widths {
            specs.push(LayerSpec::dense(w));
            specs.push(LayerSpec::relu());
        }
        specs.push(LayerSpec::dense(self.output_dim()));
        specs
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels * self.input_len != SNAPSHOT_LEN {
            return Err(Error::InvalidConfig(format!(
                "input layout {}×{} does not cover {SNAPSHOT_LEN} features",
                self.input_channels, self.input_len
            )));
        }
        if self.conv_layers.iter().any(|c| c.kind != LayerKind::Conv1D) {
            return Err(Error::InvalidConfig("conv_layers must all be Conv1D".into()));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::InvalidConfig("dense widths must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn build_model(spec: &PositioningModelSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    Network::new(
        Shape::Seq {
            channels: spec.input_channels,
            len: spec.input_len,
        },
        &spec.layer_specs(),
        seed,
    )
}

/// Log-amplitude z-scoring of inputs and target standardization, fitted on
/// the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub heading_encoding: HeadingEncoding,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// x, y and (in degrees mode) heading
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

fn log_amplitude(a: f64) -> f64 {
    20.0 * (a + 1e-12).log10()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Scaler {
    pub fn fit(samples: &[LabeledSnapshot], encoding: HeadingEncoding) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("scaler training set"));
        }
        let (feature_mean, feature_std) = (0..SNAPSHOT_LEN)
            .map(|i| mean_std(samples.iter().map(move |s| log_amplitude(s.snapshot.features[i]))))
            .unzip();
        let mut targets = vec![
            mean_std(samples.iter().map(|s| s.label.x)),
            mean_std(samples.iter().map(|s| s.label.y)),
        ];
        if encoding == HeadingEncoding::Degrees {
            targets.push(mean_std(samples.iter().map(|s| s.label.heading)));
        }
        let (target_mean, target_std) = targets.into_iter().unzip();
        Ok(Self {
            heading_encoding: encoding,
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        })
    }

    pub fn transform_features(&self, snapshot: &Snapshot) -> Result<Vec<f64>> {
        if snapshot.features.len() != SNAPSHOT_LEN {
            return Err(Error::WrongCount {
                what: "snapshot features",
                expected: SNAPSHOT_LEN,
                got: snapshot.features.len(),
            });
        }
        Ok(snapshot
            .features
            .iter()
            .enumerate()
            .map(|(i, &a)| (log_amplitude(a) - self.feature_mean[i]) / self.feature_std[i])
            .collect())
    }

    pub fn feature_matrix<'a>(&self, snapshots: impl ExactSizeIterator<Item = &'a Snapshot>) -> Result<Array2<f64>> {
        let n = snapshots.len();
        let mut m = Array2::zeros((n, SNAPSHOT_LEN));
        for (mut row, s) in m.rows_mut().into_iter().zip(snapshots) {
            row.assign(&ndarray::ArrayView1::from(&self.transform_features(s)?));
        }
        Ok(m)
    }

    pub fn encode_target(&self, label: &Label) -> Vec<f64> {
        let mut t = vec![
            (label.x - self.target_mean[0]) / self.target_std[0],
            (label.y - self.target_mean[1]) / self.target_std[1],
        ];
        match self.heading_encoding {
            HeadingEncoding::SinCos => {
                let h = label.heading.to_radians();
                t.extend([h.sin(), h.cos()]);
            }
            HeadingEncoding::Degrees => t.push((label.heading - self.target_mean[2]) / self.target_std[2]),
        }
        t
    }

    /// Model output row to `(x, y, heading°)`.
    pub fn decode_output(&self, out: &[f64]) -> (f64, f64, f64) {
        let x = out[0] * self.target_std[0] + self.target_mean[0];
        let y = out[1] * self.target_std[1] + self.target_mean[1];
        let heading = match self.heading_encoding {
            HeadingEncoding::SinCos => heading_from_sincos(out[2], out[3]),
            HeadingEncoding::Degrees => wrap_degrees(out[2] * self.target_std[2] + self.target_mean[2]),
        };
        (x, y, heading)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn heading_from_sincos(sin: f64, cos: f64) -> f64 {
    wrap_degrees(sin.atan2(cos).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub t: f64,
    pub user: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub smoothed: bool,
    /// Input snapshot had never-updated PRSGs.
    #[serde(default)]
    pub cold: bool,
}

/// Predicts one snapshot.
pub fn predict(model: &Network, snapshot: &Snapshot, scaler: &Scaler) -> Result<PredictionRecord> {
    Ok(predict_batch(model, std::slice::from_ref(snapshot), scaler)?.remove(0))
}

pub fn predict_batch(model: &Network, snapshots: &[Snapshot], scaler: &Scaler) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::with_capacity(snapshots.len());
    for chunk in snapshots.chunks(256) {
        let x = scaler.feature_matrix(chunk.iter())?;
        let y = model.infer(&x)?;
        for (s, row) in chunk.iter().zip(y.rows()) {
            let (px, py, heading) = scaler.decode_output(row.as_slice().unwrap());
            out.push(PredictionRecord {
                t: s.t,
                user: s.user,
                x: px,
                y: py,
                heading,
                smoothed: false,
                cold: s.cold,
            });
        }
    }
    Ok(out)
}

/// Averages every prediction with the previous smoothed one; heading is
/// averaged on the circle. Expects one user's time-ordered series.
pub fn smooth(series: &[PredictionRecord]) -> Vec<PredictionRecord> {
    let mut out: Vec<PredictionRecord> = Vec::with_capacity(series.len());
    for p in series {
        let s = match out.last() {
            None => PredictionRecord { smoothed: true, ..*p },
            Some(prev) => {
                let (a, b) = (p.heading.to_radians(), prev.heading.to_radians());
                PredictionRecord {
                    x: 0.5 * (p.x + prev.x),
                    y: 0.5 * (p.y + prev.y),
                    heading: heading_from_sincos(a.sin() + b.sin(), a.cos() + b.cos()),
                    smoothed: true,
                    ..*p
                }
            }
        };
        out.push(s);
    }
    out
}

/// Smooths each user's series independently, keeping the input order.
pub fn smooth_by_user(records: &[PredictionRecord]) -> Vec<PredictionRecord> {
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(r.user).or_default().push(i);
    }
    let mut out = records.to_vec();
    for idx in by_user.values() {
        let series: Vec<PredictionRecord> = idx.iter().map(|&i| records[i]).collect();
        for (&i, s) in idx.iter().zip(smooth(&series)) {
            out[i] = s;
        }
    }
    out
}

/// Absolute angular difference in degrees, in `[0, 180]`.
pub fn heading_error(pred: f64, truth: f64) -> f64 {
    let d = (pred - truth).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn heading_rmse(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len().max(1) as f64;
    (pairs.iter().map(|&(p, t)| heading_error(p, t).powi(2)).sum::<f64>() / n).sqrt()
}

/// Chronological split of one user's stream: the first `ratio` share trains.
pub fn split_index(len: usize, ratio: f64) -> usize {
    ((len as f64 * ratio).round() as usize).min(len)
}

/// Splits samples into train and test sets per user, keeping time order.
pub fn split_chronological(samples: &[LabeledSnapshot], ratio: f64) -> (Vec<LabeledSnapshot>, Vec<LabeledSnapshot>) {
    let mut by_user: BTreeMap<usize, Vec<&LabeledSnapshot>> = BTreeMap::new();
    for s in samples {
        by_user.entry(s.snapshot.user).or_default().push(s);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for stream in by_user.values() {
        let cut = split_index(stream.len(), ratio);
        train.extend(stream[..cut].iter().map(|s| (*s).clone()));
        test.extend(stream[cut..].iter().map(|s| (*s).clone()));
    }
    (train, test)
}

#[derive(Debug, Clone)]
pub struct TrainedPositioner {
    pub model: Network,
    pub scaler: Scaler,
    pub loss_curve: Vec<EpochLoss>,
}

/// Fits the scaler and trains the regressor on `train`.
pub fn fit(train: &[LabeledSnapshot], spec: &PositioningModelSpec, cfg: &TrainConfig) -> Result<TrainedPositioner> {
    let scaler = Scaler::fit(train, spec.heading_encoding)?;
    let mut model = build_model(spec, cfg.seed)?;
    let x = scaler.feature_matrix(train.iter().map(|s| &s.snapshot))?;
    let dim = spec.output_dim();
    let mut t = Array2::zeros((train.len(), dim));
    for (mut row, s) in t.rows_mut().into_iter().zip(train) {
        row.assign(&ndarray::Array1::from(scaler.encode_target(&s.label)));
    }
    let loss_curve = neural::train(&mut model, &x, &t, cfg)?;
    Ok(TrainedPositioner {
        model,
        scaler,
        loss_curve,
    })
}

/// Prediction with its ground truth, one row of the predictions table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub pred: PredictionRecord,
    pub truth: Label,
}

/// Writes CSV `t,user,x,y,heading,x_true,y_true,heading_true,smoothed`.
pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "user",
        "x",
        "y",
        "heading",
        "x_true",
        "y_true",
        "heading_true",
        "smoothed",
    ])?;
    for r in rows {
        let p = &r.pred;
        w.write_record(&[
            p.t.to_string(),
            p.user.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.heading.to_string(),
            r.truth.x.to_string(),
            r.truth.y.to_string(),
            r.truth.heading.to_string(),
            p.smoothed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let malformed = |reason: String| Error::Malformed {
        path: path.into(),
        reason,
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 9 {
            return Err(malformed(format!("expected 9 columns, got {}", rec.len())));
        }
        let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|e| malformed(format!("column {i}: {e}"))) };
        out.push(PredictionRow {
            pred: PredictionRecord {
                t: f(0)?,
                user: rec[1].parse().map_err(|e| malformed(format!("user: {e}")))?,
                x: f(2)?,
                y: f(3)?,
                heading: f(4)?,
                smoothed: rec[8].parse().map_err(|e| malformed(format!("smoothed: {e}")))?,
                cold: false,
            },
            truth: Label {
                x: f(5)?,
                y: f(6)?,
                heading: f(7)?,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, x: f64, heading: f64) -> PredictionRecord {
        PredictionRecord {
            t,
            user: 0,
            x,
            y: -x,
            heading,
            smoothed: false,
            cold: false,
        }
    }

    #[test]
    fn paper_profile_layer_counts() {
        let spec = PositioningModelSpec::default();
        let net = build_model(&spec, 1).unwrap();
        assert_eq!(net.count(LayerKind::Conv1D), 2);
        assert_eq!(net.count(LayerKind::Dense), 8);
        assert_eq!(net.output_size(), 4);
        let deg = PositioningModelSpec {
            heading_encoding: HeadingEncoding::Degrees,
            ..spec
        };
        assert_eq!(build_model(&deg, 1).unwrap().output_size(), 3);
    }

    #[test]
    fn parameter_count_closed_form() {
        let net = build_model(&PositioningModelSpec::default(), 1).unwrap();
        let conv = (16 * 2 * 5 + 16) + (32 * 16 * 3 + 32);
        let widths = [32 * 64, 512, 256, 128, 64, 64, 32, 16, 4];
        let dense: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(net.parameter_count(), conv + dense);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = PositioningModelSpec {
            input_len: 32,
            ..Default::default()
        };
        assert!(build_model(&spec, 0).is_err());
        let spec = PositioningModelSpec {
            conv_layers: vec![LayerSpec::dense(3)],
            ..Default::default()
        };
        assert!(build_model(&spec, 0).is_err());
    }

    #[test]
    fn sincos_decoding() {
        assert_eq!(heading_from_sincos(0.0, 1.0), 0.0);
        assert_eq!(heading_from_sincos(1.0, 0.0), 90.0);
        assert!((heading_from_sincos(-1.0, -1.0) - 225.0).abs() < 1e-9);
        assert!((0.0..360.0).contains(&heading_from_sincos(-0.0, 1.0)));
    }

    #[test]
    fn smoothing_constant_and_step() {
        let constant: Vec<_> = (0..10).map(|k| rec(k as f64, 3.0, 45.0)).collect();
        for s in smooth(&constant) {
            assert_eq!(s.x, 3.0);
            assert!(heading_error(s.heading, 45.0) < 1e-12);
            assert!(s.smoothed);
        }
        let step: Vec<_> = (0..30)
            .map(|k| rec(k as f64, if k < 10 { 0.0 } else { 1.0 }, 0.0))
            .collect();
        let out = smooth(&step);
        for k in 0..20 {
            let expect = 1.0 - 2f64.powi(-(k as i32 + 1));
            assert!((out[10 + k].x - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn circular_heading_average() {
        let out = smooth(&[rec(0.0, 0.0, 359.0), rec(1.0, 0.0, 1.0)]);
        assert!(heading_error(out[1].heading, 0.0) < 1e-9);
    }

    #[test]
    fn smoothing_is_causal() {
        let a: Vec<_> = (0..8).map(|k| rec(k as f64, (k * k) as f64, 10.0 * k as f64)).collect();
        let mut b = a.clone();
        b[6].x = 1e6;
        b[7].heading = 200.0;
        assert_eq!(smooth(&a)[..6], smooth(&b)[..6]);
    }

    #[test]
    fn heading_errors() {
        assert_eq!(heading_error(359.0, 1.0), 2.0);
        assert_eq!(heading_error(180.0, 0.0), 180.0);
        let rmse = heading_rmse(&[(10.0, 350.0), (0.0, 0.0), (90.0, 80.0)]);
        assert!((rmse - (500f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((rmse - 12.91).abs() < 0.005);
    }

    #[test]
    fn chronological_split() {
        assert_eq!(split_index(1000, 0.8), 800);
        assert_eq!(split_index(1001, 0.8), 801);
    }

    #[test]
    fn encodings_share_feature_pipeline() {
        let samples: Vec<LabeledSnapshot> = (0..5)
            .map(|i| LabeledSnapshot {
                snapshot: Snapshot {
                    features: (0..128).map(|k| 0.01 * (1 + k + i) as f64).collect(),
                    t: i as f64,
                    user: 0,
                    cold: false,
                },
                label: Label {
                    x: i as f64,
                    y: 2.0 * i as f64,
                    heading: 70.0 * i as f64,
                },
            })
            .collect();
        let a = Scaler::fit(&samples, HeadingEncoding::SinCos).unwrap();
        let b = Scaler::fit(&samples, HeadingEncoding::Degrees).unwrap();
        for s in &samples {
            assert_eq!(
                a.transform_features(&s.snapshot).unwrap(),
                b.transform_features(&s.snapshot).unwrap()
            );
            let (x, y, h) = b.decode_output(&b.encode_target(&s.label));
            assert!((x - s.label.x).abs() < 1e-9 && (y - s.label.y).abs() < 1e-9);
            assert!(heading_error(h, s.label.heading) < 1e-9);
        }
    }

    #[test]
    fn predictions_csv_round_trip() {
        let rows = vec![PredictionRow {
            pred: PredictionRecord {
                t: 0.02,
                user: 3,
                x: 1.5,
                y: -0.25,
                heading: 359.5,
                smoothed: true,
                cold: false,
            },
            truth: Label {
                x: 1.0,
                y: 0.1,
                heading: 0.3,
            },
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        write_predictions_csv(&p, &rows).unwrap();
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .starts_with("t,user,x,y,heading,x_true,y_true,heading_true,smoothed\n"));
        assert_eq!(read_predictions_csv(&p).unwrap(), rows);
    }
}
