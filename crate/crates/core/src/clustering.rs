//! Per-instant user grouping on normalized position (and optionally
//! heading) features with DBSCAN or Ward-linkage agglomerative clustering.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::positioning::PredictionRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Position,
    PositionHeading,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Position => "position",
            FeatureMode::PositionHeading => "position_heading",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingScale {
    /// `w · (sin h, cos h)`
    #[default]
    SinCos,
    /// `w · h / 360`
    Degrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationFrame {
    /// Fixed `[min_x, min_y, max_x, max_y]`, stable across time.
    BoundingBox([f64; 4]),
    /// Min-max over the records of the current instant.
    PerInstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeConfig {
    pub frame: NormalizationFrame,
    pub mode: FeatureMode,
    pub heading_scale: HeadingScale,
    pub heading_weight: f64,
}

impl NormalizeConfig {
    pub fn new(bbox: [f64; 4], mode: FeatureMode) -> Self {
        Self {
            frame: NormalizationFrame::BoundingBox(bbox),
            mode,
            heading_scale: HeadingScale::SinCos,
            heading_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub user: usize,
    pub t: f64,
}

fn unit_interval(v: f64, lo: f64, hi: f64) -> f64 {
    if hi - lo <= 0.0 {
        0.5
    } else {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Min-max position normalization plus optional weighted heading features.
pub fn normalize_features(records: &[PredictionRecord], cfg: &NormalizeConfig) -> Vec<FeatureVector> {
    let [x0, y0, x1, y1] = match cfg.frame {
        NormalizationFrame::BoundingBox(bb) => bb,
        NormalizationFrame::PerInstant => records.iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, r| [b[0].min(r.x), b[1].min(r.y), b[2].max(r.x), b[3].max(r.y)],
        ),
    };
    let w = cfg.heading_weight;
    records
        .iter()
        .map(|r| {
            let mut values = vec![unit_interval(r.x, x0, x1), unit_interval(r.y, y0, y1)];
            if cfg.mode == FeatureMode::PositionHeading {
                match cfg.heading_scale {
                    HeadingScale::SinCos => {
                        let h = r.heading.to_radians();
                        values.extend([w * h.sin(), w * h.cos()]);
                    }
                    HeadingScale::Degrees => values.push(w * r.heading / 360.0),
                }
            }
            FeatureVector {
                values,
                user: r.user,
                t: r.t,
            }
        })
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Renumbers labels by order of first appearance; noise stays `None`.
pub fn canonicalize(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|id| {
                let next = map.len();
                *map.entry(id).or_insert(next)
            })
        })
        .collect()
}

/// DBSCAN with the Euclidean metric. A point's neighborhood includes the
/// point itself, so `min_pts = 1` makes every point a core point.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("eps must be > 0, got {eps}")));
    }
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| euclidean(&points[i], &points[j]) <= eps).collect())
        .collect();
    let is_core = |i: usize| neighbors[i].len() >= min_pts.max(1);
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut cluster = 0;
    for start in 0..n {
        if labels[start].is_some() || !is_core(start) {
            continue;
        }
        labels[start] = Some(cluster);
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            if !is_core(p) {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    stack.push(q);
                }
            }
        }
        cluster += 1;
    }
    Ok(canonicalize(&labels))
}

/// Size and centroid of a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub size: usize,
    pub centroid: Vec<f64>,
}

impl ClusterStats {
    pub fn of(points: &[&[f64]]) -> Self {
        let dim = points.first().map_or(0, |p| p.len());
        let mut centroid = vec![0.0; dim];
        for p in points {
            for (c, v) in centroid.iter_mut().zip(p.iter()) {
                *c += v;
            }
        }
        let n = points.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= n);
        Self {
            size: points.len(),
            centroid,
        }
    }
}

/// Ward merge cost `μA μB / (μA + μB) · ‖mA − mB‖²`.
pub fn ward_merge_distance(a: &ClusterStats, b: &ClusterStats) -> f64 {
    let (na, nb) = (a.size as f64, b.size as f64);
    let d2: f64 = a.centroid.iter().zip(&b.centroid).map(|(x, y)| (x - y) * (x - y)).sum();
    na * nb / (na + nb) * d2
}

/// One agglomeration step. Clusters are named by their smallest member
/// index; `b` is absorbed into `a` and `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Ward merge cost Δ of the pair.
    pub delta: f64,
    pub size: usize,
}

impl Merge {
    /// Distance-scale height compared against the threshold.
    pub fn height(&self) -> f64 {
        self.delta.sqrt()
    }
}

/// Full Ward dendrogram by greedy merging with Lance–Williams updates.
/// Ties go to the lowest `(a, b)` pair.
pub fn ward_dendrogram(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut delta = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = 0.5 * squared_distance(&points[i], &points[j]);
            delta[i * n + j] = d;
            delta[j * n + i] = d;
        }
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && best.is_none_or(|(_, _, d)| delta[i * n + j] < d) {
                    best = Some((i, j, delta[i * n + j]));
                }
            }
        }
        let (a, b, dab) = best.unwrap();
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let d = ((na + nk) * delta[a * n + k] + (nb + nk) * delta[b * n + k] - nk * dab) / (na + nb + nk);
            delta[a * n + k] = d;
            delta[k * n + a] = d;
        }
        size[a] += size[b];
        active[b] = false;
        merges.push(Merge {
            a,
            b,
            delta: dab,
            size: size[a],
        });
    }
    merges
}

/// Flat labels from the dendrogram, applying merges whose height
/// `√Δ` does not exceed `threshold`.
pub fn cut_dendrogram(n: usize, merges: &[Merge], threshold: f64) -> Vec<Option<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for m in merges.iter().take_while(|m| m.height() <= threshold) {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[rb] = ra;
    }
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(find(&mut parent, i))).collect();
    canonicalize(&labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalResult {
    pub labels: Vec<Option<usize>>,
    pub merges: Vec<Merge>,
}

pub fn hierarchical_cluster(points: &[Vec<f64>], threshold: f64) -> Result<HierarchicalResult> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "distance threshold must be > 0, got {threshold}"
        )));
    }
    let merges = ward_dendrogram(points);
    Ok(HierarchicalResult {
        labels: cut_dendrogram(points.len(), &merges, threshold),
        merges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DBSCAN")]
    Dbscan,
    Hierarchical,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dbscan => "dbscan",
            Method::Hierarchical => "hierarchical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Linkage {
    #[default]
    Ward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub method: Method,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_min_pts")]
    pub min_pts: usize,
    #[serde(default = "default_eps")]
    pub distance_threshold: f64,
    #[serde(default)]
    pub linkage: Linkage,
}

fn default_eps() -> f64 {
    0.5
}

fn default_min_pts() -> usize {
    1
}

impl ClusterParams {
    pub fn dbscan(eps: f64, min_pts: usize) -> Self {
        Self {
            method: Method::Dbscan,
            metric: Metric::Euclidean,
            eps,
            min_pts,
            distance_threshold: default_eps(),
            linkage: Linkage::Ward,
        }
    }

    pub fn hierarchical(distance_threshold: f64) -> Self {
        Self {
            method: Method::Hierarchical,
            distance_threshold,
            ..Self::dbscan(default_eps(), default_min_pts())
        }
    }

    /// The clustering-block settings: DBSCAN eps 0.5 and 0.6 with
    /// min_pts 1, Ward thresholds 0.5 and 1.0.
    pub fn table() -> Vec<Self> {
        vec![
            Self::dbscan(0.5, 1),
            Self::dbscan(0.6, 1),
            Self::hierarchical(0.5),
            Self::hierarchical(1.0),
        ]
    }

    /// eps for DBSCAN, distance threshold for hierarchical.
    pub fn scale(&self) -> f64 {
        match self.method {
            Method::Dbscan => self.eps,
            Method::Hierarchical => self.distance_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_nan()
            || self.eps <= 0.0
            || self.min_pts == 0
            || self.distance_threshold.is_nan()
            || self.distance_threshold <= 0.0
        {
            return Err(Error::InvalidConfig(format!("invalid cluster params {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub t: f64,
    /// `(user, label)`; `None` marks noise.
    pub labels: Vec<(usize, Option<usize>)>,
    pub params: ClusterParams,
    pub mode: FeatureMode,
    pub features: Vec<FeatureVector>,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().filter_map(|(_, l)| *l).max().map_or(0, |m| m + 1)
    }
}

/// Normalizes one instant's predictions and clusters them.
pub fn cluster_instant(
    records: &[PredictionRecord],
    norm: &NormalizeConfig,
    params: &ClusterParams,
) -> Result<ClusterAssignment> {
    params.validate()?;
    let features = normalize_features(records, norm);
    let points: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let labels = match params.method {
        Method::Dbscan => dbscan(&points, params.eps, params.min_pts)?,
        Method::Hierarchical => hierarchical_cluster(&points, params.distance_threshold)?.labels,
    };
    Ok(ClusterAssignment {
        t: records.first().map_or(0.0, |r| r.t),
        labels: features.iter().map(|f| f.user).zip(labels).collect(),
        params: *params,
        mode: norm.mode,
        features,
    })
}

/// One row of an assignment table.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentRow {
    pub record: PredictionRecord,
    pub label: Option<usize>,
    pub params: ClusterParams,
    pub mode: FeatureMode,
}

/// Writes CSV `t,user,x,y,heading,label,method,eps_or_threshold,features_mode`;
/// noise is labeled `-1`.
pub fn write_assignments_csv(path: &Path, rows: &[AssignmentRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "user",
        "x",
        "y",
        "heading",
        "label",
        "method",
        "eps_or_threshold",
        "features_mode",
    ])?;
    for r in rows {
        let p = &r.record;
        w.write_record(&[
            p.t.to_string(),
            p.user.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.heading.to_string(),
            r.label.map_or("-1".to_string(), |l| l.to_string()),
            r.params.method.to_string(),
            r.params.scale().to_string(),
            r.mode.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: f64, y: f64, heading: f64, user: usize) -> PredictionRecord {
        PredictionRecord {
            t: 1.0,
            user,
            x,
            y,
            heading,
            smoothed: true,
            cold: false,
        }
    }

    #[test]
    fn normalization_examples() {
        let cfg = NormalizeConfig::new([0.0, 0.0, 60.0, 40.0], FeatureMode::PositionHeading);
        let f = normalize_features(&[rec(30.0, 20.0, 90.0, 0)], &cfg);
        assert_eq!(f[0].values[..2], [0.5, 0.5]);
        assert!((f[0].values[2] - 0.5).abs() < 1e-15);
        assert!(f[0].values[3].abs() < 1e-15);

        let cfg = NormalizeConfig::new([0.0, 0.0, 60.0, 40.0], FeatureMode::Position);
        assert_eq!(normalize_features(&[rec(1.0, 2.0, 3.0, 0)], &cfg)[0].values.len(), 2);

        let degenerate = NormalizeConfig::new([5.0, 5.0, 5.0, 5.0], FeatureMode::Position);
        assert_eq!(
            normalize_features(&[rec(1.0, 9.0, 0.0, 0)], &degenerate)[0].values,
            [0.5, 0.5]
        );

        let per_instant = NormalizeConfig {
            frame: NormalizationFrame::PerInstant,
            ..NormalizeConfig::new([0.0; 4], FeatureMode::Position)
        };
        let f = normalize_features(&[rec(10.0, 0.0, 0.0, 0), rec(20.0, 4.0, 0.0, 1)], &per_instant);
        assert_eq!(f[1].values, [1.0, 1.0]);

        let degrees = NormalizeConfig {
            heading_scale: HeadingScale::Degrees,
            ..NormalizeConfig::new([0.0, 0.0, 1.0, 1.0], FeatureMode::PositionHeading)
        };
        assert_eq!(
            normalize_features(&[rec(0.0, 0.0, 180.0, 0)], &degrees)[0].values[2],
            0.25
        );
    }

    #[test]
    fn dbscan_small_cases() {
        let pts = vec![vec![0.0], vec![0.4], vec![1.2]];
        assert_eq!(dbscan(&pts, 0.5, 1).unwrap(), vec![Some(0), Some(0), Some(1)]);
        assert_eq!(dbscan(&[vec![0.0], vec![0.1]], 0.5, 3).unwrap(), vec![None, None]);
        assert!(dbscan(&[], 0.5, 1).unwrap().is_empty());
        assert!(dbscan(&pts, 0.0, 1).is_err());
    }

    #[test]
    fn dbscan_border_points() {
        // 3 is a border point of the dense run 0..=2; 4 is only reachable
        // through 3 and stays noise
        let pts = vec![vec![0.0], vec![0.1], vec![0.2], vec![0.68], vec![1.2]];
        assert_eq!(
            dbscan(&pts, 0.5, 3).unwrap(),
            vec![Some(0), Some(0), Some(0), Some(0), None]
        );
    }

    #[test]
    fn ward_distance_examples() {
        let a = ClusterStats {
            size: 1,
            centroid: vec![0.0, 0.0],
        };
        let b = ClusterStats {
            size: 1,
            centroid: vec![3.0, 4.0],
        };
        assert_eq!(ward_merge_distance(&a, &b), 12.5);
        let a2 = ClusterStats { size: 2, ..a.clone() };
        let b2 = ClusterStats { size: 2, ..b };
        assert_eq!(ward_merge_distance(&a2, &b2), 25.0);
        assert_eq!(ward_merge_distance(&a, &a2), 0.0);
    }

    #[test]
    fn threshold_extremes() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3, (i * i) as f64 * 0.1]).collect();
        let tiny = hierarchical_cluster(&pts, 1e-12).unwrap();
        assert_eq!(tiny.labels, (0..6).map(Some).collect::<Vec<_>>());
        let huge = hierarchical_cluster(&pts, 1e12).unwrap();
        assert!(huge.labels.iter().all(|&l| l == Some(0)));
        assert_eq!(huge.merges.len(), 5);
        assert_eq!(huge.merges.last().unwrap().size, 6);
        assert!(hierarchical_cluster(&[], 0.5).unwrap().labels.is_empty());
        assert!(hierarchical_cluster(&pts, 0.0).is_err());
    }

    #[test]
    fn tie_break_lowest_pair() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        let m = ward_dendrogram(&pts);
        assert_eq!((m[0].a, m[0].b), (0, 1));
    }

    #[test]
    fn canonical_labels() {
        assert_eq!(
            canonicalize(&[Some(4), None, Some(2), Some(4)]),
            vec![Some(0), None, Some(1), Some(0)]
        );
    }

    #[test]
    fn assignments_csv_format() {
        let rows = vec![AssignmentRow {
            record: rec(1.0, 2.0, 3.0, 4),
            label: None,
            params: ClusterParams::dbscan(0.6, 1),
            mode: FeatureMode::PositionHeading,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_assignments_csv(&p, &rows).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "t,user,x,y,heading,label,method,eps_or_threshold,features_mode\n\
             1,4,1,2,3,-1,dbscan,0.6,position_heading\n"
        );
    }
}
