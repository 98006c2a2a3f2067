//! Measurement-campaign geometry: base station, scatterers and lap
//! trajectories with the four mobility patterns.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{derive_seed, wrap_degrees, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "LoS")]
    Los,
    #[serde(rename = "NLoS")]
    Nlos,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Los => "LoS",
            Scenario::Nlos => "NLoS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Clockwise,
    ClockwiseRandom,
    Anticlockwise,
    AnticlockwiseRandom,
}

impl Pattern {
    /// Campaign lap order; lap `k` of a campaign uses `ALL[k]`.
    pub const ALL: [Pattern; 4] = [
        Pattern::Clockwise,
        Pattern::ClockwiseRandom,
        Pattern::Anticlockwise,
        Pattern::AnticlockwiseRandom,
    ];

    pub fn is_clockwise(self) -> bool {
        matches!(self, Pattern::Clockwise | Pattern::ClockwiseRandom)
    }

    pub fn is_random(self) -> bool {
        matches!(self, Pattern::ClockwiseRandom | Pattern::AnticlockwiseRandom)
    }

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Clockwise => "clockwise",
            Pattern::ClockwiseRandom => "clockwise_random",
            Pattern::Anticlockwise => "anticlockwise",
            Pattern::AnticlockwiseRandom => "anticlockwise_random",
        }
    }

    pub fn from_name(name: &str) -> Option<Pattern> {
        Pattern::ALL.into_iter().find(|p| p.name() == name)
    }

    fn index(self) -> u64 {
        Pattern::ALL.iter().position(|&p| p == self).unwrap() as u64
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Directional gain of the UE antennas mounted on the vehicle roof.
///
/// Each recorded layer has a cardioid pattern `(1 + d·cos δ) / (1 + d)`,
/// where `δ` is the departure direction relative to the layer boresight
/// and the boresight is given relative to the vehicle heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeAntenna {
    pub directivity: f64,
    pub layer_boresights_deg: Vec<f64>,
}

impl Default for UeAntenna {
    fn default() -> Self {
        Self {
            directivity: 0.7,
            layer_boresights_deg: vec![0.0, 90.0],
        }
    }
}

impl UeAntenna {
    /// Gain of `layer` for a path leaving the UE towards compass bearing
    /// `departure_deg` while the vehicle points at `heading_deg`.
    pub fn gain(&self, layer: usize, departure_deg: f64, heading_deg: f64) -> f64 {
        let boresight = self.layer_boresights_deg.get(layer).copied().unwrap_or(0.0);
        let delta = (departure_deg - heading_deg - boresight).to_radians();
        (1.0 + self.directivity * delta.cos()) / (1.0 + self.directivity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Base-station antenna position (x east, y north, z up), meters.
    pub bs_position: [f64; 3],
    /// Compass bearing of the array broadside, degrees clockwise from north.
    pub bs_boresight_deg: f64,
    pub path_height: f64,
    /// Closed loop; the last waypoint connects back to the first.
    pub lap_waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    pub sample_interval: f64,
    pub jitter_amplitude: f64,
    /// Fillet radius applied at every corner, 0 for sharp corners.
    pub corner_radius: f64,
    /// Fraction of the perimeter at which random-pattern laps start.
    pub random_start_fraction: f64,
    pub scatterers: Vec<[f64; 3]>,
    pub ue_antenna: UeAntenna,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::los()
    }
}

impl ScenarioConfig {
    /// Garage-roof route 10 m above ground, in view of the base station.
    pub fn los() -> Self {
        Self {
            scenario: Scenario::Los,
            bs_position: [60.0, -40.0, 20.0],
            bs_boresight_deg: 0.0,
            path_height: 10.0,
            lap_waypoints: vec![[0.0, 0.0], [120.0, 0.0], [120.0, 80.0], [0.0, 80.0]],
            speed: 5.0,
            sample_interval: 0.02,
            jitter_amplitude: 2.0,
            corner_radius: 0.0,
            random_start_fraction: 0.25,
            scatterers: vec![
                [-15.0, 20.0, 5.0],
                [-15.0, 70.0, 8.0],
                [135.0, 15.0, 6.0],
                [135.0, 65.0, 10.0],
                [40.0, 100.0, 12.0],
                [90.0, 100.0, 7.0],
            ],
            ue_antenna: UeAntenna::default(),
            rng_seed: 7,
        }
    }

    /// Ground-level route below the base-station building.
    pub fn nlos() -> Self {
        Self {
            scenario: Scenario::Nlos,
            path_height: 0.0,
            ..Self::los()
        }
    }

    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Los => Self::los(),
            Scenario::Nlos => Self::nlos(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad("speed must be > 0");
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return bad("sample_interval must be > 0");
        }
        if !(self.jitter_amplitude >= 0.0 && self.jitter_amplitude.is_finite()) {
            return bad("jitter_amplitude must be >= 0");
        }
        if !(self.corner_radius >= 0.0 && self.corner_radius.is_finite()) {
            return bad("corner_radius must be >= 0");
        }
        if !(0.0..1.0).contains(&self.random_start_fraction) {
            return bad("random_start_fraction must be in [0, 1)");
        }
        if self.lap_waypoints.len() < 3 {
            return bad("a lap needs at least 3 waypoints");
        }
        let coords_finite = self.lap_waypoints.iter().flatten().all(|v| v.is_finite())
            && self.scatterers.iter().flatten().all(|v| v.is_finite())
            && self.bs_position.iter().all(|v| v.is_finite());
        if !coords_finite {
            return bad("non-finite coordinate");
        }
        if self.ue_antenna.layer_boresights_deg.is_empty() || !(0.0..1.0).contains(&self.ue_antenna.directivity) {
            return bad("ue_antenna needs >= 1 layer and directivity in [0, 1)");
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the base loop: `[min_x, min_y, max_x, max_y]`.
    pub fn bounding_box(&self) -> [f64; 4] {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &[x, y] in &self.lap_waypoints {
            bb[0] = bb[0].min(x);
            bb[1] = bb[1].min(y);
            bb[2] = bb[2].max(x);
            bb[3] = bb[3].max(y);
        }
        bb
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let [x0, y0, x1, y1] = self.bounding_box();
        (x1 - x0).hypot(y1 - y0)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Course over ground, degrees clockwise from north, in `[0, 360)`.
    pub heading: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lap {
    pub pattern: Pattern,
    pub poses: Vec<Pose>,
}

/// Half-lap pose sequence treated as an independent user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTrack {
    pub user: usize,
    pub pattern: Pattern,
    pub poses: Vec<Pose>,
}

/// Compass bearing of a planar direction vector, degrees in `[0, 360)`.
pub fn compass_bearing(dx: f64, dy: f64) -> f64 {
    wrap_degrees(dx.atan2(dy).to_degrees())
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Line {
        start: [f64; 2],
        dir: [f64; 2],
        len: f64,
    },
    Arc {
        center: [f64; 2],
        radius: f64,
        start_angle: f64,
        /// +1 counterclockwise, -1 clockwise
        sense: f64,
        sweep: f64,
    },
}

impl Segment {
    fn len(&self) -> f64 {
        match *self {
            Segment::Line { len, .. } => len,
            Segment::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    /// Point and unit tangent at arc length `s` into the segment.
    fn eval(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        match *self {
            Segment::Line { start, dir, .. } => ([start[0] + dir[0] * s, start[1] + dir[1] * s], dir),
            Segment::Arc {
                center,
                radius,
                start_angle,
                sense,
                ..
            } => {
                let a = start_angle + sense * s / radius;
                let p = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
                let t = [-sense * a.sin(), sense * a.cos()];
                (p, t)
            }
        }
    }
}

/// Closed planar path parameterized by arc length.
#[derive(Debug, Clone)]
pub struct LoopPath {
    segments: Vec<Segment>,
    cumulative: Vec<f64>,
    perimeter: f64,
}

impl LoopPath {
    /// Builds the loop through `waypoints` in the given order, with corners
    /// optionally rounded by `corner_radius`.
    pub fn new(waypoints: &[[f64; 2]], corner_radius: f64) -> Result<Self> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(waypoints.len());
        for &p in waypoints {
            if pts.last().is_none_or(|q: &[f64; 2]| dist2(*q, p) > 0.0) {
                pts.push(p);
            }
        }
        while pts.len() > 1 && dist2(pts[0], *pts.last().unwrap()) == 0.0 {
            pts.pop();
        }
        let perimeter: f64 = (0..pts.len()).map(|i| dist2(pts[i], pts[(i + 1) % pts.len()])).sum();
        if pts.len() < 2 || perimeter <= 0.0 {
            return Err(Error::DegenerateLoop(format!(
                "waypoints {waypoints:?} enclose zero perimeter"
            )));
        }

        let n = pts.len();
        let dirs: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % n]);
                let l = dist2(a, b);
                [(b[0] - a[0]) / l, (b[1] - a[1]) / l]
            })
            .collect();
        let lens: Vec<f64> = (0..n).map(|i| dist2(pts[i], pts[(i + 1) % n])).collect();

        // trim length at each vertex i (between edge i-1 and edge i)
        let mut trim = vec![0.0; n];
        let mut turn = vec![0.0; n];
        if corner_radius > 0.0 {
            for i in 0..n {
                let d_in = dirs[(i + n - 1) % n];
                let d_out = dirs[i];
                let cross = d_in[0] * d_out[1] - d_in[1] * d_out[0];
                let dot = (d_in[0] * d_out[0] + d_in[1] * d_out[1]).clamp(-1.0, 1.0);
                let angle = cross.atan2(dot);
                if angle.abs() >= PI - 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "cannot round the reversing corner at waypoint {i}"
                    )));
                }
                turn[i] = angle;
                trim[i] = corner_radius * (angle.abs() / 2.0).tan();
            }
            for i in 0..n {
                if trim[i] + trim[(i + 1) % n] > lens[i] + 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "corner_radius {corner_radius} too large for edge {i}"
                    )));
                }
            }
        }

        let mut segments = Vec::with_capacity(2 * n);
        for i in 0..n {
            let d = dirs[i];
            let start = [pts[i][0] + d[0] * trim[i], pts[i][1] + d[1] * trim[i]];
            let len = lens[i] - trim[i] - trim[(i + 1) % n];
            if len > 0.0 {
                segments.push(Segment::Line { start, dir: d, len });
            }
            let j = (i + 1) % n;
            if trim[j] > 0.0 && turn[j] != 0.0 {
                let sense = turn[j].signum();
                let tangent_pt = [pts[j][0] - d[0] * trim[j], pts[j][1] - d[1] * trim[j]];
                // center lies on the inner normal
                let normal = [-d[1] * sense, d[0] * sense];
                let center = [
                    tangent_pt[0] + normal[0] * corner_radius,
                    tangent_pt[1] + normal[1] * corner_radius,
                ];
                let start_angle = (tangent_pt[1] - center[1]).atan2(tangent_pt[0] - center[0]);
                segments.push(Segment::Arc {
                    center,
                    radius: corner_radius,
                    start_angle,
                    sense,
                    sweep: turn[j].abs(),
                });
            }
        }

        let mut cumulative = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            cumulative.push(acc);
            acc += s.len();
        }
        Ok(Self {
            segments,
            cumulative,
            perimeter: acc,
        })
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Point and unit tangent at arc length `s` (taken modulo the perimeter).
    pub fn eval(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let s = s.rem_euclid(self.perimeter);
        let idx = match self.cumulative.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.segments[idx].eval(s - self.cumulative[idx])
    }

    /// Shortest distance from `p` to the loop.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        self.segments
            .iter()
            .map(|seg| match *seg {
                Segment::Line { start, dir, len } => {
                    let v = [p[0] - start[0], p[1] - start[1]];
                    let u = (v[0] * dir[0] + v[1] * dir[1]).clamp(0.0, len);
                    dist2(p, [start[0] + dir[0] * u, start[1] + dir[1] * u])
                }
                Segment::Arc {
                    center,
                    radius,
                    start_angle,
                    sense,
                    sweep,
                } => {
                    let a = (p[1] - center[1]).atan2(p[0] - center[0]);
                    let rel = ((a - start_angle) * sense).rem_euclid(2.0 * PI);
                    if rel <= sweep {
                        (dist2(p, center) - radius).abs()
                    } else {
                        let (a0, _) = seg.eval(0.0);
                        let (a1, _) = seg.eval(seg.len());
                        dist2(p, a0).min(dist2(p, a1))
                    }
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn signed_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// Waypoints ordered for the traversal direction of `pattern`
/// (x east, y north, so a negative signed area is clockwise).
pub fn ordered_waypoints(cfg: &ScenarioConfig, pattern: Pattern) -> Result<Vec<[f64; 2]>> {
    let area = signed_area(&cfg.lap_waypoints);
    if area == 0.0 {
        return Err(Error::DegenerateLoop(
            "waypoints enclose zero area, traversal direction undefined".into(),
        ));
    }
    let mut pts = cfg.lap_waypoints.clone();
    if (area < 0.0) != pattern.is_clockwise() {
        // keep the first waypoint as the start point
        pts[1..].reverse();
    }
    Ok(pts)
}

/// Base (jitter-free) loop for a pattern's traversal direction.
pub fn base_path(cfg: &ScenarioConfig, pattern: Pattern) -> Result<LoopPath> {
    LoopPath::new(&ordered_waypoints(cfg, pattern)?, cfg.corner_radius)
}

/// Low-pass lateral offset sequence for random patterns: Gaussian knots held
/// for one second, smoothed by a one-second moving average, clamped to the
/// jitter amplitude.
fn lateral_jitter(n: usize, cfg: &ScenarioConfig, seed: u64) -> Vec<f64> {
    let amp = cfg.jitter_amplitude;
    if amp == 0.0 || n == 0 {
        return vec![0.0; n];
    }
    let window = ((1.0 / cfg.sample_interval).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, amp / 3.0).unwrap();
    let total = n + window;
    let knots: Vec<f64> = (0..total.div_ceil(window)).map(|_| normal.sample(&mut rng)).collect();
    let held: Vec<f64> = (0..total).map(|k| knots[k / window]).collect();
    let mut out = Vec::with_capacity(n);
    let mut acc: f64 = held[..window].iter().sum();
    for k in window..total {
        acc += held[k] - held[k - window];
        out.push((acc / window as f64).clamp(-amp, amp));
    }
    out
}

/// Samples one lap of `pattern` at constant speed every `sample_interval`.
pub fn generate_trajectory(cfg: &ScenarioConfig, pattern: Pattern) -> Result<Lap> {
    cfg.validate()?;
    let path = base_path(cfg, pattern)?;
    let step = cfg.speed * cfg.sample_interval;
    let n = ((path.perimeter() / step).round() as usize).max(1);
    let start = if pattern.is_random() {
        cfg.random_start_fraction * path.perimeter()
    } else {
        0.0
    };
    let offsets = if pattern.is_random() {
        lateral_jitter(n, cfg, derive_seed(cfg.rng_seed, &[0x4a17, pattern.index()]))
    } else {
        vec![0.0; n]
    };

    let poses = (0..n)
        .map(|k| {
            let (p, t) = path.eval(start + k as f64 * step);
            let left = [-t[1], t[0]];
            let o = offsets[k];
            // lateral rate from the offset sequence itself
            let slope = if n < 2 {
                0.0
            } else if k + 1 < n {
                (offsets[k + 1] - o) / step
            } else {
                (o - offsets[k - 1]) / step
            };
            let vel = [t[0] + slope * left[0], t[1] + slope * left[1]];
            Pose {
                x: p[0] + o * left[0],
                y: p[1] + o * left[1],
                z: cfg.path_height,
                heading: compass_bearing(vel[0], vel[1]),
                t: k as f64 * cfg.sample_interval,
            }
        })
        .collect();
    Ok(Lap { pattern, poses })
}

/// One lap per mobility pattern, in [`Pattern::ALL`] order.
pub fn generate_campaign(cfg: &ScenarioConfig) -> Result<Vec<Lap>> {
    Pattern::ALL.iter().map(|&p| generate_trajectory(cfg, p)).collect()
}

/// Splits every lap at its midpoint into two virtual users; the first half
/// keeps the extra sample on odd counts. User `2k` and `2k + 1` come from
/// lap `k`. Each user's clock restarts at zero on its first sample.
pub fn split_virtual_users(laps: &[Lap]) -> Vec<UserTrack> {
    let mut users = Vec::with_capacity(2 * laps.len());
    for lap in laps {
        let mid = lap.poses.len().div_ceil(2);
        for half in [&lap.poses[..mid], &lap.poses[mid..]] {
            let t0 = half.first().map_or(0.0, |p| p.t);
            users.push(UserTrack {
                user: users.len(),
                pattern: lap.pattern,
                poses: half.iter().map(|p| Pose { t: p.t - t0, ..*p }).collect(),
            });
        }
    }
    users
}

/// Writes tracks as CSV with header `t,x,y,z,heading,user,pattern`.
pub fn write_trajectories_csv(path: &Path, users: &[UserTrack]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "y", "z", "heading", "user", "pattern"])?;
    for u in users {
        for p in &u.poses {
            w.write_record(&[
                p.t.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
                p.heading.to_string(),
                u.user.to_string(),
                u.pattern.name().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_cfg() -> ScenarioConfig {
        ScenarioConfig {
            lap_waypoints: vec![[0.0, 0.0], [60.0, 0.0], [60.0, 40.0], [0.0, 40.0]],
            ..ScenarioConfig::los()
        }
    }

    #[test]
    fn rectangle_lap_has_2000_poses_spaced_a_decimeter() {
        let lap = generate_trajectory(&rect_cfg(), Pattern::Clockwise).unwrap();
        assert_eq!(lap.poses.len(), 2000);
        let p = &lap.poses;
        assert!((p[1].x - p[0].x).hypot(p[1].y - p[0].y) - 0.1 < 1e-9);
    }

    #[test]
    fn eastbound_segment_heading_is_90() {
        // counterclockwise waypoint order: the anticlockwise lap starts eastbound
        let lap = generate_trajectory(&rect_cfg(), Pattern::Anticlockwise).unwrap();
        assert_eq!(lap.poses[5].heading, 90.0);
        // clockwise from the same start goes north first
        let lap = generate_trajectory(&rect_cfg(), Pattern::Clockwise).unwrap();
        assert_eq!(lap.poses[5].heading, 0.0);
    }

    #[test]
    fn degenerate_loop_rejected() {
        let cfg = ScenarioConfig {
            lap_waypoints: vec![[1.0, 1.0]; 4],
            ..rect_cfg()
        };
        assert!(matches!(
            generate_trajectory(&cfg, Pattern::Clockwise),
            Err(Error::DegenerateLoop(_))
        ));
        let collinear = ScenarioConfig {
            lap_waypoints: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            ..rect_cfg()
        };
        assert!(matches!(
            generate_trajectory(&collinear, Pattern::Clockwise),
            Err(Error::DegenerateLoop(_))
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            ScenarioConfig {
                speed: 0.0,
                ..rect_cfg()
            },
            ScenarioConfig {
                sample_interval: -1.0,
                ..rect_cfg()
            },
            ScenarioConfig {
                jitter_amplitude: -0.1,
                ..rect_cfg()
            },
            ScenarioConfig {
                lap_waypoints: vec![[0.0, 0.0], [1.0, 1.0]],
                ..rect_cfg()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn split_counts() {
        let mk = |n: usize| Lap {
            pattern: Pattern::Clockwise,
            poses: (0..n)
                .map(|k| Pose {
                    x: 0.0,
                    y: 0.0,
                    z: 0.0,
                    heading: 0.0,
                    t: k as f64,
                })
                .collect(),
        };
        let users = split_virtual_users(&vec![mk(4000); 4]);
        assert_eq!(users.len(), 8);
        assert!(users.iter().all(|u| u.poses.len() == 2000));
        assert_eq!(users[7].user, 7);

        let users = split_virtual_users(&[mk(2001)]);
        assert_eq!(users[0].poses.len(), 1001);
        assert_eq!(users[1].poses.len(), 1000);
        assert_eq!(users[1].poses[0].t, 0.0);

        assert!(split_virtual_users(&[]).is_empty());
    }

    #[test]
    fn rounded_corners_keep_constant_spacing() {
        let cfg = ScenarioConfig {
            corner_radius: 5.0,
            ..rect_cfg()
        };
        let path = base_path(&cfg, Pattern::Clockwise).unwrap();
        let expected = 2.0 * (60.0 + 40.0) - 4.0 * 2.0 * 5.0 + 2.0 * PI * 5.0;
        assert!((path.perimeter() - expected).abs() < 1e-9);
        let lap = generate_trajectory(&cfg, Pattern::Clockwise).unwrap();
        for w in lap.poses.windows(2) {
            let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            // chord of a 0.1 m arc on a 5 m radius differs by < 1e-5
            assert!((d - 0.1).abs() < 1e-4, "{d}");
        }
        for p in &lap.poses {
            assert!(path.distance_to([p.x, p.y]) < 1e-9);
        }
    }

    #[test]
    fn trajectories_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("traj.csv");
        let laps = vec![generate_trajectory(&rect_cfg(), Pattern::Clockwise).unwrap()];
        write_trajectories_csv(&f, &split_virtual_users(&laps)).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.starts_with("t,x,y,z,heading,user,pattern\n"));
        assert_eq!(text.lines().count(), 2001);
    }
}
