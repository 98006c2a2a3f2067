//! SRS preprocessing: PRB pair averaging, every-third PRSG downsampling,
//! forward filling of stale PRSGs and 1×128 amplitude snapshot assembly.

use std::path::Path;

use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CtfMatrix, NUM_PRBS};
use crate::{Error, Result};

/// PRB subgroups after pair averaging (`ceil(273 / 2)`).
pub const NUM_PRSGS: usize = 137;
pub const DOWNSAMPLE_STEP: usize = 3;
/// PRSGs kept after downsampling (`ceil(137 / 3)`).
pub const NUM_KEPT_PRSGS: usize = 46;
pub const SNAPSHOT_LEN: usize = 128;

/// One SRS report: complex channel estimates per (layer-major beam row, PRB),
/// plus which PRSGs were refreshed in this report.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSrsGrid {
    /// `rows × 273`, row = `layer · 64 + beam`.
    pub values: Array2<Complex64>,
    /// `rows × 137`; `false` marks a PRSG that was not updated.
    pub update_mask: Array2<bool>,
}

impl RawSrsGrid {
    /// Wraps a full-band CTF with every PRSG marked as updated.
    pub fn from_ctf(ctf: &CtfMatrix) -> Self {
        let rows = ctf.values.nrows();
        Self {
            values: ctf.values.clone(),
            update_mask: Array2::from_elem((rows, NUM_PRSGS), true),
        }
    }

    /// Drops each PRSG update (across all beams and layers) with
    /// probability `p_miss`.
    pub fn mask_random<R: Rng + ?Sized>(&mut self, p_miss: f64, rng: &mut R) {
        for mut col in self.update_mask.columns_mut() {
            let updated = !rng.random_bool(p_miss.clamp(0.0, 1.0));
            col.fill(updated);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrsgGrid {
    /// `rows × n_prsg`
    pub values: Array2<Complex64>,
    pub mask: Array2<bool>,
}

impl PrsgGrid {
    pub fn n_prsg(&self) -> usize {
        self.values.ncols()
    }
}

/// Averages adjacent PRB pairs; the lone PRB 272 forms the last subgroup.
pub fn prb_pair_average(grid: &RawSrsGrid) -> Result<PrsgGrid> {
    let (rows, prbs) = grid.values.dim();
    if prbs != NUM_PRBS {
        return Err(Error::WrongCount {
            what: "PRBs",
            expected: NUM_PRBS,
            got: prbs,
        });
    }
    if grid.update_mask.dim() != (rows, NUM_PRSGS) {
        return Err(Error::WrongCount {
            what: "mask PRSGs",
            expected: NUM_PRSGS,
            got: grid.update_mask.ncols(),
        });
    }
    let values = Array2::from_shape_fn((rows, NUM_PRSGS), |(r, k)| {
        if 2 * k + 1 < prbs {
            (grid.values[[r, 2 * k]] + grid.values[[r, 2 * k + 1]]) * 0.5
        } else {
            grid.values[[r, 2 * k]]
        }
    });
    Ok(PrsgGrid {
        values,
        mask: grid.update_mask.clone(),
    })
}

/// Keeps PRSGs `0, 3, 6, …, 135`.
pub fn prsg_downsample(prsgs: &PrsgGrid) -> Result<PrsgGrid> {
    if prsgs.n_prsg() != NUM_PRSGS {
        return Err(Error::WrongCount {
            what: "PRSGs",
            expected: NUM_PRSGS,
            got: prsgs.n_prsg(),
        });
    }
    let step = DOWNSAMPLE_STEP as isize;
    Ok(PrsgGrid {
        values: prsgs.values.slice(s![.., ..;step]).to_owned(),
        mask: prsgs.mask.slice(s![.., ..;step]).to_owned(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilledGrid {
    pub grid: PrsgGrid,
    /// Some entry had never been updated and holds 0.
    pub cold: bool,
}

/// Per-stream forward-fill state.
#[derive(Debug, Clone, Default)]
pub struct ForwardFill {
    last: Option<Array2<Complex64>>,
    seen: Option<Array2<bool>>,
}

impl ForwardFill {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces stale entries with the latest updated value for the same
    /// (row, PRSG); never-updated entries become 0 and mark the grid cold.
    pub fn fill(&mut self, grid: &PrsgGrid) -> Result<FilledGrid> {
        let dim = grid.values.dim();
        if grid.mask.dim() != dim {
            return Err(Error::WrongCount {
                what: "mask entries",
                expected: grid.values.len(),
                got: grid.mask.len(),
            });
        }
        let last = self.last.get_or_insert_with(|| Array2::zeros(dim));
        let seen = self.seen.get_or_insert_with(|| Array2::from_elem(dim, false));
        if last.dim() != dim {
            return Err(Error::WrongCount {
                what: "PRSG grid entries",
                expected: last.len(),
                got: grid.values.len(),
            });
        }
        let mut values = grid.values.clone();
        let mut cold = false;
        for ((idx, v), &updated) in values.indexed_iter_mut().zip(grid.mask.iter()) {
            if updated {
                last[idx] = *v;
                seen[idx] = true;
            } else if seen[idx] {
                *v = last[idx];
            } else {
                *v = Complex64::new(0.0, 0.0);
                cold = true;
            }
        }
        Ok(FilledGrid {
            grid: PrsgGrid {
                values,
                mask: grid.mask.clone(),
            },
            cold,
        })
    }
}

/// Forward-fills a time-ordered stream of PRSG grids.
pub fn forward_fill(stream: &[PrsgGrid]) -> Result<Vec<FilledGrid>> {
    let mut state = ForwardFill::new();
    stream.iter().map(|g| state.fill(g)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub features: Vec<f64>,
    pub t: f64,
    pub user: usize,
    #[serde(default)]
    pub cold: bool,
}

/// Ground truth attached to a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSnapshot {
    pub snapshot: Snapshot,
    pub label: Label,
}

/// Mean magnitude over the 46 kept PRSGs of every layer-major beam row.
pub fn assemble_snapshot(filled: &FilledGrid, t: f64, user: usize) -> Result<Snapshot> {
    let (rows, cols) = filled.grid.values.dim();
    if cols != NUM_KEPT_PRSGS {
        return Err(Error::WrongCount {
            what: "kept PRSGs",
            expected: NUM_KEPT_PRSGS,
            got: cols,
        });
    }
    if rows != SNAPSHOT_LEN {
        return Err(Error::WrongCount {
            what: "beam rows",
            expected: SNAPSHOT_LEN,
            got: rows,
        });
    }
    let mut features = Vec::with_capacity(rows);
    for row in filled.grid.values.rows() {
        if row.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite("PRSG grid"));
        }
        features.push(row.iter().map(|c| c.norm()).sum::<f64>() / cols as f64);
    }
    Ok(Snapshot {
        features,
        t,
        user,
        cold: filled.cold,
    })
}

/// Runs the full per-report chain for one user stream.
#[derive(Debug, Clone, Default)]
pub struct SnapshotPipeline {
    fill: ForwardFill,
}

impl SnapshotPipeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn process(&mut self, raw: &RawSrsGrid, t: f64, user: usize) -> Result<Snapshot> {
        let kept = prsg_downsample(&prb_pair_average(raw)?)?;
        let filled = self.fill.fill(&kept)?;
        assemble_snapshot(&filled, t, user)
    }
}

fn snapshot_header() -> Vec<String> {
    let mut h = vec!["t".to_string(), "user".to_string()];
    h.extend((0..SNAPSHOT_LEN).map(|i| format!("f{i}")));
    h.extend(["x", "y", "heading"].map(String::from));
    h
}

/// Writes labeled snapshots as CSV `t,user,f0..f127,x,y,heading`.
pub fn write_snapshots_csv(path: &Path, samples: &[LabeledSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(snapshot_header())?;
    let mut rec = Vec::with_capacity(SNAPSHOT_LEN + 5);
    for s in samples {
        rec.clear();
        rec.push(s.snapshot.t.to_string());
        rec.push(s.snapshot.user.to_string());
        rec.extend(s.snapshot.features.iter().map(f64::to_string));
        rec.extend([s.label.x, s.label.y, s.label.heading].map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_snapshots_csv(path: &Path) -> Result<Vec<LabeledSnapshot>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != snapshot_header() {
        return Err(Error::Malformed {
            path: path.into(),
            reason: "unexpected snapshot header".into(),
        });
    }
    let malformed = |reason: String| Error::Malformed {
        path: path.into(),
        reason,
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num =
            |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(|e| malformed(format!("column {i}: {e}"))) };
        let user = rec[1].parse::<usize>().map_err(|e| malformed(format!("user: {e}")))?;
        let features = (0..SNAPSHOT_LEN).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
        let base = 2 + SNAPSHOT_LEN;
        out.push(LabeledSnapshot {
            snapshot: Snapshot {
                features,
                t: num(0)?,
                user,
                cold: false,
            },
            label: Label {
                x: num(base)?,
                y: num(base + 1)?,
                heading: num(base + 2)?,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_from_fn(rows: usize, f: impl Fn(usize, usize) -> f64) -> RawSrsGrid {
        RawSrsGrid {
            values: Array2::from_shape_fn((rows, NUM_PRBS), |(r, k)| Complex64::new(f(r, k), 0.0)),
            update_mask: Array2::from_elem((rows, NUM_PRSGS), true),
        }
    }

    fn grid46(value: impl Fn(usize, usize) -> Complex64) -> PrsgGrid {
        PrsgGrid {
            values: Array2::from_shape_fn((SNAPSHOT_LEN, NUM_KEPT_PRSGS), |(r, c)| value(r, c)),
            mask: Array2::from_elem((SNAPSHOT_LEN, NUM_KEPT_PRSGS), true),
        }
    }

    #[test]
    fn pair_average_counts_and_values() {
        let out = prb_pair_average(&raw_from_fn(128, |_, _| 3.5)).unwrap();
        assert_eq!(out.n_prsg(), 137);
        assert!(out.values.iter().all(|v| *v == Complex64::new(3.5, 0.0)));

        let alt = raw_from_fn(2, |_, k| if k % 2 == 0 { 0.0 } else { 2.0 });
        let out = prb_pair_average(&alt).unwrap();
        for k in 0..136 {
            assert_eq!(out.values[[0, k]].re, 1.0);
        }
        // PRB 272 is even-indexed, value 0
        assert_eq!(out.values[[0, 136]].re, 0.0);
    }

    #[test]
    fn wrong_counts_rejected() {
        let bad = RawSrsGrid {
            values: Array2::zeros((4, 272)),
            update_mask: Array2::from_elem((4, NUM_PRSGS), true),
        };
        assert!(matches!(
            prb_pair_average(&bad),
            Err(Error::WrongCount { got: 272, .. })
        ));
        let bad = PrsgGrid {
            values: Array2::zeros((4, 136)),
            mask: Array2::from_elem((4, 136), true),
        };
        assert!(prsg_downsample(&bad).is_err());
        let bad = FilledGrid {
            grid: PrsgGrid {
                values: Array2::zeros((128, 45)),
                mask: Array2::from_elem((128, 45), true),
            },
            cold: false,
        };
        assert!(assemble_snapshot(&bad, 0.0, 0).is_err());
    }

    #[test]
    fn downsample_selects_every_third() {
        let ramp = PrsgGrid {
            values: Array2::from_shape_fn((1, NUM_PRSGS), |(_, k)| Complex64::new(k as f64, 0.0)),
            mask: Array2::from_elem((1, NUM_PRSGS), true),
        };
        let out = prsg_downsample(&ramp).unwrap();
        assert_eq!(out.n_prsg(), 46);
        assert_eq!(NUM_PRSGS.div_ceil(3), 46);
        let got: Vec<f64> = out.values.iter().map(|c| c.re).collect();
        let want: Vec<f64> = (0..46).map(|k| (3 * k) as f64).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn forward_fill_cases() {
        let g0 = grid46(|r, c| Complex64::new((r * 100 + c) as f64, 1.0));
        let mut g1 = grid46(|_, _| Complex64::new(-1.0, 0.0));
        g1.mask[[5, 7]] = false;
        let out = forward_fill(&[g0.clone(), g1.clone()]).unwrap();
        assert_eq!(out[1].grid.values[[5, 7]], g0.values[[5, 7]]);
        assert_eq!(out[1].grid.values[[5, 8]], Complex64::new(-1.0, 0.0));
        assert!(!out[1].cold);

        // masked at the start of a stream: zero and cold
        let out = forward_fill(&[g1.clone()]).unwrap();
        assert_eq!(out[0].grid.values[[5, 7]], Complex64::new(0.0, 0.0));
        assert!(out[0].cold);

        // nothing masked: identity
        let out = forward_fill(std::slice::from_ref(&g0)).unwrap();
        assert_eq!(out[0].grid, g0);
    }

    #[test]
    fn snapshot_layout() {
        let filled = FilledGrid {
            grid: grid46(|r, _| Complex64::new(0.0, if r < 64 { 1.0 } else { 2.0 })),
            cold: false,
        };
        let snap = assemble_snapshot(&filled, 0.5, 3).unwrap();
        assert_eq!(snap.features.len(), 128);
        assert!(snap.features[..64].iter().all(|&v| v == 1.0));
        assert!(snap.features[64..].iter().all(|&v| v == 2.0));

        let filled = FilledGrid {
            grid: grid46(|_, _| Complex64::new(3.0, 4.0)),
            cold: false,
        };
        let snap = assemble_snapshot(&filled, 0.0, 0).unwrap();
        assert!(snap.features.iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn non_finite_rejected() {
        let filled = FilledGrid {
            grid: grid46(|r, c| {
                if r == 3 && c == 9 {
                    Complex64::new(f64::NAN, 0.0)
                } else {
                    Complex64::new(1.0, 0.0)
                }
            }),
            cold: false,
        };
        assert!(matches!(assemble_snapshot(&filled, 0.0, 0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn snapshot_csv_round_trip() {
        let samples: Vec<LabeledSnapshot> = (0..3)
            .map(|i| LabeledSnapshot {
                snapshot: Snapshot {
                    features: (0..128).map(|k| (k * i) as f64 / 7.0).collect(),
                    t: i as f64 * 0.02,
                    user: i,
                    cold: false,
                },
                label: Label {
                    x: 1.0 / 3.0,
                    y: -2.5,
                    heading: 359.99,
                },
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_snapshots_csv(&p, &samples).unwrap();
        assert_eq!(read_snapshots_csv(&p).unwrap(), samples);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("t,user,f0,f1,"));
        assert!(header.lines().next().unwrap().ends_with(",f127,x,y,heading"));
    }

    fn arb_grid() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (
            prop::collection::vec(-1e3f64..1e3, 2 * NUM_PRBS),
            prop::collection::vec(any::<bool>(), NUM_PRSGS),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pair_average_and_downsample_commute_with_scaling(
            (vals, _) in arb_grid(), scale in -10.0f64..10.0
        ) {
            let raw = RawSrsGrid {
                values: Array2::from_shape_fn((1, NUM_PRBS), |(_, k)| Complex64::new(vals[2 * k], vals[2 * k + 1])),
                update_mask: Array2::from_elem((1, NUM_PRSGS), true),
            };
            let mut scaled = raw.clone();
            scaled.values.mapv_inplace(|v| v * scale);
            let a = prsg_downsample(&prb_pair_average(&raw).unwrap()).unwrap();
            let b = prsg_downsample(&prb_pair_average(&scaled).unwrap()).unwrap();
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                prop_assert!((x * scale - y).norm() <= 1e-9 * (1.0 + y.norm()));
            }
        }

        #[test]
        fn forward_fill_is_idempotent(
            seeds in prop::collection::vec((any::<u64>(), any::<u64>()), 1..6)
        ) {
            let stream: Vec<PrsgGrid> = seeds
                .iter()
                .map(|&(a, m)| PrsgGrid {
                    values: Array2::from_shape_fn((2, 8), |(r, c)| {
                        Complex64::new(((a >> (r * 8 + c)) & 0xff) as f64, 0.0)
                    }),
                    mask: Array2::from_shape_fn((2, 8), |(r, c)| (m >> (r * 8 + c)) & 1 == 1),
                })
                .collect();
            let once = forward_fill(&stream).unwrap();
            let again: Vec<PrsgGrid> = once.iter().map(|f| f.grid.clone()).collect();
            let twice = forward_fill(&again).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
