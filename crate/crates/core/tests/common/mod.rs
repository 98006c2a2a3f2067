//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uegroup::channel::{ArrayConfig, MultipathComponent};
use uegroup::neural::{mse, Network};

/// Beam-space CTF by direct summation over paths, array elements and
/// frequencies. Row order: per layer, H beams then V beams.
pub fn naive_ctf(mpcs: &[MultipathComponent], array: &ArrayConfig, freqs: &[f64]) -> Array2<Complex64> {
    let cols = array.array_columns;
    let rows = array.elements_per_pol / cols;
    let per_layer = array.n_beams_h + array.n_beams_v;
    let mut out = Array2::zeros((array.ue_layers * per_layer, freqs.len()));
    for m in 0..array.ue_layers {
        for row in 0..per_layer {
            let beam = if row < array.n_beams_h {
                row
            } else {
                row - array.n_beams_h
            };
            let (kh, kv) = ((beam % cols) as f64, (beam / cols) as f64);
            for (fi, &f) in freqs.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for p in mpcs {
                    let scale = array.element_spacing * (array.carrier_frequency + f) / array.carrier_frequency;
                    let u = p.azimuth.sin() * p.elevation.cos();
                    let w = p.elevation.sin();
                    let mut psi = Complex64::new(0.0, 0.0);
                    for c in 0..cols {
                        for r in 0..rows {
                            let steer = 2.0 * PI * scale * (c as f64 * u + r as f64 * w);
                            let weight = -2.0 * PI * (c as f64 * kh / cols as f64 + r as f64 * kv / rows as f64);
                            psi += Complex64::from_polar(1.0, steer + weight);
                        }
                    }
                    acc += psi * p.amplitude_per_layer[m] * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay);
                }
                out[[m * per_layer + row, fi]] = acc;
            }
        }
    }
    out
}

pub fn random_multipath(rng: &mut ChaCha8Rng, layers: usize) -> Vec<MultipathComponent> {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| MultipathComponent {
            delay: rng.random_range(0.0..2e-6),
            azimuth: rng.random_range(-1.4..1.4),
            elevation: rng.random_range(-0.6..0.6),
            amplitude_per_layer: (0..layers)
                .map(|_| Complex64::from_polar(rng.random_range(1e-4..1e-2), rng.random_range(0.0..2.0 * PI)))
                .collect(),
        })
        .collect()
}

pub fn frobenius_rel_err(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Connected components of the `≤ eps` neighbourhood graph, labelled in
/// order of first appearance.
pub fn union_find_components(points: &[Vec<f64>], eps: f64) -> Vec<Option<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d <= eps {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut names = std::collections::HashMap::new();
    (0..n)
        .map(|i| {
            let r = root(&mut parent, i);
            let next = names.len();
            Some(*names.entry(r).or_insert(next))
        })
        .collect()
}

/// Ward agglomeration recomputing every pairwise cost from centroids at each
/// step. Returns `(a, b, delta, size)` per merge, clusters named by their
/// smallest member.
pub fn naive_ward(points: &[Vec<f64>]) -> Vec<(usize, usize, f64, usize)> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let centroid = |members: &[usize]| {
        let dim = points[0].len();
        let mut c = vec![0.0; dim];
        for &m in members {
            for (ci, v) in c.iter_mut().zip(&points[m]) {
                *ci += v;
            }
        }
        c.iter().map(|v| v / members.len() as f64).collect::<Vec<f64>>()
    };
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let (ci, cj) = (centroid(&clusters[i]), centroid(&clusters[j]));
                let (ni, nj) = (clusters[i].len() as f64, clusters[j].len() as f64);
                let sq: f64 = ci.iter().zip(&cj).map(|(a, b)| (a - b) * (a - b)).sum();
                let d = ni * nj / (ni + nj) * sq;
                let key = (clusters[i][0].min(clusters[j][0]), clusters[i][0].max(clusters[j][0]));
                let better = match best {
                    None => true,
                    Some((bi, bj, bd)) => {
                        let bkey = (
                            clusters[bi][0].min(clusters[bj][0]),
                            clusters[bi][0].max(clusters[bj][0]),
                        );
                        d < bd || (d == bd && key < bkey)
                    }
                };
                if better {
                    best = Some((i, j, d));
                }
            }
        }
        let (i, j, d) = best.unwrap();
        let (mi, mj) = (clusters[i][0], clusters[j][0]);
        let moved = clusters.remove(j);
        clusters[i].extend(moved);
        clusters[i].sort_unstable();
        out.push((mi.min(mj), mi.max(mj), d, clusters[i].len()));
    }
    out
}

/// Largest relative error between the analytic MSE gradient and central
/// differences over every parameter.
pub fn gradient_check(net: &mut Network, x: &Array2<f64>, t: &Array2<f64>, h: f64) -> f64 {
    // zero-initialized biases can leave pre-activations exactly on the ReLU
    // kink, where central differences see half the slope
    let mut r = rng(0x9c);
    for block in net.param_slices_mut() {
        for v in block.iter_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    let (_, cache) = net.forward(x).unwrap();
    let grads = net.backward(&cache, t).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst = 0.0f64;
    for (block, g) in analytic.iter().enumerate() {
        for (i, &ga) in g.iter().enumerate() {
            let orig = net.param_slices()[block][i];
            net.param_slices_mut()[block][i] = orig + h;
            let lp = mse(&net.infer(x).unwrap(), t);
            net.param_slices_mut()[block][i] = orig - h;
            let lm = mse(&net.infer(x).unwrap(), t);
            net.param_slices_mut()[block][i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A short LoS campaign (small loop, two epochs) for end-to-end runs.
pub fn small_experiment() -> uegroup::experiment::ExperimentConfig {
    use uegroup::experiment::{ExperimentConfig, Profile};
    use uegroup::scene::Scenario;
    let mut cfg = ExperimentConfig::for_profile(Scenario::Los, Profile::Desk);
    cfg.scenario.lap_waypoints = vec![[40.0, 20.0], [70.0, 20.0], [70.0, 40.0], [40.0, 40.0]];
    cfg.train.epochs = 2;
    cfg.clustering.stride = 25;
    cfg
}
