//! Geometric multipath and beam-space channel transfer functions.
//!
//! Each base-station polarization group is an 8×4 uniform planar array
//! driven by a 2-D DFT codebook. The CTF of beam `i`, polarization `pol` and
//! UE layer `m` at baseband frequency `f` is
//!
//! ```text
//! h(f) = Σ_p ψ_pol,i(φ_p, θ_p, fc + f) · ζ_p,m · exp(-j2π f τ_p)
//! ```
//!
//! where `ζ_p,m` already carries the carrier phase `exp(-j2π fc τ_p)`.

use std::f64::consts::PI;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scene::{compass_bearing, Pose, Scenario, ScenarioConfig};
use crate::{derive_seed, Error, Result, SPEED_OF_LIGHT};

/// Subcarrier spacing of the SRS numerology, Hz.
pub const SUBCARRIER_SPACING: f64 = 30e3;
pub const SUBCARRIERS_PER_PRB: usize = 12;
pub const NUM_PRBS: usize = 273;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub n_beams_v: usize,
    pub n_beams_h: usize,
    pub elements_per_pol: usize,
    /// Horizontal elements per row of one polarization group.
    pub array_columns: usize,
    /// Element spacing in carrier wavelengths.
    pub element_spacing: f64,
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub ue_layers: usize,
    /// Additive complex Gaussian noise on CTF entries; `None` disables it.
    pub snr_db: Option<f64>,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_beams_v: 32,
            n_beams_h: 32,
            elements_per_pol: 32,
            array_columns: 8,
            element_spacing: 0.5,
            carrier_frequency: 3.85e9,
            bandwidth: 100e6,
            ue_layers: 2,
            snr_db: Some(20.0),
        }
    }
}

impl ArrayConfig {
    pub fn array_rows(&self) -> usize {
        self.elements_per_pol / self.array_columns
    }

    /// Beams per UE layer (H group followed by V group).
    pub fn beams_per_layer(&self) -> usize {
        self.n_beams_h + self.n_beams_v
    }

    pub fn rows(&self) -> usize {
        self.ue_layers * self.beams_per_layer()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.array_columns == 0 || !self.elements_per_pol.is_multiple_of(self.array_columns) {
            return bad(format!(
                "elements_per_pol {} not a multiple of array_columns {}",
                self.elements_per_pol, self.array_columns
            ));
        }
        if self.n_beams_h > self.elements_per_pol || self.n_beams_v > self.elements_per_pol {
            return bad("more beams than elements in a polarization group".into());
        }
        if self.ue_layers == 0 {
            return bad("ue_layers must be >= 1".into());
        }
        if !(self.element_spacing > 0.0 && self.carrier_frequency > 0.0 && self.bandwidth > 0.0) {
            return bad("spacing, carrier and bandwidth must be > 0".into());
        }
        Ok(())
    }

    fn beam_count(&self, pol: Polarization) -> usize {
        match pol {
            Polarization::H => self.n_beams_h,
            Polarization::V => self.n_beams_v,
        }
    }

    /// DFT spatial frequencies (cycles per element) of a beam: horizontal, vertical.
    fn beam_spatial_freq(&self, beam_index: usize) -> (f64, f64) {
        let cols = self.array_columns;
        (
            dft_freq(beam_index % cols, cols),
            dft_freq(beam_index / cols, self.array_rows()),
        )
    }

    /// Direction `(azimuth, elevation)` in radians at which a beam peaks at
    /// the carrier, if that direction exists.
    pub fn beam_direction(&self, beam_index: usize) -> Option<(f64, f64)> {
        let (sh, sv) = self.beam_spatial_freq(beam_index);
        let w = sv / self.element_spacing;
        if w.abs() > 1.0 {
            return None;
        }
        let el = w.asin();
        let u = sh / self.element_spacing / el.cos();
        if u.abs() > 1.0 {
            return None;
        }
        Some((u.asin(), el))
    }
}

fn dft_freq(k: usize, n: usize) -> f64 {
    let s = k as f64 / n as f64;
    if s >= 0.5 {
        s - 1.0
    } else {
        s
    }
}

/// `Σ_{c<n} exp(j2π c x)`
fn geometric_factor(n: usize, x: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, 2.0 * PI * x);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut term = Complex64::new(1.0, 0.0);
    for _ in 0..n {
        acc += term;
        term *= step;
    }
    acc
}

/// Array factor of beam `beam_index` of polarization group `pol` towards
/// `(azimuth, elevation)` (radians, azimuth relative to array broadside)
/// at absolute frequency `f`.
pub fn beam_response(
    array: &ArrayConfig,
    beam_index: usize,
    pol: Polarization,
    azimuth: f64,
    elevation: f64,
    f: f64,
) -> Result<Complex64> {
    let count = array.beam_count(pol);
    if beam_index >= count {
        return Err(Error::InvalidConfig(format!(
            "beam index {beam_index} out of range for {count} {pol:?} beams"
        )));
    }
    let (sh, sv) = array.beam_spatial_freq(beam_index);
    let scale = array.element_spacing * f / array.carrier_frequency;
    let u = azimuth.sin() * elevation.cos();
    let w = elevation.sin();
    Ok(geometric_factor(array.array_columns, scale * u - sh) * geometric_factor(array.array_rows(), scale * w - sv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathComponent {
    /// Propagation delay, seconds.
    pub delay: f64,
    /// Arrival azimuth relative to array broadside, radians.
    pub azimuth: f64,
    /// Arrival elevation above the horizon, radians.
    pub elevation: f64,
    /// Complex path gain per UE layer.
    pub amplitude_per_layer: Vec<Complex64>,
}

fn uniform_phase(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random::<f64>() * 2.0 * PI
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Multipath components seen by the base station for a UE at `pose`.
///
/// LoS scenes start with the direct path; every scatterer adds one
/// single-bounce path with a fixed seeded phase. Layers beyond the first get
/// a fixed seeded phase offset per path.
pub fn compute_multipath(pose: &Pose, scene: &ScenarioConfig, array: &ArrayConfig) -> Result<Vec<MultipathComponent>> {
    let [x0, y0, x1, y1] = scene.bounding_box();
    let margin = scene.jitter_amplitude + 1.0;
    if pose.x < x0 - margin || pose.x > x1 + margin || pose.y < y0 - margin || pose.y > y1 + margin {
        return Err(Error::InvalidConfig(format!(
            "pose ({}, {}) outside scene bounds",
            pose.x, pose.y
        )));
    }
    let ue = [pose.x, pose.y, pose.z];
    let bs = scene.bs_position;
    let lambda = array.wavelength();
    let layers = array.ue_layers;

    // arrival angles at the BS for a path whose last hop starts at `from`
    let arrival = |from: [f64; 3]| {
        let v = sub3(from, bs);
        let bearing = compass_bearing(v[0], v[1]);
        let az = (bearing - scene.bs_boresight_deg + 180.0).rem_euclid(360.0) - 180.0;
        (az.to_radians(), v[2].atan2(v[0].hypot(v[1])))
    };
    let make = |path_id: u64, length: f64, base: Complex64, from: [f64; 3], towards: [f64; 3]| {
        let dep = sub3(towards, ue);
        let departure = compass_bearing(dep[0], dep[1]);
        let (azimuth, elevation) = arrival(from);
        let carrier = Complex64::from_polar(1.0, -2.0 * PI * length / lambda);
        let amplitude_per_layer = (0..layers)
            .map(|m| {
                let offset = if m == 0 {
                    0.0
                } else {
                    uniform_phase(derive_seed(scene.rng_seed, &[0x1a7e, path_id, m as u64]))
                };
                base * carrier * scene.ue_antenna.gain(m, departure, pose.heading) * Complex64::from_polar(1.0, offset)
            })
            .collect();
        MultipathComponent {
            delay: length / SPEED_OF_LIGHT,
            azimuth,
            elevation,
            amplitude_per_layer,
        }
    };

    let mut out = Vec::with_capacity(scene.scatterers.len() + 1);
    if scene.scenario == Scenario::Los {
        let d = norm3(sub3(bs, ue));
        if d < 1e-6 {
            return Err(Error::SingularGeometry("UE coincides with the base station".into()));
        }
        out.push(make(0, d, Complex64::new(1.0 / d, 0.0), ue, bs));
    }
    for (k, &s) in scene.scatterers.iter().enumerate() {
        let d1 = norm3(sub3(s, ue));
        let d2 = norm3(sub3(bs, s));
        if d1 < 1e-6 || d2 < 1e-6 {
            return Err(Error::SingularGeometry(format!(
                "scatterer {k} coincides with the UE or the base station"
            )));
        }
        let phase = uniform_phase(derive_seed(scene.rng_seed, &[0x5ca7, k as u64]));
        let base = Complex64::from_polar(1.0 / (d1 * d2), phase);
        out.push(make(k as u64 + 1, d1 + d2, base, s, s));
    }
    Ok(out)
}

/// Row ordering of a CTF matrix: per UE layer, the H beams then the V beams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtfLayout {
    pub ue_layers: usize,
    pub n_beams_h: usize,
    pub n_beams_v: usize,
}

impl CtfLayout {
    pub fn of(array: &ArrayConfig) -> Self {
        Self {
            ue_layers: array.ue_layers,
            n_beams_h: array.n_beams_h,
            n_beams_v: array.n_beams_v,
        }
    }

    pub fn beams_per_layer(&self) -> usize {
        self.n_beams_h + self.n_beams_v
    }

    pub fn rows(&self) -> usize {
        self.ue_layers * self.beams_per_layer()
    }

    pub fn row(&self, layer: usize, pol: Polarization, beam: usize) -> usize {
        let base = layer * self.beams_per_layer();
        match pol {
            Polarization::H => base + beam,
            Polarization::V => base + self.n_beams_h + beam,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtfMatrix {
    /// `rows × F`, rows ordered by [`CtfLayout`].
    pub values: Array2<Complex64>,
    pub layout: CtfLayout,
    /// Baseband frequency of every column, Hz.
    pub freqs: Vec<f64>,
}

impl CtfMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Baseband center frequencies of the 273 PRBs.
pub fn prb_frequencies() -> Vec<f64> {
    let prb_bw = SUBCARRIER_SPACING * SUBCARRIERS_PER_PRB as f64;
    let mid = (NUM_PRBS - 1) as f64 / 2.0;
    (0..NUM_PRBS).map(|k| (k as f64 - mid) * prb_bw).collect()
}

/// Baseband center frequencies of the 46 retained PRB subgroups.
pub fn prsg_frequencies() -> Vec<f64> {
    let prb = prb_frequencies();
    (0..crate::srs::NUM_PRSGS)
        .step_by(crate::srs::DOWNSAMPLE_STEP)
        .map(|j| {
            if 2 * j + 1 < NUM_PRBS {
                0.5 * (prb[2 * j] + prb[2 * j + 1])
            } else {
                prb[2 * j]
            }
        })
        .collect()
}

/// Synthesizes the beam-space CTF of a multipath set over `freq_grid`
/// (baseband offsets from the carrier).
pub fn synthesize_ctf(mpcs: &[MultipathComponent], array: &ArrayConfig, freq_grid: &[f64]) -> Result<CtfMatrix> {
    array.validate()?;
    if mpcs.is_empty() {
        return Err(Error::NoMultipath);
    }
    for p in mpcs {
        if p.amplitude_per_layer.len() != array.ue_layers {
            return Err(Error::WrongCount {
                what: "layer amplitudes",
                expected: array.ue_layers,
                got: p.amplitude_per_layer.len(),
            });
        }
    }
    let layout = CtfLayout::of(array);
    let cols = array.array_columns;
    let rows_v = array.array_rows();
    let n_beams = array.n_beams_h.max(array.n_beams_v);
    let mut values = Array2::<Complex64>::zeros((layout.rows(), freq_grid.len()));
    let mut gh = vec![Complex64::new(0.0, 0.0); cols];
    let mut gv = vec![Complex64::new(0.0, 0.0); rows_v];
    let mut psi = vec![Complex64::new(0.0, 0.0); n_beams];

    for p in mpcs {
        let u = p.azimuth.sin() * p.elevation.cos();
        let w = p.elevation.sin();
        for (fi, &f) in freq_grid.iter().enumerate() {
            let scale = array.element_spacing * (array.carrier_frequency + f) / array.carrier_frequency;
            for (c, g) in gh.iter_mut().enumerate() {
                *g = geometric_factor(cols, scale * u - dft_freq(c, cols));
            }
            for (r, g) in gv.iter_mut().enumerate() {
                *g = geometric_factor(rows_v, scale * w - dft_freq(r, rows_v));
            }
            for (b, v) in psi.iter_mut().enumerate() {
                *v = gh[b % cols] * gv[b / cols];
            }
            let delay_term = Complex64::from_polar(1.0, -2.0 * PI * f * p.delay);
            for (m, zeta) in p.amplitude_per_layer.iter().enumerate() {
                let coef = zeta * delay_term;
                for (pol, count) in [(Polarization::H, array.n_beams_h), (Polarization::V, array.n_beams_v)] {
                    for (b, v) in psi.iter().enumerate().take(count) {
                        values[[layout.row(m, pol, b), fi]] += v * coef;
                    }
                }
            }
        }
    }
    Ok(CtfMatrix {
        values,
        layout,
        freqs: freq_grid.to_vec(),
    })
}

/// Adds complex Gaussian noise so that mean signal power over noise power
/// equals `snr_db`.
pub fn add_noise<R: Rng + ?Sized>(ctf: &mut CtfMatrix, snr_db: f64, rng: &mut R) {
    let n = ctf.values.len().max(1) as f64;
    let power = ctf.values.iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    for v in ctf.values.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtfSidecar {
    pub version: u32,
    pub dtype: String,
    /// `[count, rows, F]`
    pub shape: [usize; 3],
    pub layout: CtfLayout,
    pub freqs: Vec<f64>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes CTFs as little-endian float32 interleaved re/im, row-major
/// `[count, rows, F]`, with a JSON sidecar at `<path>.json`.
pub fn write_ctf_binary(path: &Path, ctfs: &[CtfMatrix]) -> Result<()> {
    let first = ctfs.first().ok_or(Error::Empty("CTF list"))?;
    let (rows, f) = first.shape();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ctf in ctfs {
        if ctf.shape() != (rows, f) {
            return Err(Error::WrongCount {
                what: "CTF columns",
                expected: f,
                got: ctf.shape().1,
            });
        }
        for c in ctf.values.iter() {
            w.write_all(&(c.re as f32).to_le_bytes())
                .and_then(|_| w.write_all(&(c.im as f32).to_le_bytes()))
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = CtfSidecar {
        version: 1,
        dtype: "complex64-le-interleaved".into(),
        shape: [ctfs.len(), rows, f],
        layout: first.layout,
        freqs: first.freqs.clone(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&sp, e))
}

/// Reads a CTF stack written by [`write_ctf_binary`].
pub fn read_ctf_binary(path: &Path) -> Result<Vec<CtfMatrix>> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: CtfSidecar = serde_json::from_str(&text)?;
    let [count, rows, f] = side.shape;
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut fh| fh.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * rows * f * 8 {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("{} bytes for shape {:?}", bytes.len(), side.shape),
        });
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(floats
        .chunks_exact(rows * f * 2)
        .map(|chunk| CtfMatrix {
            values: Array2::from_shape_fn((rows, f), |(r, c)| {
                let i = 2 * (r * f + c);
                Complex64::new(chunk[i] as f64, chunk[i + 1] as f64)
            }),
            layout: side.layout,
            freqs: side.freqs.clone(),
        })
        .collect())
}

/// Writes one CTF as CSV `row,freq_index,freq_hz,re,im`.
pub fn write_ctf_csv(path: &Path, ctf: &CtfMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "freq_index", "freq_hz", "re", "im"])?;
    for ((r, c), v) in ctf.values.indexed_iter() {
        w.write_record(&[
            r.to_string(),
            c.to_string(),
            ctf.freqs[c].to_string(),
            v.re.to_string(),
            v.im.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
