//! Driving noises: a truncated cylindrical Wiener process `W` on
//! divergence-free Fourier modes and a scalar Brownian motion `η`.
//!
//! Draws are counter based. The variate for `(seed, path, step, mode, leaf)`
//! is produced by a ChaCha stream keyed by `(seed, path)`, with the step as
//! stream id and the mode selecting a disjoint block of the keystream. Each
//! step increment is the sum of `2^REFINEMENT_DEPTH` independent leaf
//! increments, so a rejected step can be replayed on dyadic sub-intervals
//! with exactly the same Brownian path.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SglError};
use crate::grid::{Field, SpectralGrid, VelocityField};

/// Maximum number of dyadic halvings of a step.
pub const REFINEMENT_DEPTH: u32 = 4;
const LEAVES: usize = 1 << REFINEMENT_DEPTH;
const MODE_BLOCK_SHIFT: u32 = 24;

/// Default spectral decay exponent of the weights `q_j`.
pub const DEFAULT_GAMMA: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Cos,
    Sin,
}

/// One real basis element `e_j = c · k^⊥/|k| · {cos, sin}(k·x)`, orthonormal
/// in `L²(𝒪)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisMode {
    pub k: (i64, i64),
    pub parity: Parity,
    pub weight: f64,
}

impl BasisMode {
    pub fn k_sq(&self) -> f64 {
        (self.k.0 * self.k.0 + self.k.1 * self.k.1) as f64
    }

    /// `‖e_j‖²_V = |∇e_j|²_{L²}`.
    pub fn v_norm_sq(&self) -> f64 {
        self.k_sq()
    }
}

/// Truncated `K`-cylindrical Wiener process plus the scalar `η`.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    grid: Arc<SpectralGrid>,
    gamma: f64,
    basis: Vec<BasisMode>,
    seed: u64,
    path_id: u64,
}

/// Half-plane wavevectors usable for the noise basis, ordered by `|k|²`.
fn candidate_wavevectors(grid: &SpectralGrid) -> Vec<(i64, i64)> {
    let mut ks: Vec<(i64, i64)> = (0..grid.len())
        .filter(|&idx| grid.keeps(idx) && !grid.is_nyquist(idx))
        .map(|idx| grid.wavevector(idx))
        .filter(|&(k1, k2)| k2 > 0 || (k2 == 0 && k1 > 0))
        .collect();
    ks.sort_by_key(|&(k1, k2)| (k1 * k1 + k2 * k2, k1, k2));
    ks
}

/// Largest admissible `mode_cutoff` on this grid.
pub fn max_mode_count(grid: &SpectralGrid) -> usize {
    2 * candidate_wavevectors(grid).len()
}

/// Number of basis elements with `|k| ≤ N/4`.
pub fn default_mode_count(grid: &SpectralGrid) -> usize {
    let r = (grid.n() / 4) as i64;
    2 * candidate_wavevectors(grid)
        .iter()
        .filter(|&&(k1, k2)| k1 * k1 + k2 * k2 <= r * r)
        .count()
}

impl NoiseModel {
    /// Model with weights `q_j = (1 + |k_j|²)^{−γ/2}` on the first
    /// `mode_cutoff` basis elements (`0` selects every mode with `|k| ≤ N/4`).
    pub fn new(grid: Arc<SpectralGrid>, gamma: f64, mode_cutoff: usize, seed: u64) -> Result<Self> {
        if !(gamma > 2.0) || !gamma.is_finite() {
            return Err(SglError::InvalidArgument(format!(
                "noise decay exponent gamma must exceed 2, got {gamma}"
            )));
        }
        let candidates = candidate_wavevectors(&grid);
        let m = if mode_cutoff == 0 { default_mode_count(&grid) } else { mode_cutoff };
        if m > 2 * candidates.len() {
            return Err(SglError::InvalidArgument(format!(
                "mode_cutoff {m} exceeds the {} basis elements available on this grid",
                2 * candidates.len()
            )));
        }
        let basis = candidates
            .iter()
            .flat_map(|&k| [Parity::Cos, Parity::Sin].map(|parity| (k, parity)))
            .take(m)
            .map(|(k, parity)| {
                let k_sq = (k.0 * k.0 + k.1 * k.1) as f64;
                BasisMode {
                    k,
                    parity,
                    weight: (1.0 + k_sq).powf(-gamma / 2.0),
                }
            })
            .collect();
        Ok(NoiseModel {
            grid,
            gamma,
            basis,
            seed,
            path_id: 0,
        })
    }

    pub fn with_path(mut self, path_id: u64) -> Self {
        self.path_id = path_id;
        self
    }

    /// Replaces the weights; the length must match the basis.
    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.basis.len() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(SglError::InvalidArgument(
                "weights must be nonnegative with one entry per basis element".into(),
            ));
        }
        for (b, &w) in self.basis.iter_mut().zip(weights) {
            b.weight = w;
        }
        Ok(self)
    }

    /// Switches the velocity noise off (all `q_j = 0`); `η` is unaffected.
    pub fn without_velocity_noise(mut self) -> Self {
        self.basis.iter_mut().for_each(|b| b.weight = 0.0);
        self
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn basis(&self) -> &[BasisMode] {
        &self.basis
    }

    pub fn mode_count(&self) -> usize {
        self.basis.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    /// `(Tr Q, Σ q_j² ‖e_j‖²_V)`.
    pub fn hs_mass(&self) -> (f64, f64) {
        self.basis.iter().fold((0.0, 0.0), |(tr, v), b| {
            let q2 = b.weight * b.weight;
            (tr + q2, v + q2 * b.v_norm_sq())
        })
    }

    /// Spectral coefficients of `Σ_j a_j e_j`.
    fn synthesize(&self, amplitudes: impl Iterator<Item = f64>) -> [Vec<Complex64>; 2] {
        let g = &self.grid;
        let mut out: [Vec<Complex64>; 2] = std::array::from_fn(|_| vec![Complex64::default(); g.len()]);
        let norm = 1.0 / (PI * 2f64.sqrt());
        for (b, a) in self.basis.iter().zip(amplitudes) {
            if a == 0.0 {
                continue;
            }
            let (k1, k2) = b.k;
            let kn = b.k_sq().sqrt();
            let dir = [-(k2 as f64) / kn, k1 as f64 / kn];
            let half = 0.5 * norm * a;
            let (plus, minus) = match b.parity {
                Parity::Cos => (Complex64::new(half, 0.0), Complex64::new(half, 0.0)),
                Parity::Sin => (Complex64::new(0.0, -half), Complex64::new(0.0, half)),
            };
            let (ip, im) = (g.mode_index(k1, k2), g.mode_index(-k1, -k2));
            for c in 0..2 {
                out[c][ip] += plus * dir[c];
                out[c][im] += minus * dir[c];
            }
        }
        out
    }

    /// The basis element `e_j` as a field.
    pub fn basis_field(&self, j: usize) -> VelocityField {
        let coeffs = self.synthesize((0..self.basis.len()).map(|i| if i == j { 1.0 } else { 0.0 }));
        Field::spectral_unchecked(self.grid.clone(), coeffs)
    }

    fn rng_key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.path_id.to_le_bytes());
        key[16..].copy_from_slice(b"sgl:noise:cylwp1");
        key
    }

    fn leaves(&self, step_index: u64, stream: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::from_seed(self.rng_key());
        rng.set_stream(step_index);
        rng.set_word_pos((stream as u128) << MODE_BLOCK_SHIFT);
        (0..LEAVES)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// All leaf increments of one step of length `dt`.
    pub fn step_noise(&self, dt: f64, step_index: u64) -> Result<StepNoise> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SglError::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let scale = (dt / LEAVES as f64).sqrt();
        let eta = self.leaves(step_index, 0, scale);
        let xi = self
            .basis
            .iter()
            .enumerate()
            .map(|(j, b)| {
                if b.weight == 0.0 {
                    vec![0.0; LEAVES]
                } else {
                    self.leaves(step_index, j as u64 + 1, scale)
                }
            })
            .collect();
        Ok(StepNoise {
            model: self.clone(),
            dt,
            eta,
            xi,
        })
    }
}

/// Pre-drawn increments of one step, addressable on dyadic sub-intervals.
#[derive(Clone, Debug)]
pub struct StepNoise {
    model: NoiseModel,
    dt: f64,
    eta: Vec<f64>,
    xi: Vec<Vec<f64>>,
}

/// `dW = Σ_j q_j ξ_j e_j` with `ξ_j ~ N(0, dt)`, together with `dη ~ N(0, dt)`.
#[derive(Clone, Debug)]
pub struct WienerIncrement {
    pub dw: VelocityField,
    pub d_eta: f64,
    pub dt: f64,
    /// The standard increments `ξ_j` (before weighting).
    pub xi: Vec<f64>,
}

impl StepNoise {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Increment over sub-interval `index` of `2^level` equal pieces.
    pub fn increment(&self, level: u32, index: usize) -> WienerIncrement {
        assert!(level <= REFINEMENT_DEPTH && index < (1 << level));
        let width = LEAVES >> level;
        let range = index * width..(index + 1) * width;
        let sum = |v: &Vec<f64>| v[range.clone()].iter().sum::<f64>();
        let xi: Vec<f64> = self.xi.iter().map(sum).collect();
        let d_eta = sum(&self.eta);
        let coeffs = self
            .model
            .synthesize(self.model.basis.iter().zip(&xi).map(|(b, x)| b.weight * x));
        WienerIncrement {
            dw: Field::spectral_unchecked(self.model.grid.clone(), coeffs),
            d_eta,
            dt: self.dt / (1u64 << level) as f64,
            xi,
        }
    }
}

/// Increment of the whole step `step_index` of length `dt`.
pub fn sample_increment(model: &NoiseModel, dt: f64, step_index: u64) -> Result<WienerIncrement> {
    Ok(model.step_noise(dt, step_index)?.increment(0, 0))
}
