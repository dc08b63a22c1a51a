//! Discretisation of the torus `[0, 2π)²`, Fourier transforms and the field
//! containers used by every other module.
//!
//! Conventions:
//! - grid point `(i, j)` sits at `x = (2πi/N, 2πj/N)` and is stored at flat
//!   index `i * N + j` (row-major, first coordinate slow);
//! - spectral coefficients satisfy `f(x) = Σ_k ĉ(k) e^{ik·x}`, so the forward
//!   transform carries the `1/N²` factor and the inverse is a plain sum;
//! - grid quadrature uses the weight `(2π/N)²` per point, which makes the
//!   physical-space `L²` pairing equal to `4π² Σ_k conj(â(k)) b̂(k)`.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SglError};

/// Smallest supported grid size.
pub const MIN_MODES: usize = 16;

/// `(2π)²`, the area of the torus.
pub const DOMAIN_AREA: f64 = 4.0 * PI * PI;

/// Square `N × N` Fourier grid on the 2π-periodic torus.
pub struct SpectralGrid {
    n: usize,
    wavenumbers: Vec<i64>,
    mask: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid").field("n", &self.n).finish()
    }
}

impl SpectralGrid {
    pub fn new(n: usize) -> Result<Arc<Self>> {
        if n < MIN_MODES || n % 2 != 0 {
            return Err(SglError::InvalidArgument(format!(
                "grid size must be an even integer >= {MIN_MODES}, got {n}"
            )));
        }
        let half = (n / 2) as i64;
        let wavenumbers: Vec<i64> = (0..n as i64)
            .map(|j| if j < half { j } else { j - n as i64 })
            .collect();
        let mut mask = vec![false; n * n];
        for (idx, keep) in mask.iter_mut().enumerate() {
            let (k1, k2) = (wavenumbers[idx / n], wavenumbers[idx % n]);
            // 2/3 rule: keep |k_i| <= N/3
            *keep = 3 * k1.abs() <= n as i64 && 3 * k2.abs() <= n as i64;
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Arc::new(SpectralGrid {
            n,
            wavenumbers,
            mask,
            forward,
            inverse,
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points (= number of modes), `N²`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Quadrature weight of a single grid point.
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dx()
    }

    pub fn wavevector(&self, idx: usize) -> (i64, i64) {
        (self.wavenumbers[idx / self.n], self.wavenumbers[idx % self.n])
    }

    pub fn k_sq(&self, idx: usize) -> f64 {
        let (k1, k2) = self.wavevector(idx);
        (k1 * k1 + k2 * k2) as f64
    }

    /// Flat index of the mode `(k1, k2)`, taken modulo `N`.
    pub fn mode_index(&self, k1: i64, k2: i64) -> usize {
        let n = self.n as i64;
        (k1.rem_euclid(n) * n + k2.rem_euclid(n)) as usize
    }

    pub fn is_nyquist(&self, idx: usize) -> bool {
        let (k1, k2) = self.wavevector(idx);
        let half = (self.n / 2) as i64;
        k1 == -half || k2 == -half
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn keeps(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    /// Physical coordinates of grid point `idx`.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let dx = self.dx();
        [(idx / self.n) as f64 * dx, (idx % self.n) as f64 * dx]
    }

    /// Forward transform of a real scalar field.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.len(), "field length does not match grid");
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        let scale = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    /// Inverse transform, returning the complex grid values.
    pub fn inverse_complex(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(coeffs.len(), self.len(), "field length does not match grid");
        let mut buf = coeffs.to_vec();
        self.transform(&mut buf, &self.inverse);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        self.inverse_complex(coeffs).into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // rows (second coordinate), then columns via transposition
        plan.process_with_scratch(buf, &mut scratch);
        transpose_square(buf, n);
        plan.process_with_scratch(buf, &mut scratch);
        transpose_square(buf, n);
    }

    /// Spectral derivative along `axis` (0 = x₁, 1 = x₂); the Nyquist row and
    /// column are zeroed.
    pub fn derivative(&self, coeffs: &[Complex64], axis: usize) -> Vec<Complex64> {
        coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                if self.is_nyquist(idx) {
                    return Complex64::default();
                }
                let (k1, k2) = self.wavevector(idx);
                let k = if axis == 0 { k1 } else { k2 } as f64;
                c * Complex64::new(0.0, k)
            })
            .collect()
    }

    pub fn laplacian(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                if self.is_nyquist(idx) {
                    Complex64::default()
                } else {
                    -c * self.k_sq(idx)
                }
            })
            .collect()
    }

    pub fn apply_mask(&self, coeffs: &mut [Complex64]) {
        for (c, &keep) in coeffs.iter_mut().zip(&self.mask) {
            if !keep {
                *c = Complex64::default();
            }
        }
    }

    /// Square of the homogeneous `Ḣ^s` seminorm computed from coefficients.
    pub(crate) fn weighted_sum(&self, coeffs: &[Complex64], weight: impl Fn(f64) -> f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(idx, c)| weight(self.k_sq(idx)) * c.norm_sqr())
            .sum::<f64>()
            * DOMAIN_AREA
    }

    /// Shortest distance between two points of the torus.
    pub fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
        let wrap = |d: f64| {
            let d = d.abs().rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d)
        };
        let (d1, d2) = (wrap(a[0] - b[0]), wrap(a[1] - b[1]));
        (d1 * d1 + d2 * d2).sqrt()
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Storage of a field: either grid values or Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub enum Repr<const C: usize> {
    Physical([Vec<f64>; C]),
    Spectral([Vec<Complex64>; C]),
}

/// A `C`-component real field on the torus.
#[derive(Clone, Debug)]
pub struct Field<const C: usize> {
    grid: Arc<SpectralGrid>,
    repr: Repr<C>,
}

/// Mean-zero, divergence-free velocity `u : 𝒪 → ℝ²`.
pub type VelocityField = Field<2>;
/// Director `n : 𝒪 → ℝ³`.
pub type DirectorField = Field<3>;

impl<const C: usize> Field<C> {
    pub fn from_physical(grid: Arc<SpectralGrid>, comps: [Vec<f64>; C]) -> Result<Self> {
        check_lengths(&grid, comps.iter().map(Vec::len))?;
        Ok(Field {
            grid,
            repr: Repr::Physical(comps),
        })
    }

    pub fn from_spectral(grid: Arc<SpectralGrid>, comps: [Vec<Complex64>; C]) -> Result<Self> {
        check_lengths(&grid, comps.iter().map(Vec::len))?;
        Ok(Field {
            grid,
            repr: Repr::Spectral(comps),
        })
    }

    pub(crate) fn physical_unchecked(grid: Arc<SpectralGrid>, comps: [Vec<f64>; C]) -> Self {
        Field {
            grid,
            repr: Repr::Physical(comps),
        }
    }

    pub(crate) fn spectral_unchecked(grid: Arc<SpectralGrid>, comps: [Vec<Complex64>; C]) -> Self {
        Field {
            grid,
            repr: Repr::Spectral(comps),
        }
    }

    pub fn zeros(grid: Arc<SpectralGrid>) -> Self {
        let len = grid.len();
        Field {
            grid,
            repr: Repr::Physical(std::array::from_fn(|_| vec![0.0; len])),
        }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Arc<SpectralGrid>, f: impl Fn([f64; 2]) -> [f64; C]) -> Self {
        let len = grid.len();
        let mut comps: [Vec<f64>; C] = std::array::from_fn(|_| Vec::with_capacity(len));
        for idx in 0..len {
            let v = f(grid.point(idx));
            for (c, val) in comps.iter_mut().zip(v) {
                c.push(val);
            }
        }
        Field {
            grid,
            repr: Repr::Physical(comps),
        }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn repr(&self) -> &Repr<C> {
        &self.repr
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self.repr, Repr::Spectral(_))
    }

    pub fn to_spectral(&self) -> Self {
        Field {
            grid: self.grid.clone(),
            repr: Repr::Spectral(self.spectral().into_owned()),
        }
    }

    pub fn to_physical(&self) -> Self {
        Field {
            grid: self.grid.clone(),
            repr: Repr::Physical(self.physical().into_owned()),
        }
    }

    /// Grid values, transforming if necessary.
    pub fn physical(&self) -> Cow<'_, [Vec<f64>; C]> {
        match &self.repr {
            Repr::Physical(p) => Cow::Borrowed(p),
            Repr::Spectral(s) => Cow::Owned(std::array::from_fn(|c| self.grid.inverse(&s[c]))),
        }
    }

    /// Fourier coefficients, transforming if necessary.
    pub fn spectral(&self) -> Cow<'_, [Vec<Complex64>; C]> {
        match &self.repr {
            Repr::Spectral(s) => Cow::Borrowed(s),
            Repr::Physical(p) => Cow::Owned(std::array::from_fn(|c| self.grid.forward(&p[c]))),
        }
    }

    pub fn into_physical(self) -> [Vec<f64>; C] {
        match self.repr {
            Repr::Physical(p) => p,
            Repr::Spectral(s) => std::array::from_fn(|c| self.grid.inverse(&s[c])),
        }
    }

    pub fn into_spectral(self) -> [Vec<Complex64>; C] {
        match self.repr {
            Repr::Spectral(s) => s,
            Repr::Physical(p) => std::array::from_fn(|c| self.grid.forward(&p[c])),
        }
    }

    /// `L²(𝒪)` pairing by grid quadrature.
    pub fn l2_inner(&self, other: &Self) -> f64 {
        let (a, b) = (self.physical(), other.physical());
        let sum: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
            .sum();
        sum * self.grid.cell_area()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).sqrt()
    }

    /// Homogeneous seminorm `(Σ_k |k|^{2s} |ĉ(k)|² (2π)²)^{1/2}` for real `s ≥ 0`.
    /// At `s = 0` the zero mode is included, giving the `L²` norm.
    pub fn seminorm(&self, s: f64) -> f64 {
        let spec = self.spectral();
        let weight = |k2: f64| if s == 0.0 { 1.0 } else if k2 == 0.0 { 0.0 } else { k2.powf(s) };
        spec.iter()
            .map(|c| self.grid.weighted_sum(c, weight))
            .sum::<f64>()
            .sqrt()
    }

    /// Inhomogeneous norm `(Σ_k (1 + |k|²)^s |ĉ(k)|² (2π)²)^{1/2}`.
    pub fn bessel_norm(&self, s: f64) -> f64 {
        let spec = self.spectral();
        spec.iter()
            .map(|c| self.grid.weighted_sum(c, |k2| (1.0 + k2).powf(s)))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest violation of `ĉ(−k) = conj(ĉ(k))` over all modes and components.
    pub fn max_conjugate_asymmetry(&self) -> f64 {
        let spec = self.spectral();
        let g = &self.grid;
        let mut worst: f64 = 0.0;
        for comp in spec.iter() {
            for idx in 0..g.len() {
                let (k1, k2) = g.wavevector(idx);
                let mirror = g.mode_index(-k1, -k2);
                worst = worst.max((comp[idx] - comp[mirror].conj()).norm());
            }
        }
        worst
    }

    /// Pointwise Euclidean norm `|f(x)|` at every grid point.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        let p = self.physical();
        (0..self.grid.len())
            .map(|i| p.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .collect()
    }

    /// `self + scale · other`, in physical space.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Self {
        let (a, b) = (self.physical(), other.physical());
        let comps = std::array::from_fn(|c| {
            a[c].iter().zip(&b[c]).map(|(x, y)| x + scale * y).collect()
        });
        Field::physical_unchecked(self.grid.clone(), comps)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add_scaled(other, -1.0)
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let comps = self.physical().into_owned().map(|c| c.into_iter().map(|v| v * scale).collect());
        Field::physical_unchecked(self.grid.clone(), comps)
    }

    pub fn is_finite(&self) -> bool {
        match &self.repr {
            Repr::Physical(p) => p.iter().all(|c| c.iter().all(|v| v.is_finite())),
            Repr::Spectral(s) => s.iter().all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite())),
        }
    }

    /// Sobolev norm of integer order `s`.
    ///
    /// Velocity fields (two components) use the homogeneous form, which for
    /// `s = 1` is the V-norm `|∇u|_{L²}`. Director fields (three components)
    /// use `|n|²_{L²} + |n|²_{Ḣ^s}` for `s ≥ 1`. Order `0` is the `L²` norm.
    pub fn sobolev_norm(&self, s: i32) -> Result<f64> {
        if s < 0 {
            return Err(SglError::InvalidArgument(format!(
                "Sobolev order must be nonnegative, got {s}"
            )));
        }
        if s == 0 {
            return Ok(self.seminorm(0.0));
        }
        let hom = self.seminorm(s as f64);
        if C == 2 {
            Ok(hom)
        } else {
            let l2 = self.seminorm(0.0);
            Ok((l2 * l2 + hom * hom).sqrt())
        }
    }
}

impl Field<2> {
    /// `L²` norm of `div u`.
    pub fn divergence_l2(&self) -> f64 {
        let s = self.spectral();
        let g = &self.grid;
        let d1 = g.derivative(&s[0], 0);
        let d2 = g.derivative(&s[1], 1);
        let div: Vec<Complex64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        g.weighted_sum(&div, |_| 1.0).sqrt()
    }
}

fn check_lengths(grid: &SpectralGrid, lens: impl Iterator<Item = usize>) -> Result<()> {
    for len in lens {
        if len != grid.len() {
            return Err(SglError::InvalidArgument(format!(
                "component has {len} entries, grid has {}",
                grid.len()
            )));
        }
    }
    Ok(())
}

/// Random real field with Fourier support in `|k_i| ≤ max_k` and amplitudes
/// decaying like `(1 + |k|²)^{-1}`.
pub fn random_band_limited<const C: usize, R: Rng + ?Sized>(
    grid: &Arc<SpectralGrid>,
    rng: &mut R,
    max_k: i64,
) -> Field<C> {
    let comps = std::array::from_fn(|_| {
        let mut coeffs = vec![Complex64::default(); grid.len()];
        for k1 in -max_k..=max_k {
            for k2 in 0..=max_k {
                if k2 == 0 && k1 < 0 {
                    continue;
                }
                let decay = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64);
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = if k1 == 0 && k2 == 0 { 0.0 } else { rng.sample(StandardNormal) };
                let c = Complex64::new(re, im) * decay;
                coeffs[grid.mode_index(k1, k2)] = c;
                coeffs[grid.mode_index(-k1, -k2)] = c.conj();
            }
        }
        coeffs
    });
    Field::spectral_unchecked(grid.clone(), comps)
}
