//! Spatial operators of the projected Ginzburg–Landau / Ericksen–Leslie
//! system: Leray projection, Stokes operator, convection, Ericksen stress,
//! the Ginzburg–Landau penalty and the pointwise cross-product algebra.
//!
//! Derivatives are always spectral. Quadratic and cubic products are formed
//! on the grid from 2/3-truncated inputs and truncated again afterwards.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, SglError};
use crate::grid::{DirectorField, Field, SpectralGrid, VelocityField};

/// Ginzburg–Landau relaxation parameter `ε ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GLParams {
    epsilon: f64,
}

impl GLParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(SglError::InvalidArgument(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        Ok(GLParams { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `1/ε²`.
    pub fn stiffness(&self) -> f64 {
        1.0 / (self.epsilon * self.epsilon)
    }
}

pub(crate) type Spec<const C: usize> = [Vec<Complex64>; C];

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn at<const C: usize>(comps: &[Vec<f64>; C], idx: usize) -> [f64; C] {
    std::array::from_fn(|c| comps[c][idx])
}

fn masked(grid: &SpectralGrid, coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut out = coeffs.to_vec();
    grid.apply_mask(&mut out);
    out
}

/// Truncated grid values of `∂_axis f`.
fn masked_derivative(grid: &SpectralGrid, coeffs: &[Complex64], axis: usize) -> Vec<f64> {
    grid.inverse(&grid.derivative(&masked(grid, coeffs), axis))
}

fn truncated_forward(grid: &SpectralGrid, values: &[f64]) -> Vec<Complex64> {
    let mut out = grid.forward(values);
    grid.apply_mask(&mut out);
    out
}

/// In-place Leray–Helmholtz projection of spectral coefficients. The zero
/// mode and the Nyquist row/column are removed.
pub(crate) fn project_in_place(grid: &SpectralGrid, v: &mut Spec<2>) {
    for idx in 0..grid.len() {
        let (k1, k2) = grid.wavevector(idx);
        if (k1 == 0 && k2 == 0) || grid.is_nyquist(idx) {
            v[0][idx] = Complex64::default();
            v[1][idx] = Complex64::default();
            continue;
        }
        let (k1, k2) = (k1 as f64, k2 as f64);
        let kdotv = v[0][idx] * k1 + v[1][idx] * k2;
        let k_sq = k1 * k1 + k2 * k2;
        v[0][idx] -= kdotv * (k1 / k_sq);
        v[1][idx] -= kdotv * (k2 / k_sq);
    }
}

/// Orthogonal projection onto mean-zero divergence-free fields.
pub fn leray_project(v: &Field<2>) -> VelocityField {
    let grid = v.grid().clone();
    let mut s = v.spectral().into_owned();
    project_in_place(&grid, &mut s);
    Field::spectral_unchecked(grid, s)
}

/// Stokes operator `A u = −Π Δu`, i.e. the multiplier `|k|²`.
pub fn stokes_apply(u: &VelocityField) -> VelocityField {
    let grid = u.grid().clone();
    let s = u.spectral();
    let out = std::array::from_fn(|c| grid.laplacian(&s[c]).into_iter().map(|z| -z).collect());
    Field::spectral_unchecked(grid, out)
}

/// Dealiased `(u·∇)` applied to a spectral vector field; returns truncated
/// coefficients.
fn advect<const C: usize>(grid: &SpectralGrid, u_phys: &[Vec<f64>; 2], f_hat: &Spec<C>) -> Spec<C> {
    std::array::from_fn(|c| {
        let d1 = masked_derivative(grid, &f_hat[c], 0);
        let d2 = masked_derivative(grid, &f_hat[c], 1);
        let prod: Vec<f64> = (0..grid.len())
            .map(|i| u_phys[0][i] * d1[i] + u_phys[1][i] * d2[i])
            .collect();
        truncated_forward(grid, &prod)
    })
}

fn masked_physical<const C: usize>(grid: &SpectralGrid, f_hat: &Spec<C>) -> [Vec<f64>; C] {
    std::array::from_fn(|c| grid.inverse(&masked(grid, &f_hat[c])))
}

/// `Π_L[(u·∇)u]`.
pub fn convect_velocity(u: &VelocityField) -> VelocityField {
    let grid = u.grid().clone();
    let u_hat = u.spectral();
    let u_phys = masked_physical(&grid, &u_hat);
    let mut out = advect(&grid, &u_phys, &u_hat);
    project_in_place(&grid, &mut out);
    Field::spectral_unchecked(grid, out)
}

/// Unprojected `Div(∇n ⊙ ∇n)` with `[∇n⊙∇n]_{ij} = Σ_m ∂_i n_m ∂_j n_m`.
fn stress_divergence(grid: &SpectralGrid, n_hat: &Spec<3>) -> Spec<2> {
    let grads: [[Vec<f64>; 2]; 3] = std::array::from_fn(|m| {
        [masked_derivative(grid, &n_hat[m], 0), masked_derivative(grid, &n_hat[m], 1)]
    });
    let len = grid.len();
    let mut t11 = vec![0.0; len];
    let mut t12 = vec![0.0; len];
    let mut t22 = vec![0.0; len];
    for g in &grads {
        for i in 0..len {
            t11[i] += g[0][i] * g[0][i];
            t12[i] += g[0][i] * g[1][i];
            t22[i] += g[1][i] * g[1][i];
        }
    }
    let (t11, t12, t22) = (
        truncated_forward(grid, &t11),
        truncated_forward(grid, &t12),
        truncated_forward(grid, &t22),
    );
    let add = |a: Vec<Complex64>, b: Vec<Complex64>| -> Vec<Complex64> {
        a.into_iter().zip(b).map(|(x, y)| x + y).collect()
    };
    [
        add(grid.derivative(&t11, 0), grid.derivative(&t12, 1)),
        add(grid.derivative(&t12, 0), grid.derivative(&t22, 1)),
    ]
}

/// `Π_L[Div(∇n ⊙ ∇n)]`. The momentum equation subtracts this term.
pub fn ericksen_stress(n: &DirectorField) -> VelocityField {
    let grid = n.grid().clone();
    let mut out = stress_divergence(&grid, &n.spectral());
    project_in_place(&grid, &mut out);
    Field::spectral_unchecked(grid, out)
}

/// `(u·∇)n`.
pub fn convect_director(u: &VelocityField, n: &DirectorField) -> DirectorField {
    let grid = u.grid().clone();
    let u_phys = masked_physical(&grid, &u.spectral());
    let out = advect(&grid, &u_phys, &n.spectral());
    Field::spectral_unchecked(grid, out)
}

/// Right-hand side of the coupling stage,
/// `(−Π[(u·∇)u + Div(∇n⊙∇n)], −(u·∇)n)`, with shared transforms.
pub(crate) fn coupling_rhs(grid: &SpectralGrid, u_hat: &Spec<2>, n_hat: &Spec<3>) -> (Spec<2>, Spec<3>) {
    let u_phys = masked_physical(grid, u_hat);
    let conv = advect(grid, &u_phys, u_hat);
    let stress = stress_divergence(grid, n_hat);
    let mut du: Spec<2> =
        std::array::from_fn(|c| conv[c].iter().zip(&stress[c]).map(|(a, b)| -(a + b)).collect());
    project_in_place(grid, &mut du);
    let dn = advect(grid, &u_phys, n_hat).map(|c| c.into_iter().map(|z| -z).collect());
    (du, dn)
}

/// Grid values of `f_ε(n) = ε⁻²(1 − |n|²) n` without truncation.
pub fn gl_penalty_pointwise(n: &DirectorField, p: GLParams) -> DirectorField {
    let grid = n.grid().clone();
    let phys = n.physical();
    let stiff = p.stiffness();
    let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
    for i in 0..grid.len() {
        let v = at(&phys, i);
        let w = stiff * (1.0 - dot(v, v));
        for c in 0..3 {
            out[c][i] = w * v[c];
        }
    }
    Field::physical_unchecked(grid, out)
}

/// `f_ε(n) = ε⁻²(1 − |n|²) n`, evaluated pointwise and 2/3-truncated.
pub fn gl_penalty(n: &DirectorField, p: GLParams) -> DirectorField {
    let raw = gl_penalty_pointwise(n, p);
    let grid = raw.grid().clone();
    let out = raw.physical().into_owned().map(|c| truncated_forward(&grid, &c));
    Field::spectral_unchecked(grid, out)
}

/// `∫_𝒪 F_ε(n)` with `F_ε(n) = (1 − |n|²)² / (4ε²)`.
pub fn gl_potential_mass(n: &DirectorField, p: GLParams) -> f64 {
    let phys = n.physical();
    let grid = n.grid();
    let sum: f64 = (0..grid.len())
        .map(|i| {
            let v = at(&phys, i);
            let d = 1.0 - dot(v, v);
            d * d
        })
        .sum();
    sum * p.stiffness() * 0.25 * grid.cell_area()
}

/// `|∇n|² n`, the harmonic-map nonlinearity of the limit equation.
pub fn harmonic_term(n: &DirectorField) -> DirectorField {
    let grid = n.grid().clone();
    let n_hat = n.spectral();
    let phys = masked_physical(&grid, &n_hat);
    let mut grad_sq = vec![0.0; grid.len()];
    for comp in n_hat.iter() {
        for axis in 0..2 {
            let d = masked_derivative(&grid, comp, axis);
            grad_sq.iter_mut().zip(&d).for_each(|(g, v)| *g += v * v);
        }
    }
    let out = std::array::from_fn(|c| {
        let prod: Vec<f64> = phys[c].iter().zip(&grad_sq).map(|(a, b)| a * b).collect();
        truncated_forward(&grid, &prod)
    });
    Field::spectral_unchecked(grid, out)
}

fn pointwise_binary(
    a: &DirectorField,
    b: &DirectorField,
    op: impl Fn([f64; 3], [f64; 3]) -> [f64; 3],
) -> DirectorField {
    let grid = a.grid().clone();
    let (pa, pb) = (a.physical(), b.physical());
    let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
    for i in 0..grid.len() {
        let v = op(at(&pa, i), at(&pb, i));
        for c in 0..3 {
            out[c][i] = v[c];
        }
    }
    Field::physical_unchecked(grid, out)
}

/// Pointwise `n × h`.
pub fn director_cross_h(n: &DirectorField, h: &DirectorField) -> DirectorField {
    pointwise_binary(n, h, cross)
}

/// Pointwise `½ (n × h) × h`, the Itô drift of the Stratonovich rotation noise.
pub fn stratonovich_correction(n: &DirectorField, h: &DirectorField) -> DirectorField {
    pointwise_binary(n, h, |a, b| {
        let c = cross(cross(a, b), b);
        [0.5 * c[0], 0.5 * c[1], 0.5 * c[2]]
    })
}

/// Both sides of `d·Δ²d = ½Δ²|d|² − 4∇d·∇Δd − 2|∇²d|² − |Δd|²` on the grid.
pub fn bilaplacian_identity_sides(d: &DirectorField) -> (Vec<f64>, Vec<f64>) {
    let grid = d.grid().clone();
    let g = &*grid;
    let len = g.len();
    let d_hat = d.spectral();
    let phys: [Vec<f64>; 3] = std::array::from_fn(|c| g.inverse(&d_hat[c]));
    let mut lhs = vec![0.0; len];
    let mut grad_dot_grad_lap = vec![0.0; len];
    let mut hess_sq = vec![0.0; len];
    let mut lap_sq = vec![0.0; len];
    let mut mod_sq = vec![0.0; len];
    for (m, comp) in d_hat.iter().enumerate() {
        let lap = g.laplacian(comp);
        let bilap = g.inverse(&g.laplacian(&lap));
        let lap_phys = g.inverse(&lap);
        for i in 0..len {
            lhs[i] += phys[m][i] * bilap[i];
            lap_sq[i] += lap_phys[i] * lap_phys[i];
            mod_sq[i] += phys[m][i] * phys[m][i];
        }
        for a in 0..2 {
            let da_hat = g.derivative(comp, a);
            let da = g.inverse(&da_hat);
            let da_lap = g.inverse(&g.derivative(&lap, a));
            for i in 0..len {
                grad_dot_grad_lap[i] += da[i] * da_lap[i];
            }
            for b in 0..2 {
                let dab = g.inverse(&g.derivative(&da_hat, b));
                for i in 0..len {
                    hess_sq[i] += dab[i] * dab[i];
                }
            }
        }
    }
    let mod_hat = g.forward(&mod_sq);
    let bilap_mod = g.inverse(&g.laplacian(&g.laplacian(&mod_hat)));
    let rhs: Vec<f64> = (0..len)
        .map(|i| 0.5 * bilap_mod[i] - 4.0 * grad_dot_grad_lap[i] - 2.0 * hess_sq[i] - lap_sq[i])
        .collect();
    (lhs, rhs)
}

/// `L²` norm of the difference of the two sides of the bilaplacian identity.
pub fn bilaplacian_identity_residual(d: &DirectorField) -> f64 {
    let (lhs, rhs) = bilaplacian_identity_sides(d);
    let w = d.grid().cell_area();
    (lhs.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * w).sqrt()
}

/// Convenience: spectral `Δn`.
pub fn laplacian(n: &DirectorField) -> DirectorField {
    let grid = n.grid().clone();
    let s = n.spectral();
    let out = std::array::from_fn(|c| grid.laplacian(&s[c]));
    Field::spectral_unchecked(grid, out)
}

/// Gradient `∂_a f_c` of every component as grid values, `[component][axis]`.
pub fn gradient<const C: usize>(f: &Field<C>) -> [[Vec<f64>; 2]; C] {
    let grid: Arc<SpectralGrid> = f.grid().clone();
    let s = f.spectral();
    std::array::from_fn(|c| {
        [grid.inverse(&grid.derivative(&s[c], 0)), grid.inverse(&grid.derivative(&s[c], 1))]
    })
}

/// Scalar field `h_s` times the fixed axis `(1, 1, 1)`.
pub fn h_along_diagonal(grid: Arc<SpectralGrid>, scalar: impl Fn([f64; 2]) -> f64) -> DirectorField {
    Field::from_fn(grid, |x| {
        let s = scalar(x);
        [s, s, s]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::grid::random_band_limited;

    fn grid(n: usize) -> Arc<SpectralGrid> {
        SpectralGrid::new(n).unwrap()
    }

    fn max_abs<const C: usize>(f: &Field<C>) -> f64 {
        f.physical()
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn random_velocity(g: &Arc<SpectralGrid>, rng: &mut ChaCha8Rng, k: i64) -> VelocityField {
        leray_project(&random_band_limited::<2, _>(g, rng, k))
    }

    #[test]
    fn epsilon_range() {
        assert!(GLParams::new(0.0).is_err());
        assert!(GLParams::new(1.5).is_err());
        assert!(GLParams::new(-1.0).is_err());
        assert_eq!(GLParams::new(1.0).unwrap().epsilon(), 1.0);
    }

    #[test]
    fn leray_examples() {
        let g = grid(16);
        // ∇ sin(x1 + x2)
        let grad = Field::<2>::from_fn(g.clone(), |x| [(x[0] + x[1]).cos(), (x[0] + x[1]).cos()]);
        assert!(max_abs(&leray_project(&grad)) < 1e-14);
        let v = Field::<2>::from_fn(g.clone(), |x| [x[1].sin(), x[0].sin()]);
        let pv = leray_project(&v);
        assert!(max_abs(&pv.sub(&v)) < 1e-13);
        assert!(pv.divergence_l2() < 1e-13);
    }

    #[test]
    fn leray_idempotent_self_adjoint() {
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Field<2> = random_band_limited(&g, &mut rng, 6);
        let b: Field<2> = random_band_limited(&g, &mut rng, 6);
        let pa = leray_project(&a);
        let ppa = leray_project(&pa);
        assert!(pa.sub(&ppa).l2_norm() < 1e-12 * pa.l2_norm());
        let lhs = pa.l2_inner(&b);
        let rhs = a.l2_inner(&leray_project(&b));
        assert!((lhs - rhs).abs() < 1e-10 * a.l2_norm() * b.l2_norm());
    }

    #[test]
    fn stokes_examples() {
        let g = grid(16);
        let u = Field::<2>::from_fn(g.clone(), |x| [x[1].sin(), 0.0]);
        assert!(max_abs(&stokes_apply(&u).sub(&u)) < 1e-13);
        assert!(max_abs(&stokes_apply(&Field::zeros(g.clone()))) == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_velocity(&grid(32), &mut rng, 7);
        let pairing = stokes_apply(&u).l2_inner(&u);
        let v = u.sobolev_norm(1).unwrap();
        assert!((pairing - v * v).abs() < 1e-10 * v * v);
    }

    #[test]
    fn convection_examples() {
        let g = grid(16);
        let shear = Field::<2>::from_fn(g.clone(), |x| [x[1].sin(), 0.0]);
        assert!(max_abs(&convect_velocity(&shear)) < 1e-14);
        assert!(max_abs(&convect_velocity(&Field::zeros(g.clone()))) == 0.0);
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_velocity(&g, &mut rng, 6);
        let c = convect_velocity(&u);
        let rel = c.l2_inner(&u).abs() / (c.l2_norm() * u.l2_norm());
        assert!(rel < 1e-10, "skew defect {rel}");
    }

    #[test]
    fn ericksen_examples() {
        let g = grid(16);
        let c = Field::<3>::from_fn(g.clone(), |_| [0.3, -0.2, 0.9]);
        assert!(max_abs(&ericksen_stress(&c)) < 1e-14);
        let n = Field::<3>::from_fn(g.clone(), |x| [x[0].cos(), x[0].sin(), 0.0]);
        assert!(max_abs(&ericksen_stress(&n)) < 1e-13);
    }

    #[test]
    fn ericksen_cancels_director_transport() {
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..4 {
            let u = random_velocity(&g, &mut rng, 5);
            let n: Field<3> = random_band_limited(&g, &mut rng, 5);
            let stress = ericksen_stress(&n).l2_inner(&u);
            let transport = convect_director(&u, &n);
            let lap = laplacian(&n).scaled(-1.0);
            let other = transport.l2_inner(&lap);
            let scale = stress.abs().max(other.abs());
            assert!((stress + other).abs() < 1e-9 * scale, "{stress} vs {other}");
        }
    }

    #[test]
    fn director_transport_is_skew() {
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_velocity(&g, &mut rng, 5);
        let n: Field<3> = random_band_limited(&g, &mut rng, 5);
        assert!(max_abs(&convect_director(&Field::zeros(g.clone()), &n)) == 0.0);
        let c = Field::<3>::from_fn(g.clone(), |_| [1.0, 2.0, 3.0]);
        assert!(max_abs(&convect_director(&u, &c)) < 1e-13);
        let t = convect_director(&u, &n);
        let rel = t.l2_inner(&n).abs() / (t.l2_norm() * n.l2_norm());
        assert!(rel < 1e-10);
        // ⟨u·∇n, f_ε(n)⟩ vanishes for divergence-free u as well
        let f = gl_penalty(&n, GLParams::new(0.5).unwrap());
        let rel = t.l2_inner(&f).abs() / (t.l2_norm() * f.l2_norm());
        assert!(rel < 1e-10, "transport/penalty pairing {rel}");
    }

    #[test]
    fn penalty_examples() {
        let g = grid(16);
        let p = GLParams::new(1.0).unwrap();
        let unit = Field::<3>::from_fn(g.clone(), |x| [x[0].cos(), x[0].sin(), 0.0]);
        assert!(max_abs(&gl_penalty_pointwise(&unit, p)) < 1e-15);
        assert!(max_abs(&gl_penalty(&Field::zeros(g.clone()), p)) == 0.0);
        let half = Field::<3>::from_fn(g.clone(), |_| [0.5, 0.0, 0.0]);
        let f = gl_penalty(&half, p);
        let fp = f.physical();
        assert!(fp[0].iter().all(|v| (v - 0.375).abs() < 1e-14));
        assert!(fp[1].iter().chain(&fp[2]).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn potential_mass_examples() {
        let g = grid(16);
        let unit = Field::<3>::from_fn(g.clone(), |_| [0.0, 0.0, 1.0]);
        assert_eq!(gl_potential_mass(&unit, GLParams::new(1.0).unwrap()), 0.0);
        let zero = Field::<3>::zeros(g.clone());
        let m = gl_potential_mass(&zero, GLParams::new(1.0).unwrap());
        assert!((m - std::f64::consts::PI.powi(2)).abs() < 1e-12);
        let half = Field::<3>::from_fn(g.clone(), |_| [0.5, 0.0, 0.0]);
        let m = gl_potential_mass(&half, GLParams::new(0.5).unwrap());
        let expected = 4.0 * std::f64::consts::PI.powi(2) * 9.0 / 16.0;
        assert!((m - expected).abs() < 1e-11);
    }

    #[test]
    fn harmonic_map_examples() {
        let g = grid(16);
        let c = Field::<3>::from_fn(g.clone(), |_| [0.0, 1.0, 0.0]);
        assert!(max_abs(&harmonic_term(&c)) < 1e-14);
        let n = Field::<3>::from_fn(g.clone(), |x| [x[0].cos(), x[0].sin(), 0.0]);
        let h = harmonic_term(&n);
        assert!(max_abs(&h.sub(&n)) < 1e-13);
        let residual = laplacian(&n).add_scaled(&h, 1.0);
        assert!(max_abs(&residual) < 1e-12);
    }

    #[test]
    fn cross_product_examples() {
        let g = grid(16);
        let n = Field::<3>::from_fn(g.clone(), |_| [1.0, 0.0, 0.0]);
        let h = Field::<3>::from_fn(g.clone(), |_| [0.0, 0.0, 1.0]);
        let c = director_cross_h(&n, &h);
        let cp = c.physical();
        assert!(cp[1].iter().all(|&v| v == -1.0));
        assert!(cp[0].iter().chain(&cp[2]).all(|&v| v == 0.0));
        let par = Field::<3>::from_fn(g.clone(), |x| [x[0].sin(), x[0].sin(), x[0].sin()]);
        let diag = h_along_diagonal(g.clone(), |x| x[1].cos());
        assert!(max_abs(&director_cross_h(&par, &diag)) < 1e-15);
        // orthogonality pointwise
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Field<3> = random_band_limited(&g, &mut rng, 4);
        let b: Field<3> = random_band_limited(&g, &mut rng, 4);
        let ab = director_cross_h(&a, &b);
        let (pa, pab) = (a.physical(), ab.physical());
        for i in 0..g.len() {
            let s = dot(at(&pa, i), at(&pab, i));
            assert!(s.abs() < 1e-13);
        }
    }

    #[test]
    fn stratonovich_correction_examples() {
        let g = grid(16);
        let h = Field::<3>::from_fn(g.clone(), |_| [0.0, 0.0, 1.0]);
        let par = Field::<3>::from_fn(g.clone(), |x| [0.0, 0.0, x[0].cos()]);
        assert!(max_abs(&stratonovich_correction(&par, &h)) < 1e-15);
        let perp = Field::<3>::from_fn(g.clone(), |x| [x[0].cos(), x[1].sin(), 0.0]);
        let c = stratonovich_correction(&perp, &h);
        assert!(max_abs(&c.add_scaled(&perp, 0.5)) < 1e-15);
        assert!(max_abs(&stratonovich_correction(&perp, &Field::zeros(g.clone()))) == 0.0);
    }

    #[test]
    fn penalty_orthogonal_to_rotation_field() {
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n: Field<3> = random_band_limited(&g, &mut rng, 4);
        let h: Field<3> = random_band_limited(&g, &mut rng, 4);
        let f = gl_penalty(&n, GLParams::new(0.3).unwrap());
        let nxh = director_cross_h(&n, &h);
        let rel = f.l2_inner(&nxh).abs() / (f.l2_norm() * nxh.l2_norm());
        assert!(rel < 1e-12, "{rel}");
    }

    #[test]
    fn bilaplacian_identity() {
        let g = grid(32);
        assert!(bilaplacian_identity_residual(&Field::<3>::from_fn(g.clone(), |_| [1.0, 2.0, 3.0])) < 1e-12);
        let single = Field::<3>::from_fn(g.clone(), |x| [x[0].cos(), 0.0, 0.0]);
        assert!(bilaplacian_identity_residual(&single) < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d: Field<3> = random_band_limited(&g, &mut rng, 5);
        let scale = 1.0 + d.bessel_norm(4.0).powi(2);
        assert!(bilaplacian_identity_residual(&d) < 1e-8 * scale);
    }
}
