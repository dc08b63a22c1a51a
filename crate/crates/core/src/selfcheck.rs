//! Operator identities and exact-substep checks on random band-limited
//! fields. Used by the `check` subcommand and by the acceptance tests.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{random_band_limited, DirectorField, Field, SpectralGrid, VelocityField};
use crate::operators::{self, GLParams};
use crate::stepper::{self, SimState};

pub const DEFAULT_FIELDS: usize = 32;
pub const DEFAULT_MODES: usize = 64;
pub const DEFAULT_BANDWIDTH: i64 = 5;
/// Relative tolerance of the operator identities.
pub const IDENTITY_TOL: f64 = 1e-8;
pub const ROTATION_TOL: f64 = 1e-13;
pub const GL_TOL: f64 = 1e-10;
pub const DIFFUSION_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst residual over all samples.
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

/// `s(t)` for `ṡ = 2κ(1 − s)s` by classical RK4 with `steps` steps.
pub fn gl_rk4_oracle(s0: f64, t: f64, stiffness: f64, steps: usize) -> f64 {
    let f = |s: f64| 2.0 * stiffness * (1.0 - s) * s;
    let h = t / steps as f64;
    let mut s = s0;
    for _ in 0..steps {
        let k1 = f(s);
        let k2 = f(s + 0.5 * h * k1);
        let k3 = f(s + 0.5 * h * k2);
        let k4 = f(s + h * k3);
        s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    s
}

struct Sample {
    u: VelocityField,
    v: Field<2>,
    n: DirectorField,
    h: DirectorField,
    phi: Field<1>,
}

fn sample(grid: &Arc<SpectralGrid>, seed: u64, bandwidth: i64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Field<2> = random_band_limited(grid, &mut rng, bandwidth);
    let u = operators::leray_project(&random_band_limited::<2, _>(grid, &mut rng, bandwidth));
    Sample {
        u,
        v,
        n: random_band_limited(grid, &mut rng, bandwidth),
        h: random_band_limited(grid, &mut rng, bandwidth),
        phi: random_band_limited(grid, &mut rng, bandwidth),
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        num.abs()
    } else {
        num.abs() / den
    }
}

fn identity_residuals(s: &Sample, gl: GLParams) -> [f64; 8] {
    let grid = s.u.grid().clone();
    let pv = operators::leray_project(&s.v);
    let ppv = operators::leray_project(&pv);
    let idem = ratio(ppv.sub(&pv).l2_norm(), s.v.l2_norm());

    let pu = operators::leray_project(&s.u);
    let adj = ratio(pv.l2_inner(&s.u) - s.v.l2_inner(&pu), s.v.l2_norm() * s.u.l2_norm());

    let phi_hat = s.phi.spectral();
    let grad = Field::<2>::from_spectral(
        grid.clone(),
        [grid.derivative(&phi_hat[0], 0), grid.derivative(&phi_hat[0], 1)],
    )
    .expect("gradient of a real field is real");
    let grad_res = ratio(operators::leray_project(&grad).l2_norm(), grad.l2_norm());

    let cu = operators::convect_velocity(&s.u);
    let conv = ratio(cu.l2_inner(&s.u), cu.l2_norm() * s.u.l2_norm());

    let cn = operators::convect_director(&s.u, &s.n);
    let transport = ratio(cn.l2_inner(&s.n), cn.l2_norm() * s.n.l2_norm());

    let stress = operators::ericksen_stress(&s.n);
    let lap = operators::laplacian(&s.n);
    let cancel = ratio(
        stress.l2_inner(&s.u) - cn.l2_inner(&lap),
        stress.l2_norm() * s.u.l2_norm(),
    );

    let f = operators::gl_penalty_pointwise(&s.n, gl);
    let nh = operators::director_cross_h(&s.n, &s.h);
    let pen = ratio(f.l2_inner(&nh), f.l2_norm() * nh.l2_norm());

    let (lhs, _) = operators::bilaplacian_identity_sides(&s.n);
    let lhs_norm = (lhs.iter().map(|v| v * v).sum::<f64>() * grid.cell_area()).sqrt();
    let bilap = ratio(operators::bilaplacian_identity_residual(&s.n), lhs_norm);

    [idem, adj, grad_res, conv, transport, cancel, pen, bilap]
}

const IDENTITY_NAMES: [&str; 8] = [
    "leray_idempotent",
    "leray_self_adjoint",
    "leray_annihilates_gradients",
    "convection_skew",
    "director_transport_skew",
    "stress_transport_cancellation",
    "penalty_orthogonal_to_rotation",
    "bilaplacian_identity",
];

fn rotation_residual(s: &Sample, d_eta: f64) -> f64 {
    let st = SimState::new(Field::zeros(s.n.grid().clone()), s.n.clone());
    let r = stepper::substep_director_noise(&st, d_eta, &s.h);
    r.n.pointwise_norm()
        .iter()
        .zip(st.n.pointwise_norm())
        .map(|(a, b)| (a - b).abs() / b.max(1.0))
        .fold(0.0, f64::max)
}

fn diffusion_residual(s: &Sample, dt: f64) -> f64 {
    let grid = s.n.grid().clone();
    let st = SimState::new(s.u.clone(), s.n.clone());
    let out = stepper::substep_diffusion(&st, dt);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut compare = |before: &[num_complex::Complex64], after: &[num_complex::Complex64]| {
        for idx in 0..grid.len() {
            let expect = before[idx] * (-grid.k_sq(idx) * dt).exp();
            worst = worst.max((after[idx] - expect).norm());
            scale = scale.max(before[idx].norm());
        }
    };
    let (ub, ua) = (st.u.to_spectral(), out.u.to_spectral());
    let (nb, na) = (st.n.to_spectral(), out.n.to_spectral());
    for c in 0..2 {
        compare(&ub.spectral()[c], &ua.spectral()[c]);
    }
    for c in 0..3 {
        compare(&nb.spectral()[c], &na.spectral()[c]);
    }
    ratio(worst, scale)
}

/// Worst deviation of the closed-form relaxation from RK4 over
/// `dt/ε² ∈ [0, 5]` and a range of initial moduli.
pub fn gl_closed_form_residual() -> f64 {
    let gl = GLParams::new(0.25).expect("valid epsilon");
    let mut worst: f64 = 0.0;
    for &s0 in &[0.0f64, 1e-4, 0.04, 0.25, 0.5, 0.81, 0.99, 1.0, 1.1] {
        for i in 0..=50 {
            let tau = 0.1 * i as f64;
            let dt = tau * gl.epsilon() * gl.epsilon();
            let v = stepper::gl_relax_point([s0.sqrt(), 0.0, 0.0], dt, gl);
            let oracle = gl_rk4_oracle(s0, dt, gl.stiffness(), 4000);
            worst = worst.max((v[0] * v[0] - oracle).abs());
        }
    }
    worst
}

/// Runs the full suite on `fields` random samples of bandwidth
/// `bandwidth` on an `n × n` grid.
pub fn run_suite(fields: usize, n: usize, bandwidth: i64, seed: u64) -> Result<Vec<CheckResult>> {
    let grid = SpectralGrid::new(n)?;
    let gl = GLParams::new(0.1)?;
    let per_field: Vec<([f64; 8], f64, f64)> = (0..fields as u64)
        .into_par_iter()
        .map(|i| {
            let s = sample(&grid, seed.wrapping_mul(1_000_003).wrapping_add(i), bandwidth);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i << 32));
            let d_eta: f64 = rng.random_range(-3.0..3.0);
            let dt: f64 = rng.random_range(0.0..0.05);
            (identity_residuals(&s, gl), rotation_residual(&s, d_eta), diffusion_residual(&s, dt))
        })
        .collect();
    let mut out: Vec<CheckResult> = IDENTITY_NAMES
        .iter()
        .enumerate()
        .map(|(j, &name)| CheckResult {
            name,
            residual: per_field.iter().map(|p| p.0[j]).fold(0.0, f64::max),
            tolerance: IDENTITY_TOL,
        })
        .collect();
    out.push(CheckResult {
        name: "rotation_isometry",
        residual: per_field.iter().map(|p| p.1).fold(0.0, f64::max),
        tolerance: ROTATION_TOL,
    });
    out.push(CheckResult {
        name: "gl_closed_form_vs_rk4",
        residual: gl_closed_form_residual(),
        tolerance: GL_TOL,
    });
    out.push(CheckResult {
        name: "diffusion_mode_decay",
        residual: per_field.iter().map(|p| p.2).fold(0.0, f64::max),
        tolerance: DIFFUSION_TOL,
    });
    Ok(out)
}
