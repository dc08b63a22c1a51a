//! Time integration by operator splitting.
//!
//! One Strang step of length `dt` is
//!
//! ```text
//! D(dt/2) ∘ R(dt/2) ∘ [C(dt, dW) ∘ N(dη)] ∘ R(dt/2) ∘ D(dt/2)
//! ```
//!
//! where `D` is the exact heat/Stokes semigroup, `R` the exact pointwise
//! Ginzburg–Landau relaxation, `N` the exact Stratonovich rotation flow of
//! `dn = (n × h) ∘ dη`, and `C` the explicit coupling stage (convection,
//! Ericksen stress, director transport) plus the additive velocity noise.
//! The coupling stage uses Heun's method so that the noise-free scheme is
//! second order; the Lie variant uses a single Euler–Maruyama stage.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, SglError};
use crate::grid::{DirectorField, Field, SpectralGrid, VelocityField};
use crate::noise::{NoiseModel, StepNoise, WienerIncrement, REFINEMENT_DEPTH};
use crate::operators::{self, at, cross, dot, GLParams, Spec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Strang,
    Lie,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_end: f64,
    pub gl: GLParams,
    pub scheme: Scheme,
    pub cfl_safety: f64,
}

impl StepperConfig {
    pub fn new(dt: f64, t_end: f64, gl: GLParams, scheme: Scheme, cfl_safety: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SglError::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(SglError::InvalidArgument(format!("t_end must be nonnegative, got {t_end}")));
        }
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return Err(SglError::InvalidArgument(format!(
                "cfl_safety must lie in (0, 1], got {cfl_safety}"
            )));
        }
        Ok(StepperConfig {
            dt,
            t_end,
            gl,
            scheme,
            cfl_safety,
        })
    }

    /// Number of steps needed to reach `t_end`.
    pub fn step_count(&self) -> u64 {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as u64
    }
}

/// `(u(t), n(t))` plus the step counter, stored as grid values.
#[derive(Clone, Debug)]
pub struct SimState {
    pub t: f64,
    pub step: u64,
    pub u: VelocityField,
    pub n: DirectorField,
}

impl SimState {
    pub fn new(u: VelocityField, n: DirectorField) -> Self {
        SimState {
            t: 0.0,
            step: 0,
            u: u.to_physical(),
            n: n.to_physical(),
        }
    }

    /// Initial data: `u₀` is Leray-projected and `n₀` optionally normalised
    /// to unit length wherever it does not vanish.
    pub fn initial(u0: &Field<2>, n0: &DirectorField, normalize_n0: bool) -> Self {
        let u = operators::leray_project(u0).to_physical();
        let n = if normalize_n0 { normalize(n0) } else { n0.to_physical() };
        SimState { t: 0.0, step: 0, u, n }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.u.grid()
    }

    pub fn max_speed(&self) -> f64 {
        self.u.pointwise_norm().into_iter().fold(0.0, f64::max)
    }

    fn with_fields(&self, u: VelocityField, n: DirectorField) -> Self {
        SimState {
            t: self.t,
            step: self.step,
            u,
            n,
        }
    }
}

/// Pointwise `n / |n|` (points with `n = 0` are left at zero).
pub fn normalize(n: &DirectorField) -> DirectorField {
    let grid = n.grid().clone();
    let mut p = n.physical().into_owned();
    for i in 0..grid.len() {
        let v = at(&p, i);
        let r = dot(v, v).sqrt();
        if r > 0.0 {
            for c in p.iter_mut() {
                c[i] /= r;
            }
        }
    }
    Field::physical_unchecked(grid, p)
}

fn decay<const C: usize>(f: &Field<C>, dt: f64) -> Field<C> {
    let grid = f.grid().clone();
    let mut s = f.spectral().into_owned();
    let factors: Vec<f64> = (0..grid.len()).map(|idx| (-grid.k_sq(idx) * dt).exp()).collect();
    for comp in s.iter_mut() {
        comp.iter_mut().zip(&factors).for_each(|(c, f)| *c *= *f);
    }
    Field::spectral_unchecked(grid, s)
}

/// Exact diffusion: `û ← e^{−|k|²dt} û`, `n̂ ← e^{−|k|²dt} n̂`.
pub fn substep_diffusion(state: &SimState, dt: f64) -> SimState {
    state.with_fields(decay(&state.u, dt), decay(&state.n, dt))
}

/// Closed-form solution of `ṅ = ε⁻²(1 − |n|²) n` at one point: the
/// direction is fixed and `r² ↦ r₀² / (r₀² + (1 − r₀²) e^{−2t/ε²})`.
#[inline]
pub fn gl_relax_point(v: [f64; 3], t: f64, gl: GLParams) -> [f64; 3] {
    let s = dot(v, v);
    if s == 0.0 {
        return v;
    }
    let e = (-2.0 * t * gl.stiffness()).exp();
    let s_new = s / (s + (1.0 - s) * e);
    let scale = (s_new / s).sqrt();
    [v[0] * scale, v[1] * scale, v[2] * scale]
}

/// Exact pointwise Ginzburg–Landau relaxation over `dt`.
pub fn substep_gl_reaction(state: &SimState, dt: f64, gl: GLParams) -> SimState {
    let grid = state.grid().clone();
    let mut p = state.n.physical().into_owned();
    for i in 0..grid.len() {
        let v = gl_relax_point(at(&p, i), dt, gl);
        for c in 0..3 {
            p[c][i] = v[c];
        }
    }
    state.with_fields(state.u.clone(), Field::physical_unchecked(grid, p))
}

/// Exact flow of `ṅ = n × h` for time `d_eta` at one point: rotation about
/// `h/|h|` by the angle `−|h|·d_eta`.
#[inline]
pub fn rotate_point(n: [f64; 3], h: [f64; 3], d_eta: f64) -> [f64; 3] {
    let hn = dot(h, h).sqrt();
    if hn == 0.0 || d_eta == 0.0 {
        return n;
    }
    let b = [h[0] / hn, h[1] / hn, h[2] / hn];
    let theta = hn * d_eta;
    let (s, c) = theta.sin_cos();
    let nxb = cross(n, b);
    let bn = dot(b, n) * (1.0 - c);
    std::array::from_fn(|i| n[i] * c + nxb[i] * s + b[i] * bn)
}

/// Stratonovich director noise `(n × h) ∘ dη`, integrated exactly.
pub fn substep_director_noise(state: &SimState, d_eta: f64, h: &DirectorField) -> SimState {
    let grid = state.grid().clone();
    let mut p = state.n.physical().into_owned();
    let hp = h.physical();
    for i in 0..grid.len() {
        let v = rotate_point(at(&p, i), at(&hp, i), d_eta);
        for c in 0..3 {
            p[c][i] = v[c];
        }
    }
    state.with_fields(state.u.clone(), Field::physical_unchecked(grid, p))
}

fn axpy<const C: usize>(a: &Spec<C>, b: &Spec<C>, scale: f64) -> Spec<C> {
    std::array::from_fn(|c| a[c].iter().zip(&b[c]).map(|(x, y)| x + y * scale).collect())
}

fn add_noise(u: &mut Spec<2>, dw: &Spec<2>) {
    for c in 0..2 {
        u[c].iter_mut().zip(&dw[c]).for_each(|(a, b)| *a += b);
    }
}

/// Euler–Maruyama coupling stage:
/// `u ← u + dt·(−Π(u·∇u) − Π Div(∇n⊙∇n)) + dW`, `n ← n − dt·(u·∇)n`.
pub fn substep_explicit(state: &SimState, dt: f64, noise: &WienerIncrement) -> SimState {
    let grid = state.grid().clone();
    let (u_hat, n_hat) = (state.u.spectral(), state.n.spectral());
    let (du, dn) = operators::coupling_rhs(&grid, &u_hat, &n_hat);
    let mut u = axpy(&u_hat, &du, dt);
    add_noise(&mut u, &noise.dw.spectral());
    operators::project_in_place(&grid, &mut u);
    let n = axpy(&n_hat, &dn, dt);
    state.with_fields(
        Field::spectral_unchecked(grid.clone(), u),
        Field::spectral_unchecked(grid, n),
    )
}

/// Heun coupling stage with additive noise: predictor
/// `y* = y + dt F(y) + dW`, corrector `y ← y + dt/2 (F(y) + F(y*)) + dW`.
pub fn substep_explicit_heun(state: &SimState, dt: f64, noise: &WienerIncrement) -> SimState {
    let grid = state.grid().clone();
    let (u_hat, n_hat) = (state.u.spectral(), state.n.spectral());
    let dw = noise.dw.spectral();
    let (du0, dn0) = operators::coupling_rhs(&grid, &u_hat, &n_hat);
    let mut u_star = axpy(&u_hat, &du0, dt);
    add_noise(&mut u_star, &dw);
    let n_star = axpy(&n_hat, &dn0, dt);
    let (du1, dn1) = operators::coupling_rhs(&grid, &u_star, &n_star);
    let mut u = axpy(&axpy(&u_hat, &du0, 0.5 * dt), &du1, 0.5 * dt);
    add_noise(&mut u, &dw);
    operators::project_in_place(&grid, &mut u);
    let n = axpy(&axpy(&n_hat, &dn0, 0.5 * dt), &dn1, 0.5 * dt);
    state.with_fields(
        Field::spectral_unchecked(grid.clone(), u),
        Field::spectral_unchecked(grid, n),
    )
}

/// What a step consumed from the noise stream.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: SimState,
    /// Total increment over the step.
    pub increment: WienerIncrement,
    /// Number of dyadic halvings forced by the CFL condition.
    pub refinements: u32,
}

/// Advances [`SimState`]s with a fixed configuration, director field `h`
/// and noise model. Reentrant: distinct states may be stepped concurrently.
#[derive(Clone, Debug)]
pub struct Stepper {
    config: StepperConfig,
    h: Option<DirectorField>,
    noise: NoiseModel,
}

impl Stepper {
    /// `h = None` switches the director noise off.
    pub fn new(config: StepperConfig, h: Option<DirectorField>, noise: NoiseModel) -> Self {
        Stepper {
            config,
            h: h.map(|f| f.to_physical()),
            noise,
        }
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    pub fn h(&self) -> Option<&DirectorField> {
        self.h.as_ref()
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn cfl_ok(&self, state: &SimState, dt: f64) -> (bool, f64) {
        let speed = state.max_speed();
        let dx = state.grid().dx();
        (dt * speed <= self.config.cfl_safety * dx, speed)
    }

    fn composite(&self, state: &SimState, dt: f64, inc: &WienerIncrement) -> SimState {
        let gl = self.config.gl;
        match self.config.scheme {
            Scheme::Strang => {
                let s = substep_diffusion(state, 0.5 * dt);
                let mut s = substep_gl_reaction(&s, 0.5 * dt, gl);
                if let Some(h) = &self.h {
                    s = substep_director_noise(&s, inc.d_eta, h);
                }
                let s = substep_explicit_heun(&s, dt, inc);
                let s = substep_gl_reaction(&s, 0.5 * dt, gl);
                substep_diffusion(&s, 0.5 * dt)
            }
            Scheme::Lie => {
                let s = substep_diffusion(state, dt);
                let mut s = substep_gl_reaction(&s, dt, gl);
                if let Some(h) = &self.h {
                    s = substep_director_noise(&s, inc.d_eta, h);
                }
                substep_explicit(&s, dt, inc)
            }
        }
    }

    fn advance(
        &self,
        state: &SimState,
        noise: &StepNoise,
        dt: f64,
        level: u32,
        index: usize,
        refinements: &mut u32,
    ) -> Result<SimState> {
        let (ok, speed) = self.cfl_ok(state, dt);
        if ok {
            let inc = noise.increment(level, index);
            let next = self.composite(state, dt, &inc);
            return Ok(next.with_fields(next.u.to_physical(), next.n.to_physical()));
        }
        if level == REFINEMENT_DEPTH {
            return Err(SglError::CflExhausted {
                refinements: level,
                max_speed: speed,
            });
        }
        *refinements = (*refinements).max(level + 1);
        let mid = self.advance(state, noise, 0.5 * dt, level + 1, 2 * index, refinements)?;
        self.advance(&mid, noise, 0.5 * dt, level + 1, 2 * index + 1, refinements)
    }

    /// One composite step of length `config.dt`, drawing the increments of
    /// step `state.step`. Halves the step (replaying the same Brownian path)
    /// while the CFL condition fails.
    pub fn step(&self, state: &SimState) -> Result<StepOutcome> {
        let dt = self.config.dt;
        let noise = self.noise.step_noise(dt, state.step)?;
        let mut refinements = 0;
        let mut next = self.advance(state, &noise, dt, 0, 0, &mut refinements)?;
        next.t = state.t + dt;
        next.step = state.step + 1;
        if !next.u.is_finite() || !next.n.is_finite() {
            return Err(SglError::NonFinite(format!("state at step {}", next.step)));
        }
        let div = next.u.divergence_l2();
        let scale = next.u.sobolev_norm(1)?.max(1.0);
        if div > 1e-10 * scale {
            return Err(SglError::Invariant(format!(
                "divergence defect {div:e} after step {}",
                next.step
            )));
        }
        Ok(StepOutcome {
            state: next,
            increment: noise.increment(0, 0),
            refinements,
        })
    }
}

/// Spectral coefficients of a single velocity eigenmode, exposed for
/// analytic checks.
pub fn shear_mode(grid: &Arc<SpectralGrid>, amplitude: f64) -> VelocityField {
    let mut c: [Vec<Complex64>; 2] = std::array::from_fn(|_| vec![Complex64::default(); grid.len()]);
    // u = (a sin x₂, 0)
    c[0][grid.mode_index(0, 1)] = Complex64::new(0.0, -0.5 * amplitude);
    c[0][grid.mode_index(0, -1)] = Complex64::new(0.0, 0.5 * amplitude);
    Field::spectral_unchecked(grid.clone(), c)
}
