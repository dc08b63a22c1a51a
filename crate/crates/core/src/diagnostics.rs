//! Monitored quantities: energies, dissipation, the energy balance, local
//! energies on covering balls, stopping-time detectors and the
//! interpolation ratio `‖∇n‖⁴_{L⁴} / (concentration × dissipation)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, SglError};
use crate::grid::{DirectorField, SpectralGrid};
use crate::noise::WienerIncrement;
use crate::operators::{self, at, cross, dot, GLParams};
use crate::stepper::SimState;

/// Per-snapshot diagnostics. All integrals use the grid quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub t: f64,
    pub step: u64,
    /// `∫(|u|² + |∇n|²) + ∫F_ε`.
    pub energy_e: f64,
    /// `∫(|u|² + |∇n|²) + 2∫F_ε`, the functional whose decay rate is `2𝒟`.
    pub lyapunov: f64,
    /// `|∇u|² + |Δn + f_ε(n)|²`.
    pub enstrophy_d: f64,
    pub gl_mass: f64,
    /// `½|Δn|²`.
    pub lambda1: f64,
    /// `½|∇u|²`.
    pub lambda2: f64,
    /// `ε⁻¹|1 − |n|²|` and `ε⁻¹|∇|n|²|` in L².
    pub eps_weighted: [f64; 2],
    pub min_abs_n: f64,
    pub max_abs_n: f64,
    pub grad_n_l4: f64,
    pub u_sq: f64,
    pub grad_n_sq: f64,
    /// `|n × ∇h|²`, zero without director noise.
    pub noise_correction: f64,
    /// Largest local energy over the covering balls of radius `2R`.
    pub local_energy_max: f64,
    /// `sup_x ∫_{B(x,R)} |∇n|²` over grid centres.
    pub local_grad_sup: f64,
}

impl EnergyReport {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.energy_e,
            self.lyapunov,
            self.enstrophy_d,
            self.gl_mass,
            self.lambda1,
            self.lambda2,
            self.eps_weighted[0],
            self.eps_weighted[1],
            self.min_abs_n,
            self.max_abs_n,
            self.grad_n_l4,
            self.u_sq,
            self.grad_n_sq,
            self.noise_correction,
            self.local_energy_max,
            self.local_grad_sup,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn grad_density(grid: &SpectralGrid, n: &DirectorField) -> Vec<f64> {
    let g = operators::gradient(n);
    (0..grid.len())
        .map(|i| g.iter().map(|c| c[0][i] * c[0][i] + c[1][i] * c[1][i]).sum())
        .collect()
}

fn energy_density(state: &SimState, gl: GLParams) -> Vec<f64> {
    let grid = state.grid();
    let up = state.u.physical();
    let np = state.n.physical();
    let grad = grad_density(grid, &state.n);
    let stiff = 0.25 * gl.stiffness();
    (0..grid.len())
        .map(|i| {
            let u = at(&up, i);
            let n = at(&np, i);
            let d = 1.0 - dot(n, n);
            u[0] * u[0] + u[1] * u[1] + grad[i] + stiff * d * d
        })
        .collect()
}

/// `|n × ∇h|²_{L²}`.
pub fn noise_correction(n: &DirectorField, h: &DirectorField) -> f64 {
    let grid = n.grid();
    let np = n.physical();
    let gh = operators::gradient(h);
    let sum: f64 = (0..grid.len())
        .map(|i| {
            let v = at(&np, i);
            (0..2)
                .map(|a| {
                    let c = cross(v, [gh[0][a][i], gh[1][a][i], gh[2][a][i]]);
                    dot(c, c)
                })
                .sum::<f64>()
        })
        .sum();
    sum * grid.cell_area()
}

/// `⟨∇n, n × ∇h⟩`, the integrand of the director martingale.
pub fn director_martingale_density(n: &DirectorField, h: &DirectorField) -> f64 {
    let grid = n.grid();
    let np = n.physical();
    let gn = operators::gradient(n);
    let gh = operators::gradient(h);
    let sum: f64 = (0..grid.len())
        .map(|i| {
            let v = at(&np, i);
            (0..2)
                .map(|a| {
                    let c = cross(v, [gh[0][a][i], gh[1][a][i], gh[2][a][i]]);
                    dot([gn[0][a][i], gn[1][a][i], gn[2][a][i]], c)
                })
                .sum::<f64>()
        })
        .sum();
    sum * grid.cell_area()
}

/// Global diagnostics of a snapshot (the local fields are left at zero).
pub fn energy_report(state: &SimState, gl: GLParams) -> EnergyReport {
    let grid = state.grid().clone();
    let g = &*grid;
    let area = g.cell_area();
    let n = &state.n;
    let np = n.physical();

    let u_sq = state.u.l2_norm().powi(2);
    let grad = grad_density(g, n);
    let grad_n_sq = grad.iter().sum::<f64>() * area;
    let grad_n_l4 = (grad.iter().map(|d| d * d).sum::<f64>() * area).powf(0.25);
    let gl_mass = operators::gl_potential_mass(n, gl);
    let grad_u_sq = state.u.seminorm(1.0).powi(2);
    let lap = operators::laplacian(n);
    let lap_sq = lap.l2_norm().powi(2);

    let lap_p = lap.physical();
    let f = operators::gl_penalty_pointwise(n, gl);
    let fp = f.physical();
    let mut chem_sq = 0.0;
    let mut defect_sq = 0.0;
    let mut min_abs = f64::INFINITY;
    let mut max_abs: f64 = 0.0;
    let mut mod_sq = vec![0.0; g.len()];
    for (i, m) in mod_sq.iter_mut().enumerate() {
        let v = at(&np, i);
        let s = dot(v, v);
        *m = s;
        let r = s.sqrt();
        min_abs = min_abs.min(r);
        max_abs = max_abs.max(r);
        defect_sq += (1.0 - s) * (1.0 - s);
        for c in 0..3 {
            let w = lap_p[c][i] + fp[c][i];
            chem_sq += w * w;
        }
    }
    let mod_hat = g.forward(&mod_sq);
    let grad_mod_sq = g.weighted_sum(&mod_hat, |k2| k2);
    let inv_eps = 1.0 / gl.epsilon();

    EnergyReport {
        t: state.t,
        step: state.step,
        energy_e: u_sq + grad_n_sq + gl_mass,
        lyapunov: u_sq + grad_n_sq + 2.0 * gl_mass,
        enstrophy_d: grad_u_sq + chem_sq * area,
        gl_mass,
        lambda1: 0.5 * lap_sq,
        lambda2: 0.5 * grad_u_sq,
        eps_weighted: [inv_eps * (defect_sq * area).sqrt(), inv_eps * grad_mod_sq.sqrt()],
        min_abs_n: min_abs,
        max_abs_n: max_abs,
        grad_n_l4,
        u_sq,
        grad_n_sq,
        noise_correction: 0.0,
        local_energy_max: 0.0,
        local_grad_sup: 0.0,
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius <= PI) {
        return Err(SglError::InvalidArgument(format!("radius must lie in (0, π], got {radius}")));
    }
    Ok(())
}

fn ball_members(grid: &SpectralGrid, center: [f64; 2], radius: f64) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| SpectralGrid::torus_distance(grid.point(i), center) <= radius)
        .collect()
}

/// `∫_{B(center,R)} (|u|² + |∇n|² + F_ε)`, counting grid points whose torus
/// distance to `center` is at most `R`.
pub fn local_energy(state: &SimState, gl: GLParams, center: [f64; 2], radius: f64) -> Result<f64> {
    check_radius(radius)?;
    let grid = state.grid();
    let density = energy_density(state, gl);
    let members = ball_members(grid, center, radius);
    Ok(members.iter().map(|&i| density[i]).sum::<f64>() * grid.cell_area())
}

/// Periodic square lattice of centres with spacing at most `R√2`, so that
/// every point is within `R` of a centre and every `B(x, R)` lies in some
/// `B(x_i, 2R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoveringSet {
    pub radius: f64,
    pub centers: Vec<[f64; 2]>,
}

impl CoveringSet {
    pub fn count(&self) -> usize {
        self.centers.len()
    }

    /// `N_R · R²`, bounded independently of `R`.
    pub fn constant(&self) -> f64 {
        self.count() as f64 * self.radius * self.radius
    }

    /// Largest distance from a grid point to its nearest centre.
    pub fn max_gap(&self, grid: &SpectralGrid) -> f64 {
        (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                self.centers
                    .iter()
                    .map(|&c| SpectralGrid::torus_distance(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    /// Exhaustive check that every grid point lies within `R` of a centre.
    pub fn covers(&self, grid: &SpectralGrid) -> bool {
        self.max_gap(grid) <= self.radius
    }
}

pub fn build_covering(radius: f64, grid: &SpectralGrid) -> Result<CoveringSet> {
    check_radius(radius)?;
    let per_axis = (2.0 * PI / (radius * 2f64.sqrt())).ceil() as usize;
    let spacing = 2.0 * PI / per_axis as f64;
    let centers = (0..per_axis * per_axis)
        .map(|m| [(m / per_axis) as f64 * spacing, (m % per_axis) as f64 * spacing])
        .collect();
    let cover = CoveringSet { radius, centers };
    if !cover.covers(grid) {
        return Err(SglError::Invariant(format!("covering of radius {radius} leaves a gap")));
    }
    Ok(cover)
}

/// First-hit times of the concentration and degeneracy events.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopState {
    pub delta: f64,
    pub radius: f64,
    pub t_end: f64,
    /// First time the covering maximum of the local energy reaches `delta`.
    pub sigma1: f64,
    /// First time `min_x |n|` drops to `½`.
    pub sigma2: f64,
}

impl StopState {
    pub fn new(delta: f64, radius: f64, t_end: f64) -> Result<Self> {
        check_radius(radius)?;
        if !(delta > 0.0) {
            return Err(SglError::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        Ok(StopState {
            delta,
            radius,
            t_end,
            sigma1: f64::INFINITY,
            sigma2: f64::INFINITY,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma1.min(self.sigma2).min(self.t_end)
    }

    pub fn triggered(&self) -> bool {
        self.sigma1.is_finite() || self.sigma2.is_finite()
    }

    /// Records a snapshot; a time already set is never moved.
    pub fn observe(&mut self, t: f64, local_energy_max: f64, min_abs_n: f64) {
        if self.sigma1.is_infinite() && local_energy_max >= self.delta {
            self.sigma1 = t;
        }
        if self.sigma2.is_infinite() && min_abs_n <= 0.5 {
            self.sigma2 = t;
        }
    }

    pub fn observe_report(&mut self, report: &EnergyReport) {
        self.observe(report.t, report.local_energy_max, report.min_abs_n);
    }
}

/// Immutable evaluation context: `ε`, the director noise field, the
/// stopping radius and its covering.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    grid: Arc<SpectralGrid>,
    gl: GLParams,
    h: Option<DirectorField>,
    covering: CoveringSet,
    cover_members: Vec<Vec<usize>>,
    ball_hat: Vec<Complex64>,
}

impl Diagnostics {
    pub fn new(grid: Arc<SpectralGrid>, gl: GLParams, h: Option<DirectorField>, radius: f64) -> Result<Self> {
        let covering = build_covering(radius, &grid)?;
        let cover_members = covering
            .centers
            .iter()
            .map(|&c| ball_members(&grid, c, 2.0 * radius))
            .collect();
        let indicator: Vec<f64> = (0..grid.len())
            .map(|i| f64::from(u8::from(SpectralGrid::torus_distance(grid.point(i), [0.0, 0.0]) <= radius)))
            .collect();
        let ball_hat = grid.forward(&indicator);
        Ok(Diagnostics {
            grid,
            gl,
            h: h.map(|f| f.to_physical()),
            covering,
            cover_members,
            ball_hat,
        })
    }

    pub fn gl(&self) -> GLParams {
        self.gl
    }

    pub fn covering(&self) -> &CoveringSet {
        &self.covering
    }

    pub fn radius(&self) -> f64 {
        self.covering.radius
    }

    /// Covering maximum of the local energy on balls of radius `2R`.
    pub fn local_energy_max(&self, state: &SimState) -> f64 {
        let density = energy_density(state, self.gl);
        let area = self.grid.cell_area();
        self.cover_members
            .iter()
            .map(|m| m.iter().map(|&i| density[i]).sum::<f64>() * area)
            .fold(0.0, f64::max)
    }

    /// `max_x ∫_{B(x,R)} |∇n|²` over all grid centres, by circular convolution.
    pub fn local_grad_sup(&self, state: &SimState) -> f64 {
        let g = &*self.grid;
        let dens_hat = g.forward(&grad_density(g, &state.n));
        let scale = (g.len() as f64) * g.cell_area();
        let prod: Vec<Complex64> = dens_hat.iter().zip(&self.ball_hat).map(|(a, b)| a * b * scale).collect();
        g.inverse(&prod).into_iter().fold(0.0, f64::max)
    }

    pub fn report(&self, state: &SimState) -> EnergyReport {
        let mut r = energy_report(state, self.gl);
        if let Some(h) = &self.h {
            r.noise_correction = noise_correction(&state.n, h);
        }
        r.local_energy_max = self.local_energy_max(state);
        r.local_grad_sup = self.local_grad_sup(state);
        r
    }

    /// Itô increments of the two martingales over a step that starts at
    /// `state` and applies `inc`.
    pub fn ledger_entry(&self, state: &SimState, inc: &WienerIncrement) -> LedgerEntry {
        let velocity = state.u.l2_inner(&inc.dw);
        let director = match &self.h {
            Some(h) => director_martingale_density(&state.n, h) * inc.d_eta,
            None => 0.0,
        };
        LedgerEntry {
            t_start: state.t,
            t_end: state.t + inc.dt,
            velocity,
            director,
        }
    }
}

/// Applies a snapshot to the stopping detectors.
pub fn update_stops(stop: StopState, state: &SimState, gl: GLParams, covering: &CoveringSet) -> StopState {
    let mut s = stop;
    let grid = state.grid();
    let density = energy_density(state, gl);
    let local = covering
        .centers
        .iter()
        .map(|&c| {
            let members = ball_members(grid, c, 2.0 * covering.radius);
            members.iter().map(|&i| density[i]).sum::<f64>() * grid.cell_area()
        })
        .fold(0.0, f64::max);
    let min_abs = state.n.pointwise_norm().into_iter().fold(f64::INFINITY, f64::min);
    s.observe(state.t, local, min_abs);
    s
}

/// `(∫‖∇n‖⁴_{L⁴} dt, sup ℰ_R(|∇n|²) · ∫(|Δn|² + R⁻²|∇n|²) dt, ratio)` by
/// trapezoidal quadrature over the series. The ratio is `0` when the right
/// side vanishes.
pub fn ls_ratio(reports: &[EnergyReport], radius: f64) -> (f64, f64, f64) {
    let l4 = trapezoid(reports, |r| r.grad_n_l4.powi(4));
    let diss = trapezoid(reports, |r| 2.0 * r.lambda1 + r.grad_n_sq / (radius * radius));
    let sup = reports.iter().map(|r| r.local_grad_sup).fold(0.0, f64::max);
    let lhs = *l4.last().unwrap_or(&0.0);
    let rhs = sup * diss.last().unwrap_or(&0.0);
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    (lhs, rhs, ratio)
}

/// Cumulative trapezoid `∫_{t_0}^{t_m} g` at every report time.
pub fn trapezoid(reports: &[EnergyReport], g: impl Fn(&EnergyReport) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(reports.len());
    let mut acc = 0.0;
    for (m, r) in reports.iter().enumerate() {
        if m > 0 {
            let p = &reports[m - 1];
            acc += 0.5 * (r.t - p.t) * (g(p) + g(r));
        }
        out.push(acc);
    }
    out
}

/// Martingale increments applied over one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerEntry {
    pub t_start: f64,
    pub t_end: f64,
    /// `⟨u, dW⟩`.
    pub velocity: f64,
    /// `⟨∇n, n × ∇h⟩ dη`.
    pub director: f64,
}

/// `L(t) + 2∫𝒟 − L(0) − Tr Q·t − ∫|n×∇h|²` at every report time, with `L`
/// the Lyapunov functional. Its expectation vanishes.
pub fn balance_series(reports: &[EnergyReport], trace_q: f64) -> Vec<f64> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let diss = trapezoid(reports, |r| r.enstrophy_d);
    let corr = trapezoid(reports, |r| r.noise_correction);
    reports
        .iter()
        .enumerate()
        .map(|(m, r)| {
            r.lyapunov + 2.0 * diss[m] - first.lyapunov - trace_q * (r.t - first.t) - corr[m]
        })
        .collect()
}

/// Pathwise energy-identity residual: [`balance_series`] minus twice the
/// accumulated martingale increments. The ledger must hold one entry per
/// interval between consecutive reports.
pub fn energy_identity_residual(reports: &[EnergyReport], ledger: &[LedgerEntry], trace_q: f64) -> Result<Vec<f64>> {
    if reports.len() != ledger.len() + 1 && !(reports.is_empty() && ledger.is_empty()) {
        return Err(SglError::Misaligned(format!(
            "{} reports need {} ledger entries, got {}",
            reports.len(),
            reports.len().saturating_sub(1),
            ledger.len()
        )));
    }
    for (m, e) in ledger.iter().enumerate() {
        let (a, b) = (reports[m].t, reports[m + 1].t);
        let tol = 1e-9 * b.abs().max(1.0);
        if (e.t_start - a).abs() > tol || (e.t_end - b).abs() > tol {
            return Err(SglError::Misaligned(format!(
                "ledger entry {m} spans [{}, {}] but reports are at {a} and {b}",
                e.t_start, e.t_end
            )));
        }
    }
    let mut acc = 0.0;
    Ok(balance_series(reports, trace_q)
        .into_iter()
        .enumerate()
        .map(|(m, b)| {
            if m > 0 {
                acc += 2.0 * (ledger[m - 1].velocity + ledger[m - 1].director);
            }
            b - acc
        })
        .collect())
}
