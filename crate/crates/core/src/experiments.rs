//! Path runners, the pathwise-coupled ε-family, Monte Carlo ensembles and
//! log–log rate fitting.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::diagnostics::{self, Diagnostics, EnergyReport, LedgerEntry, StopState};
use crate::error::{Result, SglError};
use crate::grid::{DirectorField, Field, SpectralGrid};
use crate::noise::NoiseModel;
use crate::operators::{self, GLParams};
use crate::stepper::{SimState, Stepper, StepperConfig};

/// Multiple of `ℰ(0)` used as the concentration threshold when none is given.
pub const DEFAULT_DELTA_FACTOR: f64 = 0.5;
/// Lower bound on the default threshold.
pub const DELTA_FLOOR: f64 = 1e-3;

/// Everything needed to run one path except the path index.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub stepper: StepperConfig,
    pub noise: NoiseModel,
    pub h: Option<DirectorField>,
    pub initial: SimState,
    /// Absolute threshold `δ`; `None` selects `max(δ_floor, factor·ℰ(0))`.
    pub delta: Option<f64>,
    pub radius: f64,
}

impl RunSpec {
    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.initial.grid()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut s = self.clone();
        s.stepper.gl = GLParams::new(epsilon)?;
        Ok(s)
    }

    pub fn diagnostics(&self) -> Result<Diagnostics> {
        Diagnostics::new(self.grid().clone(), self.stepper.gl, self.h.clone(), self.radius)
    }

    pub fn stepper_for(&self, path_id: u64) -> Stepper {
        Stepper::new(self.stepper, self.h.clone(), self.noise.clone().with_path(path_id))
    }

    /// `Tr Q` of the velocity noise.
    pub fn trace_q(&self) -> f64 {
        self.noise.hs_mass().0
    }

    pub fn resolve_delta(&self, first: &EnergyReport) -> f64 {
        self.delta
            .unwrap_or_else(|| (DEFAULT_DELTA_FACTOR * first.energy_e).max(DELTA_FLOOR))
    }

    fn stop_state(&self, first: &EnergyReport) -> Result<StopState> {
        StopState::new(self.resolve_delta(first), self.radius, self.stepper.t_end)
    }
}

/// One path's full history.
#[derive(Clone, Debug)]
pub struct PathResult {
    pub path_id: u64,
    pub reports: Vec<EnergyReport>,
    pub ledger: Vec<LedgerEntry>,
    pub stop: StopState,
    pub final_state: SimState,
    pub max_refinements: u32,
}

impl PathResult {
    pub fn max_abs_n(&self) -> f64 {
        self.reports.iter().map(|r| r.max_abs_n).fold(0.0, f64::max)
    }
}

fn checked(report: EnergyReport) -> Result<EnergyReport> {
    if report.is_finite() {
        Ok(report)
    } else {
        Err(SglError::NonFinite(format!("diagnostics at step {}", report.step)))
    }
}

/// Runs from `spec.initial` (which may be a resumed mid-run state) until
/// `t_end`, calling `observe` on every snapshot including the first.
pub fn run_path(
    spec: &RunSpec,
    path_id: u64,
    mut observe: impl FnMut(&SimState, &EnergyReport, &StopState) -> Result<()>,
) -> Result<PathResult> {
    let stepper = spec.stepper_for(path_id);
    let diag = spec.diagnostics()?;
    let total = spec.stepper.step_count();
    let mut state = spec.initial.clone();
    let first = checked(diag.report(&state))?;
    let mut stop = spec.stop_state(&first)?;
    stop.observe_report(&first);
    observe(&state, &first, &stop)?;
    let mut reports = vec![first];
    let mut ledger = Vec::new();
    let mut max_refinements = 0;
    while state.step < total {
        let out = stepper.step(&state)?;
        ledger.push(diag.ledger_entry(&state, &out.increment));
        max_refinements = max_refinements.max(out.refinements);
        state = out.state;
        let r = checked(diag.report(&state))?;
        stop.observe_report(&r);
        observe(&state, &r, &stop)?;
        reports.push(r);
    }
    Ok(PathResult {
        path_id,
        reports,
        ledger,
        stop,
        final_state: state,
        max_refinements,
    })
}

/// Mean and standard error of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moment {
    pub mean: f64,
    pub std_error: f64,
}

impl Moment {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Moment { mean: 0.0, std_error: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std_error = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Moment { mean, std_error }
    }

    /// `|mean| ≤ k·SE` (exact zero passes with zero SE).
    pub fn within(&self, k: f64) -> bool {
        self.mean.abs() <= k * self.std_error
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub epsilon: f64,
    pub n_paths: usize,
    pub t_end: f64,
    pub trace_q: f64,
    pub initial_energy: f64,
    /// `E[sup_t ℰ]` and `E[(sup_t ℰ)²]`.
    pub sup_energy: [Moment; 2],
    pub final_energy: Moment,
    pub integrated_dissipation: Moment,
    /// `L(T) + 2∫𝒟 − L(0) − Tr Q·T − ∫|n×∇h|²`, zero in expectation.
    pub mean_balance: Moment,
    /// The same with the martingale increments removed path by path.
    pub pathwise_residual: Moment,
    pub max_abs_n: f64,
    pub sigma: Vec<f64>,
}

/// Independent paths `0..n_paths` at the given `ε`.
pub fn run_ensemble(spec: &RunSpec, epsilon: f64, n_paths: usize) -> Result<EnsembleSummary> {
    if n_paths == 0 {
        return Err(SglError::InvalidArgument("n_paths must be positive".into()));
    }
    let spec = spec.with_epsilon(epsilon)?;
    let trace_q = spec.trace_q();
    let paths: Vec<PathResult> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| run_path(&spec, p, |_, _, _| Ok(())))
        .collect::<Result<_>>()?;
    let mut sup1 = Vec::new();
    let mut sup2 = Vec::new();
    let mut fin = Vec::new();
    let mut diss = Vec::new();
    let mut bal = Vec::new();
    let mut res = Vec::new();
    for p in &paths {
        let sup = p.reports.iter().map(|r| r.energy_e).fold(0.0, f64::max);
        sup1.push(sup);
        sup2.push(sup * sup);
        fin.push(p.reports.last().map_or(0.0, |r| r.energy_e));
        diss.push(*diagnostics::trapezoid(&p.reports, |r| r.enstrophy_d).last().unwrap_or(&0.0));
        bal.push(*diagnostics::balance_series(&p.reports, trace_q).last().unwrap_or(&0.0));
        let r = diagnostics::energy_identity_residual(&p.reports, &p.ledger, trace_q)?;
        res.push(*r.last().unwrap_or(&0.0));
    }
    Ok(EnsembleSummary {
        epsilon,
        n_paths,
        t_end: spec.stepper.t_end,
        trace_q,
        initial_energy: paths[0].reports[0].energy_e,
        sup_energy: [Moment::of(&sup1), Moment::of(&sup2)],
        final_energy: Moment::of(&fin),
        integrated_dissipation: Moment::of(&diss),
        mean_balance: Moment::of(&bal),
        pathwise_residual: Moment::of(&res),
        max_abs_n: paths.iter().map(PathResult::max_abs_n).fold(0.0, f64::max),
        sigma: paths.iter().map(|p| p.stop.sigma()).collect(),
    })
}

/// Least-squares fit `log y = rate·log x + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    /// 95% confidence half-width of the rate.
    pub half_width: f64,
    /// Indices dropped because the metric was not positive.
    pub excluded: Vec<usize>,
}

pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(SglError::InvalidArgument("xs and ys differ in length".into()));
    }
    let mut excluded = Vec::new();
    let mut pts = Vec::new();
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        if y > 0.0 && x > 0.0 && y.is_finite() {
            pts.push((x.ln(), y.ln()));
        } else {
            excluded.push(i);
        }
    }
    if pts.len() < 3 {
        return Err(SglError::InvalidArgument(format!(
            "need at least 3 positive points, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SglError::InvalidArgument("all abscissae coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let rate = sxy / sxx;
    let intercept = my - rate * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - rate * p.0).powi(2)).sum();
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| SglError::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        rate,
        intercept,
        half_width: t * se,
        excluded,
    })
}

/// Settings of the ε-sweep.
#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub eps_family: Vec<f64>,
    pub alpha: f64,
    pub n_paths: usize,
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_family.is_empty() {
            return Err(SglError::InvalidArgument("eps_family is empty".into()));
        }
        if self.eps_family.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(SglError::InvalidArgument("eps_family entries must lie in (0, 1]".into()));
        }
        if self.eps_family.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SglError::InvalidArgument("eps_family must be strictly decreasing".into()));
        }
        if !(1.0..2.0).contains(&self.alpha) {
            return Err(SglError::InvalidArgument(format!("alpha must lie in [1, 2), got {}", self.alpha)));
        }
        if self.n_paths == 0 {
            return Err(SglError::InvalidArgument("n_paths must be positive".into()));
        }
        Ok(())
    }
}

/// One family member on one path, measured on `[0, τ]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberPath {
    pub epsilon: f64,
    /// `sup_t (‖u − u_ref‖²_{α−1} + ‖n − n_ref‖²_{H^α})^{1/2}`.
    pub distance_sup: f64,
    pub velocity_sup: f64,
    pub director_sup: f64,
    /// `(∫ ‖u − u_ref‖²_{α} + ‖n − n_ref‖²_{H^{α+1}} dt)^{1/2}`.
    pub distance_integrated: f64,
    /// `max_t ‖1 − |n|²‖_{L²}`.
    pub constraint_defect: f64,
    /// `sup_t ‖n(t) − n(0) − ∫(Δn + |∇n|²n − u·∇n) − ∫(n×h)dη‖_{L²}`.
    pub limit_residual: f64,
    /// The same with the `½(n×h)×h` drift also subtracted.
    pub limit_residual_corrected: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub max_abs_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathFamily {
    pub path_id: u64,
    /// Family minimum of `σ^ε ∧ T`.
    pub tau: f64,
    pub members: Vec<MemberPath>,
}

impl PathFamily {
    /// Strict decrease of `metric` along the family (reference included).
    pub fn strictly_decreasing(&self, metric: impl Fn(&MemberPath) -> f64) -> bool {
        self.members.windows(2).all(|w| metric(&w[0]) > metric(&w[1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberSummary {
    pub epsilon: f64,
    pub distance_sup: Moment,
    pub distance_sup_max: f64,
    pub distance_integrated: Moment,
    pub constraint_defect: Moment,
    pub limit_residual: Moment,
    pub limit_residual_corrected: Moment,
    pub max_abs_n: f64,
    pub sigma2_hits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub alpha: f64,
    pub t_end: f64,
    pub eps_family: Vec<f64>,
    pub members: Vec<MemberSummary>,
    pub paths: Vec<PathFamily>,
    /// Fit of the mean sup-distance against `ε` over the non-reference members.
    pub distance_rate: Option<RateFit>,
    /// Fit of the mean constraint defect against `ε`.
    pub defect_rate: Option<RateFit>,
    pub distance_monotone: bool,
    pub defect_monotone: bool,
}

fn velocity_gap(a: &Field<2>, b: &Field<2>, s: f64) -> f64 {
    let d = a.sub(b).into_spectral();
    let g = a.grid();
    d.iter()
        .map(|c| g.weighted_sum(c, |k2| if k2 == 0.0 { 0.0 } else { k2.powf(s) }))
        .sum()
}

fn director_gap(a: &DirectorField, b: &DirectorField, s: f64) -> f64 {
    let d = a.sub(b).into_spectral();
    let g = a.grid();
    d.iter().map(|c| g.weighted_sum(c, |k2| (1.0 + k2).powf(s))).sum()
}

/// Limit-equation residual accumulators of one member.
struct LimitTrack {
    n0: DirectorField,
    drift: DirectorField,
    noise: DirectorField,
    correction: DirectorField,
    last_drift: DirectorField,
    last_correction: DirectorField,
    sup: [f64; 2],
}

fn limit_drift(state: &SimState) -> DirectorField {
    let lap = operators::laplacian(&state.n).to_physical();
    let harm = operators::harmonic_term(&state.n);
    let adv = operators::convect_director(&state.u, &state.n);
    lap.add_scaled(&harm, 1.0).sub(&adv).to_physical()
}

fn correction_of(state: &SimState, h: Option<&DirectorField>) -> DirectorField {
    match h {
        Some(h) => operators::stratonovich_correction(&state.n, h),
        None => Field::zeros(state.grid().clone()),
    }
}

impl LimitTrack {
    fn new(state: &SimState, h: Option<&DirectorField>) -> Self {
        let z = Field::zeros(state.grid().clone());
        LimitTrack {
            n0: state.n.clone(),
            drift: z.clone(),
            noise: z.clone(),
            correction: z,
            last_drift: limit_drift(state),
            last_correction: correction_of(state, h),
            sup: [0.0; 2],
        }
    }

    fn advance(&mut self, before: &SimState, after: &SimState, d_eta: f64, h: Option<&DirectorField>) {
        let dt = after.t - before.t;
        let drift = limit_drift(after);
        let corr = correction_of(after, h);
        self.drift = self.drift.add_scaled(&self.last_drift.add_scaled(&drift, 1.0), 0.5 * dt);
        self.correction = self.correction.add_scaled(&self.last_correction.add_scaled(&corr, 1.0), 0.5 * dt);
        if let Some(h) = h {
            self.noise = self.noise.add_scaled(&operators::director_cross_h(&before.n, h), d_eta);
        }
        self.last_drift = drift;
        self.last_correction = corr;
        let base = after.n.sub(&self.n0).sub(&self.drift).sub(&self.noise);
        let r0 = base.l2_norm();
        let r1 = base.sub(&self.correction).l2_norm();
        self.sup = [self.sup[0].max(r0), self.sup[1].max(r1)];
    }
}

struct MemberRun {
    spec: RunSpec,
    stepper: Stepper,
    diag: Diagnostics,
    state: SimState,
    stop: StopState,
    defect: f64,
    max_abs_n: f64,
    limit: LimitTrack,
}

struct Gaps {
    sup: f64,
    velocity: f64,
    director: f64,
    integrand: f64,
}

fn family_path(base: &RunSpec, cfg: &ConvergenceConfig, path_id: u64) -> Result<PathFamily> {
    let mut members = Vec::with_capacity(cfg.eps_family.len());
    for &eps in &cfg.eps_family {
        let spec = base.with_epsilon(eps)?;
        let diag = spec.diagnostics()?;
        let state = spec.initial.clone();
        let first = checked(diag.report(&state))?;
        let mut stop = spec.stop_state(&first)?;
        stop.observe_report(&first);
        let limit = LimitTrack::new(&state, spec.h.as_ref());
        members.push(MemberRun {
            stepper: spec.stepper_for(path_id),
            defect: eps * first.eps_weighted[0],
            max_abs_n: first.max_abs_n,
            spec,
            diag,
            state,
            stop,
            limit,
        });
    }
    let alpha = cfg.alpha;
    let gaps = |ms: &[MemberRun]| -> Vec<Gaps> {
        let r = ms.last().expect("family is nonempty");
        ms.iter()
            .map(|m| {
                let v = velocity_gap(&m.state.u, &r.state.u, alpha - 1.0);
                let d = director_gap(&m.state.n, &r.state.n, alpha);
                let vi = velocity_gap(&m.state.u, &r.state.u, alpha);
                let di = director_gap(&m.state.n, &r.state.n, alpha + 1.0);
                Gaps {
                    sup: (v + d).sqrt(),
                    velocity: v.sqrt(),
                    director: d.sqrt(),
                    integrand: vi + di,
                }
            })
            .collect()
    };
    let k = members.len();
    let mut sup = vec![0.0f64; k];
    let mut vsup = vec![0.0f64; k];
    let mut dsup = vec![0.0f64; k];
    let mut integral = vec![0.0f64; k];
    let mut prev = gaps(&members);
    for (i, g) in prev.iter().enumerate() {
        sup[i] = g.sup;
        vsup[i] = g.velocity;
        dsup[i] = g.director;
    }
    let total = base.stepper.step_count();
    let halted = |ms: &[MemberRun]| ms.iter().any(|m| m.stop.triggered());
    let mut t_prev = base.initial.t;
    while !halted(&members) && members[0].state.step < total {
        for m in members.iter_mut() {
            let out = m.stepper.step(&m.state)?;
            let r = checked(m.diag.report(&out.state))?;
            m.stop.observe_report(&r);
            m.defect = m.defect.max(m.spec.stepper.gl.epsilon() * r.eps_weighted[0]);
            m.max_abs_n = m.max_abs_n.max(r.max_abs_n);
            m.limit.advance(&m.state, &out.state, out.increment.d_eta, m.spec.h.as_ref());
            m.state = out.state;
        }
        let now = gaps(&members);
        let t = members[0].state.t;
        for i in 0..k {
            sup[i] = sup[i].max(now[i].sup);
            vsup[i] = vsup[i].max(now[i].velocity);
            dsup[i] = dsup[i].max(now[i].director);
            integral[i] += 0.5 * (t - t_prev) * (prev[i].integrand + now[i].integrand);
        }
        prev = now;
        t_prev = t;
    }
    let tau = members.iter().map(|m| m.stop.sigma()).fold(base.stepper.t_end, f64::min);
    let out = members
        .iter()
        .enumerate()
        .map(|(i, m)| MemberPath {
            epsilon: m.spec.stepper.gl.epsilon(),
            distance_sup: sup[i],
            velocity_sup: vsup[i],
            director_sup: dsup[i],
            distance_integrated: integral[i].sqrt(),
            constraint_defect: m.defect,
            limit_residual: m.limit.sup[0],
            limit_residual_corrected: m.limit.sup[1],
            sigma1: m.stop.sigma1,
            sigma2: m.stop.sigma2,
            max_abs_n: m.max_abs_n,
        })
        .collect();
    Ok(PathFamily {
        path_id,
        tau,
        members: out,
    })
}

/// Drives every `ε` of the family with the same noise path, for paths
/// `0..n_paths`, and compares each member with the smallest `ε`. The
/// comparison window of a path ends at the first stopping time hit by any
/// member.
pub fn run_coupled_family(base: &RunSpec, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let paths: Vec<PathFamily> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| family_path(base, cfg, p))
        .collect::<Result<_>>()?;
    let members: Vec<MemberSummary> = (0..cfg.eps_family.len())
        .map(|i| {
            let col = |f: &dyn Fn(&MemberPath) -> f64| -> Vec<f64> { paths.iter().map(|p| f(&p.members[i])).collect() };
            let ds = col(&|m| m.distance_sup);
            MemberSummary {
                epsilon: cfg.eps_family[i],
                distance_sup: Moment::of(&ds),
                distance_sup_max: ds.iter().copied().fold(0.0, f64::max),
                distance_integrated: Moment::of(&col(&|m| m.distance_integrated)),
                constraint_defect: Moment::of(&col(&|m| m.constraint_defect)),
                limit_residual: Moment::of(&col(&|m| m.limit_residual)),
                limit_residual_corrected: Moment::of(&col(&|m| m.limit_residual_corrected)),
                max_abs_n: col(&|m| m.max_abs_n).into_iter().fold(0.0, f64::max),
                sigma2_hits: paths.iter().filter(|p| p.members[i].sigma2.is_finite()).count(),
            }
        })
        .collect();
    let k = cfg.eps_family.len();
    let distance_rate = if k >= 4 {
        let ys: Vec<f64> = members[..k - 1].iter().map(|m| m.distance_sup.mean).collect();
        fit_rate(&cfg.eps_family[..k - 1], &ys).ok()
    } else {
        None
    };
    let defect_rate = if k >= 3 {
        let ys: Vec<f64> = members.iter().map(|m| m.constraint_defect.mean).collect();
        fit_rate(&cfg.eps_family, &ys).ok()
    } else {
        None
    };
    Ok(ConvergenceReport {
        alpha: cfg.alpha,
        t_end: base.stepper.t_end,
        eps_family: cfg.eps_family.clone(),
        distance_monotone: paths.iter().all(|p| p.strictly_decreasing(|m| m.distance_sup)),
        defect_monotone: paths.iter().all(|p| p.strictly_decreasing(|m| m.constraint_defect)),
        members,
        paths,
        distance_rate,
        defect_rate,
    })
}
