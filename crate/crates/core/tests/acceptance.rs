//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always shown.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sgl_core::diagnostics::{self, build_covering};
use sgl_core::experiments::{run_coupled_family, run_ensemble, run_path, ConvergenceReport, EnsembleSummary, PathResult};
use sgl_core::io::{Checkpoint, SimConfig};
use sgl_core::selfcheck;
use sgl_core::stepper::SimState;
use sgl_core::SpectralGrid;

// criterion 1
const IDENTITY_REL_TOL: f64 = 1e-8;
const IDENTITY_FIELDS: usize = 32;
const IDENTITY_MODES: usize = 64;
const IDENTITY_BUDGET: Duration = Duration::from_secs(30);
// criterion 2
const ROTATION_TOL: f64 = 1e-13;
const GL_RK4_TOL: f64 = 1e-10;
const DIFFUSION_TOL: f64 = 1e-13;
// criterion 3
const ENERGY_REL_TOL: f64 = 1e-4;
const ENERGY_HALVING_FACTOR: f64 = 3.5;
const ENERGY_BUDGET: Duration = Duration::from_secs(5 * 60);
// criterion 4
const BALANCE_SE_MULTIPLE: f64 = 3.0;
const BALANCE_PATHS: usize = 64;
const BALANCE_BUDGET: Duration = Duration::from_secs(15 * 60);
// criterion 5
const MAX_PRINCIPLE_SLACK: f64 = 1e-6;
// criterion 6
const FAMILY_BUDGET: Duration = Duration::from_secs(30 * 60);
// criterion 7
const COVER_RADII: [f64; 3] = [PI / 8.0, PI / 4.0, PI / 2.0];
const COVER_CONSTANT: f64 = 2.25 * PI * PI;
const SIGMA2_EPS_MAX: f64 = 0.1;

const DETERMINISTIC: &str = r#"
[grid]
n_modes = 64
[stepper]
t_end = 0.5
[gl]
epsilon = 0.2
[noise]
velocity_noise_on = false
director_noise_on = false
[initial]
u0 = "random"
n0 = "random"
u0_amplitude = 1.0
n0_amplitude = 0.5
bandwidth = 4
seed = 7
"#;

const STOCHASTIC: &str = r#"
[grid]
n_modes = 32
[stepper]
dt = 0.001
t_end = 0.25
[gl]
epsilon = 0.2
[noise]
seed = 4242
velocity_noise_on = true
director_noise_on = true
[h_field]
amplitude_profile = "single_mode"
magnitude = 0.5
[initial]
u0 = "random"
n0 = "random"
n0_amplitude = 0.4
seed = 3
[experiment]
n_paths = 64
"#;

const FAMILY: &str = r#"
[grid]
n_modes = 64
[stepper]
dt = 0.001
t_end = 0.25
[noise]
seed = 2024
[h_field]
amplitude_profile = "single_mode"
magnitude = 0.5
[initial]
u0 = "random"
n0 = "random"
n0_amplitude = 0.5
bandwidth = 3
seed = 3
[experiment]
eps_family = [0.4, 0.2, 0.1, 0.05]
alpha = 1.0
n_paths = 8
"#;

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn cfg(text: &str) -> SimConfig {
    SimConfig::parse(text).expect("acceptance configuration is valid")
}

fn with_dt(text: &str, dt: f64) -> SimConfig {
    let mut c = cfg(text);
    c.stepper.dt = dt;
    c
}

fn bits(state: &SimState) -> Vec<u64> {
    let u = state.u.physical();
    let n = state.n.physical();
    u.iter().chain(n.iter()).flat_map(|c| c.iter().map(|v| v.to_bits())).collect()
}

fn criterion_1_and_2() -> Vec<Line> {
    let t0 = Instant::now();
    let results = selfcheck::run_suite(IDENTITY_FIELDS, IDENTITY_MODES, selfcheck::DEFAULT_BANDWIDTH, 0)
        .expect("self-check runs");
    let elapsed = t0.elapsed();
    let pick = |name: &str| results.iter().find(|r| r.name == name).expect("check exists").residual;
    let identities = [
        "leray_idempotent",
        "leray_self_adjoint",
        "leray_annihilates_gradients",
        "convection_skew",
        "director_transport_skew",
        "penalty_orthogonal_to_rotation",
        "bilaplacian_identity",
    ];
    let worst = identities.iter().map(|n| pick(n)).fold(0.0, f64::max);
    let (rot, gl, diff) = (pick("rotation_isometry"), pick("gl_closed_form_vs_rk4"), pick("diffusion_mode_decay"));
    vec![
        Line {
            id: 1,
            name: "operator identity suite",
            passed: worst < IDENTITY_REL_TOL && elapsed < IDENTITY_BUDGET,
            detail: format!(
                "worst relative residual {worst:.2e} < {IDENTITY_REL_TOL:.0e} over {IDENTITY_FIELDS} fields at N={IDENTITY_MODES}, {elapsed:.2?}"
            ),
        },
        Line {
            id: 2,
            name: "exact substeps",
            passed: rot <= ROTATION_TOL && gl <= GL_RK4_TOL && diff <= DIFFUSION_TOL,
            detail: format!(
                "rotation |n| drift {rot:.2e} (tol {ROTATION_TOL:.0e}), GL vs RK4 {gl:.2e} (tol {GL_RK4_TOL:.0e}), mode decay {diff:.2e} (tol {DIFFUSION_TOL:.0e})"
            ),
        },
    ]
}

fn deterministic_residual(dt: f64) -> (f64, f64, PathResult) {
    let spec = with_dt(DETERMINISTIC, dt).run_spec().expect("spec");
    let p = run_path(&spec, 0, |_, _, _| Ok(())).expect("deterministic run");
    let r = diagnostics::energy_identity_residual(&p.reports, &p.ledger, 0.0).expect("aligned");
    (*r.last().expect("nonempty"), p.reports[0].energy_e, p)
}

fn criterion_3(max_abs: &mut f64) -> (Line, PathResult) {
    let t0 = Instant::now();
    let dts = [1e-3, 5e-4, 2.5e-4, 1.25e-4];
    let mut res = Vec::new();
    let mut first = None;
    let mut e0 = 0.0;
    for &dt in &dts {
        let (r, e, p) = deterministic_residual(dt);
        *max_abs = max_abs.max(p.max_abs_n());
        res.push(r.abs());
        e0 = e;
        first.get_or_insert(p);
    }
    let elapsed = t0.elapsed();
    let factors: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
    let rel = res[0] / e0;
    let passed = rel < ENERGY_REL_TOL && factors.iter().all(|&f| f >= ENERGY_HALVING_FACTOR) && elapsed < ENERGY_BUDGET;
    let line = Line {
        id: 3,
        name: "deterministic energy identity",
        passed,
        detail: format!(
            "|r(T)|/E(0) = {rel:.2e} at dt=1e-3 (tol {ENERGY_REL_TOL:.0e}); halving factors {} (need >= {ENERGY_HALVING_FACTOR}); {elapsed:.1?}",
            factors.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(", ")
        ),
    };
    (line, first.expect("ran"))
}

fn stochastic_ensemble() -> EnsembleSummary {
    let c = cfg(STOCHASTIC);
    run_ensemble(&c.run_spec().expect("spec"), c.gl.epsilon, BALANCE_PATHS).expect("ensemble run")
}

fn criterion_4(max_abs: &mut f64) -> (Line, EnsembleSummary) {
    let t0 = Instant::now();
    let s = stochastic_ensemble();
    let elapsed = t0.elapsed();
    *max_abs = max_abs.max(s.max_abs_n);
    let b = s.mean_balance;
    let line = Line {
        id: 4,
        name: "stochastic mean energy balance",
        passed: b.within(BALANCE_SE_MULTIPLE) && elapsed < BALANCE_BUDGET,
        detail: format!(
            "mean balance {:.3e} vs {BALANCE_SE_MULTIPLE}·SE = {:.3e} over {} paths (TrQ·T = {:.3e}, pathwise residual {:.2e} ± {:.1e}); {elapsed:.1?}",
            b.mean,
            BALANCE_SE_MULTIPLE * b.std_error,
            s.n_paths,
            s.trace_q * s.t_end,
            s.pathwise_residual.mean,
            s.pathwise_residual.std_error
        ),
    };
    (line, s)
}

fn max_principle_matrix() -> Vec<(f64, bool, f64)> {
    let mut out = Vec::new();
    for &eps in &[0.4, 0.2, 0.1, 0.05] {
        for noisy in [false, true] {
            let mut c = cfg(STOCHASTIC);
            c.stepper.t_end = 0.1;
            c.gl.epsilon = eps;
            c.noise.velocity_noise_on = noisy;
            c.noise.director_noise_on = noisy;
            c.initial.n0 = "ball".into();
            c.initial.n0_amplitude = 1.0;
            c.initial.normalize_n0 = false;
            c.stops.delta = Some(f64::MAX);
            let spec = c.run_spec().expect("spec");
            let p = run_path(&spec, 1, |_, _, _| Ok(())).expect("matrix run");
            out.push((eps, noisy, p.max_abs_n()));
        }
    }
    out
}

fn criterion_5(max_abs: &mut f64) -> (Line, Vec<(f64, bool, f64)>) {
    let m = max_principle_matrix();
    let worst_matrix = m.iter().map(|x| x.2).fold(0.0, f64::max);
    *max_abs = max_abs.max(worst_matrix);
    let line = Line {
        id: 5,
        name: "maximum principle",
        passed: *max_abs <= 1.0 + MAX_PRINCIPLE_SLACK,
        detail: format!(
            "max |n| = 1 + {:.2e} (slack {MAX_PRINCIPLE_SLACK:.0e}) over {} matrix runs and the criterion 3/4/6 runs",
            *max_abs - 1.0,
            m.len()
        ),
    };
    (line, m)
}

fn family(n_paths: usize) -> ConvergenceReport {
    let mut c = cfg(FAMILY);
    c.experiment.n_paths = n_paths;
    run_coupled_family(&c.run_spec().expect("spec"), &c.convergence()).expect("family run")
}

fn criterion_6(max_abs: &mut f64) -> (Line, ConvergenceReport) {
    let t0 = Instant::now();
    let rep = family(cfg(FAMILY).experiment.n_paths);
    let elapsed = t0.elapsed();
    for m in &rep.members {
        *max_abs = max_abs.max(m.max_abs_n);
    }
    let means: Vec<String> = rep
        .members
        .iter()
        .map(|m| format!("{}: {:.3e}/{:.3e}", m.epsilon, m.distance_sup.mean, m.constraint_defect.mean))
        .collect();
    let rate = |r: &Option<sgl_core::experiments::RateFit>| {
        r.as_ref().map_or("n/a".to_string(), |f| format!("{:.2} ± {:.2}", f.rate, f.half_width))
    };
    let line = Line {
        id: 6,
        name: "epsilon convergence",
        passed: rep.distance_monotone && rep.defect_monotone && elapsed < FAMILY_BUDGET,
        detail: format!(
            "distance monotone on all {} paths: {}, defect monotone: {}; eps: distance/defect {}; rates distance {} defect {}; {elapsed:.1?}",
            rep.paths.len(),
            rep.distance_monotone,
            rep.defect_monotone,
            means.join(", "),
            rate(&rep.distance_rate),
            rate(&rep.defect_rate)
        ),
    };
    (line, rep)
}

fn criterion_7(rep: &ConvergenceReport) -> Line {
    let grid = SpectralGrid::new(64).expect("grid");
    let mut covered = true;
    let mut constants = Vec::new();
    for &r in &COVER_RADII {
        let c = build_covering(r, &grid).expect("covering");
        covered &= c.covers(&grid);
        constants.push((c.count(), c.constant()));
    }
    let bounded = constants.iter().all(|&(_, k)| k <= COVER_CONSTANT + 1e-12);
    let hits: usize = rep
        .members
        .iter()
        .filter(|m| m.epsilon <= SIGMA2_EPS_MAX)
        .map(|m| m.sigma2_hits)
        .sum();
    Line {
        id: 7,
        name: "stopping-time machinery",
        passed: covered && bounded && hits == 0,
        detail: format!(
            "coverage exhaustive: {covered}; N_R = {:?}, N_R·R² <= {COVER_CONSTANT:.4}: {bounded}; sigma2 hits for eps <= {SIGMA2_EPS_MAX}: {hits}",
            constants.iter().map(|c| c.0).collect::<Vec<_>>()
        ),
    }
}

fn resume_matches() -> bool {
    let c = cfg(STOCHASTIC);
    let spec = c.run_spec().expect("spec");
    let straight = run_path(&spec, 5, |_, _, _| Ok(())).expect("straight run");
    let mut first_half = spec.clone();
    first_half.stepper.t_end = 0.125;
    let half = run_path(&first_half, 5, |_, _, _| Ok(())).expect("half run");
    let ck = Checkpoint {
        epsilon: c.gl.epsilon,
        seed: c.noise.seed,
        path_id: 5,
        state: half.final_state.clone(),
    };
    let loaded = Checkpoint::from_bytes(&ck.to_bytes()).expect("checkpoint round-trip");
    let mut second = spec.clone();
    second.delta = Some(spec.resolve_delta(&straight.reports[0]));
    second.initial = loaded.state;
    let rest = run_path(&second, 5, |_, _, _| Ok(())).expect("resumed run");
    bits(&rest.final_state) == bits(&straight.final_state)
        && rest.reports[..] == straight.reports[straight.reports.len() - rest.reports.len()..]
}

fn criterion_8(det: &PathResult, ens: &EnsembleSummary, matrix: &[(f64, bool, f64)], fam: &ConvergenceReport) -> Line {
    let (_, _, again) = deterministic_residual(1e-3);
    let det_ok = bits(&again.final_state) == bits(&det.final_state) && again.reports == det.reports;
    let ens_ok = stochastic_ensemble() == *ens;
    let matrix_ok = max_principle_matrix()
        .iter()
        .zip(matrix)
        .all(|(a, b)| a.2.to_bits() == b.2.to_bits());
    let sub = family(2);
    let fam_ok = sub.paths[..] == fam.paths[..2];
    let resume_ok = resume_matches();
    Line {
        id: 8,
        name: "reproducibility",
        passed: det_ok && ens_ok && matrix_ok && fam_ok && resume_ok,
        detail: format!(
            "bitwise rerun: deterministic {det_ok}, ensemble {ens_ok}, max-principle matrix {matrix_ok}, family paths {fam_ok}; resume from checkpoint {resume_ok}"
        ),
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut lines = criterion_1_and_2();
    let mut max_abs: f64 = 0.0;
    let (l3, det) = criterion_3(&mut max_abs);
    lines.push(l3);
    let (l4, ens) = criterion_4(&mut max_abs);
    lines.push(l4);
    let (l6, fam) = criterion_6(&mut max_abs);
    let (l5, matrix) = criterion_5(&mut max_abs);
    lines.push(l5);
    lines.push(l6);
    lines.push(criterion_7(&fam));
    lines.push(criterion_8(&det, &ens, &matrix, &fam));

    let mut ok = true;
    for l in &lines {
        ok &= l.passed;
        println!(
            "criterion {} [{}] {}: {}",
            l.id,
            if l.passed { "PASS" } else { "FAIL" },
            l.name,
            l.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1?}",
        lines.iter().filter(|l| l.passed).count(),
        lines.len(),
        started.elapsed()
    );
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
