//! Configuration files, initial-data presets, checkpoints and NDJSON output.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{EnergyReport, StopState};
use crate::error::{Result, SglError};
use crate::experiments::{ConvergenceConfig, RunSpec};
use crate::grid::{random_band_limited, DirectorField, Field, SpectralGrid, VelocityField};
use crate::noise::NoiseModel;
use crate::operators::{self, GLParams};
use crate::stepper::{Scheme, SimState, StepperConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_modes: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n_modes: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Strang,
    Lie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperSection {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: SchemeName,
    pub cfl_safety: f64,
}

impl Default for StepperSection {
    fn default() -> Self {
        StepperSection {
            dt: 1e-3,
            t_end: 0.25,
            scheme: SchemeName::Strang,
            cfl_safety: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlSection {
    pub epsilon: f64,
}

impl Default for GlSection {
    fn default() -> Self {
        GlSection { epsilon: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub gamma: f64,
    /// Number of velocity modes; `0` selects the default count.
    pub mode_cutoff: usize,
    pub seed: u64,
    pub path_id: u64,
    pub velocity_noise_on: bool,
    pub director_noise_on: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            gamma: crate::noise::DEFAULT_GAMMA,
            mode_cutoff: 0,
            seed: 0,
            path_id: 0,
            velocity_noise_on: true,
            director_noise_on: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeProfile {
    Constant,
    SingleMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HFieldSection {
    pub amplitude_profile: AmplitudeProfile,
    /// `|h|` at its maximum; `h` points along `(1, 1, 1)`.
    pub magnitude: f64,
}

impl Default for HFieldSection {
    fn default() -> Self {
        HFieldSection {
            amplitude_profile: AmplitudeProfile::SingleMode,
            magnitude: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// `zero`, `shear`, `random` or `file:PATH` (a checkpoint).
    pub u0: String,
    /// `uniform`, `planar`, `random`, `ball` or `file:PATH`.
    pub n0: String,
    pub normalize_n0: bool,
    /// L² norm of the random velocity, or the shear amplitude.
    pub u0_amplitude: f64,
    /// Angle amplitude of the random director, or its maximal modulus for `ball`.
    pub n0_amplitude: f64,
    pub bandwidth: i64,
    pub seed: u64,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            u0: "random".into(),
            n0: "random".into(),
            normalize_n0: true,
            u0_amplitude: 1.0,
            n0_amplitude: 0.5,
            bandwidth: 3,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopsSection {
    /// Absolute threshold; omitted selects `max(1e-3, 0.5·ℰ(0))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub radius: f64,
}

impl Default for StopsSection {
    fn default() -> Self {
        StopsSection {
            delta: None,
            radius: PI / 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Report stream; omitted writes to standard output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndjson_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<PathBuf>,
    /// Steps between checkpoints; `0` disables them.
    pub checkpoint_every: u64,
    pub report_every: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            ndjson_path: None,
            checkpoint_path: None,
            checkpoint_every: 0,
            report_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub eps_family: Vec<f64>,
    pub alpha: f64,
    pub n_paths: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            eps_family: vec![0.4, 0.2, 0.1, 0.05],
            alpha: 1.0,
            n_paths: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridSection,
    pub stepper: StepperSection,
    pub gl: GlSection,
    pub noise: NoiseSection,
    pub h_field: HFieldSection,
    pub initial: InitialSection,
    pub stops: StopsSection,
    pub output: OutputSection,
    pub experiment: ExperimentSection,
}

fn range(key: &str, ok: bool, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(SglError::ConfigRange {
            key: key.into(),
            message: message.into(),
        })
    }
}

fn check_preset(key: &str, value: &str, presets: &[&str]) -> Result<()> {
    let ok = presets.contains(&value) || value.strip_prefix("file:").is_some_and(|p| !p.is_empty());
    range(key, ok, format!("unknown preset {value:?}; expected one of {presets:?} or file:PATH"))
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            SglError::ConfigParse {
                line,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form of the fully-defaulted configuration.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_modes;
        range("grid.n_modes", n >= crate::grid::MIN_MODES && n % 2 == 0, "must be even and at least 16")?;
        let s = &self.stepper;
        range("stepper.dt", s.dt > 0.0 && s.dt.is_finite(), "must be positive")?;
        range("stepper.t_end", s.t_end >= 0.0 && s.t_end.is_finite(), "must be nonnegative")?;
        range("stepper.cfl_safety", s.cfl_safety > 0.0 && s.cfl_safety <= 1.0, "must lie in (0, 1]")?;
        range("gl.epsilon", self.gl.epsilon > 0.0 && self.gl.epsilon <= 1.0, "must lie in (0, 1]")?;
        range("noise.gamma", self.noise.gamma > 2.0 && self.noise.gamma.is_finite(), "must exceed 2")?;
        let modes = crate::noise::max_mode_count(&*SpectralGrid::new(n)?);
        range(
            "noise.mode_cutoff",
            self.noise.mode_cutoff <= modes,
            format!("at most {modes} modes fit below the dealiasing cutoff"),
        )?;
        let m = self.h_field.magnitude;
        range("h_field.magnitude", m >= 0.0 && m.is_finite(), "must be nonnegative")?;
        let i = &self.initial;
        check_preset("initial.u0", &i.u0, &["zero", "shear", "random"])?;
        check_preset("initial.n0", &i.n0, &["uniform", "planar", "random", "ball"])?;
        range("initial.u0_amplitude", i.u0_amplitude >= 0.0 && i.u0_amplitude.is_finite(), "must be nonnegative")?;
        range("initial.n0_amplitude", i.n0_amplitude >= 0.0 && i.n0_amplitude.is_finite(), "must be nonnegative")?;
        range(
            "initial.bandwidth",
            i.bandwidth >= 1 && 3 * i.bandwidth as usize <= n,
            "must lie between 1 and n_modes/3",
        )?;
        if let Some(d) = self.stops.delta {
            range("stops.delta", d > 0.0, "must be positive")?;
        }
        let r = self.stops.radius;
        range("stops.radius", r > 0.0 && r <= PI, "must lie in (0, π]")?;
        range("output.report_every", self.output.report_every >= 1, "must be at least 1")?;
        let e = &self.experiment;
        range("experiment.eps_family", !e.eps_family.is_empty(), "must not be empty")?;
        range(
            "experiment.eps_family",
            e.eps_family.iter().all(|&x| x > 0.0 && x <= 1.0),
            "entries must lie in (0, 1]",
        )?;
        range(
            "experiment.eps_family",
            e.eps_family.windows(2).all(|w| w[1] < w[0]),
            "must be strictly decreasing",
        )?;
        range("experiment.alpha", (1.0..2.0).contains(&e.alpha), "must lie in [1, 2)")?;
        range("experiment.n_paths", e.n_paths >= 1, "must be at least 1")?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<SpectralGrid>> {
        SpectralGrid::new(self.grid.n_modes)
    }

    pub fn stepper_config(&self) -> Result<StepperConfig> {
        let s = &self.stepper;
        let scheme = match s.scheme {
            SchemeName::Strang => Scheme::Strang,
            SchemeName::Lie => Scheme::Lie,
        };
        StepperConfig::new(s.dt, s.t_end, GLParams::new(self.gl.epsilon)?, scheme, s.cfl_safety)
    }

    pub fn noise_model(&self, grid: &Arc<SpectralGrid>) -> Result<NoiseModel> {
        let n = &self.noise;
        let model = NoiseModel::new(grid.clone(), n.gamma, n.mode_cutoff, n.seed)?.with_path(n.path_id);
        Ok(if n.velocity_noise_on { model } else { model.without_velocity_noise() })
    }

    /// The director noise field, or `None` when that noise is switched off.
    pub fn h_field(&self, grid: &Arc<SpectralGrid>) -> Option<DirectorField> {
        if !self.noise.director_noise_on {
            return None;
        }
        let scale = self.h_field.magnitude / 3f64.sqrt();
        Some(match self.h_field.amplitude_profile {
            AmplitudeProfile::Constant => operators::h_along_diagonal(grid.clone(), |_| scale),
            AmplitudeProfile::SingleMode => operators::h_along_diagonal(grid.clone(), |x| scale * x[0].cos()),
        })
    }

    /// Initial state built from the presets (velocity projected, director
    /// optionally normalised).
    pub fn initial_state(&self, grid: &Arc<SpectralGrid>) -> Result<SimState> {
        let i = &self.initial;
        let mut rng = ChaCha8Rng::seed_from_u64(i.seed);
        let u0: Field<2> = match i.u0.as_str() {
            "zero" => Field::zeros(grid.clone()),
            "shear" => Field::from_fn(grid.clone(), |x| [i.u0_amplitude * x[1].sin(), 0.0]),
            "random" => {
                let raw = operators::leray_project(&random_band_limited::<2, _>(grid, &mut rng, i.bandwidth));
                let norm = raw.l2_norm();
                if norm > 0.0 { raw.scaled(i.u0_amplitude / norm) } else { raw }
            }
            other => load_field_preset(other, grid)?.u,
        };
        let n0 = match i.n0.as_str() {
            "uniform" => Field::from_fn(grid.clone(), |_| [0.0, 0.0, 1.0]),
            "planar" => Field::from_fn(grid.clone(), |x| [x[0].cos(), x[0].sin(), 0.0]),
            "random" => random_unit_director(grid, &mut rng, i.bandwidth, i.n0_amplitude),
            "ball" => {
                let raw: DirectorField = random_band_limited(grid, &mut rng, i.bandwidth);
                let m = raw.pointwise_norm().into_iter().fold(0.0, f64::max);
                if m > 0.0 { raw.scaled(i.n0_amplitude / m) } else { raw }
            }
            other => load_field_preset(other, grid)?.n,
        };
        Ok(SimState::initial(&u0, &n0, i.normalize_n0))
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        let grid = self.grid()?;
        Ok(RunSpec {
            stepper: self.stepper_config()?,
            noise: self.noise_model(&grid)?,
            h: self.h_field(&grid),
            initial: self.initial_state(&grid)?,
            delta: self.stops.delta,
            radius: self.stops.radius,
        })
    }

    pub fn convergence(&self) -> ConvergenceConfig {
        ConvergenceConfig {
            eps_family: self.experiment.eps_family.clone(),
            alpha: self.experiment.alpha,
            n_paths: self.experiment.n_paths,
        }
    }
}

/// Unit director `(cos a cos b, sin a cos b, sin b)` with band-limited
/// angles `a`, `b` of sup-amplitude `amplitude·π` and `amplitude·π/2`.
pub fn random_unit_director(grid: &Arc<SpectralGrid>, rng: &mut ChaCha8Rng, bandwidth: i64, amplitude: f64) -> DirectorField {
    let angles: Field<2> = random_band_limited(grid, rng, bandwidth);
    let p = angles.physical();
    let peak = |c: &[f64]| c.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (sa, sb) = (peak(&p[0]), peak(&p[1]));
    let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
    for i in 0..grid.len() {
        let a = amplitude * PI * p[0][i] / sa;
        let b = amplitude * FRAC_PI_2 * p[1][i] / sb;
        comps[0][i] = a.cos() * b.cos();
        comps[1][i] = a.sin() * b.cos();
        comps[2][i] = b.sin();
    }
    Field::physical_unchecked(grid.clone(), comps)
}

fn load_field_preset(value: &str, grid: &Arc<SpectralGrid>) -> Result<SimState> {
    let path = value.strip_prefix("file:").unwrap_or(value);
    let ck = load_checkpoint(Path::new(path))?;
    if ck.state.grid().n() != grid.n() {
        return Err(SglError::ConfigRange {
            key: "initial".into(),
            message: format!("{path} holds an N = {} state, grid has N = {}", ck.state.grid().n(), grid.n()),
        });
    }
    Ok(ck.state)
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| SglError::io(path, e))?;
    SimConfig::parse(&text)
}

const MAGIC: &[u8; 4] = b"NSGL";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 8 + 8 + 8;

/// Saved state plus the parameters needed to continue the same path.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub epsilon: f64,
    pub seed: u64,
    pub path_id: u64,
    pub state: SimState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.state.grid();
        let mut out = Vec::with_capacity(HEADER_LEN + 5 * 8 * g.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(g.n() as u32).to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&self.state.t.to_le_bytes());
        out.extend_from_slice(&self.state.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.path_id.to_le_bytes());
        let u = self.state.u.physical();
        let n = self.state.n.physical();
        for comp in u.iter().chain(n.iter()) {
            for v in comp {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| SglError::CheckpointFormat(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("file shorter than the header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u32_at(8) as usize;
        let grid = SpectralGrid::new(n).map_err(|_| bad(&format!("invalid grid size {n}")))?;
        let len = grid.len();
        if bytes.len() != HEADER_LEN + 5 * 8 * len {
            return Err(bad(&format!("expected {} bytes, found {}", HEADER_LEN + 40 * len, bytes.len())));
        }
        let epsilon = f64_at(12);
        let t = f64_at(20);
        let step = u64_at(28);
        let seed = u64_at(36);
        let path_id = u64_at(44);
        let comp = |c: usize| -> Vec<f64> {
            (0..len).map(|i| f64_at(HEADER_LEN + 8 * (c * len + i))).collect()
        };
        let u: VelocityField = Field::physical_unchecked(grid.clone(), [comp(0), comp(1)]);
        let nf: DirectorField = Field::physical_unchecked(grid, [comp(2), comp(3), comp(4)]);
        let defect = u.divergence_l2();
        if defect > 1e-10 {
            log::warn!("checkpoint velocity has divergence defect {defect:e}");
        } else {
            log::info!("checkpoint velocity divergence defect {defect:e}");
        }
        Ok(Checkpoint {
            epsilon,
            seed,
            path_id,
            state: SimState { t, step, u, n: nf },
        })
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, ck.to_bytes()).map_err(|e| SglError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| SglError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn num(out: &mut String, key: &str, v: f64) {
    let _ = write!(out, "\"{key}\":{v:.16e},");
}

fn sigma_value(v: f64) -> String {
    if v.is_finite() { format!("{v:.16e}") } else { "null".into() }
}

/// One report as a single JSON object with 17 significant digits per real.
pub fn report_line(r: &EnergyReport, stop: &StopState) -> String {
    let mut s = String::with_capacity(640);
    s.push('{');
    num(&mut s, "t", r.t);
    let _ = write!(s, "\"step\":{},", r.step);
    num(&mut s, "energy_E", r.energy_e);
    num(&mut s, "lyapunov", r.lyapunov);
    num(&mut s, "enstrophy_D", r.enstrophy_d);
    num(&mut s, "gl_mass", r.gl_mass);
    num(&mut s, "lambda1", r.lambda1);
    num(&mut s, "lambda2", r.lambda2);
    let _ = write!(s, "\"eps_weighted\":[{:.16e},{:.16e}],", r.eps_weighted[0], r.eps_weighted[1]);
    num(&mut s, "min_abs_n", r.min_abs_n);
    num(&mut s, "max_abs_n", r.max_abs_n);
    num(&mut s, "grad_n_L4", r.grad_n_l4);
    num(&mut s, "u_sq", r.u_sq);
    num(&mut s, "grad_n_sq", r.grad_n_sq);
    num(&mut s, "noise_correction", r.noise_correction);
    num(&mut s, "local_energy_max", r.local_energy_max);
    num(&mut s, "local_grad_sup", r.local_grad_sup);
    num(&mut s, "delta", stop.delta);
    let _ = write!(
        s,
        "\"sigma1\":{},\"sigma2\":{},\"sigma\":{:.16e}}}",
        sigma_value(stop.sigma1),
        sigma_value(stop.sigma2),
        stop.sigma()
    );
    s
}

/// Appends one report per line to a sink.
pub struct NdjsonWriter<W: Write> {
    sink: W,
}

impl<W: Write> NdjsonWriter<W> {
    pub fn new(sink: W) -> Self {
        NdjsonWriter { sink }
    }

    pub fn write(&mut self, r: &EnergyReport, stop: &StopState) -> std::io::Result<()> {
        writeln!(self.sink, "{}", report_line(r, stop))
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.sink.flush()
    }

    pub fn into_inner(self) -> W {
        self.sink
    }
}
