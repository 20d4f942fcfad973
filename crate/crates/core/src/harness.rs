//! Experiment configuration and dispatch.
//!
//! Settings come from three layers: built-in defaults, an optional flat
//! `key = value` config file and command-line overrides, with later layers
//! winning. The worker count additionally honours `GLSIM_WORKERS`, which
//! beats the file but loses to an explicit flag.
//!
//! Every run writes a JSON-lines report to the output path and a manifest
//! next to it (`<out>.manifest.json`) echoing every resolved setting and where
//! it came from.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde_json::{json, Value};

use crate::ergodic::{
    deviation_level, exp_moment_estimate, geometric_tail_fit, ldp_decay_probe,
    occupation_estimate, occupation_samples, reference_average, simulate_hitting,
    survival_csv, uniform_moment_probe, LdpOptions, MomentTarget, DEFAULT_HITTING_HORIZON,
};
use crate::error::{Error, Result};
use crate::field::{FractionalExponent, SpectralField};
use crate::integrator::{
    energy_trace, simulate_with, ybound_check, RecordOptions, SimConfig,
};
use crate::observable::Observable;
use crate::ou::maximal_moment_probe;
use crate::parallel::{map_indexed, workers_from_env};
use crate::report::{encode_json_lines, write_file, Record, RecordBuilder};
use crate::riccati::{
    comparison_verify, halfinterval_bound, riccati_explicit, riccati_numeric, RiccatiInput,
};
use crate::rng::{derive_seed, SeedStream};
use crate::stable::StableSampler;
use crate::stats::{hill_estimator, Moments};
use crate::verify::{self, CriterionResult, Preset};

const DIRECTION_TAG: u64 = 0x6469_7265_6374;
const LEVEL_TAG: u64 = 0x6c65_7665_6c;

/// The experiments the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    NoiseTest,
    OuProbe,
    Simulate,
    RiccatiVerify,
    Recurrence,
    Occupation,
    MomentProbe,
    LdpProbe,
    VerifyAll,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::NoiseTest,
        Experiment::OuProbe,
        Experiment::Simulate,
        Experiment::RiccatiVerify,
        Experiment::Recurrence,
        Experiment::Occupation,
        Experiment::MomentProbe,
        Experiment::LdpProbe,
        Experiment::VerifyAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::NoiseTest => "noise-test",
            Experiment::OuProbe => "ou-probe",
            Experiment::Simulate => "simulate",
            Experiment::RiccatiVerify => "riccati-verify",
            Experiment::Recurrence => "recurrence",
            Experiment::Occupation => "occupation",
            Experiment::MomentProbe => "moment-probe",
            Experiment::LdpProbe => "ldp-probe",
            Experiment::VerifyAll => "verify-all",
        }
    }

    /// Experiments whose meaning depends on the well-posed, ergodic noise regime.
    fn needs_admissible_noise(self) -> bool {
        matches!(
            self,
            Experiment::Simulate
                | Experiment::Recurrence
                | Experiment::Occupation
                | Experiment::MomentProbe
                | Experiment::LdpProbe
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                Error::Usage(format!(
                    "unknown experiment `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Recognised setting keys with their defaults. An empty default means
/// "chosen per experiment" or "not set".
pub const SETTINGS: [(&str, &str); 31] = [
    ("K", "32"),
    ("dt", "0.001"),
    ("T", "1"),
    ("alpha", "1.8"),
    ("beta", "0.8"),
    ("delta", "0.25"),
    ("p", "0.3"),
    ("record_stride", "1"),
    ("seed", "1"),
    ("noise_scale", "1"),
    ("out", ""),
    ("workers", ""),
    ("n_traj", ""),
    ("horizons", ""),
    ("M_grid", "1,2,4,8"),
    ("lambda_grid", "1"),
    ("initial_norms", "0,1,10,100,1000"),
    ("functional", ""),
    ("x0_norm", "0"),
    ("theta", "0.5"),
    ("moment_p", "0.5"),
    ("hitting_horizon", "200"),
    ("target", "X"),
    ("c_hat", ""),
    ("level", ""),
    ("pi_hat", ""),
    ("reference_horizon", "2000"),
    ("burn_in", "0.1"),
    ("two_sided", "false"),
    ("preset", "full"),
    ("criteria", ""),
];

/// Where a resolved setting came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Cli,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Cli => "cli",
        }
    }
}

/// Maps `M-grid`, `m_grid` and friends onto the canonical key.
pub fn canonical_key(raw: &str) -> Result<&'static str> {
    let norm = raw.trim().trim_start_matches("--").replace('-', "_");
    SETTINGS
        .iter()
        .map(|(k, _)| *k)
        .find(|k| *k == norm || (k.len() > 1 && k.eq_ignore_ascii_case(&norm)))
        .ok_or_else(|| Error::Usage(format!("unknown setting `{raw}`")))
}

/// Parses a config file of `key = value` lines. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("config line {}: expected `key = value`, got `{line}`", i + 1))
        })?;
        let key = canonical_key(k).map_err(|e| Error::Usage(format!("config line {}: {e}", i + 1)))?;
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolved settings with their provenance, in the order of [`SETTINGS`].
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    entries: Vec<(&'static str, String, Source)>,
}

impl Settings {
    /// Layers defaults, file pairs, the environment worker count and CLI pairs.
    pub fn resolve(
        file: &[(String, String)],
        env_workers: Option<usize>,
        cli: &[(String, String)],
    ) -> Result<Self> {
        let mut entries: Vec<(&'static str, String, Source)> = SETTINGS
            .iter()
            .map(|(k, v)| (*k, v.to_string(), Source::Default))
            .collect();
        let mut set = |key: &str, value: &str, src: Source| -> Result<()> {
            let key = canonical_key(key)?;
            let e = entries.iter_mut().find(|e| e.0 == key).expect("known key");
            e.1 = value.to_string();
            e.2 = src;
            Ok(())
        };
        for (k, v) in file {
            set(k, v, Source::File)?;
        }
        if let Some(w) = env_workers {
            set("workers", &w.to_string(), Source::Env)?;
        }
        for (k, v) in cli {
            set(k, v, Source::Cli)?;
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.0 == key)
            .map(|e| e.1.as_str())
            .filter(|v| !v.is_empty())
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.entries.iter().find(|e| e.0 == key).map(|e| e.2)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Usage(format!("setting `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| Error::Usage(format!("setting `{key}` is required")))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let items: Vec<f64> = v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Usage(format!("setting `{key}`: cannot parse `{s}` as a number")))
            })
            .collect::<Result<_>>()?;
        if items.is_empty() {
            return Err(Error::Usage(format!("setting `{key}` must not be empty")));
        }
        Ok(Some(items))
    }

    /// The manifest's view: key to value and key to source.
    fn echo(&self) -> (Value, Value) {
        let mut values = serde_json::Map::new();
        let mut sources = serde_json::Map::new();
        for (k, v, s) in &self.entries {
            values.insert(k.to_string(), Value::from(v.as_str()));
            sources.insert(k.to_string(), Value::from(s.as_str()));
        }
        (Value::Object(values), Value::Object(sources))
    }
}

/// Experiment-specific parameters.
#[derive(Debug, Clone)]
pub struct ExperimentParams {
    pub n_traj: Option<usize>,
    pub horizons: Option<Vec<f64>>,
    pub m_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub initial_norms: Vec<f64>,
    pub functionals: Vec<Observable>,
    pub x0_norm: f64,
    pub theta: f64,
    pub moment_p: f64,
    pub hitting_horizon: u64,
    pub target: MomentTarget,
    pub c_hat: Option<f64>,
    pub level: Option<f64>,
    pub pi_hat: Option<f64>,
    pub reference_horizon: f64,
    pub burn_in: f64,
    pub two_sided: bool,
    pub preset: Preset,
    /// Subset of acceptance checks for verify-all; all when `None`.
    pub criteria: Option<Vec<u8>>,
}

/// Everything one run needs.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub cfg: SimConfig,
    pub params: ExperimentParams,
    pub output_path: PathBuf,
    pub workers: usize,
    pub settings: Settings,
}

impl ExperimentSpec {
    /// Builds a spec from resolved settings. Syntax problems are usage errors;
    /// values outside a model's hypotheses surface later as parameter errors.
    pub fn from_settings(experiment: Experiment, settings: Settings) -> Result<Self> {
        let cfg = SimConfig {
            modes: settings.required("K")?,
            dt: settings.required("dt")?,
            horizon: settings.required("T")?,
            alpha: settings.required("alpha")?,
            beta: settings.required("beta")?,
            delta: settings.required("delta")?,
            p: settings.required("p")?,
            record_stride: settings.required("record_stride")?,
            seed: settings.required("seed")?,
            noise_scale: settings.required("noise_scale")?,
        };
        let output_path = settings
            .get("out")
            .map(PathBuf::from)
            .ok_or_else(|| Error::Usage("an output path is required (--out PATH)".into()))?;
        let workers = match settings.parsed::<usize>("workers")? {
            Some(0) => return Err(Error::Usage("worker count must be >= 1".into())),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let functionals = match settings.get("functional") {
            Some(v) => v
                .split(',')
                .map(|s| s.parse::<Observable>())
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let target = match settings.get("target").unwrap_or("X") {
            "X" | "x" => MomentTarget::X,
            "Y" | "y" => MomentTarget::Y,
            other => return Err(Error::Usage(format!("setting `target`: expected X or Y, got `{other}`"))),
        };
        let two_sided = settings.parsed::<bool>("two_sided")?.unwrap_or(false);
        let params = ExperimentParams {
            n_traj: settings.parsed("n_traj")?,
            horizons: settings.list("horizons")?,
            m_grid: settings.list("M_grid")?.unwrap_or_default(),
            lambda_grid: settings.list("lambda_grid")?.unwrap_or_default(),
            initial_norms: settings.list("initial_norms")?.unwrap_or_default(),
            functionals,
            x0_norm: settings.required("x0_norm")?,
            theta: settings.required("theta")?,
            moment_p: settings.required("moment_p")?,
            hitting_horizon: settings
                .parsed("hitting_horizon")?
                .unwrap_or(DEFAULT_HITTING_HORIZON),
            target,
            c_hat: settings.parsed("c_hat")?,
            level: settings.parsed("level")?,
            pi_hat: settings.parsed("pi_hat")?,
            reference_horizon: settings.required("reference_horizon")?,
            burn_in: settings.required("burn_in")?,
            two_sided,
            preset: Preset::by_name(settings.get("preset").unwrap_or("full"))?,
            criteria: settings
                .get("criteria")
                .map(|v| {
                    v.split(',')
                        .map(|s| {
                            s.trim().parse::<u8>().map_err(|_| {
                                Error::Usage(format!("setting `criteria`: cannot parse `{s}`"))
                            })
                        })
                        .collect::<Result<Vec<u8>>>()
                })
                .transpose()?,
        };
        for (name, grid) in [
            ("M_grid", &params.m_grid),
            ("lambda_grid", &params.lambda_grid),
            ("initial_norms", &params.initial_norms),
        ] {
            if grid.is_empty() {
                return Err(Error::Usage(format!("setting `{name}` must not be empty")));
            }
        }
        if params.n_traj == Some(0) {
            return Err(Error::Usage("n_traj must be >= 1".into()));
        }
        Ok(Self {
            experiment,
            cfg,
            params,
            output_path,
            workers,
            settings,
        })
    }

    /// Reads the config file (if any), the environment and the CLI pairs.
    pub fn resolve(
        experiment: &str,
        config_path: Option<&Path>,
        cli: &[(String, String)],
    ) -> Result<Self> {
        let experiment: Experiment = experiment.parse()?;
        let file = match config_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
                })?;
                parse_config(&text)?
            }
            None => Vec::new(),
        };
        let settings = Settings::resolve(&file, workers_from_env(), cli)?;
        Self::from_settings(experiment, settings)
    }

    fn n_traj(&self, default: usize) -> usize {
        self.params.n_traj.unwrap_or(default)
    }

    fn horizons(&self, default: &[f64]) -> Vec<f64> {
        self.params.horizons.clone().unwrap_or_else(|| default.to_vec())
    }

    fn functionals(&self, default: &[Observable]) -> Vec<Observable> {
        if self.params.functionals.is_empty() {
            default.to_vec()
        } else {
            self.params.functionals.clone()
        }
    }
}

/// Adds the simulation parameters to a report row.
pub fn with_config(b: RecordBuilder, cfg: &SimConfig) -> RecordBuilder {
    b.field("K", cfg.modes as u64)
        .field("dt", cfg.dt)
        .field("T", cfg.horizon)
        .field("alpha", cfg.alpha)
        .field("beta", cfg.beta)
        .field("delta", cfg.delta)
        .field("p", cfg.p)
        .field("record_stride", cfg.record_stride as u64)
        .field("seed", cfg.seed)
        .field("noise_scale", cfg.noise_scale)
}

fn flags(list: &[&str]) -> Value {
    Value::from(list.iter().map(|s| Value::from(*s)).collect::<Vec<_>>())
}

/// Report rows of a verify-all run: each check's rows followed by its verdict.
pub fn verify_records(results: &[CriterionResult]) -> Vec<Record> {
    let mut out = Vec::new();
    for r in results {
        out.extend(r.records.iter().cloned());
        out.push(
            RecordBuilder::new("verify-all")
                .field("criterion", r.id)
                .field("title", r.title)
                .field("verdict", if r.passed { "PASS" } else { "FAIL" })
                .field("summary", r.summary.as_str())
                .build(),
        );
    }
    out
}

/// What an experiment produced, before anything is written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<Record>,
    /// `(suffix, contents)`; written to `<out><suffix>`.
    pub extra_files: Vec<(String, String)>,
    /// Set when some estimate could not be formed; the run then exits with code 3.
    pub estimation_failure: Option<String>,
    /// Lines for the manifest (verify-all verdicts with timings).
    pub notes: Vec<String>,
}

/// Runs the experiment without touching the filesystem.
pub fn execute(spec: &ExperimentSpec, progress: &mut dyn FnMut(&str)) -> Result<RunOutput> {
    spec.cfg.validate()?;
    if spec.experiment.needs_admissible_noise() {
        spec.cfg.check_admissible()?;
    }
    match spec.experiment {
        Experiment::NoiseTest => noise_test(spec),
        Experiment::OuProbe => ou_probe(spec),
        Experiment::Simulate => simulate(spec),
        Experiment::RiccatiVerify => riccati_verify(spec),
        Experiment::Recurrence => recurrence(spec),
        Experiment::Occupation => occupation(spec),
        Experiment::MomentProbe => moment_probe(spec),
        Experiment::LdpProbe => ldp_probe(spec),
        Experiment::VerifyAll => {
            let mut notes = Vec::new();
            let only = spec.params.criteria.as_deref();
            let results = verify::run_all(&spec.params.preset, only, spec.cfg.seed, spec.workers, |r| {
                let line = r.line();
                progress(&line);
                notes.push(line);
            })?;
            Ok(RunOutput {
                records: verify_records(&results),
                notes,
                ..RunOutput::default()
            })
        }
    }
}

/// Paths written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: PathBuf,
    pub manifest: PathBuf,
    pub extra_files: Vec<PathBuf>,
    pub rows: usize,
    pub wall_time_s: f64,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the experiment and writes the report, any extra files and the manifest.
///
/// An estimation failure still writes everything, then returns
/// [`Error::Estimation`].
pub fn run_experiment(spec: &ExperimentSpec, progress: &mut dyn FnMut(&str)) -> Result<RunSummary> {
    let start = Instant::now();
    let out = execute(spec, progress)?;
    let wall = start.elapsed().as_secs_f64();

    write_file(&spec.output_path, &encode_json_lines(&out.records))?;
    let mut extra = Vec::new();
    for (suffix, text) in &out.extra_files {
        let path = sibling(&spec.output_path, suffix);
        write_file(&path, text)?;
        extra.push(path);
    }
    let manifest_path = sibling(&spec.output_path, ".manifest.json");
    let (config, sources) = spec.settings.echo();
    let manifest = json!({
        "experiment": spec.experiment.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "sources": sources,
        "workers": spec.workers,
        "wall_time_s": wall,
        "report": spec.output_path.display().to_string(),
        "extra_files": extra.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "rows": out.records.len(),
        "status": if out.estimation_failure.is_some() { "estimation_failure" } else { "ok" },
        "notes": out.notes,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&manifest_path, &text)?;

    if let Some(msg) = out.estimation_failure {
        return Err(Error::Estimation(msg));
    }
    Ok(RunSummary {
        report: spec.output_path.clone(),
        manifest: manifest_path,
        extra_files: extra,
        rows: out.records.len(),
        wall_time_s: wall,
    })
}

fn row(spec: &ExperimentSpec) -> RecordBuilder {
    with_config(RecordBuilder::new(spec.experiment.name()), &spec.cfg)
}

fn noise_test(spec: &ExperimentSpec) -> Result<RunOutput> {
    let n = spec.n_traj(1_000_000);
    let alpha = spec.cfg.alpha;
    let sampler = StableSampler::new(alpha)?;
    const CHUNK: usize = 10_000;
    let chunks = n.div_ceil(CHUNK);
    let draws: Vec<f64> = map_indexed(spec.workers, chunks, |c| {
        let mut rng = SeedStream::new(spec.cfg.seed, c as u64).rng();
        let len = CHUNK.min(n - c * CHUNK);
        (0..len).map(|_| sampler.sample(&mut rng)).collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect();

    let mut records = Vec::new();
    for t in [0.25, 0.5, 1.0, 2.0] {
        let m = Moments::from_slice(&draws.iter().map(|x| (t * x).cos()).collect::<Vec<_>>());
        let exact = (-t.powf(alpha)).exp();
        records.push(
            row(spec)
                .field("check", "characteristic_function")
                .field("t", t)
                .field("estimate", m.mean())
                .field("exact", exact)
                .field("abs_err", (m.mean() - exact).abs())
                .field("stderr", m.stderr())
                .field("n", n as u64)
                .build(),
        );
    }
    if alpha < 2.0 {
        let abs: Vec<f64> = draws.iter().map(|x| x.abs()).collect();
        let k = (n / 1000).max(10).min(n.saturating_sub(1));
        records.push(
            row(spec)
                .field("check", "tail_index")
                .opt("estimate", hill_estimator(&abs, k))
                .field("exact", alpha)
                .field("order_statistics", k as u64)
                .field("n", n as u64)
                .build(),
        );
    } else {
        let m = Moments::from_slice(&draws);
        records.push(
            row(spec)
                .field("check", "variance")
                .field("estimate", m.variance())
                .field("exact", 2.0)
                .field("n", n as u64)
                .build(),
        );
    }
    Ok(RunOutput {
        records,
        ..RunOutput::default()
    })
}

fn ou_probe(spec: &ExperimentSpec) -> Result<RunOutput> {
    let horizons = spec.horizons(&[1.0, 2.0, 4.0, 8.0, 16.0]);
    let n = spec.n_traj(2000);
    let theta = spec.params.theta;
    let p = spec.params.moment_p;
    let report = maximal_moment_probe(
        &spec.cfg.spectrum()?,
        FractionalExponent::new(theta)?,
        p,
        &horizons,
        n,
        spec.cfg.dt,
        spec.cfg.seed,
        spec.workers,
    )?;
    let records = report
        .rows
        .iter()
        .map(|r| {
            row(spec)
                .field("theta", theta)
                .field("moment_p", p)
                .field("horizon", r.horizon)
                .field("estimate", r.estimate)
                .field("stderr", r.stderr)
                .field("n", r.n_traj as u64)
                .opt("slope", report.slope)
                .field("flags", flags(if report.slope_defined { &[] } else { &["slope_undefined"] }))
                .build()
        })
        .collect();
    Ok(RunOutput {
        records,
        ..RunOutput::default()
    })
}

fn initial_state(cfg: &SimConfig, norm: f64, cell: u64) -> SpectralField {
    let mut dir = SeedStream::new(derive_seed(cfg.seed, DIRECTION_TAG), cell).rng();
    SpectralField::random_direction(cfg.modes, norm, &mut dir)
}

fn simulate(spec: &ExperimentSpec) -> Result<RunOutput> {
    let cfg = &spec.cfg;
    let functionals = spec.functionals(&[]);
    let opts = RecordOptions {
        store_states: false,
        functionals: functionals.clone(),
    };
    let x0 = initial_state(cfg, spec.params.x0_norm, 0);
    let mut rng = SeedStream::new(cfg.seed, 0).rng();
    let traj = simulate_with(x0, cfg, &opts, &mut rng)?;
    let last = traj.track.last().expect("at least the initial record");
    let yb = ybound_check(&traj, cfg.horizon)?;
    let cmp = comparison_verify(&energy_trace(&traj), yb.kc_hat)?;
    let mut b = row(spec)
        .field("x0_norm", spec.params.x0_norm)
        .field("records", traj.len() as u64)
        .field("final_time", last.time)
        .field("final_norm_h", last.norms.h)
        .field("final_norm_hdelta", last.norms.hdelta)
        .field("c_star", yb.c_star)
        .field("kc_hat", yb.kc_hat)
        .field("y_bound", yb.bound)
        .field("sup_y2_late", yb.sup_y2)
        .field("y_bound_holds", yb.holds)
        .field("comparison_passed", cmp.passed)
        .field("comparison_worst_excess", cmp.worst_excess);
    for f in &functionals {
        let avg = occupation_estimate(&traj, f)?;
        b = b
            .field(&format!("average:{}", f.name()), avg.value)
            .opt(&format!("stderr:{}", f.name()), avg.stderr);
    }
    Ok(RunOutput {
        records: vec![b.build()],
        extra_files: vec![(".trajectory.csv".into(), traj.to_csv())],
        ..RunOutput::default()
    })
}

fn riccati_verify(spec: &ExperimentSpec) -> Result<RunOutput> {
    let horizon = spec.cfg.horizon;
    let grid: Vec<f64> = (0..=200).map(|i| horizon * i as f64 / 200.0).collect();
    let mut records = Vec::new();
    for g0 in [0.0, 0.5, 1.0, 2.0, 10.0, 1e6] {
        for kc in [1.0, 2.0, 5.0] {
            let inp = RiccatiInput::new(g0, kc, horizon)?;
            let numeric = riccati_numeric(&inp, &grid)?;
            let mut err: f64 = 0.0;
            let mut sup_late: f64 = 0.0;
            for (&t, g) in grid.iter().zip(&numeric) {
                let exact = riccati_explicit(&inp, t)?;
                err = err.max((exact - g).abs() / exact.max(1.0));
                if t >= 0.5 * horizon {
                    sup_late = sup_late.max(exact);
                }
            }
            let bound = halfinterval_bound(kc, horizon)?;
            records.push(
                row(spec)
                    .field("g0", g0)
                    .field("kc", kc)
                    .field("max_rel_err_vs_rk4", err)
                    .field("sup_g_late", sup_late)
                    .field("halfinterval_bound", bound)
                    .field("bound_holds", sup_late <= bound * (1.0 + 1e-12))
                    .build(),
            );
        }
    }
    Ok(RunOutput {
        records,
        ..RunOutput::default()
    })
}

fn recurrence(spec: &ExperimentSpec) -> Result<RunOutput> {
    let n = spec.n_traj(10_000);
    let p = &spec.params;
    let samples = simulate_hitting(&spec.cfg, p.x0_norm, &p.m_grid, p.hitting_horizon, n, spec.workers)?;
    let mut out = RunOutput::default();
    let mut failures = Vec::new();
    for (&m, s) in p.m_grid.iter().zip(&samples) {
        let fit = geometric_tail_fit(s);
        out.extra_files
            .push((format!(".survival.M{}.csv", fmt_label(m)), survival_csv(&fit)));
        let censored = s.iter().filter(|x| x.censored()).count();
        for &lambda in &p.lambda_grid {
            let base = row(spec)
                .field("x0_norm", p.x0_norm)
                .field("m", m)
                .field("lambda", lambda)
                .field("horizon_n", p.hitting_horizon)
                .field("n", n as u64)
                .field("censored", censored as u64)
                .opt("rho", fit.rho)
                .opt("r_squared", fit.r_squared)
                .field("points_used", fit.points_used as u64);
            let rec = match exp_moment_estimate(s, lambda) {
                Ok(r) => {
                    let r = match p.c_hat {
                        Some(c) => r.with_threshold(c, spec.cfg.p),
                        None => r,
                    };
                    let mut fl = Vec::new();
                    if r.censored_fraction > 0.0 {
                        fl.push("censored");
                    }
                    if !fit.fit_ok {
                        fl.push("fit_failed");
                    }
                    if r.divergence_risk {
                        fl.push("divergence_risk");
                    }
                    base.opt("estimate", r.estimate)
                        .field("raw_estimate", r.raw_estimate)
                        .field("stderr", r.raw_stderr)
                        .field("ci_low", r.ci_low)
                        .field("ci_high", r.ci_high)
                        .field("censored_fraction", r.censored_fraction)
                        .field("threshold_check", r.threshold_check)
                        .field("flags", flags(&fl))
                        .build()
                }
                Err(Error::Estimation(msg)) => {
                    failures.push(format!("M = {m}, lambda = {lambda}: {msg}"));
                    base.field("estimate", Value::Null)
                        .field("flags", flags(&["all_censored"]))
                        .build()
                }
                Err(e) => return Err(e),
            };
            out.records.push(rec);
        }
    }
    if !failures.is_empty() {
        out.estimation_failure = Some(failures.join("; "));
    }
    Ok(out)
}

/// `1`, `2.5`, ... for file names.
fn fmt_label(x: f64) -> String {
    let s = format!("{x}");
    s.replace('.', "p")
}

fn occupation(spec: &ExperimentSpec) -> Result<RunOutput> {
    let functionals = spec.functionals(&[Observable::ExpNegH2, Observable::TanhH2]);
    let norms = &spec.params.initial_norms;
    let opts = RecordOptions {
        store_states: false,
        functionals: functionals.clone(),
    };
    let runs: Vec<Result<Vec<(f64, Option<f64>)>>> = map_indexed(spec.workers, norms.len(), |c| {
        let x0 = initial_state(&spec.cfg, norms[c], c as u64);
        let mut rng = SeedStream::new(spec.cfg.seed, c as u64).rng();
        let traj = simulate_with(x0, &spec.cfg, &opts, &mut rng).map_err(|e| e.with_trajectory(c))?;
        functionals
            .iter()
            .map(|f| occupation_estimate(&traj, f).map(|a| (a.value, a.stderr)))
            .collect()
    });
    let runs: Vec<Vec<(f64, Option<f64>)>> = runs.into_iter().collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (j, f) in functionals.iter().enumerate() {
        for (c, &norm) in norms.iter().enumerate() {
            let (v, se) = runs[c][j];
            records.push(
                row(spec)
                    .field("functional", f.name())
                    .field("x0_norm", norm)
                    .field("estimate", v)
                    .opt("stderr", se)
                    .build(),
            );
        }
        // Largest pairwise gap in units of the combined standard error.
        let mut worst: Option<f64> = None;
        for a in 0..norms.len() {
            for b in a + 1..norms.len() {
                let (va, sa) = runs[a][j];
                let (vb, sb) = runs[b][j];
                if let (Some(sa), Some(sb)) = (sa, sb) {
                    let c = (sa * sa + sb * sb).sqrt();
                    let z = if c > 0.0 { (va - vb).abs() / c } else if va == vb { 0.0 } else { f64::INFINITY };
                    worst = Some(worst.map_or(z, |w: f64| w.max(z)));
                }
            }
        }
        if norms.len() > 1 {
            records.push(
                row(spec)
                    .field("functional", f.name())
                    .field("starts", norms.len() as u64)
                    .opt("max_gap_in_se", worst)
                    .build(),
            );
        }
    }
    Ok(RunOutput {
        records,
        ..RunOutput::default()
    })
}

fn moment_probe(spec: &ExperimentSpec) -> Result<RunOutput> {
    let n = spec.n_traj(2000);
    let report = uniform_moment_probe(&spec.cfg, &spec.params.initial_norms, n, spec.params.target, spec.workers)?;
    let target = match spec.params.target {
        MomentTarget::X => "X",
        MomentTarget::Y => "Y",
    };
    let mut records: Vec<Record> = report
        .rows
        .iter()
        .map(|r| {
            row(spec)
                .field("target", target)
                .field("x0_norm", r.initial_norm)
                .field("estimate", r.estimate)
                .field("stderr", r.stderr)
                .field("n", r.n_traj as u64)
                .build()
        })
        .collect();
    records.push(
        row(spec)
            .field("target", target)
            .opt("ratio", report.ratio)
            .field("c_hat", report.c_hat)
            .field("flags", flags(if report.ratio.is_some() { &[] } else { &["zero_minimum"] }))
            .build(),
    );
    Ok(RunOutput {
        records,
        ..RunOutput::default()
    })
}

fn ldp_probe(spec: &ExperimentSpec) -> Result<RunOutput> {
    let f = spec
        .functionals(&[Observable::TanhH2])
        .into_iter()
        .next()
        .expect("nonempty");
    let horizons = spec.horizons(&[25.0, 50.0, 100.0]);
    let n = spec.n_traj(1000);
    let p = &spec.params;
    let pi_hat = match p.pi_hat {
        Some(v) => v,
        None => reference_average(&spec.cfg, &f, p.reference_horizon, p.burn_in)?.value,
    };
    let level = match p.level {
        Some(r) => r,
        None => {
            let seed = derive_seed(spec.cfg.seed, LEVEL_TAG);
            let s: Vec<f64> = occupation_samples(&spec.cfg, &f, &[1.0], n, seed, spec.workers)?
                .into_iter()
                .map(|v| v[0])
                .collect();
            let r = deviation_level(&s, pi_hat, 0.9)?;
            if !(r > 0.0) {
                return Err(Error::Estimation(format!(
                    "90th percentile of L_1 - pi is {r}; pass a positive level explicitly"
                )));
            }
            r
        }
    };
    let opts = LdpOptions {
        pi_hat: Some(pi_hat),
        reference_horizon: p.reference_horizon,
        burn_in: p.burn_in,
        two_sided: p.two_sided,
    };
    let report = ldp_decay_probe(&spec.cfg, &f, level, &horizons, n, &opts, spec.workers)?;
    let records = report
        .rows
        .iter()
        .map(|r| {
            row(spec)
                .field("functional", report.functional.as_str())
                .field("level", level)
                .field("pi_hat", pi_hat)
                .field("two_sided", report.two_sided)
                .field("horizon", r.horizon)
                .field("events", r.events)
                .field("n", r.n_traj as u64)
                .field("probability", r.probability)
                .field("wilson_low", r.wilson_low)
                .field("wilson_high", r.wilson_high)
                .opt("estimate", r.rate)
                .field("rate_lower_bound", r.rate_lower_bound)
                .opt("stabilization", report.stabilization)
                .field("flags", flags(if r.events == 0 { &["zero_events"] } else { &[] }))
                .build()
        })
        .collect();
    Ok(RunOutput {
        records,
        ..RunOutput::default()
    })
}
