//! Experiment configuration and the end-to-end commands behind the CLI.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::coincidence::{
    accumulate_tensor, aggregate, estimate_all, inject_accidentals, s_hat_distribution,
    sample_events, CoincidenceEvent, HistogramSpec, PairEstimate, RunSummary,
};
use crate::error::{BellError, Result};
use crate::pointer::{Axis, PixelGrid};
use crate::polarization::{chsh_s, concurrence, fidelity, singlet, werner, AngleSet, TwoQubitState};
use crate::tomography::{
    metric_report, reconstruct_mle, simulate_counts, tomography_settings, CountRecord,
    MetricReport, ReconstructedState,
};
use crate::weak::{
    chsh_from_moments, exact_moments, joint_pixel_pmf, output_polarization_state, visibility,
    Couplings, MeasurementSettings, PixelPmf, DEFAULT_ORDERING,
};

/// Input polarization state: `"singlet"` or `"werner:<V>"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StateSpec {
    Singlet,
    Werner(f64),
}

impl StateSpec {
    pub fn build(&self) -> Result<TwoQubitState> {
        match *self {
            StateSpec::Singlet => Ok(singlet()),
            StateSpec::Werner(v) => werner(v),
        }
    }
}

impl TryFrom<String> for StateSpec {
    type Error = BellError;

    fn try_from(s: String) -> Result<Self> {
        if s == "singlet" {
            return Ok(StateSpec::Singlet);
        }
        if let Some(v) = s.strip_prefix("werner:") {
            let v: f64 = v
                .parse()
                .map_err(|_| BellError::Config(format!("bad Werner visibility in {s:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(BellError::Config(format!("Werner visibility {v} outside [0, 1]")));
            }
            return Ok(StateSpec::Werner(v));
        }
        Err(BellError::Config(format!("unknown state {s:?}; expected \"singlet\" or \"werner:V\"")))
    }
}

impl From<StateSpec> for String {
    fn from(s: StateSpec) -> String {
        match s {
            StateSpec::Singlet => "singlet".into(),
            StateSpec::Werner(v) => format!("werner:{v}"),
        }
    }
}

/// How the four coupling displacements are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    /// All four couplings equal to `g_over_sigma · sigma`.
    GOverSigma(f64),
    PerAxis(Couplings),
    /// Uniform couplings found by [`calibrate_g_over_sigma`].
    CalibrateVOut(f64),
}

impl Default for CouplingSpec {
    fn default() -> Self {
        CouplingSpec::CalibrateVOut(0.941)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyConfig {
    pub shots: u64,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        TomographyConfig { shots: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default)]
    pub emit_pmf: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("bellsim-out"), emit_pmf: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub state: StateSpec,
    pub angles: AngleSet,
    pub couplings: CouplingSpec,
    pub sigma: f64,
    pub grid: PixelGrid,
    pub n_events: u64,
    pub seed: u64,
    pub accidental_rate: f64,
    pub ordering: [Axis; 4],
    pub histogram: HistogramSpec,
    pub tomography: TomographyConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            state: StateSpec::Werner(0.986),
            angles: AngleSet::default(),
            couplings: CouplingSpec::default(),
            sigma: 3.0,
            grid: PixelGrid::default(),
            n_events: 1_000_000,
            seed: 7,
            accidental_rate: 0.0,
            ordering: DEFAULT_ORDERING,
            histogram: HistogramSpec::default(),
            tomography: TomographyConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn config_err(e: BellError) -> BellError {
    match e {
        BellError::Domain(m) => BellError::Config(m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| BellError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| BellError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 {
            return Err(BellError::Config("n_events must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.accidental_rate) {
            return Err(BellError::Config(format!(
                "accidental_rate must lie in [0, 1), got {}",
                self.accidental_rate
            )));
        }
        if self.tomography.shots == 0 {
            return Err(BellError::Config("tomography.shots must be positive".into()));
        }
        self.state.build().map_err(config_err)?;
        self.grid.validate().map_err(config_err)?;
        self.histogram.validate().map_err(config_err)?;
        // check everything except a calibration target, which is resolved later
        let probe = match self.couplings {
            CouplingSpec::GOverSigma(r) => Couplings::uniform(r * self.sigma),
            CouplingSpec::PerAxis(c) => c,
            CouplingSpec::CalibrateVOut(t) => {
                if !(t > 0.0 && t < 1.0) {
                    return Err(BellError::Config(format!("calibration target {t} outside (0, 1)")));
                }
                Couplings::uniform(self.sigma)
            }
        };
        MeasurementSettings::new(self.angles, probe, self.sigma)
            .and_then(|s| s.with_ordering(self.ordering))
            .map_err(config_err)?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form, with the
    /// output section reset so that where results go does not change the hash.
    pub fn hash(&self) -> String {
        let physics = ExperimentConfig { output: OutputConfig::default(), ..self.clone() };
        let digest = Sha256::digest(serde_json::to_vec(&physics).expect("config serializes"));
        hex::encode(digest)[..16].to_string()
    }

    pub fn input_state(&self) -> Result<TwoQubitState> {
        self.state.build()
    }

    fn settings_for(&self, couplings: Couplings) -> Result<MeasurementSettings> {
        MeasurementSettings::new(self.angles, couplings, self.sigma)?.with_ordering(self.ordering)
    }

    /// Resolved measurement settings; runs the calibration if the config asks for one.
    pub fn settings(&self) -> Result<MeasurementSettings> {
        match self.couplings {
            CouplingSpec::GOverSigma(r) => self.settings_for(Couplings::uniform(r * self.sigma)),
            CouplingSpec::PerAxis(c) => self.settings_for(c),
            CouplingSpec::CalibrateVOut(target) => {
                let r = calibrate_g_over_sigma(&self.input_state()?, self, target)?;
                self.settings_for(Couplings::uniform(r * self.sigma))
            }
        }
    }

    pub fn with_g_over_sigma(&self, r: f64) -> Self {
        ExperimentConfig { couplings: CouplingSpec::GOverSigma(r), ..self.clone() }
    }
}

/// `V(ρ_out)` with all four couplings equal to `r · σ`.
pub fn output_visibility(rho_in: &TwoQubitState, cfg: &ExperimentConfig, r: f64) -> Result<f64> {
    let s = cfg.settings_for(Couplings::uniform(r * cfg.sigma))?;
    visibility(&output_polarization_state(rho_in, &s)?)
}

/// Uniform `g/σ` at which the output visibility equals `target`, by bisection.
pub fn calibrate_g_over_sigma(rho_in: &TwoQubitState, cfg: &ExperimentConfig, target: f64) -> Result<f64> {
    let v_in = output_visibility(rho_in, cfg, 0.0)?;
    if (target - v_in).abs() < 1e-4 {
        return Ok(0.0);
    }
    if !(target > 0.0 && target < v_in) {
        return Err(BellError::numeric(format!(
            "target visibility {target} not bracketed by V_in = {v_in}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 0.5;
    while output_visibility(rho_in, cfg, hi)? > target {
        lo = hi;
        hi *= 2.0;
        if hi > 64.0 {
            return Err(BellError::numeric(format!(
                "output visibility never drops to {target}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if output_visibility(rho_in, cfg, mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let r = 0.5 * (lo + hi);
    let v = output_visibility(rho_in, cfg, r)?;
    if (v - target).abs() >= 1e-4 {
        return Err(BellError::numeric(format!("calibration stalled at V = {v}")));
    }
    Ok(r)
}

/// Output of `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    #[serde(flatten)]
    pub summary: RunSummary,
    pub g_over_sigma: Option<f64>,
    /// `Σ pmf · Ŝ` over the simulated pmf.
    #[serde(rename = "expected_S_hat")]
    pub expected_s_hat: f64,
    #[serde(rename = "S_exact_moments")]
    pub s_exact_moments: f64,
    #[serde(rename = "S_strong")]
    pub s_strong: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatesJson {
    pub config_hash: String,
    pub rho_in: TwoQubitState,
    pub rho_out: TwoQubitState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_rec: Option<TwoQubitState>,
}

/// In-memory result of a run, before anything is written.
pub struct RunOutcome {
    pub report: RunReport,
    pub events: Vec<CoincidenceEvent>,
    pub estimates: Vec<PairEstimate>,
    pub pmf: PixelPmf,
    pub settings: MeasurementSettings,
    pub states: StatesJson,
}

fn uniform_ratio(s: &MeasurementSettings) -> Option<f64> {
    let g = s.g(Axis::XA);
    Axis::ALL.iter().all(|&a| s.g(a) == g).then(|| g / s.sigma)
}

pub fn simulate_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let rho_in = cfg.input_state()?;
    let settings = cfg.settings()?;
    let grid = &cfg.grid;
    let pmf = inject_accidentals(&joint_pixel_pmf(&rho_in, &settings, grid)?, cfg.accidental_rate)?;
    let events = sample_events(&pmf, cfg.n_events as usize, cfg.seed)?;
    let estimates = estimate_all(&events, &settings, grid)?;
    let values: Vec<f64> = estimates.iter().map(|e| e.s_hat).collect();
    let summary = aggregate(&values, &cfg.histogram)?;
    let (expected, _) = s_hat_distribution(&pmf, &settings, grid)?;
    let report = RunReport {
        config_hash: cfg.hash(),
        summary,
        g_over_sigma: uniform_ratio(&settings),
        expected_s_hat: expected,
        s_exact_moments: chsh_from_moments(&exact_moments(&rho_in, &settings)?, &settings)?,
        s_strong: chsh_s(&rho_in, &settings.angles)?,
    };
    let states = StatesJson {
        config_hash: cfg.hash(),
        rho_out: output_polarization_state(&rho_in, &settings)?,
        rho_in,
        rho_rec: None,
    };
    Ok(RunOutcome { report, events, estimates, pmf, settings, states })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(BellError::from)
}

pub fn summary_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

pub fn events_csv(events: &[CoincidenceEvent], estimates: &[PairEstimate], hash: &str) -> String {
    let mut out = String::with_capacity(events.len() * 40);
    let _ = writeln!(out, "# config_hash={hash}");
    out.push_str("seq,XA,YA,XB,YB,S_hat\n");
    for (e, est) in events.iter().zip(estimates) {
        let _ = writeln!(out, "{},{},{},{},{},{}", e.seq, e.xa, e.ya, e.xb, e.yb, est.s_hat);
    }
    out
}

pub fn histogram_csv(summary: &RunSummary, hash: &str) -> String {
    let h = &summary.histogram;
    let mut out = format!("# config_hash={hash} underflow={} overflow={}\nlo,hi,count\n", h.underflow, h.overflow);
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", h.edges[i], h.edges[i + 1], c);
    }
    out
}

pub fn pmf_csv(pmf: &PixelPmf, hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\nXA,YA,XB,YB,p\n");
    for (idx, p) in pmf.probs.iter().enumerate() {
        let [a, b, c, d] = pmf.cell(idx);
        let _ = writeln!(out, "{a},{b},{c},{d},{p:e}");
    }
    out
}

/// Paths written by a command.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
}

impl RunArtifacts {
    fn push(&mut self, dir: &Path, name: &str, text: &str) -> Result<()> {
        let p = dir.join(name);
        write(&p, text)?;
        self.files.push(p);
        Ok(())
    }
}

pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, emit_pmf: bool) -> Result<(RunOutcome, RunArtifacts)> {
    let outcome = simulate_run(cfg)?;
    fs::create_dir_all(out_dir)?;
    let hash = &outcome.report.config_hash;
    let mut art = RunArtifacts::default();
    art.push(out_dir, "summary.json", &summary_json(&outcome.report))?;
    art.push(out_dir, "events.csv", &events_csv(&outcome.events, &outcome.estimates, hash))?;
    art.push(out_dir, "histogram.csv", &histogram_csv(&outcome.report.summary, hash))?;
    art.push(
        out_dir,
        "states.json",
        &(serde_json::to_string_pretty(&outcome.states).expect("states serialize") + "\n"),
    )?;
    if emit_pmf || cfg.output.emit_pmf {
        art.push(out_dir, "pmf.csv", &pmf_csv(&outcome.pmf, hash))?;
    }
    let tensor = accumulate_tensor(&outcome.events, cfg.grid.n)?;
    debug_assert_eq!(tensor.total, outcome.report.summary.n_events);
    Ok((outcome, art))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TomoTarget {
    In,
    Out,
}

impl std::str::FromStr for TomoTarget {
    type Err = BellError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in" => Ok(TomoTarget::In),
            "out" => Ok(TomoTarget::Out),
            _ => Err(BellError::Config(format!("tomography target must be 'in' or 'out', got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomoReport {
    pub config_hash: String,
    pub which: TomoTarget,
    pub g_over_sigma: Option<f64>,
    pub shots_per_setting: u64,
    pub reconstruction: ReconstructedState,
    pub metrics: MetricReport,
    /// Metrics of the exact state that was measured.
    pub true_metrics: MetricReport,
}

pub fn simulate_tomo(cfg: &ExperimentConfig, which: TomoTarget) -> Result<(TomoReport, CountRecord)> {
    cfg.validate()?;
    let rho_in = cfg.input_state()?;
    let (target, ratio) = match which {
        TomoTarget::In => (rho_in, None),
        TomoTarget::Out => {
            let s = cfg.settings()?;
            (output_polarization_state(&rho_in, &s)?, uniform_ratio(&s))
        }
    };
    let counts = simulate_counts(&target, &tomography_settings(), cfg.tomography.shots, cfg.seed)?;
    let rec = reconstruct_mle(&counts)?;
    let report = TomoReport {
        config_hash: cfg.hash(),
        which,
        g_over_sigma: ratio,
        shots_per_setting: cfg.tomography.shots,
        metrics: metric_report(&rec.rho)?,
        true_metrics: metric_report(&target)?,
        reconstruction: rec,
    };
    Ok((report, counts))
}

pub fn cmd_tomo(cfg: &ExperimentConfig, which: TomoTarget, out_dir: &Path) -> Result<(TomoReport, RunArtifacts)> {
    let (report, counts) = simulate_tomo(cfg, which)?;
    fs::create_dir_all(out_dir)?;
    let tag = match which {
        TomoTarget::In => "in",
        TomoTarget::Out => "out",
    };
    let mut art = RunArtifacts::default();
    art.push(
        out_dir,
        &format!("counts_{tag}.csv"),
        &format!("# config_hash={}\n{}", report.config_hash, counts.to_csv()),
    )?;
    art.push(
        out_dir,
        &format!("reconstruction_{tag}.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    Ok((report, art))
}

/// One row of a `g/σ` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub g_over_sigma: f64,
    /// `E[Ŝ] − S` of the input state.
    pub bias: f64,
    /// Per-pair standard deviation of `Ŝ` under the exact pmf.
    pub stddev: f64,
    pub v_out: f64,
    /// Fidelity of the output polarization state with the input.
    pub f_out: f64,
    pub f_singlet: f64,
    pub c_out: f64,
}

pub fn sweep(cfg: &ExperimentConfig, values: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let rho_in = cfg.input_state()?;
    let s_strong = chsh_s(&rho_in, &cfg.angles)?;
    values
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r.is_finite()) {
                return Err(BellError::Config(format!("g/sigma values must be positive, got {r}")));
            }
            let s = cfg.settings_for(Couplings::uniform(r * cfg.sigma))?;
            let pmf = inject_accidentals(&joint_pixel_pmf(&rho_in, &s, &cfg.grid)?, cfg.accidental_rate)?;
            let (mean, var) = s_hat_distribution(&pmf, &s, &cfg.grid)?;
            let out = output_polarization_state(&rho_in, &s)?;
            Ok(SweepRow {
                g_over_sigma: r,
                bias: mean - s_strong,
                stddev: var.sqrt(),
                v_out: visibility(&out)?,
                f_out: fidelity(&out, &rho_in)?,
                f_singlet: fidelity(&out, &singlet())?,
                c_out: concurrence(&out)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\ng_over_sigma,bias,stddev,v_out,f_out,f_singlet,c_out\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.g_over_sigma, r.bias, r.stddev, r.v_out, r.f_out, r.f_singlet, r.c_out
        );
    }
    out
}

pub fn cmd_sweep(cfg: &ExperimentConfig, values: &[f64], out_dir: &Path) -> Result<(Vec<SweepRow>, RunArtifacts)> {
    let rows = sweep(cfg, values)?;
    fs::create_dir_all(out_dir)?;
    let mut art = RunArtifacts::default();
    art.push(out_dir, "sweep.csv", &sweep_csv(&rows, &cfg.hash()))?;
    Ok((rows, art))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config_hash: String,
    pub target_v_out: f64,
    pub v_in: f64,
    pub g_over_sigma: f64,
    pub v_out: f64,
}

pub fn cmd_calibrate(cfg: &ExperimentConfig, target: f64, out_dir: &Path) -> Result<(CalibrationReport, RunArtifacts)> {
    cfg.validate()?;
    let rho_in = cfg.input_state()?;
    let r = calibrate_g_over_sigma(&rho_in, cfg, target)?;
    let report = CalibrationReport {
        config_hash: cfg.hash(),
        target_v_out: target,
        v_in: visibility(&rho_in)?,
        g_over_sigma: r,
        v_out: output_visibility(&rho_in, cfg, r)?,
    };
    fs::create_dir_all(out_dir)?;
    let mut art = RunArtifacts::default();
    art.push(
        out_dir,
        "calibration.json",
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    Ok((report, art))
}
