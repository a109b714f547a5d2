//! End-to-end commands: preprocess, estimate, simulate, observability and
//! leave-one-subject-out evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use crate::ekf::{constant_hr_mode, run_filter, FilterOutput};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::{
    expand_windows, hr_bpm_1hz, loso_harness, lr_baseline, lr_samples, reference_paee, subtract_rmr,
    DatasetReport, EvalReport, LrSample, MethodMetrics, IAA_WINDOW_S,
};
use crate::io::{
    fmt_g, load_session, read_states, state_columns, write_columns, write_gas, write_imu, write_proxies, write_segments,
    write_series, write_truth, Config, SessionBundle, Table, Truth, HR_HEADER, IMU_FILES, PROXIES_CLEAN_FILE,
    PROXIES_FILE, SEGMENTS_FILE, STATE_COLUMNS, TRUTH_FILE,
};
use crate::observability::{analyze_trajectory, ObservabilityConfig, ObservabilityReport};
use crate::physio::{ModelParams, StateVector, STATE_NAMES};
use crate::signal::{hr_to_input, preprocess};
use crate::simulator::{simulate_forward, synthesize_imu, synthesize_measurements, Scenario, SimOutput};
use crate::types::{ActivitySegment, Intensity, TimeSeries, Unit};

/// Name of the filter in reports.
pub const PM_EKF: &str = "PM-EKF";
pub const PM_EKF_CONSTANT_HR: &str = "PM-EKF (70 bpm)";
pub const LR_HR: &str = "LR (IMU+HR)";
pub const LR_NO_HR: &str = "LR (IMU)";

// ---------------------------------------------------------------------------
// Preprocessing

/// Aligned 1 Hz filter inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub t: Vec<f64>,
    /// Heart rate in beats per second.
    pub u: Vec<f64>,
    pub z: Vec<[f64; 2]>,
    pub hr_replaced: Vec<usize>,
}

/// Signal-level pipeline of a session, or its precomputed proxies.
pub fn model_inputs(session: &SessionBundle, config: &Config) -> Result<Inputs> {
    let (t0, u, z, replaced) = match (&session.proxies, &session.imu) {
        (Some((start, z)), _) => {
            let hr = hr_to_input(&session.hr)?;
            (*start, hr.u.values, z.clone(), hr.replaced)
        }
        (None, Some(imu)) => {
            let m = preprocess(imu, &session.hr, &session.subject, config.model.rq)?;
            let z = m.rm_o2.iter().zip(&m.rm_co2).map(|(a, b)| [*a, *b]).collect();
            (imu.pelvis.start, m.u, z, m.hr_replaced)
        }
        (None, None) => return Err(Error::MissingFile(IMU_FILES[0].into())),
    };
    let n = u.len().min(z.len());
    if n < 2 {
        return Err(Error::invalid("session shorter than two seconds"));
    }
    Ok(Inputs {
        t: (0..n).map(|k| t0 + k as f64).collect(),
        u: u[..n].to_vec(),
        z: z[..n].to_vec(),
        hr_replaced: replaced,
    })
}

pub fn write_inputs(path: &Path, inputs: &Inputs) -> Result<()> {
    let (a, b): (Vec<f64>, Vec<f64>) = inputs.z.iter().map(|v| (v[0], v[1])).unzip();
    write_columns(path, &["t", "u_bps", "rm_o2_lps", "rm_co2_lps"], &[&inputs.t, &inputs.u, &a, &b])
}

/// `preprocess` command: writes `model_inputs.csv`.
pub fn cmd_preprocess(session_dir: &Path, config: &Config, out: &Path) -> Result<Inputs> {
    let session = load_session(session_dir, config).stage("load")?;
    let inputs = model_inputs(&session, config).stage("signal")?;
    fs::create_dir_all(out)?;
    write_inputs(&out.join("model_inputs.csv"), &inputs).stage("write")?;
    Ok(inputs)
}

// ---------------------------------------------------------------------------
// Reference

/// Linear interpolation of a uniformly sampled series, held constant beyond
/// its ends.
fn sample_at(start: f64, rate: f64, values: &[f64], t: f64) -> f64 {
    let pos = ((t - start) * rate).clamp(0.0, (values.len() - 1) as f64);
    let i = (pos.floor() as usize).min(values.len().saturating_sub(2));
    let f = pos - i as f64;
    if values.len() == 1 {
        return values[0];
    }
    values[i] + f * (values[i + 1] - values[i])
}

/// Reference PAEE at the given times: simulated truth when present,
/// otherwise RMR-corrected indirect calorimetry.
pub fn reference_at(session: &SessionBundle, t: &[f64]) -> Result<Option<Vec<f64>>> {
    if let Some(truth) = &session.truth {
        let start = truth.t[0];
        return Ok(Some(t.iter().map(|&ti| sample_at(start, 1.0, &truth.paee, ti)).collect()));
    }
    let (Some(gas), Some(rmr)) = (&session.reference_gas, &session.rmr_recording) else {
        return Ok(None);
    };
    let (o2, co2) = subtract_rmr((&gas.0, &gas.1), (&rmr.0, &rmr.1))?;
    let paee = reference_paee(&o2, &co2);
    Ok(Some(t.iter().map(|&ti| sample_at(o2.start, o2.rate, &paee, ti)).collect()))
}

// ---------------------------------------------------------------------------
// Estimation

/// Whether `estimate` computes metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricsMode {
    /// When a reference is available.
    #[default]
    Auto,
    /// Fail if no reference is available.
    Require,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EstimateOptions {
    pub constant_hr: bool,
    pub metrics: MetricsMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub t: Vec<f64>,
    /// Heart rate fed to the filter, bpm.
    pub hr_bpm: Vec<f64>,
    pub output: FilterOutput,
    pub reference: Option<Vec<f64>>,
    pub report: Option<EvalReport>,
}

fn method_name(constant_hr: bool) -> &'static str {
    if constant_hr {
        PM_EKF_CONSTANT_HR
    } else {
        PM_EKF
    }
}

/// Run the filter on a loaded session.
pub fn estimate(session: &SessionBundle, config: &Config, opts: EstimateOptions) -> Result<Estimate> {
    let with_reference = opts.metrics != MetricsMode::Skip && session.has_reference();
    if opts.metrics == MetricsMode::Require && !with_reference {
        return Err(Error::invalid(format!(
            "metrics requested but session '{}' has no reference (truth.csv or ref_gas.csv with rmr.csv)",
            session.name
        )));
    }
    let inputs = model_inputs(session, config).stage("signal")?;
    let cfg = if opts.constant_hr {
        constant_hr_mode(&config.ekf)
    } else {
        config.ekf.clone()
    };
    let output = run_filter(&inputs.u, &inputs.z, &cfg, &config.model).stage("filter")?;
    let hr_bpm = match cfg.constant_hr_bpm {
        Some(b) => vec![b; inputs.t.len()],
        None => inputs.u.iter().map(|u| u * 60.0).collect(),
    };
    let (reference, report) = match with_reference {
        true => {
            let y = reference_at(session, &inputs.t).stage("reference")?.expect("reference checked");
            let m = MethodMetrics::compute(method_name(opts.constant_hr), &y, &output.paee, &inputs.t, &session.segments)
                .stage("metrics")?;
            let report = EvalReport {
                subject: session.name.clone(),
                samples: y.len(),
                methods: vec![m],
            };
            (Some(y), Some(report))
        }
        false => (None, None),
    };
    Ok(Estimate {
        t: inputs.t,
        hr_bpm,
        output,
        reference,
        report,
    })
}

/// Columns of `estimate.csv`.
pub fn estimate_header() -> Vec<&'static str> {
    let mut h = vec!["t"];
    h.extend(STATE_COLUMNS);
    h.extend(["var1", "var2", "var3", "var4", "var5", "paee", "innov1", "innov2", "hr_bpm"]);
    h
}

/// Write `estimate.csv` and, with a reference, `report.txt`.
pub fn write_estimate(dir: &Path, est: &Estimate) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let o = &est.output;
    let states = state_columns(&o.states);
    let var: [Vec<f64>; 5] = std::array::from_fn(|k| o.cov_diag.iter().map(|c| c[k]).collect());
    let innov: [Vec<f64>; 2] = std::array::from_fn(|k| o.innovations.iter().map(|c| c[k]).collect());
    let mut cols: Vec<&[f64]> = vec![&est.t];
    cols.extend(states.iter().map(|c| c.as_slice()));
    cols.extend(var.iter().map(|c| c.as_slice()));
    cols.push(&o.paee);
    cols.extend(innov.iter().map(|c| c.as_slice()));
    cols.push(&est.hr_bpm);
    let mut written = vec![dir.join("estimate.csv")];
    write_columns(&written[0], &estimate_header(), &cols)?;
    if let Some(r) = &est.report {
        let path = dir.join("report.txt");
        fs::write(&path, r.to_text())?;
        written.push(path);
    }
    Ok(written)
}

/// `estimate` command.
pub fn cmd_estimate(session_dir: &Path, config: &Config, opts: EstimateOptions, out: &Path) -> Result<Estimate> {
    let session = load_session(session_dir, config).stage("load")?;
    let est = estimate(&session, config, opts)?;
    write_estimate(out, &est).stage("write")?;
    Ok(est)
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub seed: u64,
    pub noise_sigma_frac: f64,
    pub dt: f64,
    /// Also synthesize IMU channels and activity segments.
    pub imu: bool,
    pub imu_rate: f64,
    pub imu_noise_std: f64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_sigma_frac: 0.1,
            dt: 0.01,
            imu: false,
            imu_rate: 30.0,
            imu_noise_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub scenario: Scenario,
    pub output: SimOutput,
    pub noisy: Vec<[f64; 2]>,
    pub segments: Vec<ActivitySegment>,
}

/// Active scenario segments as labelled activity segments.
pub fn scenario_segments(scenario: &Scenario) -> Result<Vec<ActivitySegment>> {
    let mut t = 0.0;
    let mut out = Vec::new();
    for (i, s) in scenario.segments.iter().enumerate() {
        if s.intensity != Intensity::Rest {
            out.push(ActivitySegment::new(format!("{}_{}", s.intensity, i + 1), s.intensity, t, t + s.duration)?);
        }
        t += s.duration;
    }
    Ok(out)
}

pub fn run_simulation(scenario: &Scenario, params: &ModelParams, opts: &SimulateOptions) -> Result<SimulationRun> {
    let output = simulate_forward(scenario, params, opts.dt).stage("simulate")?;
    let noisy = synthesize_measurements(&output.proxies, scenario.noise_sigma_frac, scenario.seed);
    Ok(SimulationRun {
        segments: scenario_segments(scenario)?,
        scenario: scenario.clone(),
        output,
        noisy,
    })
}

/// Write a session directory: `hr.csv`, `proxies.csv`, `proxies_clean.csv`,
/// `truth.csv`, plus IMU channels and `segments.csv` when requested.
pub fn write_simulation(
    dir: &Path,
    run: &SimulationRun,
    config: &Config,
    opts: &SimulateOptions,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let o = &run.output;
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    let hr = TimeSeries::new(0.0, 1.0, o.hr_bpm.clone(), Unit::Bpm)?;
    write_series(&path("hr.csv"), HR_HEADER, &hr)?;
    write_proxies(&path(PROXIES_FILE), &o.t, &run.noisy)?;
    write_proxies(&path(PROXIES_CLEAN_FILE), &o.t, &o.proxies)?;
    write_truth(
        &path(TRUTH_FILE),
        &Truth {
            t: o.t.clone(),
            states: o.states.clone(),
            paee: o.paee.clone(),
            hr_bpm: o.hr_bpm.clone(),
            drive_o2: o.drive.clone(),
        },
    )?;
    if opts.imu {
        let mut profile = config.subject.clone();
        profile.activity_labels = run.segments.clone();
        let imu = synthesize_imu(&o.drive, &profile, opts.imu_rate, opts.imu_noise_std, run.scenario.seed)?;
        write_imu(&path(IMU_FILES[0]), &imu.pelvis)?;
        write_imu(&path(IMU_FILES[1]), &imu.thigh_left)?;
        write_imu(&path(IMU_FILES[2]), &imu.thigh_right)?;
        write_segments(&path(SEGMENTS_FILE), &run.segments)?;
    }
    Ok(written)
}

/// `simulate` command: parse a scenario file and write a session directory.
pub fn cmd_simulate(scenario_path: &Path, config: &Config, opts: &SimulateOptions, out: &Path) -> Result<SimulationRun> {
    if !scenario_path.is_file() {
        return Err(Error::MissingFile(scenario_path.display().to_string()));
    }
    let text = fs::read_to_string(scenario_path)?;
    let scenario = Scenario::parse(&text, opts.noise_sigma_frac, opts.seed).stage("scenario")?;
    let run = run_simulation(&scenario, &config.model, opts)?;
    write_simulation(out, &run, config, opts).stage("write")?;
    Ok(run)
}

/// Write the gas-analyzer files of a simulated session: the truth expressed
/// as O2/CO2 rates on top of a constant resting rate, plus a resting recording.
pub fn write_simulated_gas(dir: &Path, run: &SimulationRun, rest_o2: f64, rmr_seconds: usize) -> Result<()> {
    let rq = 0.8;
    // Weir with VCO2 = rq·VO2 inverted for VO2
    let scale = 3.9 + 1.1 * rq;
    let o2: Vec<f64> = run.output.paee.iter().map(|p| rest_o2 + p / scale).collect();
    let co2: Vec<f64> = o2.iter().map(|v| rq * v).collect();
    write_gas(
        &dir.join(crate::io::REF_GAS_FILE),
        &TimeSeries::new(0.0, 1.0, o2, Unit::LitersPerSecond)?,
        &TimeSeries::new(0.0, 1.0, co2, Unit::LitersPerSecond)?,
    )?;
    write_gas(
        &dir.join(crate::io::RMR_FILE),
        &TimeSeries::new(0.0, 1.0, vec![rest_o2; rmr_seconds], Unit::LitersPerSecond)?,
        &TimeSeries::new(0.0, 1.0, vec![rq * rest_o2; rmr_seconds], Unit::LitersPerSecond)?,
    )
}

// ---------------------------------------------------------------------------
// Observability

/// States and heart rate (bpm) read from any trajectory CSV with the five
/// state columns and an `hr_bpm` column.
pub fn read_trajectory(path: &Path) -> Result<(Vec<f64>, Vec<StateVector>, Vec<f64>)> {
    let table = Table::read(path)?;
    Ok((table.column("t")?, read_states(&table)?, table.column("hr_bpm")?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityRun {
    pub t: Vec<f64>,
    pub report: ObservabilityReport,
}

pub fn observability(
    t: &[f64],
    states: &[StateVector],
    hr_bpm: &[f64],
    params: &ModelParams,
    cfg: &ObservabilityConfig,
) -> Result<ObservabilityRun> {
    let u: Vec<f64> = hr_bpm.iter().map(|h| h / 60.0).collect();
    let report = analyze_trajectory(states, &u, cfg, params).stage("observability")?;
    Ok(ObservabilityRun {
        t: report.points.iter().map(|&k| t[k]).collect(),
        report,
    })
}

impl ObservabilityRun {
    pub fn to_text(&self) -> String {
        let r = &self.report;
        let mut out = format!(
            "evaluation points: {}\nmean rank: {:.3}\nfull-rank fraction: {:.3}\n\nper-state score\n",
            r.points.len(),
            r.mean_rank,
            r.full_rank_fraction()
        );
        for (name, s) in STATE_NAMES.iter().zip(&r.per_state_scores) {
            out.push_str(&format!("{name:<8} {s:.3}\n"));
        }
        out
    }
}

/// Write `observability.csv` (`state,score,mean_rank`), the per-point
/// `observability_points.csv` and the text report.
pub fn write_observability(dir: &Path, run: &ObservabilityRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut scores = String::from("state,score,mean_rank\n");
    for (name, s) in STATE_NAMES.iter().zip(&run.report.per_state_scores) {
        scores.push_str(&format!("{name},{},{}\n", fmt_g(*s), fmt_g(run.report.mean_rank)));
    }
    fs::write(dir.join("observability.csv"), scores)?;
    let rank: Vec<f64> = run.report.rank_per_step.iter().map(|r| *r as f64).collect();
    write_columns(
        &dir.join("observability_points.csv"),
        &["t", "rank", "condition"],
        &[&run.t, &rank, &run.report.matrix_condition],
    )?;
    fs::write(dir.join("observability.txt"), run.to_text())?;
    Ok(())
}

/// Rest followed by ten minutes of moderate activity.
pub fn default_observability_scenario() -> Scenario {
    Scenario {
        segments: vec![
            crate::simulator::Segment::at(Intensity::Rest, 60.0),
            crate::simulator::Segment::at(Intensity::Moderate, 600.0),
        ],
        noise_sigma_frac: 0.0,
        seed: 0,
    }
}

/// Source of the trajectory analyzed by `observability`.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySource {
    /// A CSV with state and `hr_bpm` columns, or a session directory
    /// containing `truth.csv`.
    File(PathBuf),
    /// Simulate this scenario without noise first.
    Scenario(Scenario),
}

/// `observability` command.
pub fn cmd_observability(
    source: &TrajectorySource,
    config: &Config,
    cfg: &ObservabilityConfig,
    out: &Path,
) -> Result<ObservabilityRun> {
    let (t, states, hr) = match source {
        TrajectorySource::File(p) => {
            let file = if p.is_dir() { p.join(TRUTH_FILE) } else { p.clone() };
            read_trajectory(&file).stage("load")?
        }
        TrajectorySource::Scenario(s) => {
            let o = simulate_forward(s, &config.model, 0.01).stage("simulate")?;
            (o.t, o.states, o.hr_bpm)
        }
    };
    let run = observability(&t, &states, &hr, &config.model, cfg)?;
    write_observability(out, &run).stage("write")?;
    Ok(run)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvaluateOptions {
    /// Run the filter with the constant 70 bpm input.
    pub constant_hr: bool,
    /// Baseline without the heart-rate feature.
    pub no_hr: bool,
}

/// Everything one subject contributes to leave-one-subject-out evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub name: String,
    pub t: Vec<f64>,
    pub reference: Vec<f64>,
    pub filter_paee: Vec<f64>,
    pub lr: Vec<LrSample>,
    pub segments: Vec<ActivitySegment>,
}

/// Load a session and run everything that needs no training data.
pub fn prepare_subject(session: &SessionBundle, config: &Config, opts: EvaluateOptions) -> Result<SubjectData> {
    let imu = session
        .imu
        .as_ref()
        .ok_or_else(|| Error::MissingFile(IMU_FILES[0].into()))
        .stage("load")?;
    let est = estimate(
        session,
        config,
        EstimateOptions {
            constant_hr: opts.constant_hr,
            metrics: MetricsMode::Require,
        },
    )?;
    let reference = est.reference.expect("required above");
    let hr = hr_bpm_1hz(&session.hr).stage("signal")?;
    let lr = lr_samples(imu, &hr, &reference, IAA_WINDOW_S).stage("baseline")?;
    Ok(SubjectData {
        name: session.name.clone(),
        t: est.t,
        reference,
        filter_paee: est.output.paee,
        lr,
        segments: session.segments.clone(),
    })
}

/// Metrics of one held-out subject given the other subjects' training data.
pub fn evaluate_fold(train: &[&SubjectData], test: &SubjectData, opts: EvaluateOptions) -> Result<EvalReport> {
    let samples: Vec<LrSample> = train.iter().flat_map(|s| s.lr.iter().cloned()).collect();
    let (_, pred) = lr_baseline(&samples, &test.lr, !opts.no_hr).stage("baseline")?;
    let covered = test.lr.len() * IAA_WINDOW_S as usize;
    let n = test.reference.len().min(test.filter_paee.len()).min(covered);
    if n < 2 {
        return Err(Error::invalid(format!("subject {} has less than one baseline window", test.name)));
    }
    let lr = expand_windows(&pred, IAA_WINDOW_S, n);
    let (y, t) = (&test.reference[..n], &test.t[..n]);
    let methods = vec![
        MethodMetrics::compute(method_name(opts.constant_hr), y, &test.filter_paee[..n], t, &test.segments)?,
        MethodMetrics::compute(if opts.no_hr { LR_NO_HR } else { LR_HR }, y, &lr, t, &test.segments)?,
    ];
    Ok(EvalReport {
        subject: test.name.clone(),
        samples: n,
        methods,
    })
}

/// Session directories directly below `root`, sorted by name.
pub fn session_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.display().to_string()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// `evaluate` command: one subject per subdirectory of `root`.
pub fn cmd_evaluate(root: &Path, config: &Config, opts: EvaluateOptions, out: &Path) -> Result<DatasetReport> {
    let subjects = session_dirs(root)?
        .iter()
        .map(|d| {
            let s = load_session(d, config).stage("load")?;
            prepare_subject(&s, config, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let folds = loso_harness(&subjects, |train, test| evaluate_fold(train, test, opts))?;
    let report = DatasetReport::new(folds)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("evaluation.txt"), report.to_text())?;
    write_fold_table(&out.join("evaluation.csv"), &report)?;
    Ok(report)
}

fn write_fold_table(path: &Path, report: &DatasetReport) -> Result<()> {
    let mut out = String::from("subject,method,r2,nrmse,violation_rate\n");
    for f in &report.folds {
        for m in &f.methods {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.subject,
                m.method,
                fmt_g(m.r2),
                fmt_g(m.nrmse),
                fmt_g(m.violation_rate)
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_at_interpolates_and_holds() {
        let v = [0.0, 10.0, 20.0];
        assert_eq!(sample_at(0.0, 1.0, &v, 0.5), 5.0);
        assert_eq!(sample_at(0.0, 1.0, &v, -3.0), 0.0);
        assert_eq!(sample_at(0.0, 1.0, &v, 9.0), 20.0);
        assert_eq!(sample_at(10.0, 2.0, &v, 10.75), 15.0);
    }

    #[test]
    fn segments_skip_rest() {
        let s = Scenario::reference_closed_loop(0);
        let segs = scenario_segments(&s).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].t_start, segs[0].t_end), (300.0, 900.0));
        assert_eq!(segs[1].intensity, Intensity::ModerateHigh);
    }
}
