//! Forward ground-truth oracle: closed-loop RK4 integration of the gas-exchange
//! model under a scripted metabolic drive, plus synthetic sensor data.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::physio::{
    arterial_o2, basal_state, ce_o2, derivative_with_drive, dump, measurement, state_cardiac_output,
    state_paee, stroke_volume, Delayed, ModelParams, StateVector, STATE_NAMES, STATE_UPPER,
};
use crate::signal::{ImuTriplet, KJ_PER_LITRE_O2};
use crate::types::{Intensity, Series3, SubjectProfile, Unit};

/// Time constant of the onset filter applied to drive and heart rate, s.
pub const ONSET_TAU_S: f64 = 30.0;

/// One scripted scenario segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub intensity: Intensity,
    /// Target O2 consumption above rest, L/s.
    pub target_rm_o2: f64,
    pub hr_bpm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub segments: Vec<Segment>,
    pub noise_sigma_frac: f64,
    pub seed: u64,
}

/// Calibrated (O2 drive in L/s, heart rate in bpm) for each intensity class.
pub fn operating_point(intensity: Intensity) -> (f64, f64) {
    match intensity {
        Intensity::Rest => (0.0, 70.0),
        Intensity::Low => (0.0063, 97.0),
        Intensity::Moderate => (0.0182, 140.0),
        Intensity::ModerateHigh => (0.0345, 163.0),
    }
}

impl Segment {
    /// Segment at the calibrated operating point of `intensity`.
    pub fn at(intensity: Intensity, duration: f64) -> Self {
        let (target_rm_o2, hr_bpm) = operating_point(intensity);
        Self {
            duration,
            intensity,
            target_rm_o2,
            hr_bpm,
        }
    }
}

impl Scenario {
    pub fn new(segments: Vec<Segment>, noise_sigma_frac: f64, seed: u64) -> Result<Self> {
        let s = Self {
            segments,
            noise_sigma_frac,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Rest, moderate, moderate-high, rest over 1800 s with 10% noise.
    pub fn reference_closed_loop(seed: u64) -> Self {
        Self {
            segments: vec![
                Segment::at(Intensity::Rest, 300.0),
                Segment::at(Intensity::Moderate, 600.0),
                Segment::at(Intensity::ModerateHigh, 600.0),
                Segment::at(Intensity::Rest, 300.0),
            ],
            noise_sigma_frac: 0.1,
            seed,
        }
    }

    /// A single constant segment.
    pub fn constant(intensity: Intensity, duration: f64) -> Self {
        Self {
            segments: vec![Segment::at(intensity, duration)],
            noise_sigma_frac: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("scenario has no segments"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0) || !(s.target_rm_o2 >= 0.0) || !(s.hr_bpm > 0.0) {
                return Err(Error::invalid(format!(
                    "segment {i}: duration and heart rate must be positive and target non-negative"
                )));
            }
        }
        if !(self.noise_sigma_frac >= 0.0) {
            return Err(Error::invalid("noise fraction must be non-negative"));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Parse `duration_s intensity target_rm_o2 hr_bpm` lines. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str, noise_sigma_frac: f64, seed: u64) -> Result<Self> {
        let mut segments = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::invalid(format!("scenario line {}: {msg}", n + 1));
            if fields.len() != 4 {
                return Err(bad("expected `duration_s intensity target_rm_o2 hr_bpm`"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("'{s}' is not a number")));
            segments.push(Segment {
                duration: num(fields[0])?,
                intensity: fields[1].parse()?,
                target_rm_o2: num(fields[2])?,
                hr_bpm: num(fields[3])?,
            });
        }
        Self::new(segments, noise_sigma_frac, seed)
    }

    /// Text form accepted by [`Scenario::parse`].
    pub fn to_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("{} {} {} {}\n", s.duration, s.intensity, s.target_rm_o2, s.hr_bpm))
            .collect()
    }
}

/// Piecewise first-order onset filter of the scripted drive and heart rate.
#[derive(Debug, Clone)]
pub struct DriveProfile {
    starts: Vec<f64>,
    initial: Vec<(f64, f64)>,
    targets: Vec<(f64, f64)>,
}

impl DriveProfile {
    pub fn new(scenario: &Scenario) -> Self {
        let mut starts = Vec::new();
        let mut initial = Vec::new();
        let mut targets = Vec::new();
        let first = &scenario.segments[0];
        let (mut t, mut value) = (0.0, (first.target_rm_o2, first.hr_bpm));
        for s in &scenario.segments {
            let target = (s.target_rm_o2, s.hr_bpm);
            starts.push(t);
            initial.push(value);
            targets.push(target);
            let a = (-s.duration / ONSET_TAU_S).exp();
            value = (target.0 + (value.0 - target.0) * a, target.1 + (value.1 - target.1) * a);
            t += s.duration;
        }
        Self {
            starts,
            initial,
            targets,
        }
    }

    /// (O2 drive L/s, heart rate bpm) at time `t`.
    #[inline]
    pub fn at(&self, t: f64) -> (f64, f64) {
        let i = self.starts.partition_point(|s| *s <= t).saturating_sub(1);
        let a = (-(t - self.starts[i]).max(0.0) / ONSET_TAU_S).exp();
        let (v, g) = (self.initial[i], self.targets[i]);
        (g.0 + (v.0 - g.0) * a, g.1 + (v.1 - g.1) * a)
    }
}

/// Ground truth sampled at 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub t: Vec<f64>,
    pub states: Vec<StateVector>,
    pub paee: Vec<f64>,
    pub proxies: Vec<[f64; 2]>,
    pub hr_bpm: Vec<f64>,
    pub drive: Vec<f64>,
}

impl SimOutput {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Heart-rate input in beats per second.
    pub fn u(&self) -> Vec<f64> {
        self.hr_bpm.iter().map(|h| h / 60.0).collect()
    }
}

/// Fine-grid history of the controller's delayed inputs.
struct History {
    dt: f64,
    pre: Delayed,
    ca: Vec<f64>,
    pco2: Vec<f64>,
}

impl History {
    #[inline]
    fn at(&self, t: f64) -> Delayed {
        if t <= 0.0 {
            return self.pre;
        }
        let k = t / self.dt;
        let i = k.floor() as usize;
        let last = self.ca.len() - 1;
        if i >= last {
            return Delayed {
                c_a_o2: self.ca[last],
                p_a_co2: self.pco2[last],
            };
        }
        let f = k - i as f64;
        Delayed {
            c_a_o2: self.ca[i] + f * (self.ca[i + 1] - self.ca[i]),
            p_a_co2: self.pco2[i] + f * (self.pco2[i + 1] - self.pco2[i]),
        }
    }
}

/// Integrate the closed loop from the first segment's steady state.
pub fn simulate_forward(scenario: &Scenario, params: &ModelParams, dt_fine: f64) -> Result<SimOutput> {
    scenario.validate()?;
    let first = &scenario.segments[0];
    let x0 = steady_state_solve(first.target_rm_o2, first.hr_bpm / 60.0, params)?;
    let pre = Delayed {
        c_a_o2: arterial_o2(&x0, params),
        p_a_co2: x0[1],
    };
    simulate_from(scenario, params, dt_fine, x0, pre)
}

/// Integrate the closed loop from an explicit initial state and constant
/// pre-history of the delayed controller inputs.
pub fn simulate_from(
    scenario: &Scenario,
    params: &ModelParams,
    dt_fine: f64,
    x0: StateVector,
    pre_history: Delayed,
) -> Result<SimOutput> {
    scenario.validate()?;
    params.validate()?;
    if !(dt_fine > 0.0 && dt_fine <= 0.01) {
        return Err(Error::invalid(format!("dt_fine must lie in (0, 0.01] s, got {dt_fine}")));
    }
    let per_second = (1.0 / dt_fine).round() as usize;
    if ((per_second as f64) * dt_fine - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("dt_fine must divide one second evenly"));
    }
    let seconds = scenario.duration().round() as usize;
    let steps = seconds * per_second;
    let drive = DriveProfile::new(scenario);
    let k_t = params.k_t();

    let mut hist = History {
        dt: dt_fine,
        pre: pre_history,
        ca: Vec::with_capacity(steps + 1),
        pco2: Vec::with_capacity(steps + 1),
    };
    let mut x = x0;
    hist.ca.push(arterial_o2(&x, params));
    hist.pco2.push(x[1]);

    let f = |x: &StateVector, t: f64, hist: &History| -> StateVector {
        let (mp, hr) = drive.at(t);
        let u = hr / 60.0;
        let q = state_cardiac_output(x, u, params);
        let d = hist.at(t - k_t / q);
        derivative_with_drive(x, u, d, params, Some(mp))
    };

    let mut out = SimOutput {
        t: Vec::with_capacity(seconds),
        states: Vec::with_capacity(seconds),
        paee: Vec::with_capacity(seconds),
        proxies: Vec::with_capacity(seconds),
        hr_bpm: Vec::with_capacity(seconds),
        drive: Vec::with_capacity(seconds),
    };
    let mut record = |x: &StateVector, t: f64| {
        let (mp, hr) = drive.at(t);
        out.t.push(t);
        out.states.push(*x);
        out.paee.push(state_paee(x, params));
        out.proxies.push(measurement(x, hr / 60.0, params));
        out.hr_bpm.push(hr);
        out.drive.push(mp);
    };

    for k in 0..steps {
        let t = k as f64 * dt_fine;
        if k % per_second == 0 {
            record(&x, t);
        }
        let k1 = f(&x, t, &hist);
        let k2 = f(&(x + k1 * (dt_fine / 2.0)), t + dt_fine / 2.0, &hist);
        let k3 = f(&(x + k2 * (dt_fine / 2.0)), t + dt_fine / 2.0, &hist);
        let k4 = f(&(x + k3 * dt_fine), t + dt_fine, &hist);
        x += (k1 + (k2 + k3) * 2.0 + k4) * (dt_fine / 6.0);
        x[4] = x[4].max(0.0);
        check_divergence(&x, t + dt_fine)?;
        hist.ca.push(arterial_o2(&x, params));
        hist.pco2.push(x[1]);
    }
    Ok(out)
}

fn check_divergence(x: &StateVector, t: f64) -> Result<()> {
    for i in 0..5 {
        let bound = if i == 4 { 100.0 } else { 10.0 * STATE_UPPER[i] };
        if !x[i].is_finite() || x[i].abs() > bound {
            return Err(Error::numerical(format!(
                "simulation diverged: {} = {} at t = {t:.3} s ({})",
                STATE_NAMES[i],
                x[i],
                dump(x)
            )));
        }
    }
    Ok(())
}

/// Add zero-mean Gaussian noise with σ = frac·RMS(channel), clamped at zero.
pub fn synthesize_measurements(proxies: &[[f64; 2]], noise_sigma_frac: f64, seed: u64) -> Vec<[f64; 2]> {
    if proxies.is_empty() || noise_sigma_frac == 0.0 {
        return proxies.to_vec();
    }
    let n = proxies.len() as f64;
    let rms = [0, 1].map(|c| (proxies.iter().map(|p| p[c] * p[c]).sum::<f64>() / n).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    proxies
        .iter()
        .map(|p| {
            [0, 1].map(|c| {
                let e: f64 = StandardNormal.sample(&mut rng);
                (p[c] + noise_sigma_frac * rms[c] * e).max(0.0)
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Steady state

/// Residual of the driven dynamics with delayed inputs equal to current values.
fn steady_residual(x: &StateVector, mp_o2: f64, u: f64, params: &ModelParams) -> StateVector {
    let d = Delayed {
        c_a_o2: arterial_o2(x, params),
        p_a_co2: x[1],
    };
    derivative_with_drive(x, u, d, params, Some(mp_o2))
}

/// State implied by an alveolar CO2 pressure at equilibrium, plus the
/// controller mismatch at that state.
fn reduced_steady(x2: f64, mp: f64, u: f64, params: &ModelParams) -> (StateVector, f64) {
    let c = 1.0 - params.p_s;
    let x1 = params.p_i_o2() - (x2 - params.p_i_co2()) / params.rq;
    let x5 = params.lambda_conv * params.rq * mp / (x2 - params.p_i_co2());
    let mut x = StateVector::new(x1, x2, 0.0, 0.0, x5);
    let q = u * stroke_volume(crate::physio::metabolic_rates(&x, params).mp_o2, params);
    x[2] = ce_o2(x1, params) - mp / (q * c);
    x[3] = params.k4 * x2 + params.rq * mp / (q * c);
    let mismatch = params.g_co2 * x2 - params.g_o2 * arterial_o2(&x, params) + params.k1() - x5;
    (x, mismatch)
}

/// Initial guess from a bracketed one-dimensional reduction in P_A,CO2.
fn steady_seed(mp: f64, u: f64, params: &ModelParams) -> Option<StateVector> {
    let lo = params.p_i_co2() + 0.5;
    let hi = params.p_i_co2() + params.rq * params.p_i_o2() - 0.5;
    let n = 400;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let g = |x2: f64| reduced_steady(x2, mp, u, params).1;
    let mut best: Option<(f64, f64)> = None;
    for w in grid.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (mut ga, gb) = (g(a), g(b));
        if !(ga.is_finite() && gb.is_finite()) || ga.signum() == gb.signum() {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let gm = g(m);
            if gm.signum() == ga.signum() {
                a = m;
                ga = gm;
            } else {
                b = m;
            }
        }
        let root = 0.5 * (a + b);
        let dist = (root - params.p_a_co2_basal).abs();
        if best.is_none_or(|(_, d)| dist < d) {
            best = Some((root, dist));
        }
    }
    best.map(|(x2, _)| reduced_steady(x2, mp, u, params).0)
}

/// Equilibrium of the driven closed loop at constant O2 drive and heart rate,
/// by damped Newton iteration.
pub fn steady_state_solve(mp_o2: f64, u: f64, params: &ModelParams) -> Result<StateVector> {
    if !(mp_o2 >= 0.0) {
        return Err(Error::invalid(format!("metabolic drive must be non-negative, got {mp_o2}")));
    }
    if !(u > 0.0) {
        return Err(Error::invalid(format!("heart-rate input must be positive, got {u}")));
    }
    let tol = 1e-10;
    let basal = basal_state(params)?;
    if steady_residual(&basal, mp_o2, u, params).amax() < tol {
        return Ok(basal);
    }
    let mut x = steady_seed(mp_o2, u, params)
        .ok_or_else(|| Error::numerical(format!("no equilibrium bracketed for drive {mp_o2} L/s")))?;
    let mut r = steady_residual(&x, mp_o2, u, params);
    for _ in 0..200 {
        if r.amax() < tol {
            return Ok(x);
        }
        let jac = steady_jacobian(&x, mp_o2, u, params);
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(r.as_slice()))
            .ok_or_else(|| Error::numerical(format!("singular Jacobian at {}", dump(&x))))?;
        let step = StateVector::from_column_slice(step.as_slice());
        let mut lambda = 1.0;
        loop {
            let trial = x - step * lambda;
            let rt = steady_residual(&trial, mp_o2, u, params);
            if rt.norm() < r.norm() || lambda < 1e-6 {
                x = trial;
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if r.amax() < tol {
        Ok(x)
    } else {
        Err(Error::numerical(format!(
            "steady-state Newton did not converge in 200 iterations (residual {:e})",
            r.amax()
        )))
    }
}

fn steady_jacobian(x: &StateVector, mp: f64, u: f64, params: &ModelParams) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(5, 5);
    for c in 0..5 {
        let h = 1e-7 * x[c].abs().max(1e-3);
        let mut xp = *x;
        let mut xm = *x;
        xp[c] += h;
        xm[c] -= h;
        let col = (steady_residual(&xp, mp, u, params) - steady_residual(&xm, mp, u, params)) / (2.0 * h);
        j.set_column(c, &DVector::from_column_slice(col.as_slice()));
    }
    j
}

// ---------------------------------------------------------------------------
// Synthetic IMU

/// Pelvis speed relative to the thighs in the synthetic gait.
const PELVIS_SPEED_RATIO: f64 = 0.4;
/// Gait cycle frequency of the synthetic waveform, Hz.
const GAIT_HZ: f64 = 1.0;

/// Raw accelerations whose kinetic power follows a 1 Hz O2 drive.
///
/// Each one-second gait cycle has forward velocity V·sin(2πft), zero at the
/// cycle boundaries and zero-mean, so gravity removal leaves it intact and the
/// RMS speed V/√2 reproduces the drive through the kinetic-power equation.
pub fn synthesize_imu(
    drive_1hz: &[f64],
    profile: &SubjectProfile,
    rate: f64,
    noise_std: f64,
    seed: u64,
) -> Result<ImuTriplet> {
    let per_cycle = rate / GAIT_HZ;
    if per_cycle.fract() != 0.0 || per_cycle < 4.0 {
        return Err(Error::invalid("IMU rate must be an integer multiple of the 1 Hz gait"));
    }
    let (m_u, m_l, m_r) = profile.segment_masses();
    let r = PELVIS_SPEED_RATIO;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes: [Vec<[f64; 3]>; 3] = Default::default();
    let w = 2.0 * std::f64::consts::PI * GAIT_HZ;
    for (k, &mp) in drive_1hz.iter().enumerate() {
        let mu = profile.efficiency_at(k as f64);
        // E = 0.5·(M_U (rV)² + (M_L + M_R) V²)/2/μ/1000 solved for V
        let e = mp.max(0.0) * KJ_PER_LITRE_O2;
        let amp = (4000.0 * e * mu / (m_u * r * r + m_l + m_r)).sqrt();
        for i in 0..per_cycle as usize {
            let t = i as f64 / rate;
            let a = amp * w * (w * t).cos();
            for (j, scale) in [r, 1.0, 1.0].into_iter().enumerate() {
                let mut noise = [0.0; 3];
                for n in noise.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *n = noise_std * z;
                }
                axes[j].push([scale * a + noise[0], noise[1], 9.81 + noise[2]]);
            }
        }
    }
    let [p, l, rr] = axes;
    Ok(ImuTriplet {
        pelvis: Series3::new(0.0, rate, p, Unit::MetersPerSecond2)?,
        thigh_left: Series3::new(0.0, rate, l, Unit::MetersPerSecond2)?,
        thigh_right: Series3::new(0.0, rate, rr, Unit::MetersPerSecond2)?,
    })
}
