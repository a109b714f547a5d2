//! Discrete-time extended Kalman filter over the gas-exchange model.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x5, Matrix5, Matrix5x2, Vector2, Vector5};

use crate::error::{Error, Result};
use crate::physio::{
    arterial_o2, basal_state, clamp_state, derivative_with_drive, dump, measurement, state_cardiac_output,
    state_paee, transport_delay, Delayed, DelayBuffer, ModelParams, StateVector,
};

/// Measurement-noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementNoise {
    /// Fixed diagonal variances.
    Fixed([f64; 2]),
    /// σ = `frac`·(exponentially weighted RMS of the O2 proxy over
    /// `window_s`, floored at `floor`); R = diag(σ², (0.8σ)²).
    Adaptive { frac: f64, window_s: f64, floor: f64 },
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        MeasurementNoise::Adaptive {
            frac: 0.1,
            window_s: 60.0,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub dt: f64,
    pub substeps: usize,
    /// Diagonal of the process-noise covariance.
    pub q_proc: Vector5<f64>,
    pub r_meas: MeasurementNoise,
    /// Initial state; `None` starts from the basal state.
    pub x0: Option<StateVector>,
    /// Initial covariance; `None` uses 10·Q_proc.
    pub p0: Option<Matrix5<f64>>,
    pub jacobian_step: f64,
    /// When set, the heart-rate input is replaced by this constant (bpm).
    pub constant_hr_bpm: Option<f64>,
    /// Updates whose innovation covariance exceeds this condition number are skipped.
    pub cond_limit: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            substeps: 10,
            q_proc: Vector5::new(1e-2, 1e-2, 1e-6, 1e-6, 1e-4),
            r_meas: MeasurementNoise::default(),
            x0: None,
            p0: None,
            jacobian_step: 1e-6,
            constant_hr_bpm: None,
            cond_limit: 1e12,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be at least 1"));
        }
        if self.q_proc.iter().any(|q| !(*q >= 0.0)) {
            return Err(Error::invalid("process noise must be non-negative"));
        }
        match self.r_meas {
            MeasurementNoise::Fixed(r) if r.iter().any(|v| !(*v >= 0.0)) => {
                return Err(Error::invalid("measurement noise must be non-negative"))
            }
            MeasurementNoise::Adaptive { frac, window_s, floor }
                if !(frac > 0.0 && window_s > 0.0 && floor > 0.0) =>
            {
                return Err(Error::invalid("adaptive noise parameters must be positive"))
            }
            _ => {}
        }
        if let Some(p0) = &self.p0 {
            check_psd(p0, "P0")?;
        }
        if !(self.jacobian_step > 0.0) {
            return Err(Error::invalid("jacobian_step must be positive"));
        }
        Ok(())
    }

    pub fn initial_covariance(&self) -> Matrix5<f64> {
        self.p0.unwrap_or_else(|| Matrix5::from_diagonal(&(self.q_proc * 10.0)))
    }
}

fn check_psd(m: &Matrix5<f64>, name: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 {
        return Err(Error::invalid(format!("{name} must be symmetric")));
    }
    if m.symmetric_eigenvalues().iter().any(|e| *e < -1e-12) {
        return Err(Error::invalid(format!("{name} must be positive semi-definite")));
    }
    Ok(())
}

/// Enable the constant-heart-rate protocol (70 bpm).
pub fn constant_hr_mode(cfg: &FilterConfig) -> FilterConfig {
    FilterConfig {
        constant_hr_bpm: Some(70.0),
        ..cfg.clone()
    }
}

/// Heart-rate input actually fed to the filter.
pub fn effective_inputs(u_series: &[f64], cfg: &FilterConfig) -> Vec<f64> {
    match cfg.constant_hr_bpm {
        Some(bpm) => vec![bpm / 60.0; u_series.len()],
        None => u_series.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// Jacobians

/// Central-difference Jacobian with step h = step·max(|x_j|, 1).
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let y0 = f(x);
    let mut jac = DMatrix::zeros(y0.len(), x.len());
    for j in 0..x.len() {
        let h = step * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite function value perturbing coordinate {j}")));
        }
        jac.set_column(j, &col);
    }
    Ok(jac)
}

fn jacobian5<const R: usize, F>(f: F, x: &StateVector, step: f64) -> Result<nalgebra::SMatrix<f64, R, 5>>
where
    F: Fn(&StateVector) -> nalgebra::SVector<f64, R>,
{
    let mut jac = nalgebra::SMatrix::<f64, R, 5>::zeros();
    for j in 0..5 {
        let h = step * x[j].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite Jacobian column {j} at {}", dump(x))));
        }
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Jacobian of the process dynamics with delayed inputs held fixed.
pub fn process_jacobian(
    x: &StateVector,
    u: f64,
    delayed: Delayed,
    params: &ModelParams,
    step: f64,
) -> Result<Matrix5<f64>> {
    jacobian5(|y| derivative_with_drive(y, u, delayed, params, None), x, step)
}

/// Jacobian of the measurement function.
pub fn measurement_jacobian(x: &StateVector, u: f64, params: &ModelParams, step: f64) -> Result<Matrix2x5<f64>> {
    jacobian5(|y| Vector2::from(measurement(y, u, params)), x, step)
}

// ---------------------------------------------------------------------------
// Predict / update

/// Euler propagation over `dt` with delayed inputs frozen, plus covariance
/// propagation with F = I + dt·J at the pre-step state.
pub fn predict(
    x: &StateVector,
    p: &Matrix5<f64>,
    u: f64,
    delayed: Delayed,
    cfg: &FilterConfig,
    params: &ModelParams,
) -> Result<(StateVector, Matrix5<f64>)> {
    let h = cfg.dt / cfg.substeps as f64;
    let mut xm = *x;
    for s in 0..cfg.substeps {
        let d = derivative_with_drive(&xm, u, delayed, params, None);
        xm += d * h;
        xm[4] = xm[4].max(0.0);
        if xm.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "prediction produced NaN at sub-step {s} from {}",
                dump(x)
            )));
        }
    }
    let f = Matrix5::identity() + process_jacobian(x, u, delayed, params, cfg.jacobian_step)? * cfg.dt;
    let pm = f * p * f.transpose() + Matrix5::from_diagonal(&cfg.q_proc);
    Ok((xm, symmetrize(&pm)))
}

fn symmetrize<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> nalgebra::SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Result of a generic Kalman correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub dx: DVector<f64>,
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Kalman correction for any dimension; `None` when the innovation
/// covariance is too ill-conditioned.
pub fn kalman_correct(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    innovation: &DVector<f64>,
    cond_limit: f64,
) -> Option<Correction> {
    let s = h * p * h.transpose() + r;
    let sv = s.clone().singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(min > 0.0) || max / min > cond_limit {
        return None;
    }
    let s_inv = s.try_inverse()?;
    let gain = p * h.transpose() * s_inv;
    let i_kh = DMatrix::identity(p.nrows(), p.ncols()) - &gain * h;
    let joseph = &i_kh * p * i_kh.transpose() + &gain * r * gain.transpose();
    let p_post = (&joseph + joseph.transpose()) * 0.5;
    Some(Correction {
        dx: &gain * innovation,
        p: p_post,
        gain,
    })
}

/// Outcome of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub x: StateVector,
    pub p: Matrix5<f64>,
    pub innovation: [f64; 2],
    /// True when the update was skipped for conditioning.
    pub skipped: bool,
}

/// EKF correction with the proxies `z` and measurement covariance `r`.
pub fn update(
    xm: &StateVector,
    pm: &Matrix5<f64>,
    z: [f64; 2],
    u: f64,
    r: &Matrix2<f64>,
    cfg: &FilterConfig,
    params: &ModelParams,
) -> Result<UpdateOutcome> {
    let h = measurement_jacobian(xm, u, params, cfg.jacobian_step)?;
    let pred = measurement(xm, u, params);
    let innovation = [z[0] - pred[0], z[1] - pred[1]];
    let s = h * pm * h.transpose() + r;
    let sv = s.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let inverse = if min > 0.0 && max / min <= cfg.cond_limit {
        s.try_inverse()
    } else {
        None
    };
    let Some(s_inv) = inverse else {
        return Ok(UpdateOutcome {
            x: *xm,
            p: *pm,
            innovation,
            skipped: true,
        });
    };
    let k: Matrix5x2<f64> = pm * h.transpose() * s_inv;
    let mut x = xm + k * Vector2::from(innovation);
    clamp_state(&mut x);
    let i_kh = Matrix5::identity() - k * h;
    let p = symmetrize(&(i_kh * pm * i_kh.transpose() + k * r * k.transpose()));
    Ok(UpdateOutcome {
        x,
        p,
        innovation,
        skipped: false,
    })
}

// ---------------------------------------------------------------------------
// Recursive filter

/// Stateful filter instance for one session.
#[derive(Debug, Clone)]
pub struct Ekf<'a> {
    params: &'a ModelParams,
    cfg: FilterConfig,
    x: StateVector,
    p: Matrix5<f64>,
    buffer: DelayBuffer,
    mean_sq: Option<f64>,
    t: f64,
}

impl<'a> Ekf<'a> {
    pub fn new(cfg: FilterConfig, params: &'a ModelParams) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let x = match cfg.x0 {
            Some(x) => x,
            None => basal_state(params)?,
        };
        let p = cfg.initial_covariance();
        Ok(Self {
            params,
            cfg,
            x,
            p,
            buffer: DelayBuffer::basal(params),
            mean_sq: None,
            t: 0.0,
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.x
    }

    pub fn covariance(&self) -> &Matrix5<f64> {
        &self.p
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Propagate from the current time to the next sample with input `u`.
    pub fn predict(&mut self, u: f64) -> Result<()> {
        let q = state_cardiac_output(&self.x, u, self.params);
        let delayed = transport_delay(&self.buffer, self.t, q, self.params)?;
        let (x, p) = predict(&self.x, &self.p, u, delayed, &self.cfg, self.params)?;
        self.x = x;
        self.p = p;
        self.t += self.cfg.dt;
        Ok(())
    }

    /// Measurement covariance for the next update, advancing the running RMS.
    fn measurement_covariance(&mut self, z: [f64; 2]) -> Matrix2<f64> {
        match self.cfg.r_meas {
            MeasurementNoise::Fixed(r) => Matrix2::new(r[0], 0.0, 0.0, r[1]),
            MeasurementNoise::Adaptive { frac, window_s, floor } => {
                let alpha = (self.cfg.dt / window_s).min(1.0);
                let z2 = z[0] * z[0];
                let m = match self.mean_sq {
                    Some(m) => (1.0 - alpha) * m + alpha * z2,
                    None => z2,
                };
                self.mean_sq = Some(m);
                let sigma = frac * m.sqrt().max(floor);
                Matrix2::new(sigma * sigma, 0.0, 0.0, (0.8 * sigma).powi(2))
            }
        }
    }

    /// Correct with the proxies observed at the current time.
    pub fn update(&mut self, z: [f64; 2], u: f64) -> Result<UpdateOutcome> {
        let r = self.measurement_covariance(z);
        let out = update(&self.x, &self.p, z, u, &r, &self.cfg, self.params)?;
        self.x = out.x;
        self.p = out.p;
        Ok(out)
    }

    /// Record the current posterior in the delay buffer.
    pub fn commit(&mut self) -> Result<()> {
        let ca = arterial_o2(&self.x, self.params);
        self.buffer.push(self.t, ca, self.x[1])
    }
}

/// Posterior trajectory and readout.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub t: Vec<f64>,
    pub states: Vec<StateVector>,
    pub cov_diag: Vec<[f64; 5]>,
    pub innovations: Vec<[f64; 2]>,
    /// PAEE in kcal/s.
    pub paee: Vec<f64>,
    /// Half-width 1.96·σ per state.
    pub ci95: Vec<[f64; 5]>,
    /// Sample indices whose update was skipped.
    pub skipped_updates: Vec<usize>,
}

/// Run predict/update over aligned 1 Hz input and proxy series.
pub fn run_filter(
    u_series: &[f64],
    z_series: &[[f64; 2]],
    cfg: &FilterConfig,
    params: &ModelParams,
) -> Result<FilterOutput> {
    if u_series.len() != z_series.len() {
        return Err(Error::invalid(format!(
            "input length {} does not match proxy length {}",
            u_series.len(),
            z_series.len()
        )));
    }
    let u = effective_inputs(u_series, cfg);
    let n = u.len();
    let mut ekf = Ekf::new(cfg.clone(), params)?;
    let mut out = FilterOutput {
        t: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        cov_diag: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
        paee: Vec::with_capacity(n),
        ci95: Vec::with_capacity(n),
        skipped_updates: Vec::new(),
    };
    for k in 0..n {
        if k > 0 {
            ekf.predict(u[k - 1])?;
        }
        let res = ekf.update(z_series[k], u[k])?;
        if res.skipped {
            out.skipped_updates.push(k);
        }
        ekf.commit()?;
        let diag: [f64; 5] = std::array::from_fn(|i| ekf.p[(i, i)].max(0.0));
        out.t.push(ekf.t);
        out.states.push(ekf.x);
        out.cov_diag.push(diag);
        out.ci95.push(diag.map(|v| 1.96 * v.sqrt()));
        out.innovations.push(res.innovation);
        out.paee.push(state_paee(&ekf.x, params));
    }
    Ok(out)
}
