//! Five-state cardiorespiratory gas-exchange model: dynamics, measurement,
//! transport delay and the Weir energy readout.

use std::collections::VecDeque;

use nalgebra::Vector5;

use crate::error::{Error, Result};

/// `[P_A,O2 (mmHg), P_A,CO2 (mmHg), C_v,O2 (L/L), C_v,CO2 (L/L), VT_A (L/s)]`.
pub type StateVector = Vector5<f64>;

/// Upper bounds of the admissible state box (VT_A is unbounded above).
pub const STATE_UPPER: [f64; 5] = [200.0, 100.0, 1.0, 1.0, f64::INFINITY];
pub const STATE_NAMES: [&str; 5] = ["P_A_O2", "P_A_CO2", "C_v_O2", "C_v_CO2", "VT_A"];

/// Approximate healthy-adult ranges `(low, high)` per state for an active
/// intensity class; `None` for rest.
pub fn reference_bands(intensity: crate::types::Intensity) -> Option<[(f64, f64); 5]> {
    use crate::types::Intensity::*;
    match intensity {
        Rest => None,
        Low => Some([(90.0, 110.0), (38.0, 45.0), (0.13, 0.16), (0.58, 0.64), (0.04, 0.12)]),
        Moderate => Some([(95.0, 120.0), (34.0, 42.0), (0.10, 0.14), (0.62, 0.70), (0.15, 0.40)]),
        ModerateHigh => Some([(100.0, 130.0), (30.0, 38.0), (0.07, 0.12), (0.65, 0.75), (0.30, 0.80)]),
    }
}

/// Physiological constants. `Default` is the calibrated set used throughout;
/// [`ModelParams::textbook`] keeps the uncalibrated reference values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Alveolar gas volume, L.
    pub v_a: f64,
    /// Skeletal muscle mass, kg (sets the tissue volume).
    pub m_sm: f64,
    /// Muscle density, kg/m³.
    pub rho: f64,
    pub p_s: f64,
    pub rq: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub g_o2: f64,
    pub g_co2: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub lambda_conv: f64,
    pub p_atm: f64,
    pub p_h2o: f64,
    pub f_i_o2: f64,
    pub f_i_co2: f64,
    pub c_a_o2_basal: f64,
    pub p_a_co2_basal: f64,
    pub hr_basal: f64,
    pub mp_o2_floor: f64,
    pub sv_min: f64,
    pub sv_max: f64,
    /// Transport delay at basal cardiac output, s.
    pub delay_basal_s: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            k3: 0.12,
            k4: 0.015,
            g_o2: 340.0,
            g_co2: 0.013,
            c_a_o2_basal: 0.199,
            ..Self::textbook()
        }
    }
}

/// Keys accepted by [`ModelParams::set`].
pub const PARAM_KEYS: [&str; 25] = [
    "v_a", "m_sm", "rho", "p_s", "rq", "lambda1", "lambda2", "tau", "g_o2", "g_co2", "k2", "k3", "k4",
    "lambda_conv", "p_atm", "p_h2o", "f_i_o2", "f_i_co2", "c_a_o2_basal", "p_a_co2_basal", "hr_basal",
    "mp_o2_floor", "sv_min", "sv_max", "delay_basal_s",
];

impl ModelParams {
    /// Uncalibrated textbook constants.
    pub fn textbook() -> Self {
        Self {
            v_a: 3.0,
            m_sm: 30.0,
            rho: 1060.0,
            p_s: 0.024,
            rq: 0.8,
            lambda1: 0.02,
            lambda2: 0.08975,
            tau: 1.0,
            g_o2: 30.0,
            g_co2: 0.12,
            k2: 0.2,
            k3: 0.046,
            k4: 0.012,
            lambda_conv: 863.0,
            p_atm: 760.0,
            p_h2o: 47.0,
            f_i_o2: 0.2094,
            f_i_co2: 0.0004,
            c_a_o2_basal: 0.197,
            p_a_co2_basal: 40.0,
            hr_basal: 70.0,
            mp_o2_floor: 0.25 / 60.0,
            sv_min: 0.04,
            sv_max: 0.20,
            delay_basal_s: 6.0,
        }
    }

    fn field_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "v_a" => &mut self.v_a,
            "m_sm" => &mut self.m_sm,
            "rho" => &mut self.rho,
            "p_s" => &mut self.p_s,
            "rq" => &mut self.rq,
            "lambda1" => &mut self.lambda1,
            "lambda2" => &mut self.lambda2,
            "tau" => &mut self.tau,
            "g_o2" => &mut self.g_o2,
            "g_co2" => &mut self.g_co2,
            "k2" => &mut self.k2,
            "k3" => &mut self.k3,
            "k4" => &mut self.k4,
            "lambda_conv" => &mut self.lambda_conv,
            "p_atm" => &mut self.p_atm,
            "p_h2o" => &mut self.p_h2o,
            "f_i_o2" => &mut self.f_i_o2,
            "f_i_co2" => &mut self.f_i_co2,
            "c_a_o2_basal" => &mut self.c_a_o2_basal,
            "p_a_co2_basal" => &mut self.p_a_co2_basal,
            "hr_basal" => &mut self.hr_basal,
            "mp_o2_floor" => &mut self.mp_o2_floor,
            "sv_min" => &mut self.sv_min,
            "sv_max" => &mut self.sv_max,
            "delay_basal_s" => &mut self.delay_basal_s,
            _ => return None,
        })
    }

    /// Set a parameter by name; unknown names are an error.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        match self.field_mut(key) {
            Some(f) => {
                *f = value;
                Ok(())
            }
            None => Err(Error::invalid(format!("unknown model parameter '{key}'"))),
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.clone().field_mut(key).map(|v| *v)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_a", self.v_a),
            ("m_sm", self.m_sm),
            ("rho", self.rho),
            ("tau", self.tau),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("mp_o2_floor", self.mp_o2_floor),
            ("hr_basal", self.hr_basal),
            ("lambda_conv", self.lambda_conv),
            ("delay_basal_s", self.delay_basal_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p_s > 0.0 && self.p_s < 1.0) {
            return Err(Error::invalid(format!("p_s must lie in (0, 1), got {}", self.p_s)));
        }
        if !(self.p_h2o < self.p_atm) {
            return Err(Error::invalid("p_h2o must be below p_atm"));
        }
        if !(self.sv_min > 0.0 && self.sv_min < self.sv_max) {
            return Err(Error::invalid("stroke-volume clamp must satisfy 0 < sv_min < sv_max"));
        }
        Ok(())
    }

    /// Tissue volume in litres.
    pub fn v_t(&self) -> f64 {
        1000.0 * self.m_sm / self.rho
    }

    /// Dry inspired pressure P_atm − P_H2O.
    pub fn p_dry(&self) -> f64 {
        self.p_atm - self.p_h2o
    }

    pub fn p_i_o2(&self) -> f64 {
        self.f_i_o2 * self.p_dry()
    }

    pub fn p_i_co2(&self) -> f64 {
        self.f_i_co2 * self.p_dry()
    }

    /// BTPS to STPD conversion factor.
    pub fn b_factor(&self) -> f64 {
        self.p_dry() / self.p_atm * 273.0 / 310.0
    }

    /// Controller offset that puts VT_A at zero in basal conditions.
    pub fn k1(&self) -> f64 {
        controller_k1(self)
    }

    pub fn q_basal(&self) -> f64 {
        self.hr_basal / 60.0 * self.lambda2
    }

    /// Transport-delay constant giving `delay_basal_s` of delay at basal
    /// cardiac output.
    pub fn k_t(&self) -> f64 {
        self.delay_basal_s * self.q_basal()
    }

    pub fn u_basal(&self) -> f64 {
        self.hr_basal / 60.0
    }

    /// Basal delayed inputs.
    pub fn basal_delayed(&self) -> Delayed {
        Delayed {
            c_a_o2: self.c_a_o2_basal,
            p_a_co2: self.p_a_co2_basal,
        }
    }
}

/// Delayed controller inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delayed {
    pub c_a_o2: f64,
    pub p_a_co2: f64,
}

/// O2 dissociation curve K2·(1 − e^{−K3·P})².
pub fn dissociation_o2(p: f64, params: &ModelParams) -> Result<f64> {
    if p < 0.0 {
        return Err(Error::invalid(format!("negative partial pressure {p}")));
    }
    Ok(ce_o2(p, params))
}

/// CO2 dissociation line K4·P.
pub fn dissociation_co2(p: f64, params: &ModelParams) -> Result<f64> {
    if p < 0.0 {
        return Err(Error::invalid(format!("negative partial pressure {p}")));
    }
    Ok(params.k4 * p)
}

#[inline]
pub(crate) fn ce_o2(p: f64, params: &ModelParams) -> f64 {
    let s = 1.0 - (-params.k3 * p).exp();
    params.k2 * s * s
}

/// Inverse of the O2 dissociation curve on (0, K2).
pub fn dissociation_o2_inverse(c: f64, params: &ModelParams) -> Result<f64> {
    if !(c >= 0.0 && c < params.k2) {
        return Err(Error::invalid(format!("O2 content {c} outside [0, K2)")));
    }
    Ok(-(1.0 - (c / params.k2).sqrt()).ln() / params.k3)
}

/// Arterial content by the shunt equation.
pub fn arterial_shunt(c_e: f64, c_v: f64, params: &ModelParams) -> f64 {
    (1.0 - params.p_s) * c_e + params.p_s * c_v
}

/// Logarithmic stroke volume, floored and clamped.
pub fn stroke_volume(mp_o2: f64, params: &ModelParams) -> f64 {
    let sv = params.lambda1 * (60.0 * mp_o2.max(params.mp_o2_floor)).ln() + params.lambda2;
    sv.clamp(params.sv_min, params.sv_max)
}

pub fn cardiac_output(u: f64, sv: f64) -> f64 {
    u * sv
}

pub fn controller_k1(params: &ModelParams) -> f64 {
    params.g_o2 * params.c_a_o2_basal - params.g_co2 * params.p_a_co2_basal
}

/// Ventilation-derived gas rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetabolicRates {
    pub mp_o2: f64,
    pub mp_co2: f64,
    pub vt_o2: f64,
    pub vt_co2: f64,
}

/// Alveolar gas equation with the BTPS to STPD conversion.
pub fn metabolic_rates(x: &StateVector, params: &ModelParams) -> MetabolicRates {
    let d = params.p_dry();
    let vt_o2 = x[4] * (params.f_i_o2 - x[0] / d);
    let vt_co2 = -x[4] * (params.f_i_co2 - x[1] / d);
    let b = params.b_factor();
    MetabolicRates {
        mp_o2: b * vt_o2,
        mp_co2: b * vt_co2,
        vt_o2,
        vt_co2,
    }
}

/// Full set of intermediate quantities at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasExchangeOutput {
    pub mp_o2: f64,
    pub mp_co2: f64,
    pub vt_o2: f64,
    pub vt_co2: f64,
    pub sv: f64,
    pub q: f64,
    pub e_pa: f64,
}

pub fn gas_exchange(x: &StateVector, u: f64, params: &ModelParams) -> GasExchangeOutput {
    let r = metabolic_rates(x, params);
    let sv = stroke_volume(r.mp_o2, params);
    GasExchangeOutput {
        mp_o2: r.mp_o2,
        mp_co2: r.mp_co2,
        vt_o2: r.vt_o2,
        vt_co2: r.vt_co2,
        sv,
        q: cardiac_output(u, sv),
        e_pa: weir_paee(r.mp_o2, r.mp_co2),
    }
}

/// Cardiac output implied by the state and heart-rate input.
pub fn state_cardiac_output(x: &StateVector, u: f64, params: &ModelParams) -> f64 {
    cardiac_output(u, stroke_volume(metabolic_rates(x, params).mp_o2, params))
}

/// Arterial O2 content at a state.
pub fn arterial_o2(x: &StateVector, params: &ModelParams) -> f64 {
    arterial_shunt(ce_o2(x[0], params), x[2], params)
}

/// Weir energy expenditure in kcal/s, clamped at zero.
pub fn weir_paee(mp_o2: f64, mp_co2: f64) -> f64 {
    (3.9 * mp_o2 + 1.1 * mp_co2).max(0.0)
}

/// PAEE readout of a state.
pub fn state_paee(x: &StateVector, params: &ModelParams) -> f64 {
    let r = metabolic_rates(x, params);
    weir_paee(r.mp_o2, r.mp_co2)
}

/// Process dynamics.
pub fn process_derivative(
    x: &StateVector,
    u: f64,
    delayed: Delayed,
    params: &ModelParams,
) -> Result<StateVector> {
    checked(derivative_with_drive(x, u, delayed, params, None), x, "process derivative")
}

/// Dynamics with an optional exogenous O2 consumption replacing MP_O2 in the
/// venous balances (CO2 production follows at RQ). Stroke volume always uses
/// the ventilation-derived MP_O2.
pub fn process_derivative_driven(
    x: &StateVector,
    u: f64,
    delayed: Delayed,
    params: &ModelParams,
    drive: f64,
) -> Result<StateVector> {
    checked(derivative_with_drive(x, u, delayed, params, Some(drive)), x, "process derivative")
}

pub(crate) fn checked(v: StateVector, x: &StateVector, what: &str) -> Result<StateVector> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::numerical(format!("{what} produced NaN at state {}", dump(x))))
    }
}

pub(crate) fn dump(x: &StateVector) -> String {
    let parts: Vec<String> = STATE_NAMES
        .iter()
        .zip(x.iter())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    parts.join(", ")
}

#[inline]
pub(crate) fn derivative_with_drive(
    x: &StateVector,
    u: f64,
    delayed: Delayed,
    params: &ModelParams,
    drive: Option<f64>,
) -> StateVector {
    let c_e_o2 = ce_o2(x[0], params);
    let c_e_co2 = params.k4 * x[1];
    let c_a_o2 = arterial_shunt(c_e_o2, x[2], params);
    let c_a_co2 = arterial_shunt(c_e_co2, x[3], params);
    let rates = metabolic_rates(x, params);
    let q = cardiac_output(u, stroke_volume(rates.mp_o2, params));
    let (mp_o2, mp_co2) = match drive {
        Some(d) => (d, params.rq * d),
        None => (rates.mp_o2, rates.mp_co2),
    };
    let perf = params.lambda_conv * q * (1.0 - params.p_s);
    let v_t = params.v_t();
    StateVector::new(
        (x[4] * (params.p_i_o2() - x[0]) + perf * (x[2] - c_e_o2)) / params.v_a,
        (x[4] * (params.p_i_co2() - x[1]) + perf * (x[3] - c_e_co2)) / params.v_a,
        (q * (c_a_o2 - x[2]) - mp_o2) / v_t,
        (q * (c_a_co2 - x[3]) + mp_co2) / v_t,
        (-params.g_o2 * delayed.c_a_o2 + params.g_co2 * delayed.p_a_co2 + params.k1() - x[4]) / params.tau,
    )
}

/// Alveolar-capillary fluxes (O2 uptake, CO2 release) in L/s.
pub fn measurement(x: &StateVector, u: f64, params: &ModelParams) -> [f64; 2] {
    let q = state_cardiac_output(x, u, params);
    let g = q * (1.0 - params.p_s);
    [g * (ce_o2(x[0], params) - x[2]), g * (x[3] - params.k4 * x[1])]
}

/// Basal state: no ventilation, arterial O2 content at its basal value and
/// gases in equilibrium with blood.
pub fn basal_state(params: &ModelParams) -> Result<StateVector> {
    let c0 = params.c_a_o2_basal;
    let p0 = params.p_a_co2_basal;
    Ok(StateVector::new(
        dissociation_o2_inverse(c0, params)?,
        p0,
        c0,
        params.k4 * p0,
        0.0,
    ))
}

/// Clamp a state into the admissible box.
pub fn clamp_state(x: &mut StateVector) {
    for i in 0..5 {
        x[i] = x[i].clamp(0.0, STATE_UPPER[i]);
    }
}

// ---------------------------------------------------------------------------
// Transport delay

/// Ring of past (t, C_a,O2, P_A,CO2) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBuffer {
    samples: VecDeque<(f64, f64, f64)>,
    capacity: usize,
    pre_history: Delayed,
}

impl DelayBuffer {
    /// Buffer whose pre-history is `pre_history`; `capacity` ≥ 60 samples.
    pub fn new(capacity: usize, pre_history: Delayed) -> Self {
        let capacity = capacity.max(60);
        Self {
            samples: VecDeque::with_capacity(capacity),
            capacity,
            pre_history,
        }
    }

    pub fn basal(params: &ModelParams) -> Self {
        Self::new(120, params.basal_delayed())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn newest_time(&self) -> Option<f64> {
        self.samples.back().map(|s| s.0)
    }

    /// Append a sample; timestamps must be strictly increasing.
    pub fn push(&mut self, t: f64, c_a_o2: f64, p_a_co2: f64) -> Result<()> {
        if let Some(last) = self.newest_time() {
            if !(t > last) {
                return Err(Error::invalid(format!("buffer time {t} not after {last}")));
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((t, c_a_o2, p_a_co2));
        Ok(())
    }

    /// Linear interpolation at `t`; pre-history before the first sample and
    /// the newest sample beyond the last one.
    pub fn lookup(&self, t: f64) -> Delayed {
        let (Some(first), Some(last)) = (self.samples.front(), self.samples.back()) else {
            return self.pre_history;
        };
        if t < first.0 {
            return self.pre_history;
        }
        if t >= last.0 {
            return Delayed {
                c_a_o2: last.1,
                p_a_co2: last.2,
            };
        }
        let i = self.samples.partition_point(|s| s.0 <= t);
        let (a, b) = (self.samples[i - 1], self.samples[i]);
        let f = (t - a.0) / (b.0 - a.0);
        Delayed {
            c_a_o2: a.1 + f * (b.1 - a.1),
            p_a_co2: a.2 + f * (b.2 - a.2),
        }
    }
}

/// Delay T = K_T/Q; returns the delayed controller inputs at t − T.
pub fn transport_delay(buffer: &DelayBuffer, t: f64, q: f64, params: &ModelParams) -> Result<Delayed> {
    if !(q > 0.0) {
        return Err(Error::invalid(format!("cardiac output must be positive, got {q}")));
    }
    Ok(buffer.lookup(t - params.k_t() / q))
}
