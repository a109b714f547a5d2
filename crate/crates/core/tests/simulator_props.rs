use pmekf::physio::{basal_state, metabolic_rates, process_derivative_driven, weir_paee, Delayed, ModelParams};
use pmekf::simulator::{
    simulate_forward, simulate_from, steady_state_solve, synthesize_imu, synthesize_measurements, Scenario, Segment,
};
use pmekf::{Intensity, SubjectProfile};
use proptest::prelude::*;

fn varied_scenario(seed: u64) -> Scenario {
    Scenario::new(
        vec![
            Segment::at(Intensity::Rest, 120.0),
            Segment::at(Intensity::Low, 200.0),
            Segment::at(Intensity::ModerateHigh, 200.0),
            Segment::at(Intensity::Rest, 100.0),
        ],
        0.1,
        seed,
    )
    .unwrap()
}

#[test]
fn all_rest_stays_basal() {
    let params = ModelParams::default();
    let out = simulate_forward(&Scenario::constant(Intensity::Rest, 600.0), &params, 0.01).unwrap();
    let basal = basal_state(&params).unwrap();
    for x in &out.states {
        assert!((x - basal).amax() < 1e-6);
    }
    assert!(out.paee.iter().all(|p| p.abs() < 1e-9));
}

#[test]
fn outputs_are_bit_identical_across_runs() {
    let params = ModelParams::default();
    let s = varied_scenario(17);
    let a = simulate_forward(&s, &params, 0.01).unwrap();
    let b = simulate_forward(&s, &params, 0.01).unwrap();
    assert_eq!(a, b);
    let za = synthesize_measurements(&a.proxies, 0.1, 17);
    let zb = synthesize_measurements(&b.proxies, 0.1, 17);
    assert_eq!(za, zb);
    let profile = SubjectProfile::default();
    let ia = synthesize_imu(&a.drive, &profile, 30.0, 0.02, 17).unwrap();
    let ib = synthesize_imu(&b.drive, &profile, 30.0, 0.02, 17).unwrap();
    assert_eq!(ia, ib);
}

/// First 1 Hz sample at which ventilation has left zero after an alveolar
/// CO2 step at t = 0.
fn controller_onset(params: &ModelParams) -> (f64, f64) {
    let mut x0 = basal_state(params).unwrap();
    x0[1] += 5.0;
    let s = Scenario::constant(Intensity::Rest, 40.0);
    let out = simulate_from(&s, params, 0.01, x0, params.basal_delayed()).unwrap();
    let onset = out.t[out.states.iter().position(|x| x[4] > 0.0).unwrap()];
    // ventilation is zero before the onset, so cardiac output sits on the stroke-volume floor
    let q = params.u_basal() * pmekf::physio::stroke_volume(0.0, params);
    (onset, params.k_t() / q)
}

#[test]
fn doubling_the_transport_constant_delays_the_controller() {
    let params = ModelParams::default();
    let mut slow = params.clone();
    slow.delay_basal_s *= 2.0;
    assert!((slow.k_t() - 2.0 * params.k_t()).abs() < 1e-12);
    let (t1, delay1) = controller_onset(&params);
    let (t2, delay2) = controller_onset(&slow);
    assert!(t1 > delay1 && t1 <= delay1 + 1.0, "{t1} vs {delay1}");
    let predicted = delay2 - delay1;
    assert!(((t2 - t1) - predicted).abs() <= 1.0, "shift {} vs {predicted}", t2 - t1);
}

#[test]
fn divergence_names_the_offending_state() {
    let params = ModelParams::default();
    let mut x0 = basal_state(&params).unwrap();
    x0[0] = 5000.0;
    let err = simulate_from(&Scenario::constant(Intensity::Rest, 5.0), &params, 0.01, x0, params.basal_delayed())
        .unwrap_err()
        .to_string();
    assert!(err.contains("P_A_O2"), "{err}");
}

#[test]
fn step_size_must_divide_a_second() {
    let params = ModelParams::default();
    let s = Scenario::constant(Intensity::Rest, 5.0);
    assert!(simulate_forward(&s, &params, 0.02).is_err());
    assert!(simulate_forward(&s, &params, 0.003).is_err());
}

#[test]
fn zero_drive_steady_state_is_basal() {
    let params = ModelParams::default();
    let x = steady_state_solve(0.0, params.u_basal(), &params).unwrap();
    assert!((x - basal_state(&params).unwrap()).amax() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn steady_state_is_a_fixed_point(mp in 0.004f64..0.04, hr in 90.0f64..170.0) {
        let params = ModelParams::default();
        let x = steady_state_solve(mp, hr / 60.0, &params).unwrap();
        let d = Delayed { c_a_o2: pmekf::physio::arterial_o2(&x, &params), p_a_co2: x[1] };
        let r = process_derivative_driven(&x, hr / 60.0, d, &params, mp).unwrap();
        prop_assert!(r.amax() < 1e-10);
    }

    #[test]
    fn steady_state_energy_rises_with_drive(a in 0.004f64..0.04, b in 0.004f64..0.04, hr in 100.0f64..160.0) {
        prop_assume!((a - b).abs() > 1e-4);
        let params = ModelParams::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let energy = |mp: f64| {
            let r = metabolic_rates(&steady_state_solve(mp, hr / 60.0, &params).unwrap(), &params);
            weir_paee(r.mp_o2, r.mp_co2)
        };
        prop_assert!(energy(hi) > energy(lo));
    }

    #[test]
    fn noise_is_non_negative_and_seeded(seed in 0u64..10_000, frac in 0.0f64..0.5) {
        let clean: Vec<[f64; 2]> = (0..200).map(|k| [0.01 + 1e-4 * k as f64, 0.008]).collect();
        let a = synthesize_measurements(&clean, frac, seed);
        prop_assert_eq!(&a, &synthesize_measurements(&clean, frac, seed));
        prop_assert!(a.iter().flatten().all(|v| *v >= 0.0));
    }
}
