use std::f64::consts::PI;

use neuroloop::env::{grouped_bands, Action, SubjectEnv, SubjectProfile, NUM_ACTIONS};
use neuroloop::labels::{SeasonState, SUM_TOLERANCE};
use neuroloop::session::{MAX_BPM, MIN_BPM};
use neuroloop::signal::{loop_duration_seconds, SAMPLES_PER_LOOP};
use proptest::prelude::*;

fn quiet() -> SubjectProfile {
    SubjectProfile {
        noise_scale: 0.0,
        ..SubjectProfile::default()
    }
}

fn season() -> impl Strategy<Value = SeasonState> {
    (0usize..4).prop_map(|i| SeasonState::ALL[i])
}

fn actions(max: usize) -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec(
        (0..NUM_ACTIONS).prop_map(|i| Action::from_index(i).unwrap()),
        0..max,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn steps_keep_everything_valid(
        initial in season(),
        target in season(),
        seed in any::<u64>(),
        noise in 0.0f64..0.5,
        acts in actions(40),
    ) {
        let profile = SubjectProfile { noise_scale: noise, ..SubjectProfile::default() };
        let (lo, hi) = (profile.min_density, profile.max_density);
        let mut env = SubjectEnv::new(profile).unwrap();
        env.reset(initial, target, seed);
        for a in acts {
            let obs = env.step(a).unwrap();
            let s = &obs.state;
            let sum: f64 = s.label.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
            prop_assert!(s.label.weights().iter().all(|w| (0.0..=1.0).contains(w)));
            prop_assert!((MIN_BPM..=MAX_BPM).contains(&s.bpm) && s.bpm % 5 == 0);
            prop_assert!((lo..=hi).contains(&s.density));
            prop_assert!((0.0..=100.0).contains(&s.attention) && (0.0..=100.0).contains(&s.meditation));
            prop_assert_eq!(obs.loops.len(), 4);
            for l in &obs.loops {
                prop_assert_eq!(l.validate(), Ok(()));
                prop_assert_eq!(l.bpm, s.bpm);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory(initial in season(), target in season(), seed in any::<u64>(), acts in actions(12)) {
        let run = || {
            let mut env = SubjectEnv::new(SubjectProfile::default()).unwrap();
            let mut out = vec![env.reset(initial, target, seed)];
            for &a in &acts {
                out.push(env.step(a).unwrap());
                env.user_feedback();
            }
            out
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn converges_monotonically_at_preference() {
    let profile = quiet();
    for goal in SeasonState::ALL {
        let pref = profile.season(goal).clone();
        for initial in SeasonState::ALL {
            let mut env = SubjectEnv::new(profile.clone()).unwrap();
            env.reset_at(
                initial,
                goal,
                pref.preferred_bpm,
                pref.preferred_density,
                0,
                9,
            );
            let mut w = env.state().label.weight(goal);
            let mut steps = 0;
            while w < 1.0 - 1e-9 {
                env.hold().unwrap();
                let next = env.state().label.weight(goal);
                assert!(next > w, "{initial} -> {goal}: {w} then {next}");
                w = next;
                steps += 1;
                assert!(steps < 200, "no convergence");
            }
        }
    }
}

#[test]
fn extreme_action_runs_stay_clamped() {
    let mut env = SubjectEnv::new(quiet()).unwrap();
    env.reset(SeasonState::Spring, SeasonState::Summer, 0);
    for _ in 0..20 {
        env.apply_action(Action::IncreaseBpm);
        env.apply_action(Action::IncreaseDensity);
    }
    assert_eq!((env.state().bpm, env.state().density), (MAX_BPM, 9));
    for _ in 0..20 {
        env.apply_action(Action::DecreaseBpm);
        env.apply_action(Action::DecreaseDensity);
    }
    assert_eq!((env.state().bpm, env.state().density), (MIN_BPM, 1));
}

/// Periodogram energy in delta, theta, alpha and beta of one decimated loop.
fn band_energy(x: &[f64], bpm: u32) -> [f64; 4] {
    let rate = SAMPLES_PER_LOOP as f64 / loop_duration_seconds(bpm as i64).unwrap();
    let n = x.len();
    let edges = [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0)];
    let mut out = [0.0; 4];
    for k in 1..n / 2 {
        let f = k as f64 * rate / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ph = 2.0 * PI * (k * i) as f64 / n as f64;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        for (b, &(lo, hi)) in edges.iter().enumerate() {
            if f >= lo && f < hi {
                out[b] += re * re + im * im;
            }
        }
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[test]
fn signal_energy_matches_packet_bands() {
    let profile = quiet();
    for s in SeasonState::ALL {
        let pref = profile.season(s).clone();
        let mut env = SubjectEnv::new(profile.clone()).unwrap();
        for seed in 0..5 {
            let obs = env.reset_at(s, s, pref.preferred_bpm, pref.preferred_density, 0, seed);
            for l in &obs.loops {
                let bands = l.packet.bands.to_array().map(f64::from);
                let want = argmax(&grouped_bands(&bands));
                let got = argmax(&band_energy(&l.eeg_samples, l.bpm));
                assert_eq!(got, want, "{s} seed {seed}");
            }
        }
    }
}
