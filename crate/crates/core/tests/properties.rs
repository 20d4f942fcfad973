use glsim::ergodic::{hitting_time, occupation_average};
use glsim::field::gamma;
use glsim::integrator::{Norms, TrackRecord};
use glsim::ou::convolution_scale;
use glsim::riccati::{halfinterval_bound, riccati_explicit, RiccatiInput};
use glsim::stats::Moments;
use glsim::{
    mode_scales, simulate_trajectory, Observable, SeedStream, SimConfig, SpectralField, Trajectory,
};
use proptest::prelude::*;
use rand::Rng;

fn small_config(seed: u64, noise_scale: f64) -> SimConfig {
    SimConfig {
        modes: 6,
        dt: 1e-3,
        horizon: 0.05,
        seed,
        noise_scale,
        ..SimConfig::default()
    }
}

fn norm_track(hdelta: &[f64]) -> Trajectory {
    Trajectory {
        delta: 0.25,
        functional_names: vec![],
        track: hdelta
            .iter()
            .enumerate()
            .map(|(i, &v)| TrackRecord {
                time: i as f64,
                norms: Norms { h: v, hdelta: v, y: v, zv: 0.0 },
                functionals: vec![],
            })
            .collect(),
        x_states: None,
        y_states: None,
        z_states: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mode_scale_octave_ratio(beta in 0.55f64..1.45, k in 1usize..16) {
        let s = mode_scales(1.8, beta, 2 * k).unwrap();
        let ratio = s.scales[2 * k - 1] / s.scales[k - 1];
        prop_assert!((ratio - 2f64.powf(-2.0 * beta)).abs() < 1e-12);
        prop_assert!(s.scales.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn convolution_scale_monotone(alpha in 1.5f64..2.0, h in 1e-5f64..0.5, k in 1usize..32) {
        let base = convolution_scale(alpha, gamma(k), h);
        let longer = convolution_scale(alpha, gamma(k), h * 1.5);
        // Saturates to (alpha gamma)^(-1/alpha) in floating point once the decay is complete.
        if alpha * gamma(k) * h < 20.0 {
            prop_assert!(longer > base);
        } else {
            prop_assert!(longer >= base);
        }
        prop_assert!(convolution_scale(alpha, gamma(k + 1), h) < base);
    }

    #[test]
    fn riccati_stays_in_invariant_interval(g0 in 0.0f64..20.0, kc in 1.0f64..6.0, t in 0.0f64..3.0) {
        let g = riccati_explicit(&RiccatiInput::new(g0, kc, 3.0).unwrap(), t).unwrap();
        let tol = 1e-12 * g0.max(kc);
        prop_assert!(g >= g0.min(kc) - tol && g <= g0.max(kc) + tol);
    }

    #[test]
    fn riccati_monotone_in_initial_data(g0 in 0.0f64..20.0, dg in 0.0f64..5.0, kc in 1.0f64..6.0, t in 0.0f64..3.0) {
        let lo = riccati_explicit(&RiccatiInput::new(g0, kc, 3.0).unwrap(), t).unwrap();
        let hi = riccati_explicit(&RiccatiInput::new(g0 + dg, kc, 3.0).unwrap(), t).unwrap();
        prop_assert!(hi >= lo - 1e-12 * hi.abs().max(1.0));
    }

    #[test]
    fn half_interval_bound_dominates(g0 in 0.0f64..1e6, kc in 1.0f64..6.0, horizon in 0.1f64..4.0, s in 0.5f64..=1.0) {
        let t = s * horizon;
        let g = riccati_explicit(&RiccatiInput::new(g0, kc, horizon).unwrap(), t).unwrap();
        prop_assert!(g <= halfinterval_bound(kc, horizon).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn moments_merge_in_any_order(xs in prop::collection::vec(-1e3f64..1e3, 1..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut a = Moments::from_slice(&xs[..cut]);
        a.merge(&Moments::from_slice(&xs[cut..]));
        let mut b = Moments::from_slice(&xs[cut..]);
        b.merge(&Moments::from_slice(&xs[..cut]));
        let whole = Moments::from_slice(&xs);
        prop_assert_eq!(a.n, whole.n);
        prop_assert!((a.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn streams_are_reproducible(master in any::<u64>(), index in any::<u64>()) {
        let a: Vec<u64> = (0..8).map({ let mut r = SeedStream::new(master, index).rng(); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = SeedStream::new(master, index).rng(); move |_| r.random() }).collect();
        let c: Vec<u64> = (0..8).map({ let mut r = SeedStream::new(master, index ^ 1).rng(); move |_| r.random() }).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn field_text_round_trip(seed in any::<u64>(), modes in 1usize..12, norm in 1e-6f64..1e6) {
        let x = SpectralField::random_direction(modes, norm, &mut SeedStream::new(seed, 0).rng());
        prop_assert_eq!(SpectralField::from_json(&x.to_json()).unwrap(), x.clone());
        prop_assert_eq!(SpectralField::from_csv_line(&x.to_csv_line()).unwrap(), x);
    }

    #[test]
    fn hitting_time_nonincreasing_in_threshold(norms in prop::collection::vec(0.0f64..10.0, 2..40), m in 0.0f64..10.0, dm in 0.0f64..5.0) {
        let t = norm_track(&norms);
        let lo = hitting_time(&t, m, 0.25).unwrap();
        let hi = hitting_time(&t, m + dm, 0.25).unwrap();
        prop_assert!(lo.tau.is_none_or(|v| v >= 1));
        match (lo.tau, hi.tau) {
            (Some(a), Some(b)) => prop_assert!(b <= a),
            (Some(_), None) => prop_assert!(false, "larger ball missed"),
            _ => {}
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn decomposition_identity_holds(seed in any::<u64>(), norm in 0.0f64..50.0) {
        let cfg = small_config(seed, 1.0);
        let x0 = SpectralField::random_direction(cfg.modes, norm, &mut SeedStream::new(seed, 1).rng());
        let traj = simulate_trajectory(x0, &cfg, &mut SeedStream::new(seed, 2).rng()).unwrap();
        let (xs, ys, zs) = (traj.x_states.unwrap(), traj.y_states.unwrap(), traj.z_states.unwrap());
        for ((x, y), z) in xs.iter().zip(&ys).zip(&zs) {
            for ((a, b), c) in x.to_flat().iter().zip(y.to_flat()).zip(z.to_flat()) {
                prop_assert!((a - b - c).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn occupation_average_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let cfg = small_config(seed, 1.0);
        let x0 = SpectralField::random_direction(cfg.modes, 2.0, &mut SeedStream::new(seed, 1).rng());
        let traj = simulate_trajectory(x0, &cfg, &mut SeedStream::new(seed, 2).rng()).unwrap();
        let f = Observable::custom("f", |x| x.eval(0.3));
        let g = Observable::custom("g", |x| x.norm_h().tanh());
        let fg = Observable::custom("fg", move |x| a * x.eval(0.3) + b * x.norm_h().tanh());
        let lhs = occupation_average(&traj, &fg).unwrap();
        let rhs = a * occupation_average(&traj, &f).unwrap() + b * occupation_average(&traj, &g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((occupation_average(&traj, &Observable::Constant(1.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_decays_without_noise_below_one(seed in any::<u64>(), norm in 0.01f64..1.0) {
        let cfg = SimConfig { horizon: 0.5, ..small_config(seed, 0.0) };
        let x0 = SpectralField::random_direction(cfg.modes, norm, &mut SeedStream::new(seed, 1).rng());
        let traj = simulate_trajectory(x0, &cfg, &mut SeedStream::new(seed, 2).rng()).unwrap();
        prop_assert!(traj.track.windows(2).all(|w| w[1].norms.h <= w[0].norms.h));
    }
}
