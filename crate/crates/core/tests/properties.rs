use std::sync::atomic::{AtomicUsize, Ordering};

use gpff::alignment::align_permutation;
use gpff::geometry::{centered, shape_point, Coords, Structure};
use gpff::metrics::{js_divergence, validity};
use gpff::provider::{ForceEvaluation, ForceProvider, OracleMode, OracleProvider, ZeroProvider};
use gpff::sampler::{sample, PriorSpec, SamplerConfig, SamplerKind};
use gpff::schedule::{build_schedule, next_sigma_raw, observed_step_size, ScheduleParams};
use gpff::shape_model::{cov_to_vec, vec_to_cov};
use gpff::GpffError;
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn coords(n: std::ops::Range<usize>) -> impl Strategy<Value = Coords> {
    prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), n)
}

fn carbons(pos: Coords) -> Structure {
    Structure::new(vec!["C".into(); pos.len()], pos).unwrap()
}

struct Counting<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: ForceProvider> ForceProvider for Counting<P> {
    fn evaluate(&self, s: &Structure) -> gpff::Result<ForceEvaluation> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(s)
    }
}

fn kinds() -> impl Strategy<Value = (SamplerKind, bool, bool)> {
    prop_oneof![
        Just((SamplerKind::Dd, false, false)),
        Just((SamplerKind::Dd, false, true)),
        Just((SamplerKind::Ancestral, false, false)),
        Just((SamplerKind::Ancestral, true, false)),
        Just((SamplerKind::Heun, false, false)),
        Just((SamplerKind::Heun, true, false)),
        Just((SamplerKind::StochasticHeun, false, false)),
        Just((SamplerKind::StochasticHeun, true, false)),
    ]
}

fn config(kind: SamplerKind, adaptive: bool, stochastic: bool, steps: usize) -> SamplerConfig {
    SamplerConfig {
        adaptive,
        stochastic,
        ..SamplerConfig::of_kind(kind, steps)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn samplers_are_deterministic_and_count_calls(
        (kind, adaptive, stochastic) in kinds(),
        reference in coords(3..8),
        steps in 2usize..24,
        seed in any::<u64>(),
    ) {
        let r = carbons(reference);
        let oracle = OracleProvider::from_structures(std::slice::from_ref(&r), OracleMode::SigmaAgnostic).unwrap();
        let counting = Counting { inner: oracle, calls: AtomicUsize::new(0) };
        let cfg = config(kind, adaptive, stochastic, steps);
        let params = ScheduleParams::default();
        let prior = gpff::sampler::build_prior(&PriorSpec::isotropic(30.0), &r.elements, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = sample(&prior, &counting, &cfg, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.trace.nfe, counting.calls.load(Ordering::Relaxed));
        let b = sample(&prior, &counting, &cfg, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.trace.steps.len() <= steps);
        if !adaptive && kind == SamplerKind::Heun {
            prop_assert_eq!(a.trace.nfe, 2 * steps - 1);
        }
        if !adaptive && kind == SamplerKind::Ancestral {
            prop_assert_eq!(a.trace.nfe, steps);
        }
    }

    #[test]
    fn adaptive_samplers_halt_for_any_force_scale(
        kind in prop_oneof![Just(SamplerKind::Ancestral), Just(SamplerKind::Heun), Just(SamplerKind::StochasticHeun)],
        scale in prop_oneof![Just(0.0), -3.0f64..3.0],
        steps in 2usize..40,
        reference in coords(2..6),
    ) {
        let r = carbons(reference);
        let x0 = r.positions.clone();
        let provider = move |s: &Structure| -> gpff::Result<ForceEvaluation> {
            Ok(ForceEvaluation::new(
                s.positions.iter().zip(&x0).map(|(p, q)| [0, 1, 2].map(|k| -2.0 * scale * (p[k] - q[k]))).collect(),
            ))
        };
        let cfg = config(kind, true, false, steps);
        let prior = gpff::sampler::build_prior(&PriorSpec::isotropic(30.0), &r.elements, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // Repulsive or overshooting forces (scale < 0 or > 2) can overflow;
        // the non-finite check then ends the run early.
        match sample(&prior, &provider, &cfg, &ScheduleParams::default(), &mut ChaCha8Rng::seed_from_u64(2)) {
            Ok(out) => prop_assert!(out.trace.steps.len() <= steps),
            Err(GpffError::ProviderAtStep { step, .. }) => prop_assert!(step < steps),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn scaffold_rows_never_move(
        (kind, adaptive, stochastic) in kinds(),
        reference in coords(4..8),
        fixed in 1usize..4,
        seed in any::<u64>(),
    ) {
        let r = carbons(reference);
        let n = r.len();
        let oracle = OracleProvider::from_structures(std::slice::from_ref(&r), OracleMode::SigmaAgnostic).unwrap();
        let mask: Vec<bool> = (0..n).map(|i| i < fixed).collect();
        let cfg = SamplerConfig { scaffold: Some(mask), ..config(kind, adaptive, stochastic, 16) };
        let mut prior = gpff::sampler::build_prior(&PriorSpec::isotropic(10.0), &r.elements, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prior.positions[0] = [0.125, -3.5, 7.0];
        let out = sample(&prior, &oracle, &cfg, &ScheduleParams::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for i in 0..fixed {
            prop_assert_eq!(out.structure.positions[i], prior.positions[i]);
        }
    }

    #[test]
    fn schedules_decrease_and_invert(steps in 2usize..500, rho in 1.0f64..10.0, lo in 0.001f64..1.0, hi in 2.0f64..100.0) {
        let p = ScheduleParams::new(rho, lo, hi, steps).unwrap();
        let s = build_schedule(&p).unwrap();
        prop_assert_eq!(s.levels.len(), steps + 1);
        prop_assert!(s.levels.windows(2).all(|w| w[0] > w[1]));
        for w in s.levels[..steps].windows(2) {
            let ds = observed_step_size(w[0], w[1], &p).unwrap();
            prop_assert!((ds - p.step_size()).abs() < 1e-9);
            prop_assert!((next_sigma_raw(w[0], ds, &p) - w[1]).abs() <= 1e-9 * w[0]);
        }
    }

    #[test]
    fn permutation_alignment_ignores_input_order(pos in coords(2..9), shift in prop::array::uniform3(-3.0f64..3.0), rot in 0usize..9) {
        let elements: Vec<String> = (0..pos.len()).map(|i| ["C", "H", "O"][i % 3].to_string()).collect();
        let reference = Structure::new(elements.clone(), pos.clone()).unwrap();
        let mut order: Vec<usize> = (0..pos.len()).collect();
        order.rotate_left(rot % pos.len());
        let noisy = Structure::new(
            order.iter().map(|&i| elements[i].clone()).collect(),
            order.iter().map(|&i| [0, 1, 2].map(|k| pos[i][k] + shift[k])).collect(),
        ).unwrap();
        let (_, aligned) = align_permutation(&noisy, &reference).unwrap();
        let (a, b) = (centered(&aligned.positions), centered(&reference.positions));
        let cost: f64 = a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum();
        prop_assert!(cost < 1e-18 * pos.len() as f64 + 1e-20);
        prop_assert_eq!(aligned.elements, reference.elements);
    }

    #[test]
    fn shape_points_lie_in_the_triangle(pos in coords(3..20)) {
        if let Ok(sp) = shape_point(&carbons(pos)) {
            prop_assert!(sp.npr1 <= sp.npr2 + 1e-12);
            prop_assert!(sp.npr1 + sp.npr2 >= 1.0 - 1e-9);
            prop_assert!(sp.npr2 <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn js_is_bounded_and_symmetric(a in prop::collection::vec(-10.0f64..10.0, 1..200), b in prop::collection::vec(-10.0f64..10.0, 1..200), bins in 1usize..64) {
        let ab = js_divergence(&a, &b, bins).unwrap();
        let ba = js_divergence(&b, &a, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn cholesky_vectors_round_trip(m in prop::array::uniform9(-2.0f64..2.0), ridge in 0.05f64..2.0) {
        let a = Matrix3::from_row_slice(&m);
        let cov = a * a.transpose() + Matrix3::identity() * ridge;
        let back = vec_to_cov(&cov_to_vec(&cov).unwrap());
        prop_assert!((back - cov).abs().max() < 1e-9 * cov.abs().max().max(1.0));
    }

    #[test]
    fn validity_survives_rigid_motion(pos in coords(2..8), axis in prop::array::uniform3(-3.0f64..3.0), shift in prop::array::uniform3(-20.0f64..20.0)) {
        let elements: Vec<String> = (0..pos.len()).map(|i| ["C", "H", "O", "N"][i % 4].to_string()).collect();
        let s = Structure::new(elements, pos).unwrap();
        let rot = Rotation3::from_scaled_axis(Vector3::from(axis));
        let moved = s.with_positions(s.positions.iter().map(|p| {
            let v = rot * Vector3::from(*p) + Vector3::from(shift);
            [v[0], v[1], v[2]]
        }).collect());
        prop_assert_eq!(validity(&s), validity(&moved));
    }

    #[test]
    fn zero_provider_dd_keeps_prior(pos in coords(2..6)) {
        let s = carbons(pos);
        let out = sample(&s, &ZeroProvider, &SamplerConfig::dd(8), &ScheduleParams::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(out.structure.positions, s.positions);
        prop_assert_eq!(out.trace.nfe, 1);
    }
}
