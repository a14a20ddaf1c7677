//! Property tests over the public API.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rerand_core::assignment::rejection_rerandomize;
use rerand_core::missing::augment_with_fill;
use rerand_core::models::make_folds;
use rerand_core::rng::{stream, Purpose};
use rerand_core::{
    confidence_interval, estimate, randomization_test, threshold_from_chisq, v_da, Assignment, BalanceCriterion,
    CriterionSpec, DesignLaw, ExperimentFrame, MaskedMatrix, Method, ObservedExperiment, OutcomeModelSpec, Statistic,
    TieRule,
};

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize, n1: usize) -> Assignment {
    let mut z: Vec<bool> = (0..n).map(|i| i < n1).collect();
    z.shuffle(rng);
    Assignment::new(z).unwrap()
}

fn experiment(seed: u64, n: usize, k: usize) -> ObservedExperiment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_matrix(&mut rng, n, k);
    let z = shuffled(&mut rng, n, n / 2);
    let y = (0..n).map(|i| x.row(i).sum() + if z.z()[i] { 1.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal)).collect();
    ObservedExperiment::new(ExperimentFrame::from_matrix(x).unwrap(), z, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn accepted_draws_meet_the_criterion(seed in 0u64..10_000, n in 12usize..60, k in 1usize..4, pa in 0.05f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = ExperimentFrame::from_matrix(normal_matrix(&mut rng, n, k)).unwrap();
        let n1 = n / 2;
        let crit = BalanceCriterion::resolve(&CriterionSpec::mahalanobis(pa), &frame, n1).unwrap();
        let log = rejection_rerandomize(&crit, n1, &mut stream(seed, Purpose::Rerandomization, 0), None).unwrap();
        prop_assert!(log.attempts >= 1);
        prop_assert!(log.final_metric < crit.threshold());
        prop_assert!(crit.is_acceptable(log.accepted.z()));
        prop_assert_eq!(log.accepted.n1(), n1);
    }

    #[test]
    fn folds_hold_both_arms(seed in 0u64..10_000, k in 2usize..5, extra1 in 0usize..20, extra0 in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n0) = (2 * k + extra1, 2 * k + extra0);
        let z = shuffled(&mut rng, n1 + n0, n1);
        let plan = make_folds(&z, k, &mut rng).unwrap();
        for f in 0..k {
            let members = plan.members(f);
            let treated = members.iter().filter(|&&i| z.z()[i]).count();
            prop_assert!(treated >= 2 && members.len() - treated >= 2);
        }
    }

    #[test]
    fn v_da_is_a_proper_ratio(d in 1usize..40, pa in 1e-4f64..0.999) {
        let a = threshold_from_chisq(d, pa).unwrap();
        let v = v_da(d, a);
        prop_assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn reports_are_well_formed(seed in 0u64..10_000, method in prop::sample::select(vec![Method::D, Method::L, Method::Dr])) {
        let exp = experiment(seed, 40, 3);
        let rep = estimate(&exp, method, &OutcomeModelSpec::ols(), 2, seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&rep.r2_hat));
        prop_assert!(rep.v_hat.is_finite());
        let a = threshold_from_chisq(3, 0.1).unwrap();
        for law in [DesignLaw::Complete, DesignLaw::Rerandomized { d: 3, a }] {
            let ci = confidence_interval(&rep, law, 0.05, 20_000, seed).unwrap();
            prop_assert!(ci.contains(rep.tau_hat));
        }
    }

    #[test]
    fn constant_effect_shifts_every_estimator(seed in 0u64..10_000, c in -20.0f64..20.0) {
        let exp = experiment(seed, 40, 2);
        let shifted_y: Vec<f64> = exp.y().iter().zip(exp.z()).map(|(y, &t)| if t { y + c } else { *y }).collect();
        let shifted = ObservedExperiment::new(exp.frame().clone(), exp.assignment().clone(), shifted_y).unwrap();
        for method in [Method::D, Method::L, Method::Dr] {
            let a = estimate(&exp, method, &OutcomeModelSpec::ols(), 2, seed).unwrap().tau_hat;
            let b = estimate(&shifted, method, &OutcomeModelSpec::ols(), 2, seed).unwrap().tau_hat;
            prop_assert!((b - a - c).abs() < 1e-8, "{method:?}: {a} -> {b}, shift {c}");
        }
    }

    #[test]
    fn imputation_constant_does_not_move_tau_l(seed in 0u64..10_000, fill in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (50, 3);
        let x = normal_matrix(&mut rng, n, k);
        let columns: Vec<Vec<Option<f64>>> =
            (0..k).map(|j| (0..n).map(|i| (j == 0 || rng.random::<f64>() > 0.25).then_some(x[(i, j)])).collect()).collect();
        let z = shuffled(&mut rng, n, n / 2);
        let y: Vec<f64> = (0..n).map(|i| x.row(i).sum() + rng.sample::<f64, _>(StandardNormal)).collect();
        let m = MaskedMatrix::from_columns(columns, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let tau = |f: f64| {
            let exp = ObservedExperiment::new(augment_with_fill(&m, f).unwrap(), z.clone(), y.clone()).unwrap();
            estimate(&exp, Method::L, &OutcomeModelSpec::ols(), 2, 0).unwrap().tau_hat
        };
        prop_assert!((tau(0.0) - tau(fill)).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn p_values_sit_on_the_lattice(seed in 0u64..10_000, rerandomized in any::<bool>()) {
        let exp = experiment(seed, 30, 2);
        let crit = BalanceCriterion::resolve(&CriterionSpec::mahalanobis(0.3), exp.frame(), 15).unwrap();
        let b = 99;
        let res = randomization_test(&exp, rerandomized.then_some(&crit), &Statistic::new(Method::D), b, seed, TieRule::Strict).unwrap();
        let scaled = res.p_value * (b + 1) as f64;
        prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        prop_assert!(res.p_value > 0.0 && res.p_value <= 1.0);
    }
}
