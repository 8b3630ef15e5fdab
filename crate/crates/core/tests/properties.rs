//! Randomized properties of the enumerator, amplifier and classical sampler.

use proptest::prelude::*;
use qcontrib::amplify::compute_phase_schedule;
use qcontrib::exact::{enumerate_exact, RiskQuery, ScenarioLaw};
use qcontrib::mc::{estimate_cvar_contribs, McConfig};
use qcontrib::model::{DiscreteSN, GroupPartition, Obligor, Portfolio};

fn portfolio(exposures: &[u32], pds: &[f64], loading: f64, sizes: Vec<usize>) -> Portfolio {
    let obl = exposures
        .iter()
        .zip(pds)
        // Dyadic exposures: multiples of 1/8 add without rounding.
        .map(|(&e, &pd)| Obligor::from_pd(e as f64 / 8.0, loading, pd).unwrap())
        .collect();
    Portfolio::new(obl, GroupPartition::new(sizes).unwrap()).unwrap()
}

fn sizes_for(n: usize, cuts: &[bool]) -> Vec<usize> {
    let mut sizes = vec![1];
    for &c in &cuts[..n - 1] {
        if c {
            sizes.push(1);
        } else {
            *sizes.last_mut().unwrap() += 1;
        }
    }
    sizes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_losses_telescope(
        exposures in prop::collection::vec(1u32..80, 1..7),
        pd in 0.01f64..0.5,
        loading in 0.05f64..0.9,
        cuts in prop::collection::vec(any::<bool>(), 6),
    ) {
        let n = exposures.len();
        let p = portfolio(&exposures, &vec![pd; n], loading, sizes_for(n, &cuts));
        let law = ScenarioLaw::new(&p, &DiscreteSN::new(8, 4.0).unwrap()).unwrap();
        for y in 0..1usize << n {
            let parts: f64 = (0..p.group_count()).map(|k| law.group_loss(k, y)).sum();
            prop_assert_eq!(parts, law.loss(y));
        }
    }

    #[test]
    fn contributions_sum_to_cvar_and_var(
        exposures in prop::collection::vec(1u32..80, 1..7),
        pd in 0.01f64..0.5,
        loading in 0.05f64..0.9,
        alpha in 0.01f64..0.3,
        cuts in prop::collection::vec(any::<bool>(), 6),
    ) {
        let n = exposures.len();
        let p = portfolio(&exposures, &vec![pd; n], loading, sizes_for(n, &cuts));
        let r = enumerate_exact(&p, &DiscreteSN::new(8, 4.0).unwrap(), RiskQuery::level(alpha)).unwrap();
        let cv: f64 = r.cvar_contribs.iter().sum();
        prop_assert!((cv - r.cvar).abs() <= 1e-12 * r.cvar.max(1.0));
        let vr: f64 = r.var_contribs.unwrap().iter().sum();
        prop_assert!((vr - r.var.unwrap()).abs() <= 1e-12 * r.var.unwrap().max(1.0));
    }

    #[test]
    fn fixed_point_floor_holds_above_bound(delta in 0.02f64..0.9, w in 0.002f64..0.9, t in 0.0f64..1.0) {
        let s = compute_phase_schedule(delta, w, 100_000).unwrap();
        let p = w + (1.0 - w) * t;
        prop_assert!(s.length % 2 == 1);
        prop_assert!(s.success_probability(p) >= s.target_floor() - 1e-9);
    }

    #[test]
    fn sampler_ledger_is_conserved(samples in 1u64..5000, batch in 1u64..700, seed in any::<u64>()) {
        let obl = vec![Obligor::from_pd(1.0, 0.4, 0.3).unwrap(); 3];
        let p = Portfolio::new(obl, GroupPartition::singletons(3).unwrap()).unwrap();
        let est = estimate_cvar_contribs(&p, 0.0, &McConfig::new(seed, samples).with_batch(batch)).unwrap();
        prop_assert_eq!(est.samples, samples);
        prop_assert_eq!(est.ledger.classical_samples, samples);
        prop_assert_eq!(est.ledger.normal_draws, samples);
        prop_assert_eq!(est.ledger.bernoulli_draws, 3 * samples);
        prop_assert!(est.tail_hits <= est.samples);
    }
}
