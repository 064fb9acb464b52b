mod support;

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slantdid_core::dates::{add_days, sub_days, DateRange};
use slantdid_core::encoder::EmbeddingVector;
use slantdid_core::numeric::{mean, sample_variance};
use slantdid_core::slant::{
    build_rolling_poles, build_static_pole, classify, pole_ratio, score_document, Pole, PoleCorpus, PoleSide,
    RollingConfig, SlantScore, StandardizationStats,
};
use slantdid_core::synth::Anchors;
use support::*;

fn ev(v: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(v).unwrap()
}

fn scores_for(raws: &[f64]) -> Vec<SlantScore> {
    let stats = StandardizationStats::compute(raws, "h").unwrap();
    raws.iter().enumerate().map(|(i, r)| SlantScore::from_raw(i.to_string(), *r, &stats)).collect()
}

proptest! {
    #[test]
    fn ratio_is_monotone(r in -1.0f64..1.0, u in -0.99f64..1.0, dr in 1e-6f64..0.5, du in 1e-6f64..0.5) {
        let base = pole_ratio(r, u, 1.0).unwrap();
        if r + dr <= 1.0 {
            prop_assert!(pole_ratio(r + dr, u, 1.0).unwrap() > base);
        }
        if u + du <= 1.0 {
            prop_assert!(pole_ratio(r, u + du, 1.0).unwrap() < base);
        }
    }

    #[test]
    fn affine_rescaling_keeps_z_and_flags(
        raws in prop::collection::vec(-1.0f64..1.0, 3..60),
        a in 0.001f64..1000.0,
        c in -100.0f64..100.0,
    ) {
        prop_assume!(raws.iter().any(|x| (x - raws[0]).abs() > 1e-6));
        let base = scores_for(&raws);
        let moved: Vec<f64> = raws.iter().map(|x| a * x + c).collect();
        let other = scores_for(&moved);
        for (s, t) in base.iter().zip(&other) {
            prop_assert!((s.z - t.z).abs() < 1e-9);
            // A z within rounding of a threshold may legitimately flip.
            if (s.z - 1.0).abs() > 1e-9 { prop_assert_eq!(s.flag_1sd, t.flag_1sd); }
            if s.z.abs() > 1e-9 { prop_assert_eq!(s.flag_0, t.flag_0); }
        }
    }

    #[test]
    fn one_sd_flag_implies_zero_flag(raws in prop::collection::vec(-5.0f64..5.0, 3..80)) {
        prop_assume!(raws.iter().any(|x| (x - raws[0]).abs() > 1e-6));
        for s in scores_for(&raws) {
            prop_assert!(s.flag_1sd <= s.flag_0);
            prop_assert_eq!(s.flag_1sd, classify(s.z, 1.0));
        }
    }
}

#[test]
fn standardized_scores_have_unit_moments() {
    let (_, scored) = score_synth(&pole_anchored(), 3);
    let z: Vec<f64> = scored.scores.iter().map(|s| s.z).collect();
    assert!(mean(&z).unwrap().abs() < 1e-12);
    assert!((sample_variance(&z).unwrap().sqrt() - 1.0).abs() < 1e-12);
}

#[test]
fn synthetic_scores_span_both_tails() {
    let (_, scored) = score_synth(&pole_anchored(), 20220302);
    let (lo, hi) = scored.scores.iter().fold((f64::MAX, f64::MIN), |(lo, hi), s| (lo.min(s.z), hi.max(s.z)));
    assert!(lo < -2.0 && hi > 2.0, "z range [{lo}, {hi}]");
}

#[test]
fn scoring_is_deterministic() {
    let (_, a) = score_synth(&pole_anchored(), 8);
    let (_, b) = score_synth(&pole_anchored(), 8);
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.stats, b.stats);
}

fn pole_corpus(seed: u64, start: NaiveDate, n_days: u64) -> PoleCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tweets = Vec::new();
    for k in 0..n_days {
        for _ in 0..rng.random_range(1..4) {
            tweets.push((add_days(start, k), ev((0..4).map(|_| rng.random_range(-1.0..1.0)).collect())));
        }
    }
    PoleCorpus { side: PoleSide::R, tweets }
}

#[test]
fn rolling_pole_ignores_tweets_outside_its_window() {
    let start = day("2022-02-01");
    let pc = pole_corpus(1, start, 30);
    let t = day("2022-02-20");
    let cfg = RollingConfig::default();
    let base = &build_rolling_poles(&pc, [t], &cfg).unwrap()[&t];
    let mut perturbed = pc.clone();
    let lo = sub_days(t, 7);
    for (d, v) in perturbed.tweets.iter_mut() {
        if *d < lo || *d > t {
            *v = ev(v.values().iter().map(|x| x * 3.0 + 1.0).collect());
        }
    }
    perturbed.tweets.push((add_days(t, 1), ev(vec![9.0, 9.0, 9.0, 9.0])));
    perturbed.tweets.push((sub_days(t, 8), ev(vec![-9.0, 9.0, -9.0, 9.0])));
    let moved = &build_rolling_poles(&perturbed, [t], &cfg).unwrap()[&t];
    assert_eq!(base.vector.values(), moved.vector.values());
}

#[test]
fn rolling_window_without_tweets_is_an_error() {
    let pc = pole_corpus(2, day("2022-02-01"), 3);
    assert!(build_rolling_poles(&pc, [day("2022-02-20")], &RollingConfig::default()).is_err());
}

#[test]
fn pre_ban_static_pole_is_the_pre_ban_mean() {
    let pc = PoleCorpus {
        side: PoleSide::U,
        tweets: vec![
            (day("2022-02-27"), ev(vec![1.0, 0.0])),
            (day("2022-03-01"), ev(vec![0.0, 1.0])),
            (day("2022-03-05"), ev(vec![4.0, 4.0])),
        ],
    };
    let pre = build_static_pole(&pc, Some(DateRange::new(day("2022-01-01"), day("2022-03-01")).unwrap())).unwrap();
    assert_eq!(pre.vector.values(), &[0.5, 0.5]);
    let full = build_static_pole(&pc, None).unwrap();
    assert_eq!(full.vector.values(), &[5.0 / 3.0, 5.0 / 3.0]);
}

#[test]
fn equal_mixture_scores_centre_on_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let anchors = Anchors::draw(32, 0.2, &mut rng).unwrap();
    let pole = |side, v: &Vec<f64>| Pole { side, day: None, vector: ev(v.clone()) };
    let (r, u) = (pole(PoleSide::R, &anchors.r), pole(PoleSide::U, &anchors.u));
    let mut raws: Vec<f64> = (0..5000)
        .map(|_| score_document(&ev(anchors.mixture(0.5, 0.05, &mut rng)), &r, &u, 1.0).unwrap())
        .collect();
    raws.sort_by(f64::total_cmp);
    let median = (raws[2499] + raws[2500]) / 2.0;
    assert!(median.abs() < 0.05, "{median}");
}
