mod support;

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slantdid_core::dates::{add_days, DateRange};
use slantdid_core::estimator::ols::{classical_vcov, cluster_vcov};
use slantdid_core::estimator::{
    demean_two_way, did_estimate, event_study, fit_design, five_bin_layout, imputation_att, pct_of_mean, FitOptions,
    ImputationOptions, PanelData, SpecOptions, TwoWayIndex, DID_TERM,
};
use slantdid_core::panel::{PanelCell, PanelVar};
use slantdid_core::synth::{generate_panel, SynthConfig};
use slantdid_core::Error;
use support::*;

fn to_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(cols[0].len(), cols.len(), |r, c| cols[c][r])
}

#[test]
fn twfe_matches_dummy_variable_ols() {
    for seed in 0..20 {
        let p = RandomPanel::generate(seed, 30, 15);
        let fit = fit_design(&p.design(), "y", &FitOptions::default()).unwrap();
        let oracle = dummy_ols(&p.y, &p.x, &p.users, &p.days);
        for (c, o) in fit.coefficients.iter().zip(&oracle) {
            assert!(rel_err(c.estimate, *o) < 1e-8, "seed {seed} {}: {} vs {o}", c.name, c.estimate);
        }
    }
}

#[test]
fn absorbed_dof_equals_dummy_rank() {
    for seed in 0..10 {
        let p = RandomPanel::generate(seed, 20, 10);
        let fit = fit_design(&p.design(), "y", &FitOptions::default()).unwrap();
        assert_eq!(fit.diagnostics.absorbed_levels, rank(&dummies(&p.users, &p.days)));
    }
}

#[test]
fn vcov_matches_loop_sandwich() {
    for seed in 0..10 {
        let p = RandomPanel::generate(100 + seed, 25, 12);
        let fe = reduced_dummies(&p.users, &p.days);
        let xd: Vec<Vec<f64>> = p.x.iter().map(|c| residualize(&fe, c)).collect();
        let yd = residualize(&fe, &p.y);
        let beta = dummy_ols(&p.y, &p.x, &p.users, &p.days);
        let resid: Vec<f64> = (0..yd.len()).map(|r| yd[r] - beta[0] * xd[0][r] - beta[1] * xd[1][r]).collect();
        let k = 2 + fe.ncols();
        let oracle = loop_sandwich(&xd, &resid, &p.users, k);
        let direct = cluster_vcov(&to_matrix(&xd), &resid, &p.users, k).unwrap();
        let fit = fit_design(&p.design(), "y", &FitOptions::default()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(rel_err(direct[(i, j)], oracle[i][j]) < 1e-10);
                assert!(rel_err(fit.vcov[i][j], oracle[i][j]) < 1e-7, "seed {seed}");
            }
        }
    }
}

#[test]
fn thirty_row_fixture_sandwich() {
    // 6 clusters of 5 rows, two regressors with hand-picked values.
    let x1: Vec<f64> = (0..30).map(|r| ((r * 7) % 11) as f64 - 5.0).collect();
    let x2: Vec<f64> = (0..30).map(|r| ((r * 3) % 7) as f64 * 0.5 - 1.0).collect();
    let resid: Vec<f64> = (0..30).map(|r| ((r * 13) % 17) as f64 / 17.0 - 0.5).collect();
    let clusters: Vec<usize> = (0..30).map(|r| r / 5).collect();
    let cols = vec![x1, x2];
    let v = cluster_vcov(&to_matrix(&cols), &resid, &clusters, 2).unwrap();
    let o = loop_sandwich(&cols, &resid, &clusters, 2);
    for i in 0..2 {
        for j in 0..2 {
            assert!(rel_err(v[(i, j)], o[i][j]) < 1e-12);
        }
    }
}

#[test]
fn cr1_tracks_classical_with_singleton_clusters() {
    // Homoskedastic errors, one observation per cluster: CR1 and classical
    // standard errors agree on average.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut robust, mut classical) = (0.0, 0.0);
    for _ in 0..500 {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xm = x.iter().sum::<f64>() / n as f64;
        let xc: Vec<f64> = x.iter().map(|v| v - xm).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let em = e.iter().sum::<f64>() / n as f64;
        let ec: Vec<f64> = e.iter().map(|v| v - em).collect();
        let b = xc.iter().zip(&ec).map(|(a, b)| a * b).sum::<f64>() / xc.iter().map(|a| a * a).sum::<f64>();
        let resid: Vec<f64> = xc.iter().zip(&ec).map(|(a, e)| e - b * a).collect();
        let m = to_matrix(&[xc]);
        let clusters: Vec<usize> = (0..n).collect();
        robust += cluster_vcov(&m, &resid, &clusters, 2).unwrap()[(0, 0)].sqrt();
        classical += classical_vcov(&m, &resid, 2).unwrap()[(0, 0)].sqrt();
    }
    let ratio = robust / classical;
    assert!((ratio - 1.0).abs() < 0.15, "{ratio}");
}

#[test]
fn demeaned_group_means_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut users, mut days, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for u in 0..50 {
        for d in 0..20 {
            if d > 0 && rng.random::<f64>() < 0.2 {
                continue;
            }
            users.push(u);
            days.push(d);
            v.push(rng.random_range(-5.0..5.0) + u as f64);
        }
    }
    let idx = TwoWayIndex::new(users.clone(), days.clone()).unwrap();
    let mut cols = vec![v];
    demean_two_way(&mut cols, &idx, 1e-12, 10_000).unwrap();
    for key in [&users, &days] {
        let mut sums: HashMap<usize, (f64, f64)> = HashMap::new();
        for (g, x) in key.iter().zip(&cols[0]) {
            let e = sums.entry(*g).or_default();
            e.0 += x;
            e.1 += 1.0;
        }
        for (s, n) in sums.values() {
            assert!((s / n).abs() <= 1e-10);
        }
    }
}

fn shifted(p: &RandomPanel, f: impl Fn(usize, usize, f64) -> f64) -> RandomPanel {
    RandomPanel {
        users: p.users.clone(),
        days: p.days.clone(),
        y: (0..p.y.len()).map(|r| f(p.users[r], p.days[r], p.y[r])).collect(),
        x: p.x.clone(),
        names: p.names.clone(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixed_effect_shifts_leave_slopes_unchanged(seed in 0u64..10_000, a in -50.0f64..50.0, s in -3.0f64..3.0) {
        let p = RandomPanel::generate(seed, 15, 10);
        let base = fit_design(&p.design(), "y", &FitOptions::default()).unwrap();
        let q = shifted(&p, |u, d, y| y + a + s * u as f64 - 2.0 * s * d as f64);
        let moved = fit_design(&q.design(), "y", &FitOptions::default()).unwrap();
        for (c0, c1) in base.coefficients.iter().zip(&moved.coefficients) {
            prop_assert!((c0.estimate - c1.estimate).abs() < 1e-8);
            prop_assert!((c0.se - c1.se).abs() < 1e-8);
        }
    }

    #[test]
    fn row_order_is_irrelevant(seed in 0u64..10_000, perm_seed in 0u64..1000) {
        let p = RandomPanel::generate(seed, 15, 10);
        let mut order: Vec<usize> = (0..p.y.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let q = RandomPanel {
            users: order.iter().map(|&r| p.users[r]).collect(),
            days: order.iter().map(|&r| p.days[r]).collect(),
            y: order.iter().map(|&r| p.y[r]).collect(),
            x: p.x.iter().map(|c| order.iter().map(|&r| c[r]).collect()).collect(),
            names: p.names.clone(),
        };
        let a = fit_design(&p.design(), "y", &FitOptions::default()).unwrap();
        let b = fit_design(&q.design(), "y", &FitOptions::default()).unwrap();
        for (c0, c1) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((c0.estimate - c1.estimate).abs() < 1e-9);
            prop_assert!((c0.se - c1.se).abs() < 1e-9);
        }
    }
}

fn panel_from_synth(cfg: &SynthConfig, seed: u64) -> (Vec<PanelCell>, HashMap<String, bool>) {
    let (cells, truth) = generate_panel(cfg, seed).unwrap();
    (cells, truth.treated.into_iter().collect())
}

#[test]
fn duplicating_every_user_keeps_the_point_estimate() {
    let cfg = SynthConfig { n_users: 40, ..Default::default() };
    let (cells, treated) = panel_from_synth(&cfg, 5);
    let window = cfg.window().unwrap();
    let data = PanelData { cells: &cells, treated: &treated, window };
    let base = did_estimate(&data, PanelVar::AvgSlant, &SpecOptions::default()).unwrap();
    let mut doubled = cells.clone();
    let mut treated2 = treated.clone();
    for c in &cells {
        let mut c2 = c.clone();
        c2.user_id = format!("{}-copy", c.user_id);
        treated2.insert(c2.user_id.clone(), treated[&c.user_id]);
        doubled.push(c2);
    }
    let data2 = PanelData { cells: &doubled, treated: &treated2, window };
    let dup = did_estimate(&data2, PanelVar::AvgSlant, &SpecOptions::default()).unwrap();
    let (b0, b1) = (base.coef(DID_TERM).unwrap(), dup.coef(DID_TERM).unwrap());
    assert!((b0.estimate - b1.estimate).abs() < 1e-10);
}

#[test]
fn constant_outcome_gives_zero_effect_and_fit() {
    let cfg = SynthConfig { n_users: 20, ..Default::default() };
    let (mut cells, treated) = panel_from_synth(&cfg, 1);
    for c in &mut cells {
        c.avg_slant = 0.37;
    }
    let data = PanelData { cells: &cells, treated: &treated, window: cfg.window().unwrap() };
    let fit = did_estimate(&data, PanelVar::AvgSlant, &SpecOptions::default()).unwrap();
    assert!(fit.coef(DID_TERM).unwrap().estimate.abs() < 1e-12);
    assert_eq!(fit.r2_within, 0.0);
}

#[test]
fn missing_control_group_is_an_identification_error() {
    let cfg = SynthConfig { n_users: 20, ..Default::default() };
    let (cells, mut treated) = panel_from_synth(&cfg, 1);
    for v in treated.values_mut() {
        *v = true;
    }
    let data = PanelData { cells: &cells, treated: &treated, window: cfg.window().unwrap() };
    let err = did_estimate(&data, PanelVar::AvgSlant, &SpecOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Identification(_)), "{err}");
}

#[test]
fn sample_restriction_equals_filtering_cells() {
    let cfg = SynthConfig { n_users: 60, ..Default::default() };
    let (cells, treated) = panel_from_synth(&cfg, 2);
    let window = cfg.window().unwrap();
    let keep: BTreeSet<String> = treated.keys().filter(|u| u.ends_with(['1', '3', '5', '7'])).cloned().collect();
    let data = PanelData { cells: &cells, treated: &treated, window };
    let opts = SpecOptions { sample: Some(keep.clone()), ..Default::default() };
    let a = did_estimate(&data, PanelVar::AvgSlant, &opts).unwrap();
    let filtered: Vec<PanelCell> = cells.iter().filter(|c| keep.contains(&c.user_id)).cloned().collect();
    let data2 = PanelData { cells: &filtered, treated: &treated, window };
    let b = did_estimate(&data2, PanelVar::AvgSlant, &SpecOptions::default()).unwrap();
    assert_eq!(a.coefficients, b.coefficients);
}

#[test]
fn singleton_bins_equal_daily_event_study() {
    let cfg = SynthConfig { n_users: 60, ..Default::default() };
    let (cells, treated) = panel_from_synth(&cfg, 9);
    let window = cfg.window().unwrap();
    let data = PanelData { cells: &cells, treated: &treated, window };
    let reference = day("2022-03-01");
    let daily = event_study(&data, PanelVar::AvgSlant, reference, None, &SpecOptions::default()).unwrap();
    let singles: Vec<DateRange> = window.range().days().filter(|d| *d != reference).map(DateRange::single).collect();
    let binned = event_study(&data, PanelVar::AvgSlant, reference, Some(&singles), &SpecOptions::default()).unwrap();
    assert_eq!(daily.coefficients.len(), binned.coefficients.len());
    for (a, b) in daily.coefficients.iter().zip(&binned.coefficients) {
        assert!((a.estimate - b.estimate).abs() < 1e-10 && (a.se - b.se).abs() < 1e-10);
    }
    assert_eq!(daily.at(reference).unwrap().estimate, 0.0);
}

#[test]
fn five_bin_layout_tiles_the_window() {
    let window = default_window();
    let (reference, bins) = five_bin_layout(&window).unwrap();
    assert_eq!(reference, day("2022-03-01"));
    assert_eq!(bins.len(), 5);
    let covered: usize = bins.iter().map(DateRange::n_days).sum();
    assert_eq!(covered + 1, window.n_days());
    assert_eq!(bins[2].start, window.ban_date);
    assert_eq!(bins[4].end, window.end);
    assert_eq!(add_days(bins[1].end, 1), reference);
}

#[test]
fn overlapping_bins_are_rejected() {
    let cfg = SynthConfig { n_users: 20, ..Default::default() };
    let (cells, treated) = panel_from_synth(&cfg, 1);
    let window = cfg.window().unwrap();
    let data = PanelData { cells: &cells, treated: &treated, window };
    let bins = vec![
        DateRange::new(window.start, day("2022-02-28")).unwrap(),
        DateRange::new(day("2022-02-28"), window.end).unwrap(),
    ];
    let err = event_study(&data, PanelVar::AvgSlant, day("2022-03-01"), Some(&bins), &SpecOptions::default());
    assert!(matches!(err, Err(Error::Specification(_))));
}

#[test]
fn imputation_agrees_with_twfe_on_homogeneous_effect() {
    let cfg = SynthConfig { n_users: 80, balanced: true, ..Default::default() };
    let (cells, treated) = panel_from_synth(&cfg, 11);
    assert_eq!(cells.len(), 2000);
    let data = PanelData { cells: &cells, treated: &treated, window: cfg.window().unwrap() };
    let twfe = did_estimate(&data, PanelVar::AvgSlant, &SpecOptions::default()).unwrap();
    let imp = imputation_att(&data, PanelVar::AvgSlant, &ImputationOptions { bootstrap_draws: 49, ..Default::default() })
        .unwrap();
    assert!((imp.att - twfe.coef(DID_TERM).unwrap().estimate).abs() < 1e-2);
    assert!(imp.se > 0.0 && imp.ci95.0 < imp.att && imp.att < imp.ci95.1);
}

#[test]
fn imputation_bootstrap_is_seeded() {
    let cfg = SynthConfig { n_users: 30, ..Default::default() };
    let (cells, treated) = panel_from_synth(&cfg, 4);
    let data = PanelData { cells: &cells, treated: &treated, window: cfg.window().unwrap() };
    let opts = ImputationOptions { bootstrap_draws: 30, seed: 42, ..Default::default() };
    let a = imputation_att(&data, PanelVar::AvgSlant, &opts).unwrap();
    let b = imputation_att(&data, PanelVar::AvgSlant, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pct_of_mean_fixture_and_degenerate_mean() {
    let v = pct_of_mean(-0.043, -0.068).unwrap();
    assert!((v - -63.2).abs() < 0.5);
    assert!(pct_of_mean(0.1, 0.0).is_none());
    assert!(pct_of_mean(0.1, 1e-13).is_none());
    assert!(pct_of_mean(-0.1, 0.5).unwrap() < 0.0);
}

#[test]
fn cell_helper_builds_outcome() {
    let c = cell("a", day("2022-03-01"), 1.5);
    assert_eq!(PanelVar::AvgSlant.get(&c), Some(1.5));
}
