//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slantdid_core::estimator::{TwfeDesign, TwoWayIndex};
use slantdid_core::panel::{PanelCell, StudyWindow};

/// A random unbalanced panel with one treatment column and one control.
pub struct RandomPanel {
    pub users: Vec<usize>,
    pub days: Vec<usize>,
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl RandomPanel {
    pub fn generate(seed: u64, max_users: usize, max_days: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_users = rng.random_range(6..=max_users);
        let n_days = rng.random_range(5..=max_days);
        let post = n_days / 2;
        let (mut users, mut days, mut y) = (Vec::new(), Vec::new(), Vec::new());
        let (mut d, mut z) = (Vec::new(), Vec::new());
        for u in 0..n_users {
            let treated = u % 2 == 0;
            let alpha: f64 = rng.random_range(-2.0..2.0);
            for t in 0..n_days {
                // Keep the first two days of everyone so users stay connected.
                if t >= 2 && rng.random::<f64>() < 0.25 {
                    continue;
                }
                let dt = f64::from(u8::from(treated && t >= post));
                let zt: f64 = rng.random_range(-1.0..1.0) + 0.1 * t as f64;
                let noise: f64 = rng.random_range(-1.0..1.0);
                users.push(u);
                days.push(t);
                d.push(dt);
                z.push(zt);
                y.push(alpha + 0.3 * t as f64 - 0.7 * dt + 0.4 * zt + noise);
            }
        }
        Self { users, days, y, x: vec![d, z], names: vec!["d".into(), "z".into()] }
    }

    pub fn design(&self) -> TwfeDesign {
        TwfeDesign {
            y: self.y.clone(),
            columns: self.names.iter().cloned().zip(self.x.iter().cloned()).collect(),
            index: TwoWayIndex::new(self.users.clone(), self.days.clone()).unwrap(),
            clusters: self.users.clone(),
        }
    }
}

/// Every user dummy and every day dummy, one column each.
pub fn dummies(users: &[usize], days: &[usize]) -> DMatrix<f64> {
    let nu = users.iter().max().map_or(0, |m| m + 1);
    let nd = days.iter().max().map_or(0, |m| m + 1);
    let mut m = DMatrix::zeros(users.len(), nu + nd);
    for (r, (&u, &d)) in users.iter().zip(days).enumerate() {
        m[(r, u)] = 1.0;
        m[(r, nu + d)] = 1.0;
    }
    m
}

/// Numerical rank via singular values.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > top * 1e-10).count()
}

/// Least squares through the normal equations; `a` must have full column rank.
pub fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let chol = (a.transpose() * a).cholesky().expect("full column rank");
    chol.solve(&(a.transpose() * y))
}

/// User dummies plus day dummies minus the last, which is full rank on a
/// connected panel.
pub fn reduced_dummies(users: &[usize], days: &[usize]) -> DMatrix<f64> {
    let fe = dummies(users, days);
    fe.columns(0, fe.ncols() - 1).into_owned()
}

/// Residual of `v` after projecting on the column space of `a`.
pub fn residualize(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let y = DVector::from_column_slice(v);
    let fit = a * lstsq(a, &y);
    (y - fit).iter().copied().collect()
}

/// Slopes from OLS of `y` on `[x | user dummies | day dummies]`.
pub fn dummy_ols(y: &[f64], x: &[Vec<f64>], users: &[usize], days: &[usize]) -> Vec<f64> {
    let fe = reduced_dummies(users, days);
    let n = y.len();
    let k = x.len();
    let mut a = DMatrix::zeros(n, k + fe.ncols());
    for (j, col) in x.iter().enumerate() {
        for r in 0..n {
            a[(r, j)] = col[r];
        }
    }
    a.view_mut((0, k), (n, fe.ncols())).copy_from(&fe);
    let b = lstsq(&a, &DVector::from_column_slice(y));
    b.iter().take(k).copied().collect()
}

/// CR1 sandwich written with explicit loops over clusters.
#[allow(clippy::needless_range_loop)]
pub fn loop_sandwich(x: &[Vec<f64>], resid: &[f64], clusters: &[usize], k_dof: usize) -> Vec<Vec<f64>> {
    let k = x.len();
    let n = resid.len();
    let mut xtx = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for r in 0..n {
                s += x[i][r] * x[j][r];
            }
            xtx[(i, j)] = s;
        }
    }
    let bread = xtx.try_inverse().unwrap();
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (r, g) in clusters.iter().enumerate() {
        groups.entry(*g).or_default().push(r);
    }
    let mut meat = DMatrix::zeros(k, k);
    for rows in groups.values() {
        let mut s = vec![0.0; k];
        for &r in rows {
            for j in 0..k {
                s[j] += x[j][r] * resid[r];
            }
        }
        for i in 0..k {
            for j in 0..k {
                meat[(i, j)] += s[i] * s[j];
            }
        }
    }
    let g = groups.len() as f64;
    let c = g / (g - 1.0) * (n as f64 - 1.0) / (n - k_dof) as f64;
    let v = &bread * meat * &bread * c;
    (0..k).map(|i| (0..k).map(|j| v[(i, j)]).collect()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

pub fn day(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

pub fn default_window() -> StudyWindow {
    StudyWindow::new(day("2022-02-19"), day("2022-03-02"), day("2022-03-15")).unwrap()
}

/// A cell carrying only an average-slant outcome.
pub fn cell(user: &str, d: NaiveDate, y: f64) -> PanelCell {
    PanelCell {
        user_id: user.to_string(),
        day: d,
        avg_slant: y,
        n_tweets: 1,
        n_retweets: 0,
        n_pro_r_tweets: 0,
        n_pro_r_retweets: 0,
        share_pro_r_tweets: Some(0.0),
        share_pro_r_retweets: None,
        mean_words: 0.0,
        mean_mentions: 0.0,
        mean_hashtags: 0.0,
    }
}

/// A document posted at noon UTC on `d` with style counts taken from `text`.
pub fn tweet(id: &str, user: &str, d: NaiveDate, text: &str, country: &str) -> slantdid_core::corpus::Tweet {
    let (n_words, n_mentions, n_hashtags) = slantdid_core::corpus::style_counts(text);
    slantdid_core::corpus::Tweet {
        id: id.to_string(),
        user_id: user.to_string(),
        timestamp: d.and_hms_opt(12, 0, 0).unwrap().and_utc(),
        day: d,
        text: text.to_string(),
        lang: "en".to_string(),
        country: country.to_string(),
        is_retweet: false,
        retweeted_handle: None,
        replied_handle: None,
        n_words,
        n_mentions,
        n_hashtags,
    }
}

pub fn retweet(id: &str, user: &str, d: NaiveDate, handle: &str, country: &str) -> slantdid_core::corpus::Tweet {
    let mut t = tweet(id, user, d, &format!("RT @{handle} news"), country);
    t.is_retweet = true;
    t.retweeted_handle = Some(handle.to_string());
    t
}

/// Scores a pole-anchored synthetic corpus with rolling poles.
pub fn score_synth(
    cfg: &slantdid_core::synth::SynthConfig,
    seed: u64,
) -> (slantdid_core::synth::SynthCorpus, slantdid_core::slant::ScoredCorpus) {
    use slantdid_core::encoder::EncoderBackend;
    use slantdid_core::slant::{score_corpus, PoleConfig, PoleCorpus, PoleSet, PoleSide};
    let sc = slantdid_core::synth::generate_corpus(cfg, seed).unwrap();
    let backend = EncoderBackend::Precomputed(sc.embeddings.clone());
    let r = PoleCorpus::embed(PoleSide::R, &sc.pole_r, &backend).unwrap();
    let u = PoleCorpus::embed(PoleSide::U, &sc.pole_u, &backend).unwrap();
    let pc = PoleConfig::default();
    let days: std::collections::BTreeSet<NaiveDate> = sc.corpus.iter().map(|t| t.day).collect();
    let poles = PoleSet::build(&r, &u, &pc, &days, cfg.ban_date).unwrap();
    let scored = score_corpus(&sc.corpus, &backend, &poles, &pc).unwrap();
    (sc, scored)
}

pub fn pole_anchored() -> slantdid_core::synth::SynthConfig {
    slantdid_core::synth::SynthConfig {
        mode: slantdid_core::synth::EmbeddingMode::PoleAnchored,
        ..Default::default()
    }
}
