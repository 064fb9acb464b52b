//! Synthetic panels and corpora with known ground truth.
//!
//! Two generators share one configuration. `generate_panel` draws panel
//! cells directly from an additive two-way model. `generate_corpus` draws
//! documents as mixtures of two anchor vectors and plans cohort
//! memberships so that the default cohort rules recover them exactly:
//!
//! * pre-ban activity is drawn from disjoint ranges for ordinary, high and
//!   top users, so percentile cuts fall between the ranges;
//! * reputations are distinct ranks and the lowest ranks go to the
//!   planned bots plus filler users outside the high-activity set;
//! * ordinary documents sit in two tight clusters whose heavier upper
//!   cluster stays below one standard deviation above the mean, while each
//!   supplier gets one document near the R anchor.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use chrono::{Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{style_counts, CorpusStore, ProfileRecord, Tweet};
use crate::dates::{sub_days, DateRange};
use crate::encoder::{dot, PrecomputedTable};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, mean, nearest_rank, sample_variance};
use crate::panel::{CohortOptions, PanelCell, StudyWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    /// Panel cells drawn directly; no documents.
    #[default]
    DirectOutcome,
    PoleAnchored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub share_treated: f64,
    pub start: NaiveDate,
    pub ban_date: NaiveDate,
    pub end: NaiveDate,
    /// Poisson mean of documents per user-day.
    pub rate: f64,
    pub true_effect: f64,
    /// Differential linear trend of treated users, zero on the day before the ban.
    pub pre_trend: f64,
    pub noise_sd: f64,
    pub user_sd: f64,
    pub day_sd: f64,
    /// Per-user noise scale drawn from U(0.25, 1.75).
    pub heteroskedastic: bool,
    /// Every user-day cell gets at least one document.
    pub balanced: bool,
    pub interaction_share: f64,
    pub supplier_share: f64,
    pub bot_share: f64,
    pub mode: EmbeddingMode,
    pub dim: usize,
    /// Cosine between the two pole anchors.
    pub anchor_cos: f64,
    pub vector_noise: f64,
    pub pole_tweets_per_day: usize,
    /// Rolling-window length the pole corpora must cover before `start`.
    pub pole_window: usize,
    /// Drop in the upper-cluster share of treated users' post-ban documents.
    pub corpus_effect: f64,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            share_treated: 0.5,
            start: date(2022, 2, 19),
            ban_date: date(2022, 3, 2),
            end: date(2022, 3, 15),
            rate: 1.5,
            true_effect: -0.05,
            pre_trend: 0.0,
            noise_sd: 0.3,
            user_sd: 0.5,
            day_sd: 0.1,
            heteroskedastic: false,
            balanced: false,
            interaction_share: 0.2,
            supplier_share: 0.15,
            bot_share: 0.05,
            mode: EmbeddingMode::DirectOutcome,
            dim: 32,
            anchor_cos: 0.2,
            vector_noise: 0.01,
            pole_tweets_per_day: 4,
            pole_window: 8,
            corpus_effect: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn window(&self) -> Result<StudyWindow> {
        StudyWindow::new(self.start, self.ban_date, self.end)
    }

    pub fn validate(&self) -> Result<()> {
        self.window()?;
        if self.n_users == 0 {
            return Err(Error::Degenerate("synthetic config has 0 users".into()));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Config(format!("rate must be > 0, got {}", self.rate)));
        }
        for (name, v) in [
            ("share_treated", self.share_treated),
            ("interaction_share", self.interaction_share),
            ("supplier_share", self.supplier_share),
            ("bot_share", self.bot_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("noise_sd", self.noise_sd),
            ("user_sd", self.user_sd),
            ("day_sd", self.day_sd),
            ("vector_noise", self.vector_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.true_effect.is_finite() || !self.pre_trend.is_finite() {
            return Err(Error::Config("true_effect and pre_trend must be finite".into()));
        }
        Ok(())
    }
}

/// Planned cohort memberships.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortTruth {
    pub interaction: BTreeSet<String>,
    pub supplier: BTreeSet<String>,
    pub bot: BTreeSet<String>,
    pub high_slant: BTreeSet<String>,
    /// High-activity users outside the top group.
    pub high_activity: BTreeSet<String>,
    pub top_activity: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCell {
    pub user_id: String,
    pub day: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_effect: f64,
    /// User fixed effect (panel mode) or planned upper-cluster share (corpus mode).
    pub latent_slant: BTreeMap<String, f64>,
    pub treated: BTreeMap<String, bool>,
    /// Noise-free outcome per generated cell (panel mode only).
    pub expected: Vec<ExpectedCell>,
    pub cohorts: CohortTruth,
}

fn user_id(i: usize) -> String {
    format!("u{i:04}")
}

fn assign_treated(n: usize, share: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (share * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut treated = vec![false; n];
    for &i in &order[..k] {
        treated[i] = true;
    }
    treated
}

/// Additive two-way panel:
/// `y = user + day + effect * treated * post + trend * treated * (t - t_ref) + noise`.
pub fn generate_panel(cfg: &SynthConfig, seed: u64) -> Result<(Vec<PanelCell>, GroundTruth)> {
    cfg.validate()?;
    let window = cfg.window()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_users;
    let days: Vec<NaiveDate> = window.range().days().collect();
    let t_ref = days.iter().position(|d| *d == sub_days(window.ban_date, 1)).unwrap_or(0) as f64;

    let treated = assign_treated(n, cfg.share_treated, &mut rng);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let alpha: Vec<f64> = (0..n).map(|_| cfg.user_sd * std.sample(&mut rng)).collect();
    let gamma: Vec<f64> = days.iter().map(|_| cfg.day_sd * std.sample(&mut rng)).collect();
    let scale: Vec<f64> = (0..n)
        .map(|_| if cfg.heteroskedastic { rng.random_range(0.25..1.75) } else { 1.0 })
        .collect();
    let poisson = Poisson::new(cfg.rate).map_err(|e| Error::Config(format!("rate: {e}")))?;

    let mut cells = Vec::new();
    let mut expected = Vec::new();
    for i in 0..n {
        let uid = user_id(i);
        for (t, &day) in days.iter().enumerate() {
            let mut docs = poisson.sample(&mut rng) as u64;
            if cfg.balanced {
                docs = docs.max(1);
            }
            // Draw the noise even for empty cells so cell presence does
            // not shift the outcome stream.
            let noise = cfg.noise_sd * scale[i] * std.sample(&mut rng);
            let n_retweets = Binomial::new(docs, 0.4).expect("valid binomial").sample(&mut rng);
            if docs == 0 {
                continue;
            }
            let d = f64::from(u8::from(treated[i] && window.is_post(day)));
            let trend = if treated[i] { cfg.pre_trend * (t as f64 - t_ref) } else { 0.0 };
            let mu = alpha[i] + gamma[t] + cfg.true_effect * d + trend;
            let n_tweets = docs - n_retweets;
            let p = 1.0 / (1.0 + (-(2.0 * mu - 1.0)).exp());
            let pro_t = Binomial::new(n_tweets, p).expect("valid binomial").sample(&mut rng);
            let pro_r = Binomial::new(n_retweets, p).expect("valid binomial").sample(&mut rng);
            let share = |k: u64, n: u64| (n > 0).then(|| k as f64 / n as f64);
            cells.push(PanelCell {
                user_id: uid.clone(),
                day,
                avg_slant: mu + noise,
                n_tweets: n_tweets as u32,
                n_retweets: n_retweets as u32,
                n_pro_r_tweets: pro_t as u32,
                n_pro_r_retweets: pro_r as u32,
                share_pro_r_tweets: share(pro_t, n_tweets),
                share_pro_r_retweets: share(pro_r, n_retweets),
                mean_words: (12.0 + 3.0 * std.sample(&mut rng)).max(1.0),
                mean_mentions: rng.random_range(0.0..2.0),
                mean_hashtags: rng.random_range(0.0..1.5),
            });
            expected.push(ExpectedCell { user_id: uid.clone(), day, value: mu });
        }
    }
    let truth = GroundTruth {
        true_effect: cfg.true_effect,
        latent_slant: (0..n).map(|i| (user_id(i), alpha[i])).collect(),
        treated: (0..n).map(|i| (user_id(i), treated[i])).collect(),
        expected,
        cohorts: CohortTruth::default(),
    };
    Ok((cells, truth))
}

/// Unit pole anchors with a fixed cosine between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl Anchors {
    pub fn draw(dim: usize, cos: f64, rng: &mut impl Rng) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("anchor dim must be >= 2, got {dim}")));
        }
        if !(-1.0..=1.0).contains(&cos) {
            return Err(Error::Config(format!("anchor cosine {cos} outside [-1, 1]")));
        }
        if cos > 0.99 {
            return Err(Error::Config(format!(
                "anchor cosine {cos} > 0.99: poles would not be distinguishable"
            )));
        }
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let r = unit((0..dim).map(|_| std.sample(rng)).collect());
        let raw: Vec<f64> = (0..dim).map(|_| std.sample(rng)).collect();
        let proj = dot(&raw, &r);
        let orth = unit(raw.iter().zip(&r).map(|(x, a)| x - proj * a).collect());
        let s = (1.0 - cos * cos).sqrt();
        let u = r.iter().zip(&orth).map(|(a, o)| cos * a + s * o).collect();
        Ok(Self { r, u })
    }

    /// `w * r + (1 - w) * u` plus isotropic noise with per-coordinate sd `noise`.
    pub fn mixture(&self, w: f64, noise: f64, rng: &mut impl Rng) -> Vec<f64> {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        self.r
            .iter()
            .zip(&self.u)
            .map(|(a, b)| w * a + (1.0 - w) * b + noise * std.sample(rng))
            .collect()
    }
}

/// Everything `generate_corpus` produces.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: CorpusStore,
    pub profiles: Vec<ProfileRecord>,
    pub pole_r: CorpusStore,
    pub pole_u: CorpusStore,
    pub embeddings: PrecomputedTable,
    pub banned_handles: BTreeSet<String>,
    pub region_map: BTreeMap<String, bool>,
    pub truth: GroundTruth,
}

const TREATED_COUNTRIES: [&str; 4] = ["DE", "FR", "IT", "ES"];
const CONTROL_COUNTRIES: [&str; 4] = ["GB", "US", "CH", "NO"];
const BANNED: [&str; 2] = ["RT_com", "SputnikInt"];
const BENIGN: [&str; 4] = ["BBCWorld", "Reuters", "AP", "dwnews"];

// Mixture weights of the two ordinary clusters and of supplier documents.
const W_LOW: f64 = 0.0;
const W_HIGH: f64 = 0.45;
const W_SUPPLIER: f64 = 0.75;
const W_JITTER: f64 = 0.01;
// Far U-side documents give the score distribution a long lower tail.
const W_EXTREME_U: f64 = -0.6;
const HIGH_SHARE_HIGH_SLANT: f64 = 1.0;
const HIGH_SHARE_MODERATE: f64 = 0.7;

fn pick(set: &mut Vec<usize>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    set.shuffle(rng);
    set.split_off(set.len() - k.min(set.len()))
}

struct Doc {
    day: NaiveDate,
    w: f64,
    retweet: Option<String>,
    reply: Option<String>,
}

fn timestamp(day: NaiveDate, rng: &mut ChaCha8Rng) -> chrono::DateTime<Utc> {
    let secs = rng.random_range(0..86_400);
    Utc.from_utc_datetime(&day.and_time(NaiveTime::MIN)) + Duration::seconds(secs)
}

fn make_tweet(id: String, user: &str, country: &str, lang: &str, day: NaiveDate, doc: &Doc, rng: &mut ChaCha8Rng) -> Tweet {
    let mut text = match (&doc.retweet, &doc.reply) {
        (Some(h), _) => format!("RT @{h}: shared update {id}"),
        (None, Some(h)) => format!("@{h} reply about the news {id}"),
        (None, None) => format!("post about the news {id}"),
    };
    if rng.random_bool(0.3) {
        text.push_str(" #ukraine");
    }
    let (n_words, n_mentions, n_hashtags) = style_counts(&text);
    Tweet {
        id,
        user_id: user.to_string(),
        timestamp: timestamp(day, rng),
        day,
        text,
        lang: lang.to_string(),
        country: country.to_string(),
        is_retweet: doc.retweet.is_some(),
        retweeted_handle: doc.retweet.clone(),
        replied_handle: doc.reply.clone(),
        n_words,
        n_mentions,
        n_hashtags,
    }
}

/// Pole-anchored corpus with planned cohorts.
pub fn generate_corpus(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    if cfg.mode != EmbeddingMode::PoleAnchored {
        return Err(Error::Config("generate_corpus needs mode = \"pole-anchored\"".into()));
    }
    let n = cfg.n_users;
    if n < 8 {
        return Err(Error::Degenerate(format!("corpus generation needs >= 8 users, got {n}")));
    }
    if cfg.pole_tweets_per_day == 0 || cfg.pole_window == 0 {
        return Err(Error::Config("pole_tweets_per_day and pole_window must be >= 1".into()));
    }
    let window = cfg.window()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = Anchors::draw(cfg.dim, cfg.anchor_cos, &mut rng)?;
    let opts = CohortOptions::default();

    let treated = assign_treated(n, cfg.share_treated, &mut rng);
    let country: Vec<&str> = treated
        .iter()
        .map(|t| {
            let pool = if *t { &TREATED_COUNTRIES } else { &CONTROL_COUNTRIES };
            pool[rng.random_range(0..pool.len())]
        })
        .collect();

    // Activity tiers: sizes follow the nearest-rank cuts of the cohort rules.
    let n_high = n - nearest_rank(opts.activity_high_cutoff, n);
    let n_top = n - nearest_rank(opts.activity_top_cutoff, n);
    let n_low_rep = nearest_rank(opts.bot_reputation_pct, n) - 1;
    let mut pool: Vec<usize> = (0..n).collect();
    let high: Vec<usize> = pick(&mut pool, n_high, &mut rng);
    let rest = pool;
    let mut high_pool = high.clone();
    let top: BTreeSet<usize> = pick(&mut high_pool, n_top, &mut rng).into_iter().collect();
    let n_bots = ((cfg.bot_share * n as f64).round() as usize).min(n_high).min(n_low_rep);
    let mut high_pool = high.clone();
    let bots: BTreeSet<usize> = pick(&mut high_pool, n_bots, &mut rng).into_iter().collect();
    let mut rest_pool = rest.clone();
    let mut low_rep: Vec<usize> = pick(&mut rest_pool, n_low_rep - n_bots, &mut rng);
    low_rep.extend(bots.iter().copied());
    low_rep.shuffle(&mut rng);
    let high_set: BTreeSet<usize> = high.iter().copied().collect();

    let mut rank = vec![0usize; n];
    let mut others: Vec<usize> = (0..n).filter(|i| !low_rep.contains(i)).collect();
    others.shuffle(&mut rng);
    for (r, &i) in low_rep.iter().chain(&others).enumerate() {
        rank[i] = r;
    }

    let mut all: Vec<usize> = (0..n).collect();
    let high_slant: BTreeSet<usize> = pick(&mut all, n - nearest_rank(opts.slant_cutoff, n), &mut rng)
        .into_iter()
        .collect();
    let mut all: Vec<usize> = (0..n).collect();
    let interaction: BTreeSet<usize> =
        pick(&mut all, (cfg.interaction_share * n as f64).round() as usize, &mut rng).into_iter().collect();
    let mut all: Vec<usize> = (0..n).collect();
    let suppliers: BTreeSet<usize> =
        pick(&mut all, (cfg.supplier_share * n as f64).round() as usize, &mut rng).into_iter().collect();

    let pre_days: Vec<NaiveDate> = window.pre_range().days().collect();
    let post_days: Vec<NaiveDate> = window.post_range().days().collect();
    let poisson = Poisson::new(cfg.rate).map_err(|e| Error::Config(format!("rate: {e}")))?;
    let benign = |rng: &mut ChaCha8Rng| BENIGN[rng.random_range(0..BENIGN.len())].to_string();
    // Banned handles appear with assorted casing and prefixes.
    let banned_variant = |k: usize| match k % 3 {
        0 => BANNED[k % 2].to_string(),
        1 => BANNED[k % 2].to_lowercase(),
        _ => format!("@{}", BANNED[k % 2].to_uppercase()),
    };
    let style = |rng: &mut ChaCha8Rng| -> (Option<String>, Option<String>) {
        let u: f64 = rng.random();
        if u < 0.25 {
            (Some(benign(rng)), None)
        } else if u < 0.35 {
            (None, Some(benign(rng)))
        } else {
            (None, None)
        }
    };
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-W_JITTER..=W_JITTER);

    let mut tweets = Vec::new();
    let mut table = PrecomputedTable::new(cfg.dim);
    let mut latent = BTreeMap::new();
    for i in 0..n {
        let uid = user_id(i);
        let n_pre = if top.contains(&i) {
            rng.random_range(45..=50)
        } else if high_set.contains(&i) {
            rng.random_range(18..=30)
        } else {
            rng.random_range(8..=14)
        };
        let share = if high_slant.contains(&i) { HIGH_SHARE_HIGH_SLANT } else { HIGH_SHARE_MODERATE };
        latent.insert(uid.clone(), share);
        let n_upper = (share * n_pre as f64).round() as usize;
        let mut docs: Vec<Doc> = (0..n_pre)
            .map(|k| {
                let base = if k < n_upper { W_HIGH } else { W_LOW };
                let (retweet, reply) = style(&mut rng);
                Doc { day: pre_days[rng.random_range(0..pre_days.len())], w: base + jitter(&mut rng), retweet, reply }
            })
            .collect();
        // The supplier document replaces an upper-cluster one.
        if suppliers.contains(&i) {
            docs[0].w = W_SUPPLIER + jitter(&mut rng);
        }
        if interaction.contains(&i) {
            let d = &mut docs[n_pre - 1];
            if i % 2 == 0 {
                d.retweet = Some(banned_variant(i));
                d.reply = None;
            } else {
                d.retweet = None;
                d.reply = Some(banned_variant(i));
            }
        } else if i % 7 == 3 {
            // Post-ban contact with a banned outlet does not count.
            docs.push(Doc {
                day: post_days[rng.random_range(0..post_days.len())],
                w: W_LOW + jitter(&mut rng),
                retweet: Some(banned_variant(i)),
                reply: None,
            });
        }
        if i % 10 == 5 {
            docs.push(Doc {
                day: post_days[rng.random_range(0..post_days.len())],
                w: W_EXTREME_U + jitter(&mut rng),
                retweet: None,
                reply: None,
            });
        }
        let post_share = (share - if treated[i] { cfg.corpus_effect } else { 0.0 }).clamp(0.0, 1.0);
        for &day in &post_days {
            let mut k = poisson.sample(&mut rng) as usize;
            if cfg.balanced {
                k = k.max(1);
            }
            for _ in 0..k {
                let base = if rng.random_bool(post_share) { W_HIGH } else { W_LOW };
                let (retweet, reply) = style(&mut rng);
                docs.push(Doc { day, w: base + jitter(&mut rng), retweet, reply });
            }
        }
        if cfg.balanced {
            for &day in &pre_days {
                if !docs.iter().any(|d| d.day == day) {
                    docs.push(Doc { day, w: W_LOW + jitter(&mut rng), retweet: None, reply: None });
                }
            }
        }
        for (k, doc) in docs.iter().enumerate() {
            let id = format!("{uid}-{k:04}");
            table.insert(id.clone(), anchors.mixture(doc.w, cfg.vector_noise, &mut rng))?;
            tweets.push(make_tweet(id, &uid, country[i], "en", doc.day, doc, &mut rng));
        }
    }

    let mut pole = |side: &str, anchor: &[f64], lang: &str, rng: &mut ChaCha8Rng| -> Result<CorpusStore> {
        let first = sub_days(cfg.start, cfg.pole_window as u64 - 1);
        let mut out = Vec::new();
        for day in DateRange::new(first, cfg.end)?.days() {
            for k in 0..cfg.pole_tweets_per_day {
                let id = format!("{side}-{}-{k}", day.format("%Y%m%d"));
                let std = Normal::new(0.0, cfg.vector_noise).expect("valid noise sd");
                table.insert(id.clone(), anchor.iter().map(|a| a + std.sample(rng)).collect())?;
                let doc = Doc { day, w: 1.0, retweet: None, reply: None };
                out.push(make_tweet(id, &format!("gov_{side}"), "XX", lang, day, &doc, rng));
            }
        }
        CorpusStore::from_tweets(out)
    };
    let pole_r = pole("r", &anchors.r, "ru", &mut rng)?;
    let pole_u = pole("u", &anchors.u, "uk", &mut rng)?;

    let profiles = (0..n)
        .map(|i| {
            let created_back = rng.random_range(60..3000);
            ProfileRecord {
                user_id: user_id(i),
                followers: 40 * (rank[i] as u64 + 1),
                followees: 40 * (n as u64 + 1 - rank[i] as u64),
                account_created: Some(sub_days(cfg.start, created_back)),
            }
        })
        .collect();

    let ids = |s: &BTreeSet<usize>| s.iter().map(|&i| user_id(i)).collect::<BTreeSet<_>>();
    let truth = GroundTruth {
        true_effect: cfg.corpus_effect,
        latent_slant: latent,
        treated: (0..n).map(|i| (user_id(i), treated[i])).collect(),
        expected: Vec::new(),
        cohorts: CohortTruth {
            interaction: ids(&interaction),
            supplier: ids(&suppliers),
            bot: ids(&bots),
            high_slant: ids(&high_slant),
            high_activity: ids(&high_set.difference(&top).copied().collect()),
            top_activity: ids(&top),
        },
    };
    Ok(SynthCorpus {
        corpus: CorpusStore::from_tweets(tweets)?,
        profiles,
        pole_r,
        pole_u,
        embeddings: table,
        banned_handles: BANNED.iter().map(|h| h.to_string()).collect(),
        region_map: TREATED_COUNTRIES
            .iter()
            .map(|c| (c.to_string(), true))
            .chain(CONTROL_COUNTRIES.iter().map(|c| (c.to_string(), false)))
            .collect(),
        truth,
    })
}

/// One replication's point estimate and interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub estimate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub truth: f64,
    pub n_ok: usize,
    /// `(rep index, error message)` for excluded replications.
    pub failures: Vec<(usize, String)>,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Standard error of the mean estimate across replications.
    pub mc_se: f64,
    pub sd_estimate: f64,
    pub mean_se: f64,
    pub coverage_95: f64,
    pub mean_runtime_secs: f64,
}

/// Runs `rep(derive_seed(master_seed, r))` for `r in 0..reps` in
/// parallel. Failed replications are recorded and excluded.
pub fn monte_carlo<F>(reps: usize, master_seed: u64, truth: f64, rep: F) -> Result<McSummary>
where
    F: Fn(u64) -> Result<RepOutcome> + Sync,
{
    if reps < 50 {
        return Err(Error::Config(format!("monte carlo needs >= 50 reps, got {reps}")));
    }
    let runs: Vec<(Result<RepOutcome>, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let t0 = Instant::now();
            let out = rep(derive_seed(master_seed, r as u64));
            (out, t0.elapsed().as_secs_f64())
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (r, (out, _)) in runs.iter().enumerate() {
        match out {
            Ok(o) => ok.push(*o),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if ok.len() < 2 {
        return Err(Error::Inference(format!(
            "{} of {reps} replications failed; first: {}",
            failures.len(),
            failures.first().map_or("", |f| f.1.as_str())
        )));
    }
    let est: Vec<f64> = ok.iter().map(|o| o.estimate).collect();
    let m = mean(&est).expect("nonempty");
    let sd = sample_variance(&est).expect("n >= 2").sqrt();
    let covered = ok.iter().filter(|o| o.ci95.0 <= truth && truth <= o.ci95.1).count();
    Ok(McSummary {
        reps,
        truth,
        n_ok: ok.len(),
        failures,
        mean_estimate: m,
        bias: m - truth,
        mc_se: sd / (ok.len() as f64).sqrt(),
        sd_estimate: sd,
        mean_se: mean(&ok.iter().map(|o| o.se).collect::<Vec<_>>()).expect("nonempty"),
        coverage_95: covered as f64 / ok.len() as f64,
        mean_runtime_secs: mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>()).expect("nonempty"),
    })
}
