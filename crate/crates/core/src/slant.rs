//! Reference poles, the pole similarity ratio, standardization and
//! binary classification of document slant.
//!
//! A document `d` is scored against an R pole and a U pole as
//!
//! ```text
//! raw = (sim(d, R) + b) / (sim(d, U) + b) - 1
//! ```
//!
//! with cosine similarity `sim` and smoothing `b` (default 1). Positive
//! values lean toward R. Raw scores are standardized once over the scored
//! study corpus and the frozen statistics are reused for every later
//! sub-sample.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::dates::{sub_days, DateRange};
use crate::encoder::{cosine_similarity, EmbeddingVector, EncoderBackend};
use crate::error::{Error, Result};
use crate::numeric::{mean, pairwise_sum_by, sample_variance, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PoleSide {
    /// Positive side of the ratio.
    R,
    /// Negative side of the ratio.
    U,
}

/// Embedded reference tweets for one side.
#[derive(Debug, Clone)]
pub struct PoleCorpus {
    pub side: PoleSide,
    pub tweets: Vec<(NaiveDate, EmbeddingVector)>,
}

impl PoleCorpus {
    /// Embeds every tweet of `corpus` with `backend`.
    pub fn embed(side: PoleSide, corpus: &CorpusStore, backend: &EncoderBackend) -> Result<Self> {
        let tweets = corpus
            .tweets()
            .par_iter()
            .map(|t| Ok((t.day, backend.encode(&t.id, &t.text)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { side, tweets })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pole {
    pub side: PoleSide,
    /// `None` for a static pole.
    pub day: Option<NaiveDate>,
    pub vector: EmbeddingVector,
}

fn mean_vector<'a>(vs: impl Iterator<Item = (&'a [f64], f64)>, dim: usize) -> Option<Vec<f64>> {
    let rows: Vec<(&[f64], f64)> = vs.collect();
    let wsum = pairwise_sum_by(rows.len(), &|i| rows[i].1);
    if rows.is_empty() || wsum <= 0.0 {
        return None;
    }
    Some(
        (0..dim)
            .map(|j| pairwise_sum_by(rows.len(), &|i| rows[i].0[j] * rows[i].1) / wsum)
            .collect(),
    )
}

fn finish_pole(side: PoleSide, day: Option<NaiveDate>, v: Vec<f64>) -> Result<Pole> {
    let vector = EmbeddingVector::new(v)?;
    if vector.is_zero() {
        return Err(Error::Domain(format!("{side:?} pole for {day:?} is the zero vector")));
    }
    Ok(Pole { side, day, vector })
}

/// Unweighted mean of member vectors, optionally restricted to a day range.
pub fn build_static_pole(pc: &PoleCorpus, restrict: Option<DateRange>) -> Result<Pole> {
    let dim = pc.tweets.first().map_or(0, |(_, v)| v.dim());
    let members = pc
        .tweets
        .iter()
        .filter(|(d, _)| restrict.is_none_or(|r| r.contains(*d)))
        .map(|(_, v)| (v.values(), 1.0));
    let v = mean_vector(members, dim).ok_or_else(|| {
        Error::Domain(match restrict {
            Some(r) => format!("no {:?} pole tweets in {r}", pc.side),
            None => format!("no {:?} pole tweets", pc.side),
        })
    })?;
    finish_pole(pc.side, None, v)
}

/// Decay weights for a rolling window, oldest day first:
/// `decay^((window - 1 - i) / (window - 1))`, so the oldest day gets
/// `decay` and day `t` gets 1.
pub fn decay_weights(window: usize, decay: f64) -> Vec<f64> {
    if window <= 1 {
        return vec![1.0; window];
    }
    let span = (window - 1) as f64;
    (0..window).map(|i| decay.powf((window - 1 - i) as f64 / span)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoleWeighting {
    /// Average each day first, then weight days.
    #[default]
    DayMean,
    /// Weight every tweet by its day's weight.
    PerTweet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub window: usize,
    pub decay: f64,
    pub weighting: PoleWeighting,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self { window: 8, decay: 0.5, weighting: PoleWeighting::DayMean }
    }
}

/// Per-day poles from tweets in `[t - window + 1, t]`, weighted by
/// [`decay_weights`] and renormalized over populated days.
pub fn build_rolling_poles(
    pc: &PoleCorpus,
    days: impl IntoIterator<Item = NaiveDate>,
    cfg: &RollingConfig,
) -> Result<BTreeMap<NaiveDate, Pole>> {
    if cfg.window == 0 || !(cfg.decay > 0.0 && cfg.decay <= 1.0) {
        return Err(Error::Config(format!(
            "rolling window {} / decay {} invalid",
            cfg.window, cfg.decay
        )));
    }
    let dim = pc.tweets.first().map_or(0, |(_, v)| v.dim());
    let mut by_day: BTreeMap<NaiveDate, Vec<&[f64]>> = BTreeMap::new();
    for (d, v) in &pc.tweets {
        by_day.entry(*d).or_default().push(v.values());
    }
    let day_means: BTreeMap<NaiveDate, Vec<f64>> = by_day
        .iter()
        .map(|(d, vs)| (*d, mean_vector(vs.iter().map(|v| (*v, 1.0)), dim).expect("nonempty day")))
        .collect();
    let weights = decay_weights(cfg.window, cfg.decay);

    let mut out = BTreeMap::new();
    for t in days {
        let first = sub_days(t, (cfg.window - 1) as u64);
        let v = match cfg.weighting {
            PoleWeighting::DayMean => mean_vector(
                first
                    .iter_days()
                    .zip(&weights)
                    .filter_map(|(k, w)| day_means.get(&k).map(|m| (m.as_slice(), *w))),
                dim,
            ),
            PoleWeighting::PerTweet => mean_vector(
                first.iter_days().zip(&weights).flat_map(|(k, w)| {
                    by_day.get(&k).into_iter().flatten().map(move |v| (*v, *w))
                }),
                dim,
            ),
        };
        let v = v.ok_or_else(|| {
            Error::Domain(format!("no {:?} pole tweets in window {first}..={t}", pc.side))
        })?;
        out.insert(t, finish_pole(pc.side, Some(t), v)?);
    }
    Ok(out)
}

/// `(sim_r + b) / (sim_u + b) - 1`.
pub fn pole_ratio(sim_r: f64, sim_u: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("smoothing must be positive, got {b}")));
    }
    let den = sim_u + b;
    if den <= 0.0 {
        return Err(Error::Domain(format!("pole ratio denominator {den} <= 0 (sim_u = {sim_u})")));
    }
    Ok((sim_r + b) / den - 1.0)
}

pub fn score_document(d: &EmbeddingVector, r: &Pole, u: &Pole, b: f64) -> Result<f64> {
    pole_ratio(cosine_similarity(d, &r.vector)?, cosine_similarity(d, &u.vector)?, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoleMode {
    Static,
    /// Static poles from pre-ban reference tweets only.
    StaticPreban,
    #[default]
    Rolling,
}

/// Pole configuration as persisted in study configs and stats files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoleConfig {
    pub mode: PoleMode,
    pub window: usize,
    pub decay: f64,
    /// Smoothing parameter `b`.
    pub b: f64,
    pub weighting: PoleWeighting,
}

impl Default for PoleConfig {
    fn default() -> Self {
        Self { mode: PoleMode::Rolling, window: 8, decay: 0.5, b: 1.0, weighting: PoleWeighting::DayMean }
    }
}

impl PoleConfig {
    pub fn rolling(&self) -> RollingConfig {
        RollingConfig { window: self.window, decay: self.decay, weighting: self.weighting }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("pole config serializes"))
    }
}

#[derive(Debug, Clone)]
pub enum PoleSet {
    Static { r: Pole, u: Pole },
    Rolling { r: BTreeMap<NaiveDate, Pole>, u: BTreeMap<NaiveDate, Pole> },
}

impl PoleSet {
    /// Builds poles for `days` according to `cfg`; `ban_date` bounds the
    /// pre-ban static variant.
    pub fn build(
        r: &PoleCorpus,
        u: &PoleCorpus,
        cfg: &PoleConfig,
        days: &BTreeSet<NaiveDate>,
        ban_date: NaiveDate,
    ) -> Result<Self> {
        match cfg.mode {
            PoleMode::Static => Ok(PoleSet::Static {
                r: build_static_pole(r, None)?,
                u: build_static_pole(u, None)?,
            }),
            PoleMode::StaticPreban => {
                let pre = DateRange { start: NaiveDate::MIN, end: sub_days(ban_date, 1) };
                Ok(PoleSet::Static {
                    r: build_static_pole(r, Some(pre))?,
                    u: build_static_pole(u, Some(pre))?,
                })
            }
            PoleMode::Rolling => Ok(PoleSet::Rolling {
                r: build_rolling_poles(r, days.iter().copied(), &cfg.rolling())?,
                u: build_rolling_poles(u, days.iter().copied(), &cfg.rolling())?,
            }),
        }
    }

    pub fn poles_for(&self, day: NaiveDate) -> Option<(&Pole, &Pole)> {
        match self {
            PoleSet::Static { r, u } => Some((r, u)),
            PoleSet::Rolling { r, u } => Some((r.get(&day)?, u.get(&day)?)),
        }
    }

    /// `(day, side, vector)` rows for export; static poles have no day.
    pub fn rows(&self) -> Vec<(Option<NaiveDate>, PoleSide, &EmbeddingVector)> {
        match self {
            PoleSet::Static { r, u } => vec![(None, r.side, &r.vector), (None, u.side, &u.vector)],
            PoleSet::Rolling { r, u } => r
                .values()
                .chain(u.values())
                .map(|p| (p.day, p.side, &p.vector))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub pole_config_hash: String,
}

impl StandardizationStats {
    /// Mean and sample standard deviation (`n - 1`) of the raw scores.
    pub fn compute(raws: &[f64], pole_config_hash: impl Into<String>) -> Result<Self> {
        let n = raws.len();
        let var = sample_variance(raws)
            .ok_or_else(|| Error::Degenerate(format!("standardization needs >= 2 scores, got {n}")))?;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::Degenerate("raw scores have zero variance".into()));
        }
        Ok(Self { mean: mean(raws).expect("n >= 2"), sd, n, pole_config_hash: pole_config_hash.into() })
    }

    pub fn z(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }
}

/// 1 iff `z` is strictly above the threshold.
pub fn classify(z: f64, threshold: f64) -> u8 {
    u8::from(z > threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlantScore {
    pub tweet_id: String,
    pub raw: f64,
    pub z: f64,
    pub flag_1sd: u8,
    pub flag_0: u8,
}

impl SlantScore {
    pub fn from_raw(tweet_id: String, raw: f64, stats: &StandardizationStats) -> Self {
        let z = stats.z(raw);
        Self { tweet_id, raw, z, flag_1sd: classify(z, 1.0), flag_0: classify(z, 0.0) }
    }
}

#[derive(Debug, Clone)]
pub struct ScoredCorpus {
    pub scores: Vec<SlantScore>,
    pub stats: StandardizationStats,
}

/// Raw ratio for every document in corpus order.
pub fn raw_scores(
    corpus: &CorpusStore,
    backend: &EncoderBackend,
    poles: &PoleSet,
    b: f64,
) -> Result<Vec<f64>> {
    let missing: BTreeSet<NaiveDate> = corpus
        .iter()
        .map(|t| t.day)
        .filter(|d| poles.poles_for(*d).is_none())
        .collect();
    if !missing.is_empty() {
        let days: Vec<String> = missing.iter().map(ToString::to_string).collect();
        return Err(Error::Integrity(format!("no poles for days: {}", days.join(", "))));
    }
    corpus
        .tweets()
        .par_iter()
        .map(|t| {
            let (r, u) = poles.poles_for(t.day).expect("checked above");
            let d = backend.encode(&t.id, &t.text)?;
            score_document(&d, r, u, b)
        })
        .collect()
}

/// Scores and standardizes a corpus with statistics computed on it.
pub fn score_corpus(
    corpus: &CorpusStore,
    backend: &EncoderBackend,
    poles: &PoleSet,
    cfg: &PoleConfig,
) -> Result<ScoredCorpus> {
    let raws = raw_scores(corpus, backend, poles, cfg.b)?;
    let stats = StandardizationStats::compute(&raws, cfg.hash())?;
    Ok(ScoredCorpus { scores: standardize(corpus, &raws, &stats), stats })
}

/// Applies frozen statistics to raw scores aligned with `corpus` order.
pub fn standardize(corpus: &CorpusStore, raws: &[f64], stats: &StandardizationStats) -> Vec<SlantScore> {
    corpus
        .iter()
        .zip(raws)
        .map(|(t, r)| SlantScore::from_raw(t.id.clone(), *r, stats))
        .collect()
}

pub fn write_scores_csv<W: Write>(scores: &[SlantScore], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["tweet_id", "raw", "z", "flag_1sd", "flag_0"])?;
    for s in scores {
        wtr.write_record([
            s.tweet_id.clone(),
            format!("{:?}", s.raw),
            format!("{:?}", s.z),
            s.flag_1sd.to_string(),
            s.flag_0.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(r: R) -> Result<Vec<SlantScore>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 3, day).unwrap()
    }

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn decay_weights_match_reference_list() {
        let expected = [0.5, 0.55204476, 0.60950683, 0.6729501, 0.74299714, 0.82033536, 0.90572366, 1.0];
        let w = decay_weights(8, 0.5);
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 5e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn static_pole_examples() {
        let pc = PoleCorpus { side: PoleSide::R, tweets: vec![(d(1), ev(&[1.0, 0.0]))] };
        assert_eq!(build_static_pole(&pc, None).unwrap().vector.values(), &[1.0, 0.0]);
        let pc = PoleCorpus {
            side: PoleSide::R,
            tweets: vec![(d(1), ev(&[1.0, 0.0])), (d(2), ev(&[0.0, 1.0]))],
        };
        assert_eq!(build_static_pole(&pc, None).unwrap().vector.values(), &[0.5, 0.5]);
        let pre = DateRange::new(d(1), d(1)).unwrap();
        assert_eq!(build_static_pole(&pc, Some(pre)).unwrap().vector.values(), &[1.0, 0.0]);
        let empty = DateRange::new(d(5), d(6)).unwrap();
        let err = build_static_pole(&pc, Some(empty)).unwrap_err();
        assert!(err.to_string().contains("2022-03-05"));
    }

    #[test]
    fn rolling_single_day_and_convexity() {
        let cfg = RollingConfig::default();
        let pc = PoleCorpus { side: PoleSide::U, tweets: vec![(d(10), ev(&[1.0, 2.0])), (d(10), ev(&[3.0, 2.0]))] };
        let poles = build_rolling_poles(&pc, [d(10)], &cfg).unwrap();
        assert_eq!(poles[&d(10)].vector.values(), &[2.0, 2.0]);

        let pc = PoleCorpus { side: PoleSide::U, tweets: vec![(d(4), ev(&[1.0, 2.0])), (d(10), ev(&[1.0, 2.0]))] };
        let poles = build_rolling_poles(&pc, [d(10)], &cfg).unwrap();
        assert_eq!(poles[&d(10)].vector.values(), &[1.0, 2.0]);
    }

    #[test]
    fn rolling_weights_two_days() {
        let cfg = RollingConfig::default();
        // day t-7 (weight .5) and day t (weight 1)
        let pc = PoleCorpus { side: PoleSide::R, tweets: vec![(d(1), ev(&[1.0, 0.0])), (d(8), ev(&[0.0, 1.0]))] };
        let p = build_rolling_poles(&pc, [d(8)], &cfg).unwrap();
        let v = p[&d(8)].vector.values();
        assert!((v[0] - 0.5 / 1.5).abs() < 1e-15 && (v[1] - 1.0 / 1.5).abs() < 1e-15);
        // day t-8 is outside the window
        assert!(build_rolling_poles(&pc, [d(9)], &cfg).is_ok());
        assert!(build_rolling_poles(&pc, [d(16)], &cfg).is_err());
    }

    #[test]
    fn per_tweet_weighting_differs_from_day_mean() {
        let pc = PoleCorpus {
            side: PoleSide::R,
            tweets: vec![(d(1), ev(&[1.0, 0.0])), (d(8), ev(&[0.0, 1.0])), (d(8), ev(&[0.0, 1.0]))],
        };
        let dm = build_rolling_poles(&pc, [d(8)], &RollingConfig::default()).unwrap();
        let pt = build_rolling_poles(
            &pc,
            [d(8)],
            &RollingConfig { weighting: PoleWeighting::PerTweet, ..Default::default() },
        )
        .unwrap();
        assert!((pt[&d(8)].vector.values()[0] - 0.5 / 2.5).abs() < 1e-15);
        assert_ne!(dm[&d(8)].vector, pt[&d(8)].vector);
    }

    #[test]
    fn ratio_fixtures() {
        assert_eq!(pole_ratio(0.3, 0.3, 1.0).unwrap(), 0.0);
        assert_eq!(pole_ratio(1.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(pole_ratio(0.0, 1.0, 1.0).unwrap(), -0.5);
        assert!(pole_ratio(0.0, -1.0, 1.0).is_err());
        assert!(pole_ratio(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify(1.0, 1.0), 0);
        assert_eq!(classify(4.89, 1.0), 1);
        assert_eq!(classify(0.5, 1.0), 0);
        assert_eq!(classify(0.5, 0.0), 1);
    }

    #[test]
    fn constant_scores_are_degenerate() {
        assert!(matches!(StandardizationStats::compute(&[0.2; 5], "h"), Err(Error::Degenerate(_))));
    }

    #[test]
    fn config_hash_tracks_fields() {
        let a = PoleConfig::default();
        let b = PoleConfig { decay: 0.6, ..a };
        assert_eq!(a.hash(), PoleConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
