//! User-day panel construction, cohort flags and descriptive tables.
//!
//! Cells exist only for user-days with at least one scored document, so
//! share outcomes are missing (not zero) when their denominator is empty.
//! Every cohort rule looks only at pre-ban documents.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Tweet, UserProfile};
use crate::dates::{sub_days, DateRange};
use crate::error::{Error, Result};
use crate::numeric::{mean, nearest_rank, sample_variance};
use crate::slant::SlantScore;

/// Analysis window; `ban_date` is the first treated day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: NaiveDate,
    pub ban_date: NaiveDate,
    pub end: NaiveDate,
}

impl StudyWindow {
    pub fn new(start: NaiveDate, ban_date: NaiveDate, end: NaiveDate) -> Result<Self> {
        if !(start < ban_date && ban_date <= end) {
            return Err(Error::Config(format!(
                "study window requires start < ban_date <= end, got {start} / {ban_date} / {end}"
            )));
        }
        Ok(Self { start, ban_date, end })
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }

    /// Ban indicator: 1 from `ban_date` onwards.
    pub fn is_post(&self, day: NaiveDate) -> bool {
        day >= self.ban_date
    }

    pub fn is_pre(&self, day: NaiveDate) -> bool {
        self.start <= day && day < self.ban_date
    }

    pub fn range(&self) -> DateRange {
        DateRange { start: self.start, end: self.end }
    }

    pub fn pre_range(&self) -> DateRange {
        DateRange { start: self.start, end: sub_days(self.ban_date, 1) }
    }

    pub fn post_range(&self) -> DateRange {
        DateRange { start: self.ban_date, end: self.end }
    }

    pub fn n_days(&self) -> usize {
        self.range().n_days()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCell {
    pub user_id: String,
    pub day: NaiveDate,
    pub avg_slant: f64,
    pub n_tweets: u32,
    pub n_retweets: u32,
    #[serde(rename = "n_proR_tweets")]
    pub n_pro_r_tweets: u32,
    #[serde(rename = "n_proR_retweets")]
    pub n_pro_r_retweets: u32,
    #[serde(rename = "share_proR_tweets")]
    pub share_pro_r_tweets: Option<f64>,
    #[serde(rename = "share_proR_retweets")]
    pub share_pro_r_retweets: Option<f64>,
    pub mean_words: f64,
    pub mean_mentions: f64,
    pub mean_hashtags: f64,
}

/// Panel columns usable as outcomes or controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PanelVar {
    #[serde(rename = "avg_slant")]
    AvgSlant,
    #[serde(rename = "share_proR_tweets")]
    ShareProRTweets,
    #[serde(rename = "share_proR_retweets")]
    ShareProRRetweets,
    #[serde(rename = "n_proR_tweets")]
    NProRTweets,
    #[serde(rename = "n_proR_retweets")]
    NProRRetweets,
    #[serde(rename = "n_tweets")]
    NTweets,
    #[serde(rename = "n_retweets")]
    NRetweets,
    #[serde(rename = "mean_words")]
    MeanWords,
    #[serde(rename = "mean_mentions")]
    MeanMentions,
    #[serde(rename = "mean_hashtags")]
    MeanHashtags,
}

impl PanelVar {
    pub const ALL: [PanelVar; 10] = [
        PanelVar::AvgSlant,
        PanelVar::ShareProRTweets,
        PanelVar::ShareProRRetweets,
        PanelVar::NProRTweets,
        PanelVar::NProRRetweets,
        PanelVar::NTweets,
        PanelVar::NRetweets,
        PanelVar::MeanWords,
        PanelVar::MeanMentions,
        PanelVar::MeanHashtags,
    ];

    /// The five-outcome battery: average slant, two shares, two counts.
    pub const BATTERY: [PanelVar; 5] = [
        PanelVar::AvgSlant,
        PanelVar::ShareProRTweets,
        PanelVar::ShareProRRetweets,
        PanelVar::NProRTweets,
        PanelVar::NProRRetweets,
    ];

    /// Style controls: words, mentions, hashtags.
    pub const STYLE_CONTROLS: [PanelVar; 3] = [PanelVar::MeanWords, PanelVar::MeanMentions, PanelVar::MeanHashtags];

    pub fn name(self) -> &'static str {
        match self {
            PanelVar::AvgSlant => "avg_slant",
            PanelVar::ShareProRTweets => "share_proR_tweets",
            PanelVar::ShareProRRetweets => "share_proR_retweets",
            PanelVar::NProRTweets => "n_proR_tweets",
            PanelVar::NProRRetweets => "n_proR_retweets",
            PanelVar::NTweets => "n_tweets",
            PanelVar::NRetweets => "n_retweets",
            PanelVar::MeanWords => "mean_words",
            PanelVar::MeanMentions => "mean_mentions",
            PanelVar::MeanHashtags => "mean_hashtags",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown panel column {s:?}")))
    }

    pub fn get(self, c: &PanelCell) -> Option<f64> {
        match self {
            PanelVar::AvgSlant => Some(c.avg_slant),
            PanelVar::ShareProRTweets => c.share_pro_r_tweets,
            PanelVar::ShareProRRetweets => c.share_pro_r_retweets,
            PanelVar::NProRTweets => Some(f64::from(c.n_pro_r_tweets)),
            PanelVar::NProRRetweets => Some(f64::from(c.n_pro_r_retweets)),
            PanelVar::NTweets => Some(f64::from(c.n_tweets)),
            PanelVar::NRetweets => Some(f64::from(c.n_retweets)),
            PanelVar::MeanWords => Some(c.mean_words),
            PanelVar::MeanMentions => Some(c.mean_mentions),
            PanelVar::MeanHashtags => Some(c.mean_hashtags),
        }
    }
}

impl std::fmt::Display for PanelVar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Joins scores to their corpus rows, rejecting unknown and repeated ids.
fn join_scores<'a>(scores: &'a [SlantScore], corpus: &'a CorpusStore) -> Result<Vec<(&'a Tweet, f64)>> {
    let mut seen = BTreeSet::new();
    scores
        .iter()
        .map(|s| {
            let t = corpus
                .get(&s.tweet_id)
                .ok_or_else(|| Error::Integrity(format!("score for unknown tweet {:?}", s.tweet_id)))?;
            if !seen.insert(s.tweet_id.as_str()) {
                return Err(Error::Integrity(format!("tweet {:?} scored twice", s.tweet_id)));
            }
            Ok((t, s.z))
        })
        .collect()
}

/// Aggregates scored documents to one cell per active user-day, ordered by
/// `(user, day)`. Documents count as pro-R when `z > pro_threshold`.
pub fn build_panel(
    scores: &[SlantScore],
    corpus: &CorpusStore,
    window: &StudyWindow,
    pro_threshold: f64,
) -> Result<Vec<PanelCell>> {
    let joined = join_scores(scores, corpus)?;
    let mut groups: BTreeMap<(&str, NaiveDate), Vec<(&Tweet, f64)>> = BTreeMap::new();
    for (t, z) in joined {
        if !window.contains(t.day) {
            return Err(Error::Integrity(format!(
                "scored tweet {:?} on {} lies outside the study window",
                t.id, t.day
            )));
        }
        groups.entry((&t.user_id, t.day)).or_default().push((t, z));
    }
    Ok(groups
        .into_iter()
        .map(|((user, day), docs)| aggregate_cell(user, day, &docs, pro_threshold))
        .collect())
}

fn aggregate_cell(user: &str, day: NaiveDate, docs: &[(&Tweet, f64)], pro_threshold: f64) -> PanelCell {
    let zs: Vec<f64> = docs.iter().map(|(_, z)| *z).collect();
    let col = |f: fn(&Tweet) -> u32| -> f64 {
        mean(&docs.iter().map(|(t, _)| f64::from(f(t))).collect::<Vec<_>>()).unwrap_or(0.0)
    };
    let (mut nt, mut nrt, mut pt, mut prt) = (0u32, 0u32, 0u32, 0u32);
    for (t, z) in docs {
        let pro = u32::from(*z > pro_threshold);
        if t.is_retweet {
            nrt += 1;
            prt += pro;
        } else {
            nt += 1;
            pt += pro;
        }
    }
    let share = |k: u32, n: u32| (n > 0).then(|| f64::from(k) / f64::from(n));
    PanelCell {
        user_id: user.to_string(),
        day,
        avg_slant: mean(&zs).expect("cell has documents"),
        n_tweets: nt,
        n_retweets: nrt,
        n_pro_r_tweets: pt,
        n_pro_r_retweets: prt,
        share_pro_r_tweets: share(pt, nt),
        share_pro_r_retweets: share(prt, nrt),
        mean_words: col(|t| t.n_words),
        mean_mentions: col(|t| t.n_mentions),
        mean_hashtags: col(|t| t.n_hashtags),
    }
}

pub const PANEL_CSV_HEADER: [&str; 12] = [
    "user_id",
    "day",
    "avg_slant",
    "n_tweets",
    "n_retweets",
    "n_proR_tweets",
    "n_proR_retweets",
    "share_proR_tweets",
    "share_proR_retweets",
    "mean_words",
    "mean_mentions",
    "mean_hashtags",
];

pub fn write_panel_csv<W: Write>(cells: &[PanelCell], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PANEL_CSV_HEADER)?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for c in cells {
        wtr.write_record([
            c.user_id.clone(),
            c.day.to_string(),
            format!("{:?}", c.avg_slant),
            c.n_tweets.to_string(),
            c.n_retweets.to_string(),
            c.n_pro_r_tweets.to_string(),
            c.n_pro_r_retweets.to_string(),
            opt(c.share_pro_r_tweets),
            opt(c.share_pro_r_retweets),
            format!("{:?}", c.mean_words),
            format!("{:?}", c.mean_mentions),
            format!("{:?}", c.mean_hashtags),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_panel_csv<R: Read>(r: R) -> Result<Vec<PanelCell>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Lowercased handle with surrounding whitespace and a leading `@` removed.
pub fn normalize_handle(h: &str) -> String {
    h.trim().trim_start_matches('@').to_lowercase()
}

/// Users with a pre-ban retweet of, or reply to, a banned handle.
pub fn flag_interaction_users(
    c: &CorpusStore,
    banned_handles: &BTreeSet<String>,
    window: &StudyWindow,
) -> Result<BTreeSet<String>> {
    if banned_handles.is_empty() {
        return Err(Error::Config("banned handle set is empty".into()));
    }
    let banned: BTreeSet<String> = banned_handles.iter().map(|h| normalize_handle(h)).collect();
    let hits = |h: &Option<String>| h.as_deref().is_some_and(|h| banned.contains(&normalize_handle(h)));
    Ok(c.iter()
        .filter(|t| t.day < window.ban_date)
        .filter(|t| hits(&t.retweeted_handle) || hits(&t.replied_handle))
        .map(|t| t.user_id.clone())
        .collect())
}

/// Users with at least one pre-ban document with `z > threshold`.
pub fn flag_suppliers(
    scores: &[SlantScore],
    corpus: &CorpusStore,
    window: &StudyWindow,
    threshold: f64,
) -> Result<BTreeSet<String>> {
    Ok(join_scores(scores, corpus)?
        .into_iter()
        .filter(|(t, z)| t.day < window.ban_date && *z > threshold)
        .map(|(t, _)| t.user_id.clone())
        .collect())
}

/// Result of a percentile split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub below: BTreeSet<String>,
    pub above: BTreeSet<String>,
    /// Set when every statistic is equal (`above` is then empty).
    pub degenerate: bool,
}

/// Splits users at the nearest-rank quantile `cutoff`; users strictly
/// above it go to `above`, ties at the quantile go below.
pub fn percentile_split(user_stats: &BTreeMap<String, f64>, cutoff: f64) -> Result<Split> {
    if user_stats.len() < 2 {
        return Err(Error::Degenerate(format!(
            "percentile split needs >= 2 users, got {}",
            user_stats.len()
        )));
    }
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::Config(format!("cutoff {cutoff} outside (0, 1)")));
    }
    let mut sorted: Vec<f64> = user_stats.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[nearest_rank(cutoff, sorted.len()) - 1];
    let mut split = Split { degenerate: sorted[0] == sorted[sorted.len() - 1], ..Default::default() };
    for (u, v) in user_stats {
        if *v > q {
            split.above.insert(u.clone());
        } else {
            split.below.insert(u.clone());
        }
    }
    Ok(split)
}

/// Plausible bots: activity strictly above the `act_pct` quantile and
/// reputation strictly below the `rep_pct` quantile. Users without a
/// defined reputation are excluded from the reputation distribution and
/// never flagged. Missing activity counts as zero.
pub fn flag_bots(
    profiles: &[UserProfile],
    activity: &BTreeMap<String, f64>,
    act_pct: f64,
    rep_pct: f64,
) -> Result<BTreeSet<String>> {
    if profiles.len() < 4 {
        return Err(Error::Degenerate(format!(
            "bot percentiles need >= 4 users, got {}",
            profiles.len()
        )));
    }
    let act = |u: &str| activity.get(u).copied().unwrap_or(0.0);
    let mut acts: Vec<f64> = profiles.iter().map(|p| act(&p.user_id)).collect();
    acts.sort_by(f64::total_cmp);
    let act_q = acts[nearest_rank(act_pct, acts.len()) - 1];
    let mut reps: Vec<f64> = profiles.iter().filter_map(UserProfile::reputation).collect();
    if reps.is_empty() {
        return Ok(BTreeSet::new());
    }
    reps.sort_by(f64::total_cmp);
    let rep_q = reps[nearest_rank(rep_pct, reps.len()) - 1];
    Ok(profiles
        .iter()
        .filter(|p| act(&p.user_id) > act_q && p.reputation().is_some_and(|r| r < rep_q))
        .map(|p| p.user_id.clone())
        .collect())
}

/// Pre-ban documents per pre-ban day for each user with pre-ban activity.
pub fn pre_ban_activity(c: &CorpusStore, window: &StudyWindow) -> BTreeMap<String, f64> {
    let span = window.pre_range().n_days() as f64;
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for t in c.iter().filter(|t| window.is_pre(t.day)) {
        *counts.entry(t.user_id.clone()).or_default() += 1.0;
    }
    counts.values_mut().for_each(|v| *v /= span);
    counts
}

/// Mean pre-ban `z` per user with pre-ban documents.
pub fn pre_ban_mean_slant(
    scores: &[SlantScore],
    corpus: &CorpusStore,
    window: &StudyWindow,
) -> Result<BTreeMap<String, f64>> {
    let mut zs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (t, z) in join_scores(scores, corpus)? {
        if window.is_pre(t.day) {
            zs.entry(t.user_id.clone()).or_default().push(z);
        }
    }
    Ok(zs.into_iter().map(|(u, v)| (u, mean(&v).expect("nonempty"))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlantGroup {
    Moderate,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityGroup {
    Moderate,
    High,
    Top05,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortFlags {
    pub user_id: String,
    pub in_treated_region: bool,
    pub is_interaction: bool,
    pub is_supplier: bool,
    pub is_bot: bool,
    pub created_after_ban: bool,
    pub slant_group: SlantGroup,
    pub activity_group: ActivityGroup,
}

/// Thresholds and cutoffs for cohort construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortOptions {
    pub supplier_threshold: f64,
    pub bot_activity_pct: f64,
    pub bot_reputation_pct: f64,
    pub slant_cutoff: f64,
    pub activity_high_cutoff: f64,
    pub activity_top_cutoff: f64,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self {
            supplier_threshold: 1.0,
            bot_activity_pct: 0.75,
            bot_reputation_pct: 0.25,
            slant_cutoff: 0.75,
            activity_high_cutoff: 0.75,
            activity_top_cutoff: 0.995,
        }
    }
}

/// All cohort flags, one row per profile, in profile order.
///
/// Slant groups split users with pre-ban documents on their mean pre-ban
/// `z`; users with no pre-ban documents are `moderate`. Activity groups
/// split all users on pre-ban documents per day.
pub fn derive_cohort_flags(
    corpus: &CorpusStore,
    scores: &[SlantScore],
    profiles: &[UserProfile],
    banned_handles: &BTreeSet<String>,
    window: &StudyWindow,
    opts: &CohortOptions,
) -> Result<Vec<CohortFlags>> {
    let interaction = flag_interaction_users(corpus, banned_handles, window)?;
    let suppliers = flag_suppliers(scores, corpus, window, opts.supplier_threshold)?;
    let activity = pre_ban_activity(corpus, window);
    let bots = flag_bots(profiles, &activity, opts.bot_activity_pct, opts.bot_reputation_pct)?;

    let slant = pre_ban_mean_slant(scores, corpus, window)?;
    let high_slant = if slant.len() >= 2 {
        percentile_split(&slant, opts.slant_cutoff)?.above
    } else {
        BTreeSet::new()
    };
    let all_activity: BTreeMap<String, f64> = profiles
        .iter()
        .map(|p| (p.user_id.clone(), activity.get(&p.user_id).copied().unwrap_or(0.0)))
        .collect();
    let high_act = percentile_split(&all_activity, opts.activity_high_cutoff)?.above;
    let top_act = percentile_split(&all_activity, opts.activity_top_cutoff)?.above;

    Ok(profiles
        .iter()
        .map(|p| {
            let u = &p.user_id;
            CohortFlags {
                user_id: u.clone(),
                in_treated_region: p.in_treated_region,
                is_interaction: interaction.contains(u),
                is_supplier: suppliers.contains(u),
                is_bot: bots.contains(u),
                created_after_ban: p.account_created.is_some_and(|d| d >= window.ban_date),
                slant_group: if high_slant.contains(u) { SlantGroup::High } else { SlantGroup::Moderate },
                activity_group: if top_act.contains(u) {
                    ActivityGroup::Top05
                } else if high_act.contains(u) {
                    ActivityGroup::High
                } else {
                    ActivityGroup::Moderate
                },
            }
        })
        .collect())
}

pub fn write_flags_csv<W: Write>(flags: &[CohortFlags], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for f in flags {
        wtr.serialize(f)?;
    }
    if flags.is_empty() {
        wtr.write_record([
            "user_id",
            "in_treated_region",
            "is_interaction",
            "is_supplier",
            "is_bot",
            "created_after_ban",
            "slant_group",
            "activity_group",
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_flags_csv<R: Read>(r: R) -> Result<Vec<CohortFlags>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub var: PanelVar,
    pub mean_t: f64,
    pub mean_c: f64,
    pub diff: f64,
    pub t_stat: f64,
    pub n_t: usize,
    pub n_c: usize,
}

/// Per-user means of `var` over pre-ban cells (cells where it is defined).
pub fn user_pre_means(panel: &[PanelCell], window: &StudyWindow, var: PanelVar) -> BTreeMap<String, f64> {
    let mut vals: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in panel.iter().filter(|c| window.is_pre(c.day)) {
        if let Some(v) = var.get(c) {
            vals.entry(&c.user_id).or_default().push(v);
        }
    }
    vals.into_iter()
        .map(|(u, v)| (u.to_string(), mean(&v).expect("nonempty")))
        .collect()
}

/// Welch two-sample t statistic; `0` when both the difference and its
/// standard error vanish.
pub fn welch_t(a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    let (ma, mb) = (mean(a)?, mean(b)?);
    let (va, vb) = (sample_variance(a)?, sample_variance(b)?);
    let diff = ma - mb;
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    let t = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Some((diff, t))
}

/// Pre-ban balance tests between two user groups on user-level means.
pub fn balance_table(
    panel: &[PanelCell],
    group_t: &BTreeSet<String>,
    group_c: &BTreeSet<String>,
    window: &StudyWindow,
    vars: &[PanelVar],
) -> Result<Vec<BalanceRow>> {
    vars.iter()
        .map(|&var| {
            let means = user_pre_means(panel, window, var);
            let pick = |g: &BTreeSet<String>| -> Vec<f64> {
                g.iter().filter_map(|u| means.get(u).copied()).collect()
            };
            let (t, c) = (pick(group_t), pick(group_c));
            for (name, g) in [("treated", &t), ("control", &c)] {
                if g.len() < 2 {
                    return Err(Error::Degenerate(format!(
                        "{name} group has {} users with pre-ban {var}; need >= 2",
                        g.len()
                    )));
                }
            }
            let (diff, t_stat) = welch_t(&t, &c).expect("sizes checked");
            Ok(BalanceRow {
                var,
                mean_t: mean(&t).unwrap(),
                mean_c: mean(&c).unwrap(),
                diff,
                t_stat,
                n_t: t.len(),
                n_c: c.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Treated,
    Control,
}

/// Share of users active in `(period, region)` who supplied at least one
/// document with `z > 1` within that period.
pub fn supplier_share(
    scores: &[SlantScore],
    corpus: &CorpusStore,
    treated: &HashMap<String, bool>,
    window: &StudyWindow,
    period: Period,
    region: Region,
    bots_only: Option<&BTreeSet<String>>,
) -> Result<f64> {
    let mut active = BTreeSet::new();
    let mut supplying = BTreeSet::new();
    for (t, z) in join_scores(scores, corpus)? {
        let in_period = match period {
            Period::Pre => window.is_pre(t.day),
            Period::Post => window.contains(t.day) && window.is_post(t.day),
        };
        let in_region = match treated.get(&t.user_id) {
            Some(&tr) => tr == (region == Region::Treated),
            None => return Err(Error::Integrity(format!("user {:?} has no region", t.user_id))),
        };
        if !in_period || !in_region || bots_only.is_some_and(|b| !b.contains(&t.user_id)) {
            continue;
        }
        active.insert(t.user_id.as_str());
        if z > 1.0 {
            supplying.insert(t.user_id.as_str());
        }
    }
    if active.is_empty() {
        return Err(Error::Degenerate(format!("no active users for {period:?}/{region:?}")));
    }
    Ok(supplying.len() as f64 / active.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 3, d).unwrap()
    }

    fn window() -> StudyWindow {
        StudyWindow::new(day(1), day(5), day(10)).unwrap()
    }

    fn tweet(id: &str, user: &str, d: u32, rt: Option<&str>) -> Tweet {
        Tweet {
            id: id.into(),
            user_id: user.into(),
            timestamp: chrono::Utc.with_ymd_and_hms(2022, 3, d, 12, 0, 0).unwrap(),
            day: day(d),
            text: "x".into(),
            lang: "en".into(),
            country: "DE".into(),
            is_retweet: rt.is_some(),
            retweeted_handle: rt.map(str::to_string),
            replied_handle: None,
            n_words: 1,
            n_mentions: 0,
            n_hashtags: 0,
        }
    }

    fn score(id: &str, z: f64) -> SlantScore {
        SlantScore { tweet_id: id.into(), raw: z, z, flag_1sd: u8::from(z > 1.0), flag_0: u8::from(z > 0.0) }
    }

    #[test]
    fn window_validation() {
        assert!(StudyWindow::new(day(5), day(5), day(10)).is_err());
        assert!(StudyWindow::new(day(1), day(5), day(5)).is_ok());
        let w = window();
        assert!(w.is_post(day(5)) && !w.is_post(day(4)));
    }

    #[test]
    fn single_tweet_cell() {
        let c = CorpusStore::from_tweets(vec![tweet("a", "u", 2, None)]).unwrap();
        let p = build_panel(&[score("a", 2.0)], &c, &window(), 1.0).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].avg_slant, 2.0);
        assert_eq!((p[0].n_tweets, p[0].n_pro_r_tweets), (1, 1));
        assert_eq!(p[0].share_pro_r_tweets, Some(1.0));
        assert_eq!(p[0].share_pro_r_retweets, None);
    }

    #[test]
    fn retweet_only_cell_has_no_tweet_share() {
        let c = CorpusStore::from_tweets(vec![tweet("a", "u", 2, Some("x"))]).unwrap();
        let p = build_panel(&[score("a", 0.5)], &c, &window(), 1.0).unwrap();
        assert_eq!(p[0].share_pro_r_tweets, None);
        assert_eq!(p[0].share_pro_r_retweets, Some(0.0));
    }

    #[test]
    fn unknown_or_duplicate_scores_are_integrity_errors() {
        let c = CorpusStore::from_tweets(vec![tweet("a", "u", 2, None)]).unwrap();
        assert!(matches!(build_panel(&[score("b", 0.0)], &c, &window(), 1.0), Err(Error::Integrity(_))));
        assert!(matches!(
            build_panel(&[score("a", 0.0), score("a", 0.0)], &c, &window(), 1.0),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn interaction_requires_pre_ban() {
        let c = CorpusStore::from_tweets(vec![
            tweet("a", "pre", 2, Some("@RT_com")),
            tweet("b", "post", 6, Some("RT_com")),
            tweet("c", "other", 2, Some("bbc")),
        ])
        .unwrap();
        let banned: BTreeSet<String> = ["rt_com".to_string()].into();
        let f = flag_interaction_users(&c, &banned, &window()).unwrap();
        assert_eq!(f, ["pre".to_string()].into());
        assert!(flag_interaction_users(&c, &BTreeSet::new(), &window()).is_err());
    }

    #[test]
    fn supplier_examples() {
        let c = CorpusStore::from_tweets(vec![
            tweet("a", "s", 2, Some("x")),
            tweet("b", "n", 2, None),
            tweet("c", "late", 7, None),
        ])
        .unwrap();
        let s = [score("a", 1.2), score("b", 0.9), score("c", 3.0)];
        let f = flag_suppliers(&s, &c, &window(), 1.0).unwrap();
        assert_eq!(f, ["s".to_string()].into());
    }

    #[test]
    fn percentile_examples() {
        let stats: BTreeMap<String, f64> = (1..=4).map(|i| (format!("u{i}"), f64::from(i))).collect();
        let s = percentile_split(&stats, 0.75).unwrap();
        assert_eq!(s.above, ["u4".to_string()].into());
        let flat: BTreeMap<String, f64> = (1..=4).map(|i| (format!("u{i}"), 1.0)).collect();
        let s = percentile_split(&flat, 0.75).unwrap();
        assert!(s.above.is_empty() && s.degenerate);
        assert!(percentile_split(&stats, 1.0).is_err());
        assert!(percentile_split(&stats.iter().take(1).map(|(k, v)| (k.clone(), *v)).collect(), 0.5).is_err());
    }

    fn profile(u: &str, followers: u64, followees: u64) -> UserProfile {
        UserProfile {
            user_id: u.into(),
            country: "DE".into(),
            in_treated_region: true,
            followers,
            followees,
            account_created: None,
            n_tweets: 0,
            n_retweets: 0,
            n_replies: 0,
        }
    }

    #[test]
    fn bots_need_four_users_and_defined_reputation() {
        let ps = vec![profile("a", 1, 1), profile("b", 1, 1), profile("c", 1, 1)];
        assert!(flag_bots(&ps, &BTreeMap::new(), 0.75, 0.25).is_err());
        let ps = vec![profile("a", 0, 0), profile("b", 5, 5), profile("c", 9, 1), profile("d", 8, 2), profile("e", 7, 3)];
        let act: BTreeMap<String, f64> = [("a".to_string(), 100.0)].into();
        assert!(flag_bots(&ps, &act, 0.75, 0.25).unwrap().is_empty());
    }

    #[test]
    fn welch_closed_form() {
        let a = [2.0, 3.0, 4.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let (diff, t) = welch_t(&a, &b).unwrap();
        // va = 1, vb = 5/3 -> se = sqrt(1/3 + 5/12) = sqrt(0.75)
        assert!((diff - 0.5).abs() < 1e-15);
        assert!((t - 0.5 / 0.75_f64.sqrt()).abs() < 1e-14);
    }
}
