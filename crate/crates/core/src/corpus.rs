//! Tweet corpus ingestion, validation, filtering and descriptive analysis.
//!
//! Records arrive as line-delimited JSON or CSV with a header row. Each
//! record is normalized into a [`Tweet`]; malformed records are rejected
//! individually with a reason instead of aborting the whole stream.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// One document of the corpus (tweet, retweet or reply).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub user_id: String,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
    pub day: NaiveDate,
    pub text: String,
    pub lang: String,
    pub country: String,
    pub is_retweet: bool,
    pub retweeted_handle: Option<String>,
    pub replied_handle: Option<String>,
    pub n_words: u32,
    pub n_mentions: u32,
    pub n_hashtags: u32,
}

impl Tweet {
    /// Replies are non-retweet documents addressed to another handle.
    pub fn is_reply(&self) -> bool {
        !self.is_retweet && self.replied_handle.is_some()
    }
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_timestamp(&s).map_err(serde::de::Error::custom)
    }
}

/// Parses ISO-8601 timestamps. Offsets are converted to UTC; naive
/// timestamps are taken to be UTC already.
pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Ok(ts.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc());
        }
    }
    Err(format!("unparseable timestamp {s:?}"))
}

/// Lowercased alphanumeric tokens; every non-alphanumeric char is a separator.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Style counts `(words, mentions, hashtags)` recomputed from raw text.
pub fn style_counts(text: &str) -> (u32, u32, u32) {
    let words = tokenize(text).len() as u32;
    let mut mentions = 0;
    let mut hashtags = 0;
    for tok in text.split_whitespace() {
        let mut chars = tok.chars();
        let first = chars.next();
        let rest_ok = chars.next().is_some_and(char::is_alphanumeric);
        match first {
            Some('@') if rest_ok => mentions += 1,
            Some('#') if rest_ok => hashtags += 1,
            _ => {}
        }
    }
    (words, mentions, hashtags)
}

/// A rejected input record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line_no: usize,
    pub reason: String,
}

/// Maps source field names onto canonical [`Tweet`] field names.
#[derive(Debug, Clone, Default)]
pub struct FieldMap {
    renames: HashMap<String, String>,
}

impl FieldMap {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Source column `from` provides canonical field `to`.
    pub fn rename(mut self, from: impl Into<String>, to: impl Into<String>) -> Self {
        self.renames.insert(from.into(), to.into());
        self
    }

    fn apply(&self, record: Map<String, Value>) -> Map<String, Value> {
        if self.renames.is_empty() {
            return record;
        }
        record
            .into_iter()
            .map(|(k, v)| match self.renames.get(&k) {
                Some(to) => (to.clone(), v),
                None => (k, v),
            })
            .collect()
    }
}

/// Validated, immutable corpus iterated in `(day, id)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStore {
    tweets: Vec<Tweet>,
    index: HashMap<String, usize>,
}

impl CorpusStore {
    /// Builds a store from already validated tweets. Duplicate ids are an
    /// integrity error here; the streaming ingest path rejects them instead.
    pub fn from_tweets(mut tweets: Vec<Tweet>) -> Result<Self> {
        tweets.sort_by(|a, b| (a.day, &a.id).cmp(&(b.day, &b.id)));
        let mut index = HashMap::with_capacity(tweets.len());
        for (i, t) in tweets.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate tweet id {:?}", t.id)));
            }
        }
        Ok(Self { tweets, index })
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tweet> {
        self.tweets.iter()
    }

    pub fn tweets(&self) -> &[Tweet] {
        &self.tweets
    }

    pub fn get(&self, id: &str) -> Option<&Tweet> {
        self.index.get(id).map(|&i| &self.tweets[i])
    }

    pub fn user_ids(&self) -> BTreeSet<&str> {
        self.tweets.iter().map(|t| t.user_id.as_str()).collect()
    }
}

/// Corpus produced by ingestion together with its reject log.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: CorpusStore,
    pub rejects: Vec<Reject>,
}

/// Ingests a stream of `(line_no, record)` pairs.
///
/// Records that failed to decode upstream arrive as `Err(reason)` and are
/// logged as rejects. The first occurrence of an id wins.
pub fn ingest_records<I>(records: I, schema: &FieldMap) -> Ingested
where
    I: IntoIterator<Item = (usize, std::result::Result<Map<String, Value>, String>)>,
{
    let mut seen = BTreeSet::new();
    let mut tweets = Vec::new();
    let mut rejects = Vec::new();
    for (line_no, rec) in records {
        let parsed = rec.and_then(|r| tweet_from_record(&schema.apply(r)));
        match parsed {
            Ok(t) => {
                if seen.insert(t.id.clone()) {
                    tweets.push(t);
                } else {
                    rejects.push(Reject {
                        line_no,
                        reason: format!("duplicate id {}", t.id),
                    });
                }
            }
            Err(reason) => rejects.push(Reject { line_no, reason }),
        }
    }
    let corpus = CorpusStore::from_tweets(tweets).expect("ids deduplicated above");
    Ingested { corpus, rejects }
}

/// Ingests line-delimited JSON. Blank lines are skipped.
pub fn ingest_jsonl<R: Read>(reader: R, schema: &FieldMap) -> Result<Ingested> {
    let records = read_jsonl_records(reader, "<jsonl>")?;
    Ok(ingest_records(records, schema))
}

/// Ingests CSV with a header row naming the [`Tweet`] fields.
pub fn ingest_csv<R: Read>(reader: R, schema: &FieldMap) -> Result<Ingested> {
    let records = read_csv_records(reader)?;
    Ok(ingest_records(records, schema))
}

/// Ingests a file, picking the format from its extension (`.csv` or JSON lines).
pub fn ingest_path(path: &Path, schema: &FieldMap) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if is_csv(path) {
        ingest_csv(file, schema)
    } else {
        ingest_jsonl(file, schema)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

type RecordStream = Vec<(usize, std::result::Result<Map<String, Value>, String>)>;

fn read_jsonl_records<R: Read>(reader: R, source: &str) -> Result<RecordStream> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err("record is not a JSON object".to_string()),
            Err(e) => Err(format!("invalid JSON: {e}")),
        };
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn read_csv_records<R: Read>(reader: R) -> Result<RecordStream> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line_no = i + 2;
        let rec = match row {
            Ok(row) if row.len() != headers.len() => Err(format!(
                "expected {} fields, found {}",
                headers.len(),
                row.len()
            )),
            Ok(row) => Ok(headers
                .iter()
                .zip(row.iter())
                .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                .collect()),
            Err(e) => Err(format!("invalid CSV row: {e}")),
        };
        out.push((line_no, rec));
    }
    Ok(out)
}

fn field_str(rec: &Map<String, Value>, key: &str) -> Option<String> {
    match rec.get(key)? {
        Value::String(s) if s.trim().is_empty() => None,
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn required(rec: &Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    field_str(rec, key).ok_or_else(|| format!("missing {key}"))
}

fn field_bool(rec: &Map<String, Value>, key: &str) -> std::result::Result<Option<bool>, String> {
    match rec.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            _ => Err(format!("invalid boolean for {key}: {n}")),
        },
        Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "" => Ok(None),
            "true" | "1" => Ok(Some(true)),
            "false" | "0" => Ok(Some(false)),
            other => Err(format!("invalid boolean for {key}: {other:?}")),
        },
        Some(v) => Err(format!("invalid boolean for {key}: {v}")),
    }
}

fn field_u32(rec: &Map<String, Value>, key: &str) -> std::result::Result<Option<u32>, String> {
    match field_str(rec, key) {
        None => Ok(None),
        Some(s) => s
            .trim()
            .parse::<u32>()
            .map(Some)
            .map_err(|_| format!("invalid count for {key}: {s:?}")),
    }
}

fn tweet_from_record(rec: &Map<String, Value>) -> std::result::Result<Tweet, String> {
    let id = required(rec, "id")?;
    let user_id = required(rec, "user_id")?;
    let timestamp = parse_timestamp(&required(rec, "timestamp")?)?;
    let day = timestamp.date_naive();
    if let Some(given) = field_str(rec, "day") {
        let parsed = NaiveDate::parse_from_str(given.trim(), "%Y-%m-%d")
            .map_err(|_| format!("invalid day {given:?}"))?;
        if parsed != day {
            return Err(format!("day {parsed} does not match timestamp date {day}"));
        }
    }
    let text = field_str(rec, "text").unwrap_or_default();
    let lang = required(rec, "lang")?.to_lowercase();
    let country = required(rec, "country")?.to_uppercase();
    let is_retweet = field_bool(rec, "is_retweet")?.unwrap_or(false);
    let retweeted_handle = field_str(rec, "retweeted_handle");
    let replied_handle = field_str(rec, "replied_handle");
    match (is_retweet, &retweeted_handle) {
        (true, None) => return Err("retweet without retweeted_handle".into()),
        (false, Some(_)) => return Err("retweeted_handle on a non-retweet".into()),
        _ => {}
    }
    let (w, m, h) = style_counts(&text);
    let n_words = field_u32(rec, "n_words")?.unwrap_or(w);
    let n_mentions = field_u32(rec, "n_mentions")?.unwrap_or(m);
    let n_hashtags = field_u32(rec, "n_hashtags")?.unwrap_or(h);
    if n_words == 0 && !text.trim().is_empty() {
        return Err("n_words must be >= 1 for nonempty text".into());
    }
    Ok(Tweet {
        id,
        user_id,
        timestamp,
        day,
        text,
        lang,
        country,
        is_retweet,
        retweeted_handle,
        replied_handle,
        n_words,
        n_mentions,
        n_hashtags,
    })
}

/// Writes the corpus as line-delimited JSON in store order.
pub fn write_jsonl<W: Write>(corpus: &CorpusStore, mut w: W) -> Result<()> {
    for t in corpus.iter() {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub const TWEET_CSV_HEADER: [&str; 13] = [
    "id",
    "user_id",
    "timestamp",
    "day",
    "text",
    "lang",
    "country",
    "is_retweet",
    "retweeted_handle",
    "replied_handle",
    "n_words",
    "n_mentions",
    "n_hashtags",
];

pub fn write_csv<W: Write>(corpus: &CorpusStore, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TWEET_CSV_HEADER)?;
    for t in corpus.iter() {
        wtr.write_record([
            t.id.as_str(),
            &t.user_id,
            &t.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            &t.day.to_string(),
            &t.text,
            &t.lang,
            &t.country,
            if t.is_retweet { "true" } else { "false" },
            t.retweeted_handle.as_deref().unwrap_or(""),
            t.replied_handle.as_deref().unwrap_or(""),
            &t.n_words.to_string(),
            &t.n_mentions.to_string(),
            &t.n_hashtags.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reject log as CSV `line_no,reason`.
pub fn write_rejects<W: Write>(rejects: &[Reject], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["line_no", "reason"])?;
    for r in rejects {
        wtr.write_record([r.line_no.to_string(), r.reason.clone()])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Keyword query: OR over exact-token and prefix (`russ*`) patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    terms: Vec<QueryTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryTerm {
    Exact(String),
    Prefix(String),
}

impl QuerySpec {
    pub fn new(terms: Vec<QueryTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Config("query needs at least one term".into()));
        }
        for t in &terms {
            let (QueryTerm::Exact(p) | QueryTerm::Prefix(p)) = t;
            if p.is_empty() || p.to_lowercase() != *p {
                return Err(Error::Config(format!("query pattern {p:?} must be nonempty lowercase")));
            }
        }
        Ok(Self { terms })
    }

    /// Parses `a* OR b OR c*`. Pattern case is folded.
    pub fn parse(query: &str) -> Result<Self> {
        let terms = query
            .split_whitespace()
            .filter(|t| !t.eq_ignore_ascii_case("or"))
            .map(|t| {
                let t = t.to_lowercase();
                match t.strip_suffix('*') {
                    Some(p) => QueryTerm::Prefix(p.to_string()),
                    None => QueryTerm::Exact(t),
                }
            })
            .collect();
        Self::new(terms)
    }

    pub fn terms(&self) -> &[QueryTerm] {
        &self.terms
    }
}

pub fn match_query(text: &str, q: &QuerySpec) -> bool {
    tokenize(text).iter().any(|tok| {
        q.terms.iter().any(|term| match term {
            QueryTerm::Exact(p) => tok == p,
            QueryTerm::Prefix(p) => tok.starts_with(p.as_str()),
        })
    })
}

/// Corpus restriction predicates. `None` / empty means "no restriction".
#[derive(Debug, Clone, Default)]
pub struct FilterSpec {
    pub langs: Option<BTreeSet<String>>,
    pub countries: Option<BTreeSet<String>>,
    /// Inclusive day range.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    pub drop_bots: BTreeSet<String>,
    /// Drops users whose account was created on or after this date.
    pub drop_accounts_created_after: Option<NaiveDate>,
}

/// Per-predicate drop counts; each dropped tweet is charged to the first
/// predicate it fails, in field order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped_lang: usize,
    pub dropped_country: usize,
    pub dropped_date: usize,
    pub dropped_bot: usize,
    pub dropped_late_account: usize,
}

pub fn filter_corpus(
    c: &CorpusStore,
    f: &FilterSpec,
    account_created: &HashMap<String, NaiveDate>,
) -> Result<(CorpusStore, FilterReport)> {
    if let Some((lo, hi)) = f.date_range {
        if lo > hi {
            return Err(Error::Config(format!("inverted date range {lo}..{hi}")));
        }
    }
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for t in c.iter() {
        if f.langs.as_ref().is_some_and(|s| !s.contains(&t.lang)) {
            report.dropped_lang += 1;
        } else if f.countries.as_ref().is_some_and(|s| !s.contains(&t.country)) {
            report.dropped_country += 1;
        } else if f.date_range.is_some_and(|(lo, hi)| t.day < lo || t.day > hi) {
            report.dropped_date += 1;
        } else if f.drop_bots.contains(&t.user_id) {
            report.dropped_bot += 1;
        } else if f.drop_accounts_created_after.is_some_and(|cut| {
            account_created.get(&t.user_id).is_some_and(|created| *created >= cut)
        }) {
            report.dropped_late_account += 1;
        } else {
            kept.push(t.clone());
        }
    }
    report.kept = kept.len();
    Ok((CorpusStore::from_tweets(kept)?, report))
}

/// Side-file record with follower counts and account age.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub user_id: String,
    pub followers: u64,
    pub followees: u64,
    pub account_created: Option<NaiveDate>,
}

pub fn read_profiles(path: &Path) -> Result<Vec<ProfileRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = if is_csv(path) {
        read_csv_records(file)?
    } else {
        read_jsonl_records(file, &path.display().to_string())?
    };
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let rec = rec.map_err(|m| parse_err(line, m))?;
        let parsed = (|| {
            let user_id = required(&rec, "user_id")?;
            let count = |k: &str| -> std::result::Result<u64, String> {
                match field_str(&rec, k) {
                    None => Ok(0),
                    Some(s) => s.trim().parse().map_err(|_| format!("invalid {k}: {s:?}")),
                }
            };
            let account_created = match field_str(&rec, "account_created") {
                None => None,
                Some(s) => Some(
                    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                        .map_err(|_| format!("invalid account_created {s:?}"))?,
                ),
            };
            Ok::<_, String>(ProfileRecord {
                user_id,
                followers: count("followers")?,
                followees: count("followees")?,
                account_created,
            })
        })();
        out.push(parsed.map_err(|m| parse_err(line, m))?);
    }
    Ok(out)
}

pub fn write_profiles<W: Write>(profiles: &[ProfileRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["user_id", "followers", "followees", "account_created"])?;
    for p in profiles {
        wtr.write_record([
            p.user_id.clone(),
            p.followers.to_string(),
            p.followees.to_string(),
            p.account_created.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Per-user profile with activity tallies derived from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub country: String,
    pub in_treated_region: bool,
    pub followers: u64,
    pub followees: u64,
    pub account_created: Option<NaiveDate>,
    pub n_tweets: usize,
    pub n_retweets: usize,
    pub n_replies: usize,
}

impl UserProfile {
    /// `followers / (followers + followees)`; undefined with no connections.
    pub fn reputation(&self) -> Option<f64> {
        let total = self.followers + self.followees;
        (total > 0).then(|| self.followers as f64 / total as f64)
    }

    pub fn n_documents(&self) -> usize {
        self.n_tweets + self.n_retweets + self.n_replies
    }
}

/// One profile per user. A user's country is their most frequent tweet
/// country (ties broken by code order).
pub fn derive_user_profiles(
    c: &CorpusStore,
    region_map: &BTreeMap<String, bool>,
    side: &[ProfileRecord],
) -> Result<Vec<UserProfile>> {
    let unmapped: BTreeSet<&str> = c
        .iter()
        .map(|t| t.country.as_str())
        .filter(|cc| !region_map.contains_key(*cc))
        .collect();
    if !unmapped.is_empty() {
        let list: Vec<&str> = unmapped.into_iter().collect();
        return Err(Error::Config(format!("unmapped country codes: {}", list.join(", "))));
    }
    let side: HashMap<&str, &ProfileRecord> = side.iter().map(|p| (p.user_id.as_str(), p)).collect();

    #[derive(Default)]
    struct Tally<'a> {
        countries: BTreeMap<&'a str, usize>,
        tweets: usize,
        retweets: usize,
        replies: usize,
    }
    let mut by_user: BTreeMap<&str, Tally> = BTreeMap::new();
    for t in c.iter() {
        let e = by_user.entry(&t.user_id).or_default();
        *e.countries.entry(&t.country).or_default() += 1;
        if t.is_retweet {
            e.retweets += 1;
        } else if t.is_reply() {
            e.replies += 1;
        } else {
            e.tweets += 1;
        }
    }
    Ok(by_user
        .into_iter()
        .map(|(user, tally)| {
            let country = tally
                .countries
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(c, _)| c.to_string())
                .unwrap_or_default();
            let rec = side.get(user);
            UserProfile {
                user_id: user.to_string(),
                in_treated_region: region_map[&country],
                country,
                followers: rec.map_or(0, |p| p.followers),
                followees: rec.map_or(0, |p| p.followees),
                account_created: rec.and_then(|p| p.account_created),
                n_tweets: tally.tweets,
                n_retweets: tally.retweets,
                n_replies: tally.replies,
            }
        })
        .collect())
}

/// Document share for one stem within one corpus label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StemShare {
    pub n_docs: usize,
    pub n_containing: usize,
    pub share: f64,
}

/// label -> stem -> share
pub type StemTable = BTreeMap<String, BTreeMap<String, StemShare>>;

/// Fraction of documents per label with at least one token starting with
/// each stem.
pub fn stem_frequency<'a, I>(docs: I, stems: &[String]) -> StemTable
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut counts: BTreeMap<String, (usize, Vec<usize>)> = BTreeMap::new();
    for (label, text) in docs {
        let toks = tokenize(text);
        let entry = counts
            .entry(label.to_string())
            .or_insert_with(|| (0, vec![0; stems.len()]));
        entry.0 += 1;
        for (k, stem) in stems.iter().enumerate() {
            if toks.iter().any(|t| t.starts_with(stem.as_str())) {
                entry.1[k] += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(label, (n, hits))| {
            let row = stems
                .iter()
                .zip(hits)
                .map(|(s, h)| {
                    let share = if n == 0 { 0.0 } else { h as f64 / n as f64 };
                    (s.clone(), StemShare { n_docs: n, n_containing: h, share })
                })
                .collect();
            (label, row)
        })
        .collect()
}
