//! Study configuration: one TOML file with nested sections.
//!
//! Relative paths resolve against the working directory. Paths may be
//! overridden with `SLANTDID_*` environment variables. Validation errors
//! carry `file:line:` anchors pointing at the offending key.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dates::DateRange;
use crate::error::{Error, Result};
use crate::estimator::did::{validate_bins, PreMeanMode};
use crate::estimator::ols::DofConvention;
use crate::numeric::sha256_hex;
use crate::panel::{ActivityGroup, CohortFlags, CohortOptions, PanelVar, SlantGroup, StudyWindow};
use crate::slant::PoleConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub output_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub pole_r: Option<PathBuf>,
    pub pole_u: Option<PathBuf>,
    pub banned_handles: Option<PathBuf>,
    pub region_map: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            corpus: None,
            profiles: None,
            embeddings: None,
            pole_r: None,
            pole_u: None,
            banned_handles: None,
            region_map: None,
        }
    }
}

/// Environment variables that override `[paths]` entries.
pub const PATH_ENV: [(&str, &str); 8] = [
    ("SLANTDID_OUTPUT_DIR", "output_dir"),
    ("SLANTDID_CORPUS", "corpus"),
    ("SLANTDID_PROFILES", "profiles"),
    ("SLANTDID_EMBEDDINGS", "embeddings"),
    ("SLANTDID_POLE_R", "pole_r"),
    ("SLANTDID_POLE_U", "pole_u"),
    ("SLANTDID_BANNED_HANDLES", "banned_handles"),
    ("SLANTDID_REGION_MAP", "region_map"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub start: NaiveDate,
    pub ban_date: NaiveDate,
    pub end: NaiveDate,
}

impl Default for WindowConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self { start: s.start, ban_date: s.ban_date, end: s.end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Precomputed,
    Hashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backend: BackendKind,
    /// Hashed backend only.
    pub dim: usize,
    pub seed: u64,
    pub strip_urls: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { backend: BackendKind::Precomputed, dim: 512, seed: 0, strip_urls: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Documents count as pro-R when `z` exceeds this.
    pub pro_r: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { pro_r: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Empty keeps every language.
    pub langs: Vec<String>,
    pub countries: Vec<String>,
    pub drop_accounts_created_after: Option<NaiveDate>,
}

/// Cohort-defined estimation samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFilter {
    All,
    Interaction,
    NonInteraction,
    Suppliers,
    NonSuppliers,
    Bots,
    NonBots,
    HighSlant,
    ModerateSlant,
    /// High and top activity groups.
    HighActivity,
    ModerateActivity,
    Top05,
    /// Accounts created before the ban.
    ExistingAccounts,
}

impl SampleFilter {
    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    }

    pub fn keeps(self, f: &CohortFlags) -> bool {
        match self {
            SampleFilter::All => true,
            SampleFilter::Interaction => f.is_interaction,
            SampleFilter::NonInteraction => !f.is_interaction,
            SampleFilter::Suppliers => f.is_supplier,
            SampleFilter::NonSuppliers => !f.is_supplier,
            SampleFilter::Bots => f.is_bot,
            SampleFilter::NonBots => !f.is_bot,
            SampleFilter::HighSlant => f.slant_group == SlantGroup::High,
            SampleFilter::ModerateSlant => f.slant_group == SlantGroup::Moderate,
            SampleFilter::HighActivity => f.activity_group != ActivityGroup::Moderate,
            SampleFilter::ModerateActivity => f.activity_group == ActivityGroup::Moderate,
            SampleFilter::Top05 => f.activity_group == ActivityGroup::Top05,
            SampleFilter::ExistingAccounts => !f.created_after_ban,
        }
    }

    /// `None` for the unrestricted sample.
    pub fn select(self, flags: &[CohortFlags]) -> Option<BTreeSet<String>> {
        (self != SampleFilter::All)
            .then(|| flags.iter().filter(|f| self.keeps(f)).map(|f| f.user_id.clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventStudyConfig {
    pub outcome: PanelVar,
    /// Defaults to the day before the ban.
    pub reference_day: Option<NaiveDate>,
    /// Inclusive `[start, end]` pairs; empty uses the five-bin layout.
    pub bins: Vec<(NaiveDate, NaiveDate)>,
}

impl Default for EventStudyConfig {
    fn default() -> Self {
        Self { outcome: PanelVar::AvgSlant, reference_day: None, bins: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub outcomes: Vec<PanelVar>,
    pub samples: Vec<SampleFilter>,
    /// Adds word, mention and hashtag controls.
    pub controls: bool,
    pub dof: DofConvention,
    pub pre_mean: PreMeanMode,
    pub weekly: bool,
    pub imputation: bool,
    pub bootstrap_draws: usize,
    pub event_study: EventStudyConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            outcomes: PanelVar::BATTERY.to_vec(),
            samples: vec![SampleFilter::All],
            controls: false,
            dof: DofConvention::AbsorbAdjusted,
            pre_mean: PreMeanMode::Pooled,
            weekly: true,
            imputation: true,
            bootstrap_draws: 499,
            event_study: EventStudyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsConfig {
    pub master: u64,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        Self { master: 20220302 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub reps: usize,
    pub placebo_reps: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { reps: 200, placebo_reps: 300 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub paths: PathsConfig,
    pub window: WindowConfig,
    pub poles: PoleConfig,
    pub encoder: EncoderConfig,
    pub thresholds: Thresholds,
    pub cohorts: CohortOptions,
    pub filter: FilterConfig,
    pub estimation: EstimationConfig,
    pub seeds: SeedsConfig,
    /// Its window fields are replaced by `[window]`.
    pub synth: SynthConfig,
    pub mc: McConfig,
    /// Directory relative paths resolve against; empty means the working directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Resolved artifact locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub output_dir: PathBuf,
    pub corpus: PathBuf,
    pub profiles: PathBuf,
    pub embeddings: PathBuf,
    pub pole_r: PathBuf,
    pub pole_u: PathBuf,
    pub banned_handles: PathBuf,
    pub region_map: PathBuf,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Line of `key` inside `[section]` (dotted for nested tables), falling
/// back to the section header, then to line 1.
pub fn key_line(src: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return i + 1;
                }
            }
        }
    }
    header.unwrap_or(1)
}

impl StudyConfig {
    /// Parses and validates; errors name `origin:line:`.
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(src).map_err(|e| {
            let (line, col) = e.span().map_or((1, 1), |s| line_col(src, s.start));
            Error::Config(format!("{origin}:{line}:{col}: {}", e.message()))
        })?;
        cfg.validate()
            .map_err(|(section, key, msg)| Error::Config(format!("{origin}:{}: {msg}", key_line(src, section, key))))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src, &path.display().to_string())
    }

    /// Applies `SLANTDID_*` path overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, field) in PATH_ENV {
            if let Some(v) = lookup(var).filter(|v| !v.is_empty()) {
                let p = PathBuf::from(v);
                let paths = &mut self.paths;
                match field {
                    "output_dir" => paths.output_dir = p,
                    "corpus" => paths.corpus = Some(p),
                    "profiles" => paths.profiles = Some(p),
                    "embeddings" => paths.embeddings = Some(p),
                    "pole_r" => paths.pole_r = Some(p),
                    "pole_u" => paths.pole_u = Some(p),
                    "banned_handles" => paths.banned_handles = Some(p),
                    _ => paths.region_map = Some(p),
                }
            }
        }
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        let w = self.window;
        let window = StudyWindow::new(w.start, w.ban_date, w.end).map_err(|e| ("window", "ban_date", e.to_string()))?;
        let p = self.poles;
        if p.window == 0 {
            return Err(("poles", "window", "poles.window must be >= 1".into()));
        }
        if !(p.decay > 0.0 && p.decay <= 1.0) {
            return Err(("poles", "decay", format!("poles.decay must be in (0, 1], got {}", p.decay)));
        }
        if !(p.b > 0.0 && p.b.is_finite()) {
            return Err(("poles", "b", format!("poles.b must be > 0, got {}", p.b)));
        }
        if self.encoder.dim == 0 {
            return Err(("encoder", "dim", "encoder.dim must be >= 1".into()));
        }
        if !self.thresholds.pro_r.is_finite() {
            return Err(("thresholds", "pro_r", "thresholds.pro_r must be finite".into()));
        }
        let c = &self.cohorts;
        for (key, v) in [
            ("bot_activity_pct", c.bot_activity_pct),
            ("bot_reputation_pct", c.bot_reputation_pct),
            ("slant_cutoff", c.slant_cutoff),
            ("activity_high_cutoff", c.activity_high_cutoff),
            ("activity_top_cutoff", c.activity_top_cutoff),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(("cohorts", key, format!("cohorts.{key} must be in (0, 1), got {v}")));
            }
        }
        let e = &self.estimation;
        if e.outcomes.is_empty() {
            return Err(("estimation", "outcomes", "estimation.outcomes is empty".into()));
        }
        if e.samples.is_empty() {
            return Err(("estimation", "samples", "estimation.samples is empty".into()));
        }
        if e.imputation && e.bootstrap_draws < 2 {
            return Err(("estimation", "bootstrap_draws", "estimation.bootstrap_draws must be >= 2".into()));
        }
        let es = &e.event_study;
        let reference = es.reference_day.unwrap_or(crate::dates::sub_days(w.ban_date, 1));
        if !es.bins.is_empty() {
            let bins = es
                .bins
                .iter()
                .map(|(a, b)| DateRange::new(*a, *b))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| ("estimation.event_study", "bins", e.to_string()))?;
            validate_bins(&window, reference, &bins).map_err(|e| ("estimation.event_study", "bins", e.to_string()))?;
        } else if !window.contains(reference) {
            return Err((
                "estimation.event_study",
                "reference_day",
                format!("reference day {reference} outside the window"),
            ));
        }
        self.synth_config().validate().map_err(|e| ("synth", "n_users", e.to_string()))?;
        if self.mc.reps < 50 || self.mc.placebo_reps < 50 {
            return Err(("mc", "reps", "mc.reps and mc.placebo_reps must be >= 50".into()));
        }
        Ok(())
    }

    pub fn study_window(&self) -> Result<StudyWindow> {
        StudyWindow::new(self.window.start, self.window.ban_date, self.window.end)
    }

    pub fn reference_day(&self) -> NaiveDate {
        self.estimation
            .event_study
            .reference_day
            .unwrap_or(crate::dates::sub_days(self.window.ban_date, 1))
    }

    /// Synthetic settings on the study window.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { start: self.window.start, ban_date: self.window.ban_date, end: self.window.end, ..self.synth.clone() }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Input paths default to the synthetic generator's outputs.
    pub fn resolved(&self) -> Resolved {
        let out = self.resolve(&self.paths.output_dir);
        let or = |p: &Option<PathBuf>, default: &str| p.as_ref().map_or(out.join("synth").join(default), |p| self.resolve(p));
        Resolved {
            corpus: or(&self.paths.corpus, "corpus.jsonl"),
            profiles: or(&self.paths.profiles, "profiles.csv"),
            embeddings: or(&self.paths.embeddings, "embeddings.csv"),
            pole_r: or(&self.paths.pole_r, "pole_r.jsonl"),
            pole_u: or(&self.paths.pole_u, "pole_u.jsonl"),
            banned_handles: or(&self.paths.banned_handles, "banned_handles.txt"),
            region_map: or(&self.paths.region_map, "region_map.csv"),
            output_dir: out,
        }
    }

    /// SHA-256 of everything except `[paths]`, so relocated runs share it.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.provenance()).expect("config serializes"))
    }

    /// The configuration as recorded in manifests (without `[paths]`).
    pub fn provenance(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("paths");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = StudyConfig::parse("", "c.toml").unwrap();
        assert_eq!(c.estimation.outcomes, PanelVar::BATTERY.to_vec());
        assert_eq!(c.poles.window, 8);
    }

    #[test]
    fn syntax_errors_are_line_anchored() {
        let src = "[window]\nstart = \"2022-02-19\"\nban_date = = 3\n";
        let e = StudyConfig::parse(src, "c.toml").unwrap_err().to_string();
        assert!(e.contains("c.toml:3:"), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let src = "[seeds]\nmaster = 1\n\n[window]\nstart = \"2022-03-19\"\nban_date = \"2022-03-02\"\nend = \"2022-03-15\"\n";
        let e = StudyConfig::parse(src, "c.toml").unwrap_err().to_string();
        assert!(e.contains("c.toml:6:"), "{e}");
        let src = "[poles]\nmode = \"rolling\"\ndecay = 1.5\n";
        let e = StudyConfig::parse(src, "c.toml").unwrap_err().to_string();
        assert!(e.contains("c.toml:3:"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = StudyConfig::parse("[poles]\nwindw = 3\n", "c.toml").unwrap_err().to_string();
        assert!(e.contains("c.toml:2:"), "{e}");
    }

    #[test]
    fn env_overrides_paths_and_hash_ignores_paths() {
        let mut c = StudyConfig::default();
        let h = c.hash();
        c.apply_env(|k| (k == "SLANTDID_OUTPUT_DIR").then(|| "/tmp/elsewhere".to_string()));
        assert_eq!(c.paths.output_dir, PathBuf::from("/tmp/elsewhere"));
        assert_eq!(c.resolved().corpus, PathBuf::from("/tmp/elsewhere/synth/corpus.jsonl"));
        assert_eq!(c.hash(), h);
        c.seeds.master += 1;
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn sample_names_round_trip() {
        assert_eq!(SampleFilter::HighActivity.name(), "high-activity");
        let e: EstimationConfig = toml::from_str("samples = [\"all\", \"top05\"]").unwrap();
        assert_eq!(e.samples, vec![SampleFilter::All, SampleFilter::Top05]);
    }
}
