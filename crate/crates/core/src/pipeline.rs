//! Pipeline stages driven by a [`StudyConfig`].
//!
//! Every stage writes its artifacts under `<output_dir>/<stage>/` together
//! with a `manifest.json`. Manifests hold only deterministic fields apart
//! from `generated_at`, so reruns are byte-identical outside that field.
//!
//! Artifact flow:
//!
//! ```text
//! synth ──> synth/{corpus.jsonl, profiles.csv, pole_*.jsonl, embeddings.csv, ...}
//!   │        (direct-outcome mode writes panel/{panel,flags}.csv instead)
//! ingest ─> ingest/{corpus.jsonl, rejects.csv, filter_report.json}
//! score ──> score/{scores.csv, stats.json, poles.csv}
//! panel ──> panel/{panel.csv, flags.csv, balance.csv}
//! estimate, event-study, mc ─> estimate/, event-study/, mc/
//! report ─> report/{weekly_table.csv, did_table.csv, event_study_*_plot.csv}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, Resolved, StudyConfig};
use crate::corpus::{
    derive_user_profiles, filter_corpus, ingest_path, read_profiles, write_jsonl, write_profiles, write_rejects,
    CorpusStore, FieldMap, FilterReport, FilterSpec, Reject,
};
use crate::dates::DateRange;
use crate::encoder::{load_precomputed, EncoderBackend, HashedNgramEncoder};
use crate::error::{Error, Result};
use crate::estimator::did::{
    did_estimate, event_study, five_bin_layout, weekly_interactions, EventStudyResult, PanelData, SpecOptions,
    DID_TERM, WEEK1_TERM, WEEK2_TERM,
};
use crate::estimator::imputation::{imputation_att, ImputationOptions, ImputationResult};
use crate::estimator::ols::{FitOptions, FitResult};
use crate::numeric::{derive_seed, sha256_hex};
use crate::panel::{
    balance_table, build_panel, derive_cohort_flags, normalize_handle, read_flags_csv, read_panel_csv,
    write_flags_csv, write_panel_csv, ActivityGroup, CohortFlags, PanelCell, PanelVar, SlantGroup,
};
use crate::slant::{
    read_scores_csv, score_corpus, write_scores_csv, PoleCorpus, PoleSet, PoleSide, SlantScore,
};
use crate::synth::{generate_corpus, generate_panel, monte_carlo, EmbeddingMode, McSummary, RepOutcome, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Score,
    Panel,
    Estimate,
    EventStudy,
    Synth,
    Mc,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Score,
        Stage::Panel,
        Stage::Estimate,
        Stage::EventStudy,
        Stage::Synth,
        Stage::Mc,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Score => "score",
            Stage::Panel => "panel",
            Stage::Estimate => "estimate",
            Stage::EventStudy => "event-study",
            Stage::Synth => "synth",
            Stage::Mc => "mc",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Provenance record written next to every stage's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input path -> SHA-256; paths under the output dir are relative to it.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    /// The only non-deterministic field.
    pub generated_at: String,
}

/// What a stage produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

struct Ctx<'a> {
    cfg: &'a StudyConfig,
    res: Resolved,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a StudyConfig) -> Self {
        Self { res: cfg.resolved(), cfg, inputs: Vec::new(), outputs: Vec::new() }
    }

    fn dir(&self, stage: &str) -> PathBuf {
        self.res.output_dir.join(stage)
    }

    /// Fails with a pointer to `producer` when `path` is absent.
    fn require(&mut self, path: &Path, producer: &str) -> Result<PathBuf> {
        if !path.exists() {
            return Err(Error::MissingArtifact { path: path.to_path_buf(), producer: producer.to_string() });
        }
        self.inputs.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(path, &bytes)
    }

    fn label(&self, p: &Path) -> String {
        p.strip_prefix(&self.res.output_dir)
            .map(|r| r.to_string_lossy().replace('\\', "/"))
            .unwrap_or_else(|_| p.display().to_string())
    }

    fn finish(mut self, stage: Stage, summary: String) -> Result<StageOutcome> {
        let hash = |p: &Path| -> Result<String> { Ok(sha256_hex(&std::fs::read(p).map_err(|e| Error::io(p, e))?)) };
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(self.label(p), hash(p)?);
        }
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.insert(self.label(p), hash(p)?);
        }
        let manifest = Manifest {
            stage: stage.name().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seeds.master,
            inputs,
            outputs,
            config: self.cfg.provenance(),
            generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        };
        let path = self.dir(stage.name()).join("manifest.json");
        self.write_json(path, &manifest)?;
        Ok(StageOutcome { stage, outputs: self.outputs, summary })
    }
}

pub fn run_stage(stage: Stage, cfg: &StudyConfig) -> Result<StageOutcome> {
    let ctx = Ctx::new(cfg);
    match stage {
        Stage::Synth => synth_stage(ctx),
        Stage::Ingest => ingest_stage(ctx),
        Stage::Score => score_stage(ctx),
        Stage::Panel => panel_stage(ctx),
        Stage::Estimate => estimate_stage(ctx),
        Stage::EventStudy => event_study_stage(ctx),
        Stage::Mc => mc_stage(ctx),
        Stage::Report => report_stage(ctx),
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// One handle per line; blank lines and `#` comments are skipped.
pub fn read_banned_handles(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_handle)
        .collect())
}

/// CSV `country,treated`.
pub fn read_region_map(path: &Path) -> Result<BTreeMap<String, bool>> {
    #[derive(Deserialize)]
    struct Row {
        country: String,
        treated: bool,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse { path: path.display().to_string(), line: i + 2, msg: e.to_string() })?;
        out.insert(row.country.trim().to_uppercase(), row.treated);
    }
    Ok(out)
}

pub fn write_region_map<W: Write>(map: &BTreeMap<String, bool>, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["country", "treated"])?;
    for (c, t) in map {
        wtr.write_record([c.as_str(), if *t { "true" } else { "false" }])?;
    }
    wtr.flush().map_err(|e| Error::io("region map", e))?;
    Ok(())
}

fn ingest(path: &Path) -> Result<(CorpusStore, Vec<Reject>)> {
    let ing = ingest_path(path, &FieldMap::identity())?;
    Ok((ing.corpus, ing.rejects))
}

struct Loaded {
    corpus: CorpusStore,
    rejects: Vec<Reject>,
    report: FilterReport,
}

/// Ingests the configured corpus and restricts it to the study window and
/// the `[filter]` predicates.
fn load_corpus(ctx: &mut Ctx<'_>) -> Result<Loaded> {
    let path = ctx.res.corpus.clone();
    ctx.require(&path, "synth")?;
    let (corpus, rejects) = ingest(&path)?;
    let f = &ctx.cfg.filter;
    let profiles_path = ctx.res.profiles.clone();
    let created: HashMap<String, chrono::NaiveDate> = if f.drop_accounts_created_after.is_some() {
        ctx.require(&profiles_path, "synth")?;
        read_profiles(&profiles_path)?
            .into_iter()
            .filter_map(|p| Some((p.user_id, p.account_created?)))
            .collect()
    } else {
        HashMap::new()
    };
    let w = ctx.cfg.window;
    let nonempty = |v: &Vec<String>, upper: bool| {
        (!v.is_empty()).then(|| {
            v.iter().map(|s| if upper { s.to_uppercase() } else { s.to_lowercase() }).collect::<BTreeSet<_>>()
        })
    };
    let spec = FilterSpec {
        langs: nonempty(&f.langs, false),
        countries: nonempty(&f.countries, true),
        date_range: Some((w.start, w.end)),
        drop_bots: BTreeSet::new(),
        drop_accounts_created_after: f.drop_accounts_created_after,
    };
    let (corpus, report) = filter_corpus(&corpus, &spec, &created)?;
    Ok(Loaded { corpus, rejects, report })
}

fn backend(ctx: &mut Ctx<'_>) -> Result<EncoderBackend> {
    let e = ctx.cfg.encoder;
    match e.backend {
        BackendKind::Precomputed => {
            let path = ctx.res.embeddings.clone();
            ctx.require(&path, "synth")?;
            load_precomputed(&path)
        }
        BackendKind::Hashed => {
            let mut enc = HashedNgramEncoder::new(e.dim, e.seed)?;
            enc.strip_urls = e.strip_urls;
            Ok(EncoderBackend::HashedNgram(enc))
        }
    }
}

fn synth_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let cfg = ctx.cfg.synth_config();
    let seed = ctx.cfg.seeds.master;
    let dir = ctx.dir("synth");
    match cfg.mode {
        EmbeddingMode::DirectOutcome => {
            let (cells, truth) = generate_panel(&cfg, seed)?;
            let flags: Vec<CohortFlags> = truth
                .treated
                .iter()
                .map(|(u, t)| CohortFlags {
                    user_id: u.clone(),
                    in_treated_region: *t,
                    is_interaction: false,
                    is_supplier: false,
                    is_bot: false,
                    created_after_ban: false,
                    slant_group: SlantGroup::Moderate,
                    activity_group: ActivityGroup::Moderate,
                })
                .collect();
            let panel_dir = ctx.dir("panel");
            ctx.write(panel_dir.join("panel.csv"), &csv_bytes(|b| write_panel_csv(&cells, b))?)?;
            ctx.write(panel_dir.join("flags.csv"), &csv_bytes(|b| write_flags_csv(&flags, b))?)?;
            ctx.write_json(dir.join("ground_truth.json"), &truth)?;
            let summary = format!("direct-outcome panel: {} cells, {} users", cells.len(), truth.treated.len());
            ctx.finish(Stage::Synth, summary)
        }
        EmbeddingMode::PoleAnchored => {
            let s = generate_corpus(&cfg, seed)?;
            ctx.write(dir.join("corpus.jsonl"), &csv_bytes(|b| write_jsonl(&s.corpus, b))?)?;
            ctx.write(dir.join("pole_r.jsonl"), &csv_bytes(|b| write_jsonl(&s.pole_r, b))?)?;
            ctx.write(dir.join("pole_u.jsonl"), &csv_bytes(|b| write_jsonl(&s.pole_u, b))?)?;
            ctx.write(dir.join("profiles.csv"), &csv_bytes(|b| write_profiles(&s.profiles, b))?)?;
            ctx.write(dir.join("embeddings.csv"), &csv_bytes(|b| s.embeddings.write_csv(b))?)?;
            let banned: String = s.banned_handles.iter().map(|h| format!("{h}\n")).collect();
            ctx.write(dir.join("banned_handles.txt"), banned.as_bytes())?;
            ctx.write(dir.join("region_map.csv"), &csv_bytes(|b| write_region_map(&s.region_map, b))?)?;
            ctx.write_json(dir.join("ground_truth.json"), &s.truth)?;
            let summary = format!("pole-anchored corpus: {} documents, {} users", s.corpus.len(), s.profiles.len());
            ctx.finish(Stage::Synth, summary)
        }
    }
}

fn ingest_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let loaded = load_corpus(&mut ctx)?;
    let dir = ctx.dir("ingest");
    ctx.write(dir.join("corpus.jsonl"), &csv_bytes(|b| write_jsonl(&loaded.corpus, b))?)?;
    ctx.write(dir.join("rejects.csv"), &csv_bytes(|b| write_rejects(&loaded.rejects, b))?)?;
    ctx.write_json(dir.join("filter_report.json"), &loaded.report)?;
    let summary = format!("{} documents kept, {} rejected", loaded.corpus.len(), loaded.rejects.len());
    ctx.finish(Stage::Ingest, summary)
}

fn score_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let loaded = load_corpus(&mut ctx)?;
    if loaded.corpus.is_empty() {
        return Err(Error::Degenerate("no documents left to score".into()));
    }
    let backend = backend(&mut ctx)?;
    let (r_path, u_path) = (ctx.res.pole_r.clone(), ctx.res.pole_u.clone());
    ctx.require(&r_path, "synth")?;
    ctx.require(&u_path, "synth")?;
    let r = PoleCorpus::embed(PoleSide::R, &ingest(&r_path)?.0, &backend)?;
    let u = PoleCorpus::embed(PoleSide::U, &ingest(&u_path)?.0, &backend)?;
    let pc = ctx.cfg.poles;
    let days: BTreeSet<_> = loaded.corpus.iter().map(|t| t.day).collect();
    let poles = PoleSet::build(&r, &u, &pc, &days, ctx.cfg.window.ban_date)?;
    let scored = score_corpus(&loaded.corpus, &backend, &poles, &pc)?;

    let dir = ctx.dir("score");
    ctx.write(dir.join("scores.csv"), &csv_bytes(|b| write_scores_csv(&scored.scores, b))?)?;
    ctx.write_json(dir.join("stats.json"), &scored.stats)?;
    let poles_csv = csv_bytes(|b| {
        let mut wtr = csv::Writer::from_writer(b);
        let dim = backend.dim();
        let mut header = vec!["day".to_string(), "side".to_string()];
        header.extend((0..dim).map(|i| format!("v{i}")));
        wtr.write_record(&header)?;
        for (day, side, v) in poles.rows() {
            let mut row = vec![day.map(|d| d.to_string()).unwrap_or_default(), format!("{side:?}")];
            row.extend(v.values().iter().map(|x| format!("{x:?}")));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("poles.csv", e))
    })?;
    ctx.write(dir.join("poles.csv"), &poles_csv)?;
    ctx.write(dir.join("rejects.csv"), &csv_bytes(|b| write_rejects(&loaded.rejects, b))?)?;
    let summary = format!(
        "scored {} documents (mean raw {:.4}, sd {:.4})",
        scored.scores.len(),
        scored.stats.mean,
        scored.stats.sd
    );
    ctx.finish(Stage::Score, summary)
}

fn panel_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let scores_path = ctx.dir("score").join("scores.csv");
    ctx.require(&scores_path, "score")?;
    let scores = read_scores(&scores_path)?;
    let loaded = load_corpus(&mut ctx)?;
    let window = ctx.cfg.study_window()?;
    let cells = build_panel(&scores, &loaded.corpus, &window, ctx.cfg.thresholds.pro_r)?;

    let (prof_path, banned_path, region_path) =
        (ctx.res.profiles.clone(), ctx.res.banned_handles.clone(), ctx.res.region_map.clone());
    ctx.require(&prof_path, "synth")?;
    ctx.require(&banned_path, "synth")?;
    ctx.require(&region_path, "synth")?;
    let side = read_profiles(&prof_path)?;
    let region = read_region_map(&region_path)?;
    let banned = read_banned_handles(&banned_path)?;
    let profiles = derive_user_profiles(&loaded.corpus, &region, &side)?;
    let flags = derive_cohort_flags(&loaded.corpus, &scores, &profiles, &banned, &window, &ctx.cfg.cohorts)?;
    let treated: BTreeSet<String> =
        flags.iter().filter(|f| f.in_treated_region).map(|f| f.user_id.clone()).collect();
    let control: BTreeSet<String> =
        flags.iter().filter(|f| !f.in_treated_region).map(|f| f.user_id.clone()).collect();
    let balance = balance_table(&cells, &treated, &control, &window, &PanelVar::ALL)?;

    let dir = ctx.dir("panel");
    ctx.write(dir.join("panel.csv"), &csv_bytes(|b| write_panel_csv(&cells, b))?)?;
    ctx.write(dir.join("flags.csv"), &csv_bytes(|b| write_flags_csv(&flags, b))?)?;
    let balance_csv = csv_bytes(|b| {
        let mut wtr = csv::Writer::from_writer(b);
        wtr.write_record(["var", "mean_treated", "mean_control", "diff", "t_stat", "n_treated", "n_control"])?;
        for r in &balance {
            wtr.write_record([
                r.var.name().to_string(),
                format!("{:?}", r.mean_t),
                format!("{:?}", r.mean_c),
                format!("{:?}", r.diff),
                format!("{:?}", r.t_stat),
                r.n_t.to_string(),
                r.n_c.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("balance.csv", e))
    })?;
    ctx.write(dir.join("balance.csv"), &balance_csv)?;
    let summary = format!("{} cells, {} users ({} treated)", cells.len(), flags.len(), treated.len());
    ctx.finish(Stage::Panel, summary)
}

fn read_scores(path: &Path) -> Result<Vec<SlantScore>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores_csv(f)
}

struct PanelInputs {
    cells: Vec<PanelCell>,
    flags: Vec<CohortFlags>,
    treated: HashMap<String, bool>,
}

/// Panel and flags; a missing panel points at `score` when scoring has not
/// run either, otherwise at `panel`.
fn load_panel(ctx: &mut Ctx<'_>) -> Result<PanelInputs> {
    let panel_path = ctx.dir("panel").join("panel.csv");
    let flags_path = ctx.dir("panel").join("flags.csv");
    if !panel_path.exists() || !flags_path.exists() {
        let producer = if ctx.dir("score").join("scores.csv").exists() { "panel" } else { "score" };
        let missing = if panel_path.exists() { flags_path } else { panel_path };
        return Err(Error::MissingArtifact { path: missing, producer: producer.to_string() });
    }
    ctx.require(&panel_path, "panel")?;
    ctx.require(&flags_path, "panel")?;
    let cells = read_panel_csv(std::fs::File::open(&panel_path).map_err(|e| Error::io(&panel_path, e))?)?;
    let flags = read_flags_csv(std::fs::File::open(&flags_path).map_err(|e| Error::io(&flags_path, e))?)?;
    let treated = flags.iter().map(|f| (f.user_id.clone(), f.in_treated_region)).collect();
    Ok(PanelInputs { cells, flags, treated })
}

fn spec_options(cfg: &StudyConfig, sample: Option<BTreeSet<String>>) -> SpecOptions {
    SpecOptions {
        controls: if cfg.estimation.controls { PanelVar::STYLE_CONTROLS.to_vec() } else { Vec::new() },
        sample,
        fit: FitOptions { dof: cfg.estimation.dof, ..FitOptions::default() },
        pre_mean: cfg.estimation.pre_mean,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    /// `did` or `weekly`.
    pub kind: String,
    pub sample: String,
    pub outcome: String,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRecord {
    pub outcome: String,
    pub result: Option<ImputationResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateArtifact {
    pub controls: bool,
    pub fits: Vec<FitRecord>,
    pub imputation: Vec<ImputationRecord>,
}

fn record(kind: &str, sample: &str, outcome: PanelVar, r: Result<FitResult>) -> FitRecord {
    let (fit, error) = match r {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    FitRecord { kind: kind.into(), sample: sample.into(), outcome: outcome.name().into(), fit, error }
}

/// Runs the configured estimation battery on an in-memory panel.
pub fn estimate_panel(
    cfg: &StudyConfig,
    cells: &[PanelCell],
    flags: &[CohortFlags],
    treated: &HashMap<String, bool>,
) -> Result<EstimateArtifact> {
    use rayon::prelude::*;
    let window = cfg.study_window()?;
    let data = PanelData { cells, treated, window };
    let e = &cfg.estimation;
    let jobs: Vec<(&str, String, PanelVar, SpecOptions)> = e
        .samples
        .iter()
        .flat_map(|s| {
            let opts = spec_options(cfg, s.select(flags));
            e.outcomes.iter().map(move |o| ("did", s.name(), *o, opts.clone()))
        })
        .chain(
            e.outcomes
                .iter()
                .filter(|_| e.weekly)
                .map(|o| ("weekly", "all".to_string(), *o, spec_options(cfg, None))),
        )
        .collect();
    let fits: Vec<FitRecord> = jobs
        .par_iter()
        .map(|(kind, sample, outcome, opts)| {
            let r = if *kind == "did" {
                did_estimate(&data, *outcome, opts)
            } else {
                weekly_interactions(&data, *outcome, opts)
            };
            record(kind, sample, *outcome, r)
        })
        .collect();
    let imputation = if e.imputation {
        e.outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let opts = ImputationOptions {
                    bootstrap_draws: e.bootstrap_draws,
                    seed: derive_seed(cfg.seeds.master, 1_000 + i as u64),
                    ..ImputationOptions::default()
                };
                let (result, error) = match imputation_att(&data, *o, &opts) {
                    Ok(r) => (Some(r), None),
                    Err(err) => (None, Some(err.to_string())),
                };
                ImputationRecord { outcome: o.name().into(), result, error }
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EstimateArtifact { controls: e.controls, fits, imputation })
}

fn estimate_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let p = load_panel(&mut ctx)?;
    let art = estimate_panel(ctx.cfg, &p.cells, &p.flags, &p.treated)?;
    let dir = ctx.dir("estimate");
    ctx.write_json(dir.join("fits.json"), &art)?;
    let flat = csv_bytes(|b| {
        let mut wtr = csv::Writer::from_writer(b);
        wtr.write_record([
            "kind", "sample", "outcome", "term", "estimate", "se", "ci95_lo", "ci95_hi", "n_obs", "n_clusters",
            "r2_within", "pre_period_mean", "pct_of_mean",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &art.fits {
            let Some(f) = &r.fit else { continue };
            for c in &f.coefficients {
                wtr.write_record([
                    r.kind.clone(),
                    r.sample.clone(),
                    r.outcome.clone(),
                    c.name.clone(),
                    format!("{:?}", c.estimate),
                    format!("{:?}", c.se),
                    format!("{:?}", c.ci95.0),
                    format!("{:?}", c.ci95.1),
                    f.n_obs.to_string(),
                    f.n_clusters.to_string(),
                    format!("{:?}", f.r2_within),
                    opt(f.pre_period_mean),
                    opt(f.pct_of_mean),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("fits.csv", e))
    })?;
    ctx.write(dir.join("fits.csv"), &flat)?;
    let failed = art.fits.iter().filter(|f| f.error.is_some()).count();
    let summary = format!("{} fits ({failed} failed), {} imputation runs", art.fits.len(), art.imputation.len());
    ctx.finish(Stage::Estimate, summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyArtifact {
    pub daily: EventStudyResult,
    pub binned: EventStudyResult,
}

pub fn event_study_panel(cfg: &StudyConfig, cells: &[PanelCell], treated: &HashMap<String, bool>) -> Result<EventStudyArtifact> {
    let window = cfg.study_window()?;
    let data = PanelData { cells, treated, window };
    let es = &cfg.estimation.event_study;
    let reference = cfg.reference_day();
    let opts = spec_options(cfg, None);
    let bins: Vec<DateRange> = if es.bins.is_empty() {
        let (five_ref, five) = five_bin_layout(&window)?;
        if five_ref != reference {
            return Err(Error::Specification(format!(
                "the default five-bin layout omits {five_ref}; set estimation.event_study.bins for reference day {reference}"
            )));
        }
        five
    } else {
        es.bins.iter().map(|(a, b)| DateRange::new(*a, *b)).collect::<Result<_>>()?
    };
    Ok(EventStudyArtifact {
        daily: event_study(&data, es.outcome, reference, None, &opts)?,
        binned: event_study(&data, es.outcome, reference, Some(&bins), &opts)?,
    })
}

fn plot_csv(r: &EventStudyResult, binned: bool) -> Result<Vec<u8>> {
    csv_bytes(|b| {
        let mut wtr = csv::Writer::from_writer(b);
        if binned {
            wtr.write_record(["day", "end", "coef", "lo", "hi"])?;
        } else {
            wtr.write_record(["day", "coef", "lo", "hi"])?;
        }
        for c in &r.coefficients {
            let mut row = vec![c.start.to_string()];
            if binned {
                row.push(c.end.to_string());
            }
            row.extend([format!("{:?}", c.estimate), format!("{:?}", c.ci95.0), format!("{:?}", c.ci95.1)]);
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("event study csv", e))
    })
}

fn event_study_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let p = load_panel(&mut ctx)?;
    let art = event_study_panel(ctx.cfg, &p.cells, &p.treated)?;
    let dir = ctx.dir("event-study");
    ctx.write_json(dir.join("event_study.json"), &art)?;
    ctx.write(dir.join("daily.csv"), &plot_csv(&art.daily, false)?)?;
    ctx.write(dir.join("binned.csv"), &plot_csv(&art.binned, true)?)?;
    let summary = format!(
        "{} daily and {} binned coefficients (reference {})",
        art.daily.coefficients.len(),
        art.binned.coefficients.len(),
        art.daily.reference_day
    );
    ctx.finish(Stage::EventStudy, summary)
}

/// One TWFE DiD replication on a freshly generated direct-outcome panel.
pub fn did_replication(cfg: &SynthConfig, fit: FitOptions, seed: u64) -> Result<RepOutcome> {
    let (cells, truth) = generate_panel(cfg, seed)?;
    let treated: HashMap<String, bool> = truth.treated.into_iter().collect();
    let data = PanelData { cells: &cells, treated: &treated, window: cfg.window()? };
    let opts = SpecOptions { fit, ..SpecOptions::default() };
    let f = did_estimate(&data, PanelVar::AvgSlant, &opts)?;
    let c = f.coef(DID_TERM).ok_or_else(|| Error::Identification("treatment term dropped".into()))?;
    Ok(RepOutcome { estimate: c.estimate, se: c.se, ci95: c.ci95 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McArtifact {
    pub effect: McSummary,
    pub placebo: McSummary,
}

fn mc_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let base = SynthConfig { mode: EmbeddingMode::DirectOutcome, ..ctx.cfg.synth_config() };
    let fit = FitOptions { dof: ctx.cfg.estimation.dof, ..FitOptions::default() };
    let master = ctx.cfg.seeds.master;
    let effect = monte_carlo(ctx.cfg.mc.reps, derive_seed(master, 1), base.true_effect, |s| {
        did_replication(&base, fit, s)
    })?;
    let placebo_cfg = SynthConfig { true_effect: 0.0, ..base.clone() };
    let placebo = monte_carlo(ctx.cfg.mc.placebo_reps, derive_seed(master, 2), 0.0, |s| {
        did_replication(&placebo_cfg, fit, s)
    })?;
    let summary = format!(
        "effect {}: mean {:.4} (mc se {:.4}); placebo coverage {:.3}",
        effect.truth, effect.mean_estimate, effect.mc_se, placebo.coverage_95
    );
    let dir = ctx.dir("mc");
    ctx.write_json(dir.join("mc.json"), &McArtifact { effect, placebo })?;
    ctx.finish(Stage::Mc, summary)
}

fn fmt6(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// A labelled row of a report table.
type Row<'a> = (&'a str, &'a dyn Fn(&FitResult) -> Option<f64>);

/// Rows are terms and summary lines, columns are outcomes.
fn table(records: &[&FitRecord], outcomes: &[String], rows: &[Row<'_>]) -> Vec<Vec<String>> {
    let by_outcome: BTreeMap<&str, &FitRecord> = records.iter().map(|r| (r.outcome.as_str(), *r)).collect();
    rows.iter()
        .map(|(label, get)| {
            let mut row = vec![label.to_string()];
            row.extend(outcomes.iter().map(|o| {
                let v = by_outcome.get(o.as_str()).and_then(|r| r.fit.as_ref()).and_then(get);
                match v {
                    Some(x) if matches!(*label, "Observations" | "Users") => format!("{x:.0}"),
                    _ => fmt6(v),
                }
            }));
            row
        })
        .collect()
}

fn report_stage(mut ctx: Ctx<'_>) -> Result<StageOutcome> {
    let fits_path = ctx.dir("estimate").join("fits.json");
    ctx.require(&fits_path, "estimate")?;
    let art: EstimateArtifact =
        serde_json::from_slice(&std::fs::read(&fits_path).map_err(|e| Error::io(&fits_path, e))?)?;
    let outcomes: Vec<String> = ctx.cfg.estimation.outcomes.iter().map(|o| o.name().to_string()).collect();
    let coef = |name: &'static str| move |f: &FitResult| f.coef(name).map(|c| c.estimate);
    let se = |name: &'static str| move |f: &FitResult| f.coef(name).map(|c| c.se);
    let obs = |f: &FitResult| Some(f.n_obs as f64);
    let users = |f: &FitResult| Some(f.n_clusters as f64);
    let pre = |f: &FitResult| f.pre_period_mean;
    let pct = |f: &FitResult| f.pct_of_mean;
    let r2 = |f: &FitResult| Some(f.r2_within);

    let mut header = vec!["sample".to_string(), "row".to_string()];
    header.extend(outcomes.iter().cloned());
    let write_table = |rows: Vec<(String, Vec<Vec<String>>)>| -> Result<Vec<u8>> {
        csv_bytes(|b| {
            let mut wtr = csv::Writer::from_writer(b);
            wtr.write_record(&header)?;
            for (sample, block) in rows {
                for r in block {
                    let mut line = vec![sample.clone()];
                    line.extend(r);
                    wtr.write_record(&line)?;
                }
            }
            wtr.flush().map_err(|e| Error::io("report table", e))
        })
    };

    let did_coef = coef(DID_TERM);
    let did_se = se(DID_TERM);
    let did_rows: [Row<'_>; 7] = [
        (DID_TERM, &did_coef),
        ("se", &did_se),
        ("Pre-period mean of DV", &pre),
        ("% of mean", &pct),
        ("Observations", &obs),
        ("Users", &users),
        ("R2 within", &r2),
    ];
    let mut samples: Vec<String> = Vec::new();
    for r in art.fits.iter().filter(|r| r.kind == "did") {
        if !samples.contains(&r.sample) {
            samples.push(r.sample.clone());
        }
    }
    let did_blocks = samples
        .iter()
        .map(|s| {
            let recs: Vec<&FitRecord> = art.fits.iter().filter(|r| r.kind == "did" && &r.sample == s).collect();
            (s.clone(), table(&recs, &outcomes, &did_rows))
        })
        .collect();
    let dir = ctx.dir("report");
    ctx.write(dir.join("did_table.csv"), &write_table(did_blocks)?)?;

    let (w1, w1se, w2, w2se) = (coef(WEEK1_TERM), se(WEEK1_TERM), coef(WEEK2_TERM), se(WEEK2_TERM));
    let week_rows: [Row<'_>; 8] = [
        (WEEK1_TERM, &w1),
        ("se (1st week)", &w1se),
        (WEEK2_TERM, &w2),
        ("se (2nd week)", &w2se),
        ("Pre-period mean of DV", &pre),
        ("1st week % of mean", &pct),
        ("Observations", &obs),
        ("Users", &users),
    ];
    let weekly: Vec<&FitRecord> = art.fits.iter().filter(|r| r.kind == "weekly").collect();
    if !weekly.is_empty() {
        ctx.write(dir.join("weekly_table.csv"), &write_table(vec![("all".into(), table(&weekly, &outcomes, &week_rows))])?)?;
    }

    let es_path = ctx.dir("event-study").join("event_study.json");
    let mut plots = 0;
    if es_path.exists() {
        ctx.inputs.push(es_path.clone());
        let es: EventStudyArtifact =
            serde_json::from_slice(&std::fs::read(&es_path).map_err(|e| Error::io(&es_path, e))?)?;
        ctx.write(dir.join("event_study_daily_plot.csv"), &plot_csv(&es.daily, false)?)?;
        ctx.write(dir.join("event_study_binned_plot.csv"), &plot_csv(&es.binned, true)?)?;
        plots = 2;
    }
    let summary = format!("{} did blocks, {} weekly fits, {plots} plot files", samples.len(), weekly.len());
    ctx.finish(Stage::Report, summary)
}
