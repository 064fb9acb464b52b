//! Panel-level specifications: DiD, weekly interactions and event studies.
//!
//! Every specification interacts the treated-region indicator with a set
//! of day bins and absorbs user and day fixed effects. The daily event
//! study is the binned one with singleton bins, so both share one design
//! path.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::demean::TwoWayIndex;
use super::ols::{fit_design, t_critical, FitOptions, FitResult, TwfeDesign};
use crate::dates::{add_days, DateRange};
use crate::error::{Error, Result};
use crate::numeric::mean;
use crate::panel::{PanelCell, PanelVar, StudyWindow};

pub const DID_TERM: &str = "EU x after-ban";
pub const WEEK1_TERM: &str = "EU x 1st week after-ban";
pub const WEEK2_TERM: &str = "EU x 2nd week after-ban";

/// Which cells enter the pre-period mean reported with a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreMeanMode {
    /// All pre-ban cells of the estimation sample.
    #[default]
    Pooled,
    TreatedOnly,
}

/// Panel cells plus per-user treatment status.
#[derive(Debug, Clone, Copy)]
pub struct PanelData<'a> {
    pub cells: &'a [PanelCell],
    pub treated: &'a HashMap<String, bool>,
    pub window: StudyWindow,
}

/// Shared estimation settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpecOptions {
    pub controls: Vec<PanelVar>,
    /// Restrict to these users; `None` keeps everyone.
    pub sample: Option<BTreeSet<String>>,
    pub fit: FitOptions,
    pub pre_mean: PreMeanMode,
}

/// Treatment interaction terms of a specification.
#[derive(Debug, Clone, PartialEq)]
pub struct TermBins {
    pub terms: Vec<(String, DateRange)>,
}

/// `100 * beta / |mean|`; undefined when `|mean| < 1e-12`. Dividing by
/// the absolute mean keeps the sign of the effect.
pub fn pct_of_mean(beta: f64, pre_mean: f64) -> Option<f64> {
    (pre_mean.is_finite() && pre_mean.abs() >= 1e-12).then(|| 100.0 * beta / pre_mean.abs())
}

/// Attaches the pre-period mean and the headline coefficient's share of it.
pub fn summarize_fit(mut fit: FitResult, pre_period_mean: f64) -> FitResult {
    fit.pre_period_mean = Some(pre_period_mean);
    fit.pct_of_mean = fit
        .coefficients
        .first()
        .and_then(|c| pct_of_mean(c.estimate, pre_period_mean));
    fit
}

struct Sample<'a> {
    cells: Vec<&'a PanelCell>,
    treated: Vec<bool>,
    y: Vec<f64>,
    controls: Vec<Vec<f64>>,
    index: TwoWayIndex,
    clusters: Vec<usize>,
}

fn select_sample<'a>(data: &PanelData<'a>, outcome: PanelVar, opts: &SpecOptions) -> Result<Sample<'a>> {
    let mut users: BTreeMap<&str, usize> = BTreeMap::new();
    let mut days: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    let mut keep = Vec::new();
    for c in data.cells {
        if !data.window.contains(c.day) || opts.sample.as_ref().is_some_and(|s| !s.contains(&c.user_id)) {
            continue;
        }
        if outcome.get(c).is_none() || opts.controls.iter().any(|v| v.get(c).is_none()) {
            continue;
        }
        keep.push(c);
        users.entry(&c.user_id).or_insert(0);
        days.entry(c.day).or_insert(0);
    }
    for (i, v) in users.values_mut().enumerate() {
        *v = i;
    }
    for (i, v) in days.values_mut().enumerate() {
        *v = i;
    }
    let treated = keep
        .iter()
        .map(|c| {
            data.treated
                .get(&c.user_id)
                .copied()
                .ok_or_else(|| Error::Integrity(format!("user {:?} has no treatment status", c.user_id)))
        })
        .collect::<Result<Vec<bool>>>()?;
    let user_idx: Vec<usize> = keep.iter().map(|c| users[c.user_id.as_str()]).collect();
    let day_idx = keep.iter().map(|c| days[&c.day]).collect();
    Ok(Sample {
        y: keep.iter().map(|c| outcome.get(c).unwrap()).collect(),
        controls: opts
            .controls
            .iter()
            .map(|v| keep.iter().map(|c| v.get(c).unwrap()).collect())
            .collect(),
        clusters: user_idx.clone(),
        index: TwoWayIndex::new(user_idx, day_idx)?,
        cells: keep,
        treated,
    })
}

/// Fits `outcome` on treated-region x bin interactions (plus controls)
/// with user and day fixed effects, clustering by user.
pub fn fit_twfe(data: &PanelData<'_>, outcome: PanelVar, bins: &TermBins, opts: &SpecOptions) -> Result<FitResult> {
    let s = select_sample(data, outcome, opts)?;
    if s.cells.is_empty() {
        return Err(Error::Identification(format!("no usable cells for {outcome}")));
    }
    if !s.treated.iter().any(|t| *t) {
        return Err(Error::Identification("sample has no treated users".into()));
    }
    if s.treated.iter().all(|t| *t) {
        return Err(Error::Identification("sample has no control users".into()));
    }
    let mut columns: Vec<(String, Vec<f64>)> = bins
        .terms
        .iter()
        .map(|(name, range)| {
            let col = s
                .cells
                .iter()
                .zip(&s.treated)
                .map(|(c, t)| f64::from(u8::from(*t && range.contains(c.day))))
                .collect();
            (name.clone(), col)
        })
        .collect();
    for (v, col) in opts.controls.iter().zip(&s.controls) {
        columns.push((v.name().to_string(), col.clone()));
    }
    let design = TwfeDesign { y: s.y.clone(), columns, index: s.index, clusters: s.clusters };
    let fit = fit_design(&design, outcome.name(), &opts.fit)?;
    if !bins.terms.iter().any(|(name, _)| fit.coef(name).is_some()) {
        return Err(Error::Identification(format!(
            "treatment terms are absorbed by the fixed effects for {outcome}"
        )));
    }
    let pre: Vec<f64> = s
        .cells
        .iter()
        .zip(&s.treated)
        .zip(&s.y)
        .filter(|((c, t), _)| {
            data.window.is_pre(c.day) && (opts.pre_mean == PreMeanMode::Pooled || **t)
        })
        .map(|(_, y)| *y)
        .collect();
    Ok(match mean(&pre) {
        Some(m) => summarize_fit(fit, m),
        None => fit,
    })
}

/// Single treated x post coefficient.
pub fn did_estimate(data: &PanelData<'_>, outcome: PanelVar, opts: &SpecOptions) -> Result<FitResult> {
    let bins = TermBins { terms: vec![(DID_TERM.to_string(), data.window.post_range())] };
    fit_twfe(data, outcome, &bins, opts)
}

/// DiD for each outcome, estimated concurrently; results keep input order.
pub fn did_battery(
    data: &PanelData<'_>,
    outcomes: &[PanelVar],
    opts: &SpecOptions,
) -> Vec<(PanelVar, Result<FitResult>)> {
    outcomes
        .par_iter()
        .map(|&o| (o, did_estimate(data, o, opts)))
        .collect()
}

/// First seven post-ban days and the remainder of the window.
pub fn week_bins(window: &StudyWindow) -> Result<TermBins> {
    let post = window.post_range();
    if post.n_days() < 8 {
        return Err(Error::Specification(format!(
            "weekly interactions need >= 8 post-ban days, window has {}",
            post.n_days()
        )));
    }
    let w1_end = add_days(window.ban_date, 6);
    Ok(TermBins {
        terms: vec![
            (WEEK1_TERM.to_string(), DateRange { start: window.ban_date, end: w1_end }),
            (WEEK2_TERM.to_string(), DateRange { start: add_days(w1_end, 1), end: window.end }),
        ],
    })
}

pub fn weekly_interactions(data: &PanelData<'_>, outcome: PanelVar, opts: &SpecOptions) -> Result<FitResult> {
    fit_twfe(data, outcome, &week_bins(&data.window)?, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCoef {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub estimate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    pub outcome: String,
    pub reference_day: NaiveDate,
    /// Ordered by start day; the reference day is pinned at zero.
    pub coefficients: Vec<EventCoef>,
    /// Bins whose interaction was dropped as collinear.
    pub dropped: Vec<DateRange>,
    pub fit: FitResult,
}

impl EventStudyResult {
    pub fn at(&self, day: NaiveDate) -> Option<&EventCoef> {
        self.coefficients.iter().find(|c| c.start <= day && day <= c.end)
    }
}

fn bin_label(r: &DateRange) -> String {
    if r.start == r.end {
        format!("EU x {}", r.start)
    } else {
        format!("EU x {}..{}", r.start, r.end)
    }
}

/// Checks that `bins` tile the window minus the reference day.
pub fn validate_bins(window: &StudyWindow, reference_day: NaiveDate, bins: &[DateRange]) -> Result<()> {
    if !window.contains(reference_day) {
        return Err(Error::Specification(format!("reference day {reference_day} outside the window")));
    }
    let mut covered: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for (i, b) in bins.iter().enumerate() {
        if b.start > b.end || !window.contains(b.start) || !window.contains(b.end) {
            return Err(Error::Specification(format!("bin {b} is not inside the window")));
        }
        for d in b.days() {
            if d == reference_day {
                return Err(Error::Specification(format!("bin {b} contains the reference day")));
            }
            if let Some(j) = covered.insert(d, i) {
                return Err(Error::Specification(format!("bins {} and {b} overlap on {d}", bins[j])));
            }
        }
    }
    let missing: Vec<String> = window
        .range()
        .days()
        .filter(|d| *d != reference_day && !covered.contains_key(d))
        .map(|d| d.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Specification(format!("bins leave days uncovered: {}", missing.join(", "))));
    }
    Ok(())
}

/// Treated x day (or x bin) coefficients relative to `reference_day`.
/// Without `bins`, every non-reference window day is its own bin.
pub fn event_study(
    data: &PanelData<'_>,
    outcome: PanelVar,
    reference_day: NaiveDate,
    bins: Option<&[DateRange]>,
    opts: &SpecOptions,
) -> Result<EventStudyResult> {
    let daily: Vec<DateRange>;
    let bins = match bins {
        Some(b) => b,
        None => {
            daily = data
                .window
                .range()
                .days()
                .filter(|d| *d != reference_day)
                .map(DateRange::single)
                .collect();
            &daily
        }
    };
    validate_bins(&data.window, reference_day, bins)?;
    let in_sample = |c: &&PanelCell| {
        outcome.get(c).is_some() && opts.sample.as_ref().is_none_or(|s| s.contains(&c.user_id))
    };
    let used: BTreeSet<NaiveDate> = data.cells.iter().filter(in_sample).map(|c| c.day).collect();
    if !used.contains(&reference_day) {
        return Err(Error::Specification(format!("reference day {reference_day} has no observations")));
    }
    if let Some(b) = bins.iter().find(|b| !b.days().any(|d| used.contains(&d))) {
        return Err(Error::Specification(format!("bin {b} has no observations")));
    }

    let terms = TermBins { terms: bins.iter().map(|b| (bin_label(b), *b)).collect() };
    let fit = fit_twfe(data, outcome, &terms, opts)?;
    let crit = t_critical(fit.n_clusters.saturating_sub(1));
    let mut coefficients = vec![EventCoef {
        start: reference_day,
        end: reference_day,
        estimate: 0.0,
        se: 0.0,
        ci95: (0.0, 0.0),
        is_reference: true,
    }];
    let mut dropped = Vec::new();
    for (label, range) in &terms.terms {
        match fit.coef(label) {
            Some(c) => coefficients.push(EventCoef {
                start: range.start,
                end: range.end,
                estimate: c.estimate,
                se: c.se,
                ci95: (c.estimate - crit * c.se, c.estimate + crit * c.se),
                is_reference: false,
            }),
            None => dropped.push(*range),
        }
    }
    coefficients.sort_by_key(|c| c.start);
    Ok(EventStudyResult { outcome: outcome.name().to_string(), reference_day, coefficients, dropped, fit })
}

/// Five aggregated bins around an omitted reference day: two pre-ban
/// 5-day bins, then post-ban bins of 5, 5 and the remainder.
pub fn five_bin_layout(window: &StudyWindow) -> Result<(NaiveDate, Vec<DateRange>)> {
    let reference = crate::dates::sub_days(window.ban_date, 1);
    let r = |a: NaiveDate, b: NaiveDate| DateRange::new(a, b);
    let bins = vec![
        r(window.start, crate::dates::sub_days(reference, 6))?,
        r(crate::dates::sub_days(reference, 5), crate::dates::sub_days(reference, 1))?,
        r(window.ban_date, add_days(window.ban_date, 4))?,
        r(add_days(window.ban_date, 5), add_days(window.ban_date, 9))?,
        r(add_days(window.ban_date, 10), window.end)?,
    ];
    validate_bins(window, reference, &bins)?;
    Ok((reference, bins))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, m, day).unwrap()
    }

    fn study_window_2022() -> StudyWindow {
        StudyWindow::new(d(2, 19), d(3, 2), d(3, 15)).unwrap()
    }

    #[test]
    fn pct_of_mean_examples() {
        let p = pct_of_mean(-0.043, -0.068).unwrap();
        assert!((p + 63.2).abs() < 0.5, "{p}");
        let p = pct_of_mean(-0.050, -0.068).unwrap();
        assert!((p + 73.5).abs() < 0.1, "{p}");
        assert_eq!(pct_of_mean(0.0, 3.0), Some(0.0));
        assert_eq!(pct_of_mean(0.5, 0.0), None);
    }

    #[test]
    fn weeks_tile_the_post_window() {
        let w = study_window_2022();
        let bins = week_bins(&w).unwrap();
        let (a, b) = (bins.terms[0].1, bins.terms[1].1);
        assert_eq!(a.start, w.ban_date);
        assert_eq!(a.n_days(), 7);
        assert_eq!(add_days(a.end, 1), b.start);
        assert_eq!(b.end, w.end);
        let short = StudyWindow::new(d(2, 19), d(3, 2), d(3, 8)).unwrap();
        assert!(matches!(week_bins(&short), Err(Error::Specification(_))));
    }

    #[test]
    fn reference_five_bins_validate() {
        let w = study_window_2022();
        let bins = [
            DateRange::new(d(2, 19), d(2, 23)).unwrap(),
            DateRange::new(d(2, 24), d(2, 28)).unwrap(),
            DateRange::new(d(3, 2), d(3, 6)).unwrap(),
            DateRange::new(d(3, 7), d(3, 11)).unwrap(),
            DateRange::new(d(3, 12), d(3, 15)).unwrap(),
        ];
        validate_bins(&w, d(3, 1), &bins).unwrap();
        let (reference, generated) = five_bin_layout(&w).unwrap();
        assert_eq!(reference, d(3, 1));
        assert_eq!(generated, bins.to_vec());
    }

    #[test]
    fn bin_validation_errors() {
        let w = study_window_2022();
        let overlapping = [
            DateRange::new(d(2, 19), d(2, 28)).unwrap(),
            DateRange::new(d(2, 28), d(3, 15)).unwrap(),
        ];
        assert!(validate_bins(&w, d(3, 1), &overlapping).is_err());
        let gap = [DateRange::new(d(2, 19), d(2, 27)).unwrap(), DateRange::new(d(3, 2), d(3, 15)).unwrap()];
        assert!(validate_bins(&w, d(3, 1), &gap).is_err());
        assert!(validate_bins(&w, d(3, 20), &[]).is_err());
    }
}
