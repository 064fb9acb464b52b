//! Imputation estimator for the treated-post average effect.
//!
//! User and day effects are fit on untreated cells only (all control
//! cells and treated pre-ban cells). Treated post-ban cells are imputed
//! from those effects and the ATT is the mean gap between actual and
//! imputed outcomes. Standard errors come from a user-level cluster
//! bootstrap.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::demean::{demean_two_way, TwoWayIndex, DEFAULT_MAX_ITER, DEFAULT_TOL};
use super::did::PanelData;
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, mean, sample_variance};
use crate::panel::PanelVar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationOptions {
    pub bootstrap_draws: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ImputationOptions {
    fn default() -> Self {
        Self { bootstrap_draws: 499, seed: 0, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub outcome: String,
    pub att: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n_treated_post: usize,
    /// Treated users with no pre-ban cell, whose effect cannot be imputed.
    pub dropped_users: Vec<String>,
    /// Bootstrap draws that failed (for example no treated-post cell drawn).
    pub failed_draws: usize,
}

#[derive(Debug, Clone)]
struct Obs {
    user: usize,
    day: usize,
    y: f64,
    treated_post: bool,
}

/// ATT over `obs`, where each user appears with multiplicity `weight[user]`.
fn att_once(obs: &[Obs], weight: &[usize], n_days: usize, tol: f64, max_iter: usize) -> Result<f64> {
    // Replicate rows so resampled users become distinct fixed-effect levels.
    let mut fit_u = Vec::new();
    let mut fit_d = Vec::new();
    let mut fit_y = Vec::new();
    let mut targets: Vec<(usize, usize, f64)> = Vec::new();
    let mut next_level = 0usize;
    let mut level_of: HashMap<(usize, usize), usize> = HashMap::new();
    for (user, w) in weight.iter().enumerate() {
        for copy in 0..*w {
            level_of.insert((user, copy), next_level);
            next_level += 1;
        }
    }
    for o in obs {
        for copy in 0..weight[o.user] {
            let lvl = level_of[&(o.user, copy)];
            if o.treated_post {
                targets.push((lvl, o.day, o.y));
            } else {
                fit_u.push(lvl);
                fit_d.push(o.day);
                fit_y.push(o.y);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Identification("no treated post-ban cells".into()));
    }
    let index = TwoWayIndex::new(fit_u.clone(), fit_d.clone())?;
    let mut cols = vec![fit_y.clone()];
    demean_two_way(&mut cols, &index, tol, max_iter)?;
    // y - resid = alpha_u + gamma_d on the untreated sample; recover both
    // effects by alternating means on the fitted values.
    let fitted: Vec<f64> = fit_y.iter().zip(&cols[0]).map(|(y, r)| y - r).collect();
    let n_levels = next_level;
    let mut alpha = vec![0.0; n_levels];
    let mut gamma = vec![0.0; n_days];
    let mut cnt_u = vec![0.0; n_levels];
    let mut cnt_d = vec![0.0; n_days];
    for (&u, &d) in fit_u.iter().zip(&fit_d) {
        cnt_u[u] += 1.0;
        cnt_d[d] += 1.0;
    }
    for _ in 0..max_iter {
        let mut su = vec![0.0; n_levels];
        for ((&u, &d), f) in fit_u.iter().zip(&fit_d).zip(&fitted) {
            su[u] += f - gamma[d];
        }
        for (a, (s, c)) in alpha.iter_mut().zip(su.iter().zip(&cnt_u)) {
            if *c > 0.0 {
                *a = s / c;
            }
        }
        let mut sd = vec![0.0; n_days];
        for ((&u, &d), f) in fit_u.iter().zip(&fit_d).zip(&fitted) {
            sd[d] += f - alpha[u];
        }
        let mut change: f64 = 0.0;
        for (g, (s, c)) in gamma.iter_mut().zip(sd.iter().zip(&cnt_d)) {
            if *c > 0.0 {
                let new = s / c;
                change = change.max((new - *g).abs());
                *g = new;
            }
        }
        if change < tol {
            break;
        }
    }
    let mut gaps = Vec::with_capacity(targets.len());
    for (lvl, d, y) in targets {
        if cnt_u[lvl] == 0.0 || cnt_d[d] == 0.0 {
            return Err(Error::Identification(format!(
                "treated post-ban cell on day index {d} has no untreated comparison"
            )));
        }
        gaps.push(y - alpha[lvl] - gamma[d]);
    }
    Ok(mean(&gaps).unwrap())
}

pub fn imputation_att(data: &PanelData<'_>, outcome: PanelVar, opts: &ImputationOptions) -> Result<ImputationResult> {
    let mut users: BTreeMap<&str, usize> = BTreeMap::new();
    let mut days: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    let mut has_pre: BTreeMap<&str, bool> = BTreeMap::new();
    let mut rows = Vec::new();
    for c in data.cells {
        if !data.window.contains(c.day) {
            continue;
        }
        let Some(y) = outcome.get(c) else { continue };
        let treated = *data
            .treated
            .get(&c.user_id)
            .ok_or_else(|| Error::Integrity(format!("user {:?} has no treatment status", c.user_id)))?;
        let pre = data.window.is_pre(c.day);
        *has_pre.entry(&c.user_id).or_insert(false) |= pre;
        rows.push((c, y, treated && !pre));
    }
    let dropped_users: Vec<String> = has_pre
        .iter()
        .filter(|(u, pre)| !**pre && data.treated.get(**u).copied().unwrap_or(false))
        .map(|(u, _)| u.to_string())
        .collect();
    rows.retain(|(c, _, _)| !dropped_users.contains(&c.user_id));
    for (c, _, _) in &rows {
        let n = users.len();
        users.entry(&c.user_id).or_insert(n);
        days.entry(c.day).or_insert(0);
    }
    for (i, v) in days.values_mut().enumerate() {
        *v = i;
    }
    let obs: Vec<Obs> = rows
        .iter()
        .map(|(c, y, tp)| Obs { user: users[c.user_id.as_str()], day: days[&c.day], y: *y, treated_post: *tp })
        .collect();
    let n_treated_post = obs.iter().filter(|o| o.treated_post).count();
    if n_treated_post == 0 {
        return Err(Error::Identification(format!("no treated post-ban cells for {outcome}")));
    }
    let n_users = users.len();
    let att = att_once(&obs, &vec![1; n_users], days.len(), opts.tol, opts.max_iter)?;

    let draws: Vec<Option<f64>> = (0..opts.bootstrap_draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, b as u64));
            let mut weight = vec![0usize; n_users];
            for _ in 0..n_users {
                weight[rng.random_range(0..n_users)] += 1;
            }
            att_once(&obs, &weight, days.len(), opts.tol, opts.max_iter).ok()
        })
        .collect();
    let ok: Vec<f64> = draws.iter().flatten().copied().collect();
    let failed_draws = draws.len() - ok.len();
    let se = match sample_variance(&ok) {
        Some(v) => v.sqrt(),
        None => {
            return Err(Error::Inference(format!(
                "bootstrap produced {} usable draws, need at least 2",
                ok.len()
            )))
        }
    };
    Ok(ImputationResult {
        outcome: outcome.name().to_string(),
        att,
        se,
        ci95: (att - 1.96 * se, att + 1.96 * se),
        n_treated_post,
        dropped_users,
        failed_draws,
    })
}
