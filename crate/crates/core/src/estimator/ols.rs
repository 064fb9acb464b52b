//! Least squares on demeaned data with cluster-robust (CR1) inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::demean::{demean_two_way, DemeanInfo, TwoWayIndex};
use crate::error::{Error, Result};

/// How `K` in the CR1 factor `(N - 1) / (N - K)` is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DofConvention {
    /// Slopes plus absorbed fixed-effect levels net of redundancies.
    #[default]
    AbsorbAdjusted,
    SlopesOnly,
}

/// Regression input with two absorbed fixed effects.
#[derive(Debug, Clone)]
pub struct TwfeDesign {
    pub y: Vec<f64>,
    /// Named regressors, each with one value per observation.
    pub columns: Vec<(String, Vec<f64>)>,
    pub index: TwoWayIndex,
    /// Dense cluster ids per observation.
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub dof: DofConvention,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: super::demean::DEFAULT_TOL, max_iter: super::demean::DEFAULT_MAX_ITER, dof: DofConvention::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t_stat: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub demean_iterations: usize,
    pub demean_final_delta: f64,
    /// Regressors dropped as collinear after demeaning.
    pub dropped: Vec<String>,
    pub dof_convention: DofConvention,
    pub dof_k: usize,
    pub absorbed_levels: usize,
    /// Homoskedastic standard errors, aligned with the coefficients.
    pub classical_se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub outcome: String,
    pub coefficients: Vec<Coefficient>,
    /// Cluster-robust covariance, row-major, aligned with `coefficients`.
    pub vcov: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub n_users: usize,
    pub n_days: usize,
    pub r2_within: f64,
    pub pre_period_mean: Option<f64>,
    /// `100 * beta / |pre_period_mean|` for the headline coefficient.
    pub pct_of_mean: Option<f64>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Demeaned design after collinearity screening.
#[derive(Debug, Clone)]
pub struct DemeanedDesign {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub dropped: Vec<String>,
    pub info: DemeanInfo,
}

/// Greedy column-pivoted Gram-Schmidt: repeatedly admits the remaining
/// column with the largest residual norm relative to its original scale,
/// and stops once every remaining relative residual is below `rel_tol`.
/// Returns kept column positions in original order.
pub fn independent_columns(cols: &[Vec<f64>], scales: &[f64], rel_tol: f64) -> Vec<usize> {
    let mut resid: Vec<Vec<f64>> = cols.to_vec();
    let mut remaining: Vec<usize> = (0..cols.len()).collect();
    let mut kept = Vec::new();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    while !remaining.is_empty() {
        let (pos, best, rel) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &j)| {
                let s = if scales[j] > 0.0 { scales[j] } else { 1.0 };
                (pos, j, norm(&resid[j]) / s)
            })
            .fold((0, usize::MAX, -1.0), |acc, x| if x.2 > acc.2 { x } else { acc });
        if rel <= rel_tol {
            break;
        }
        remaining.remove(pos);
        kept.push(best);
        let q: Vec<f64> = {
            let n = norm(&resid[best]);
            resid[best].iter().map(|x| x / n).collect()
        };
        for &j in &remaining {
            // two passes for numerical orthogonality
            for _ in 0..2 {
                let proj: f64 = q.iter().zip(&resid[j]).map(|(a, b)| a * b).sum();
                resid[j].iter_mut().zip(&q).for_each(|(r, qi)| *r -= proj * qi);
            }
        }
    }
    kept.sort_unstable();
    kept
}

const COLLINEAR_TOL: f64 = 1e-7;

/// Demeans `y` and all regressors, then drops collinear regressors.
pub fn demean_design(design: &TwfeDesign, opts: &FitOptions) -> Result<DemeanedDesign> {
    let n = design.y.len();
    if design.index.len() != n || design.clusters.len() != n {
        return Err(Error::Specification("design rows are misaligned".into()));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(design.columns.len() + 1);
    cols.push(design.y.clone());
    cols.extend(design.columns.iter().map(|(_, c)| c.clone()));
    let info = demean_two_way(&mut cols, &design.index, opts.tol, opts.max_iter)?;
    let y = cols.remove(0);

    let scales: Vec<f64> = design
        .columns
        .iter()
        .map(|(_, c)| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let kept = independent_columns(&cols, &scales, COLLINEAR_TOL);
    let dropped = (0..cols.len())
        .filter(|j| !kept.contains(j))
        .map(|j| design.columns[j].0.clone())
        .collect();
    let names = kept.iter().map(|&j| design.columns[j].0.clone()).collect();
    let x = DMatrix::from_fn(n, kept.len(), |r, c| cols[kept[c]][r]);
    Ok(DemeanedDesign { y, x, names, dropped, info })
}

fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Inference("X'X is singular after collinearity screening".into()))
}

fn dense_clusters(clusters: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    let ids = clusters
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

/// CR1 sandwich `c * (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1` with
/// `c = G/(G-1) * (N-1)/(N-K)`.
pub fn cluster_vcov(x: &DMatrix<f64>, resid: &[f64], clusters: &[usize], k_dof: usize) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if resid.len() != n || clusters.len() != n {
        return Err(Error::Specification("vcov inputs are misaligned".into()));
    }
    let (ids, g) = dense_clusters(clusters);
    if g < 2 {
        return Err(Error::Inference(format!("cluster-robust inference needs >= 2 clusters, got {g}")));
    }
    if n <= k_dof {
        return Err(Error::Inference(format!("no residual degrees of freedom (N = {n}, K = {k_dof})")));
    }
    let bread = invert_spd(&(x.transpose() * x))?;
    let mut scores = DMatrix::<f64>::zeros(g, k);
    for r in 0..n {
        for c in 0..k {
            scores[(ids[r], c)] += x[(r, c)] * resid[r];
        }
    }
    let meat = scores.transpose() * &scores;
    let gf = g as f64;
    let factor = gf / (gf - 1.0) * (n as f64 - 1.0) / (n - k_dof) as f64;
    let v = &bread * meat * &bread * factor;
    Ok((&v + v.transpose()) * 0.5)
}

/// Homoskedastic `s^2 (X'X)^-1` with `s^2 = RSS / (N - K)`.
pub fn classical_vcov(x: &DMatrix<f64>, resid: &[f64], k_dof: usize) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n <= k_dof {
        return Err(Error::Inference(format!("no residual degrees of freedom (N = {n}, K = {k_dof})")));
    }
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    Ok(invert_spd(&(x.transpose() * x))? * (rss / (n - k_dof) as f64))
}

/// Two-sided 95% critical value of Student's t with `df` degrees of freedom.
pub fn t_critical(df: usize) -> f64 {
    // statrs' t quantile drifts for very large df; the normal limit is
    // within 3e-5 there.
    if df > 100_000 {
        return statrs::distribution::Normal::standard().inverse_cdf(0.975);
    }
    StudentsT::new(0.0, 1.0, df.max(1) as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.975)
}

/// OLS on demeaned data with cluster-robust covariance. Confidence
/// intervals use `t(G - 1)`.
pub fn fit_design(design: &TwfeDesign, outcome: &str, opts: &FitOptions) -> Result<FitResult> {
    let n = design.y.len();
    let (_, n_clusters) = dense_clusters(&design.clusters);
    if n_clusters < 2 {
        return Err(Error::Inference(format!("need >= 2 clusters, got {n_clusters}")));
    }
    let dm = demean_design(design, opts)?;
    let k = dm.names.len();
    if k == 0 {
        return Err(Error::Identification(format!(
            "every regressor is absorbed by the fixed effects ({})",
            dm.dropped.join(", ")
        )));
    }
    let xtx_inv = invert_spd(&(dm.x.transpose() * &dm.x))?;
    let y = DVector::from_column_slice(&dm.y);
    let beta = &xtx_inv * (dm.x.transpose() * &y);
    let fitted = &dm.x * &beta;
    let resid: Vec<f64> = dm.y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();

    let absorbed = design.index.absorbed_levels();
    let dof_k = match opts.dof {
        DofConvention::AbsorbAdjusted => k + absorbed,
        DofConvention::SlopesOnly => k,
    };
    let v = cluster_vcov(&dm.x, &resid, &design.clusters, dof_k)?;
    let classical = classical_vcov(&dm.x, &resid, dof_k)?;
    let crit = t_critical(n_clusters - 1);

    let coefficients = dm
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = v[(j, j)].max(0.0).sqrt();
            Coefficient {
                name: name.clone(),
                estimate: beta[j],
                se,
                t_stat: if se > 0.0 { beta[j] / se } else { 0.0 },
                ci95: (beta[j] - crit * se, beta[j] + crit * se),
            }
        })
        .collect();
    let tss: f64 = dm.y.iter().map(|v| v * v).sum();
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let r2_within = if tss > 0.0 { (1.0 - rss / tss).max(0.0) } else { 0.0 };

    Ok(FitResult {
        outcome: outcome.to_string(),
        coefficients,
        vcov: (0..k).map(|i| (0..k).map(|j| v[(i, j)]).collect()).collect(),
        n_obs: n,
        n_clusters,
        n_users: design.index.n_users(),
        n_days: design.index.n_days(),
        r2_within,
        pre_period_mean: None,
        pct_of_mean: None,
        diagnostics: FitDiagnostics {
            demean_iterations: dm.info.iterations,
            demean_final_delta: dm.info.final_delta,
            dropped: dm.dropped,
            dof_convention: opts.dof,
            dof_k,
            absorbed_levels: absorbed,
            classical_se: (0..k).map(|j| classical[(j, j)].max(0.0).sqrt()).collect(),
        },
    })
}
