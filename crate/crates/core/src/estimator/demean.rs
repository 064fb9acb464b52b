//! Within transformation for two crossed fixed effects by alternating
//! projections: subtract user means, then day means, until the largest
//! absolute change in a sweep drops below the tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group structure of an unbalanced user-by-day panel.
#[derive(Debug, Clone)]
pub struct TwoWayIndex {
    user: Vec<usize>,
    day: Vec<usize>,
    user_count: Vec<f64>,
    day_count: Vec<f64>,
}

impl TwoWayIndex {
    /// Indices must be dense (`0..n_users`, `0..n_days`); empty groups are
    /// allowed and simply never visited.
    pub fn new(user: Vec<usize>, day: Vec<usize>) -> Result<Self> {
        if user.len() != day.len() {
            return Err(Error::Specification(format!(
                "user index has {} rows, day index {}",
                user.len(),
                day.len()
            )));
        }
        let n_users = user.iter().max().map_or(0, |m| m + 1);
        let n_days = day.iter().max().map_or(0, |m| m + 1);
        let mut user_count = vec![0.0; n_users];
        let mut day_count = vec![0.0; n_days];
        for (&u, &d) in user.iter().zip(&day) {
            user_count[u] += 1.0;
            day_count[d] += 1.0;
        }
        Ok(Self { user, day, user_count, day_count })
    }

    pub fn len(&self) -> usize {
        self.user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user.is_empty()
    }

    pub fn users(&self) -> &[usize] {
        &self.user
    }

    pub fn days(&self) -> &[usize] {
        &self.day
    }

    pub fn n_users(&self) -> usize {
        self.user_count.iter().filter(|c| **c > 0.0).count()
    }

    pub fn n_days(&self) -> usize {
        self.day_count.iter().filter(|c| **c > 0.0).count()
    }

    /// Connected components of the bipartite user-day graph; each one
    /// makes one fixed-effect level redundant.
    pub fn n_components(&self) -> usize {
        let nu = self.user_count.len();
        let mut parent: Vec<usize> = (0..nu + self.day_count.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (&u, &d) in self.user.iter().zip(&self.day) {
            let (a, b) = (find(&mut parent, u), find(&mut parent, nu + d));
            if a != b {
                parent[a] = b;
            }
        }
        let mut roots = std::collections::BTreeSet::new();
        for (&u, &d) in self.user.iter().zip(&self.day) {
            roots.insert(find(&mut parent, u));
            roots.insert(find(&mut parent, nu + d));
        }
        roots.len()
    }

    /// Number of absorbed fixed-effect parameters net of redundancies.
    pub fn absorbed_levels(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        self.n_users() + self.n_days() - self.n_components()
    }

    fn sweep(&self, col: &mut [f64], sums_u: &mut [f64], sums_d: &mut [f64]) -> f64 {
        sums_u.iter_mut().for_each(|s| *s = 0.0);
        for (x, &u) in col.iter().zip(&self.user) {
            sums_u[u] += *x;
        }
        for (s, c) in sums_u.iter_mut().zip(&self.user_count) {
            if *c > 0.0 {
                *s /= c;
            }
        }
        for (x, &u) in col.iter_mut().zip(&self.user) {
            *x -= sums_u[u];
        }
        sums_d.iter_mut().for_each(|s| *s = 0.0);
        for (x, &d) in col.iter().zip(&self.day) {
            sums_d[d] += *x;
        }
        for (s, c) in sums_d.iter_mut().zip(&self.day_count) {
            if *c > 0.0 {
                *s /= c;
            }
        }
        let mut delta: f64 = 0.0;
        for ((x, &u), &d) in col.iter_mut().zip(&self.user).zip(&self.day) {
            *x -= sums_d[d];
            delta = delta.max((sums_u[u] + sums_d[d]).abs());
        }
        delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemeanInfo {
    /// Largest sweep count over all columns.
    pub iterations: usize,
    /// Largest final per-sweep change over all columns.
    pub final_delta: f64,
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Demeans every column in place.
pub fn demean_two_way(
    columns: &mut [Vec<f64>],
    index: &TwoWayIndex,
    tol: f64,
    max_iter: usize,
) -> Result<DemeanInfo> {
    let mut info = DemeanInfo { iterations: 0, final_delta: 0.0 };
    let mut sums_u = vec![0.0; index.user_count.len()];
    let mut sums_d = vec![0.0; index.day_count.len()];
    for col in columns.iter_mut() {
        if col.len() != index.len() {
            return Err(Error::Specification(format!(
                "column has {} rows, index {}",
                col.len(),
                index.len()
            )));
        }
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite value in demeaning input".into()));
        }
        let mut delta = f64::INFINITY;
        let mut it = 0;
        while delta >= tol {
            if it == max_iter {
                return Err(Error::Convergence { iterations: it, delta });
            }
            delta = index.sweep(col, &mut sums_u, &mut sums_d);
            it += 1;
        }
        info.iterations = info.iterations.max(it);
        info.final_delta = info.final_delta.max(delta);
    }
    Ok(info)
}
