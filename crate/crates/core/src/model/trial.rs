use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// One participant observation in long form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub cluster_id: String,
    pub period: u8,
    pub sequence: u8,
    pub outcome: T,
}

impl<T> Record<T> {
    pub fn new(cluster_id: impl Into<String>, period: u8, sequence: u8, outcome: T) -> Self {
        Self { cluster_id: cluster_id.into(), period, sequence, outcome }
    }
}

/// A validated two-period trial with a baseline period.
///
/// Treatment is implied by the design: a cluster with `sequence == 1` is
/// treated in period 1 only.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedTrial<T> {
    records: Vec<Record<T>>,
}

impl<T: Scalar> ObservedTrial<T> {
    pub fn new(records: Vec<Record<T>>) -> Result<Self> {
        let trial = Self { records };
        trial.summarize()?;
        Ok(trial)
    }

    pub fn records(&self) -> &[Record<T>] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record<T>> {
        self.records
    }

    /// Returns a copy with `f` applied to every outcome.
    pub fn map_outcomes(&self, f: impl Fn(T) -> T) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| Record { outcome: f(r.outcome), ..r.clone() })
            .collect();
        Self { records }
    }

    pub fn n_clusters(&self) -> usize {
        self.summarize().map(|s| s.clusters.len()).unwrap_or(0)
    }

    /// Cell sizes `(K_i0, K_i1)` keyed by cluster id.
    pub fn cell_sizes(&self) -> BTreeMap<String, (usize, usize)> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            let e = out.entry(r.cluster_id.clone()).or_insert((0, 0));
            if r.period == 0 {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        out
    }

    /// Collapses the records to per-cluster sufficient statistics, ordered by
    /// cluster id.
    pub fn summarize(&self) -> Result<TrialSummary<T>> {
        let mut cells: BTreeMap<&str, (u8, [Vec<T>; 2])> = BTreeMap::new();
        for r in &self.records {
            if r.period > 1 {
                return Err(Error::invalid(format!(
                    "cluster {}: period must be 0 or 1, got {}",
                    r.cluster_id, r.period
                )));
            }
            if r.sequence > 1 {
                return Err(Error::invalid(format!(
                    "cluster {}: sequence must be 0 or 1, got {}",
                    r.cluster_id, r.sequence
                )));
            }
            if !r.outcome.is_finite() {
                return Err(Error::invalid(format!(
                    "cluster {}: non-finite outcome",
                    r.cluster_id
                )));
            }
            let entry = cells
                .entry(r.cluster_id.as_str())
                .or_insert_with(|| (r.sequence, [Vec::new(), Vec::new()]));
            if entry.0 != r.sequence {
                return Err(Error::invalid(format!(
                    "cluster {} has records in both sequences",
                    r.cluster_id
                )));
            }
            entry.1[r.period as usize].push(r.outcome);
        }
        let clusters = cells
            .into_iter()
            .map(|(id, (seq, periods))| {
                for (j, ys) in periods.iter().enumerate() {
                    if ys.is_empty() {
                        return Err(Error::invalid(format!(
                            "cluster {id} has no records in period {j}"
                        )));
                    }
                }
                Ok(ClusterSummary::from_cells(id, seq == 1, &periods[0], &periods[1]))
            })
            .collect::<Result<Vec<_>>>()?;
        TrialSummary::new(clusters)
    }
}

/// Cell sizes, means and within-cell sums of squares of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary<T> {
    pub id: String,
    pub treated: bool,
    pub size: [usize; 2],
    pub mean: [T; 2],
    pub within_ss: [T; 2],
}

impl<T: Scalar> ClusterSummary<T> {
    pub fn from_cells(id: &str, treated: bool, y0: &[T], y1: &[T]) -> Self {
        let stats = |ys: &[T]| {
            let n = T::from_count(ys.len());
            let mean = ys.iter().copied().sum::<T>() / n;
            let ss = ys.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>();
            (mean, ss)
        };
        let (m0, w0) = stats(y0);
        let (m1, w1) = stats(y1);
        Self {
            id: id.to_owned(),
            treated,
            size: [y0.len(), y1.len()],
            mean: [m0, m1],
            within_ss: [w0, w1],
        }
    }

    pub fn s(&self) -> T {
        if self.treated {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn n(&self) -> usize {
        self.size[0] + self.size[1]
    }

    pub fn equal_periods(&self) -> bool {
        self.size[0] == self.size[1]
    }
}

/// Per-cluster sufficient statistics of a trial; the representation every
/// estimator works on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary<T> {
    pub clusters: Vec<ClusterSummary<T>>,
}

impl<T: Scalar> TrialSummary<T> {
    pub fn new(clusters: Vec<ClusterSummary<T>>) -> Result<Self> {
        if clusters.iter().any(|c| c.size[0] == 0 || c.size[1] == 0) {
            return Err(Error::invalid("every cluster needs records in both periods"));
        }
        let treated = clusters.iter().filter(|c| c.treated).count();
        if treated == 0 {
            return Err(Error::invalid("no cluster has sequence 1"));
        }
        if treated == clusters.len() {
            return Err(Error::invalid("no cluster has sequence 0"));
        }
        Ok(Self { clusters })
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(ClusterSummary::n).sum()
    }

    pub fn all_equal_periods(&self) -> bool {
        self.clusters.iter().all(ClusterSummary::equal_periods)
    }

    /// The trial with cluster `index` removed.
    pub fn leave_out(&self, index: usize) -> Result<Self> {
        let mut clusters = self.clusters.clone();
        let dropped = clusters.remove(index);
        Self::new(clusters).map_err(|_| {
            Error::invalid(format!(
                "omitting cluster {} leaves an arm without clusters",
                dropped.id
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, j: u8, s: u8, y: f64) -> Record<f64> {
        Record::new(id, j, s, y)
    }

    #[test]
    fn summarizes_cells() {
        let t = ObservedTrial::new(vec![
            rec("b", 0, 0, 1.0),
            rec("b", 1, 0, 2.0),
            rec("a", 0, 1, 1.0),
            rec("a", 0, 1, 3.0),
            rec("a", 1, 1, 5.0),
        ])
        .unwrap();
        let s = t.summarize().unwrap();
        assert_eq!(s.clusters[0].id, "a");
        assert_eq!(s.clusters[0].size, [2, 1]);
        assert_eq!(s.clusters[0].mean, [2.0, 5.0]);
        assert_eq!(s.clusters[0].within_ss, [2.0, 0.0]);
        assert!(!s.clusters[1].treated);
        assert_eq!(s.n_obs(), 5);
    }

    #[test]
    fn rejects_mixed_sequence() {
        let err = ObservedTrial::new(vec![
            rec("a", 0, 0, 1.0),
            rec("a", 1, 1, 1.0),
            rec("b", 0, 1, 1.0),
            rec("b", 1, 1, 1.0),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("cluster a"));
    }

    #[test]
    fn rejects_missing_period_and_single_arm() {
        assert!(ObservedTrial::new(vec![
            rec("a", 0, 0, 1.0),
            rec("b", 0, 1, 1.0),
            rec("b", 1, 1, 1.0),
        ])
        .is_err());
        assert!(ObservedTrial::new(vec![rec("a", 0, 1, 1.0), rec("a", 1, 1, 1.0)]).is_err());
    }

    #[test]
    fn leave_out_names_cluster() {
        let t = ObservedTrial::new(vec![
            rec("a", 0, 0, 1.0),
            rec("a", 1, 0, 1.0),
            rec("b", 0, 1, 1.0),
            rec("b", 1, 1, 1.0),
            rec("c", 0, 1, 1.0),
            rec("c", 1, 1, 1.0),
        ])
        .unwrap();
        let s = t.summarize().unwrap();
        assert_eq!(s.leave_out(1).unwrap().n_clusters(), 2);
        let err = s.leave_out(0).unwrap_err();
        assert!(err.to_string().contains("cluster a"));
    }
}
