//! Online clustering gate for predicted weight vectors.
//!
//! Every prediction is assigned to the nearest centroid or, when it lies more
//! than `tau` from all of them, founds a new cluster. The active weight
//! vector is replaced only when the assigned cluster differs from the one
//! the active vector belongs to.

use crate::error::{AncError, Result};
use crate::gfanc::WeightVector;

pub const DEFAULT_TAU: f64 = 0.6;

/// Outcome of one assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// 1-based cluster index.
    pub k_prime: usize,
    /// Cluster count after the assignment.
    pub clusters: usize,
    /// Distance to the nearest pre-update centroid; infinite for the first vector.
    pub min_distance: f64,
    pub new_cluster: bool,
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    centroids: Vec<Vec<f64>>,
    counts: Vec<usize>,
    tau: f64,
    current_index: usize,
    history: Vec<(usize, Vec<f64>)>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl ClusterState {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(AncError::config(format!("tau must be non-negative, got {tau}")));
        }
        Ok(Self {
            centroids: Vec::new(),
            counts: Vec::new(),
            tau,
            current_index: 0,
            history: Vec::new(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Cluster index of the active weight vector; 0 before the first update.
    pub fn current_index(&self) -> usize {
        self.current_index
    }

    /// Every assigned vector with its 1-based cluster index, in order.
    pub fn history(&self) -> &[(usize, Vec<f64>)] {
        &self.history
    }

    pub fn reset(&mut self) {
        self.centroids.clear();
        self.counts.clear();
        self.current_index = 0;
        self.history.clear();
    }

    pub fn assign(&mut self, g_prime: &WeightVector) -> Result<Assignment> {
        let g = g_prime.values();
        if let Some(c) = self.centroids.first() {
            if c.len() != g.len() {
                return Err(AncError::config(format!(
                    "weight vector has {} elements, centroids have {}",
                    g.len(),
                    c.len()
                )));
            }
        }

        // strict `<` keeps the smallest index on ties
        let mut nearest: Option<(usize, f64)> = None;
        for (j, c) in self.centroids.iter().enumerate() {
            let dist = euclidean(g, c);
            if nearest.is_none_or(|(_, best)| dist < best) {
                nearest = Some((j, dist));
            }
        }

        let assignment = match nearest {
            Some((j, dist)) if dist <= self.tau => {
                let n = self.counts[j] as f64;
                for (c, &v) in self.centroids[j].iter_mut().zip(g) {
                    *c = (n * *c + v) / (n + 1.0);
                }
                self.counts[j] += 1;
                Assignment {
                    k_prime: j + 1,
                    clusters: self.centroids.len(),
                    min_distance: dist,
                    new_cluster: false,
                }
            }
            other => {
                self.centroids.push(g.to_vec());
                self.counts.push(1);
                Assignment {
                    k_prime: self.centroids.len(),
                    clusters: self.centroids.len(),
                    min_distance: other.map_or(f64::INFINITY, |(_, d)| d),
                    new_cluster: true,
                }
            }
        };
        self.history.push((assignment.k_prime, g.to_vec()));
        Ok(assignment)
    }

    /// Returns the cluster index of `g_prime` (1-based).
    pub fn cluster_assign(&mut self, g_prime: &WeightVector) -> Result<usize> {
        self.assign(g_prime).map(|a| a.k_prime)
    }

    /// Assigns `g_prime` and decides whether it replaces `g_current`.
    pub fn gated_update(
        &mut self,
        g_current: &WeightVector,
        g_prime: &WeightVector,
    ) -> Result<(WeightVector, bool, Assignment)> {
        let a = self.assign(g_prime)?;
        if a.k_prime != self.current_index {
            self.current_index = a.k_prime;
            Ok((g_prime.clone(), true, a))
        } else {
            Ok((g_current.clone(), false, a))
        }
    }
}

/// One row of the cluster event log.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEvent {
    pub frame_index: usize,
    pub assignment: Assignment,
    pub updated: bool,
}

pub const CLUSTER_LOG_HEADER: &str = "frame_index,k_prime,K,min_distance,updated";

impl ClusterEvent {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.frame_index,
            self.assignment.k_prime,
            self.assignment.clusters,
            self.assignment.min_distance,
            self.updated
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec())
    }

    #[test]
    fn empty_state_founds_first_cluster() {
        let mut s = ClusterState::new(0.6).unwrap();
        let g = wv(&[0.3, 0.7, 1.0]);
        assert_eq!(s.cluster_assign(&g).unwrap(), 1);
        assert_eq!(s.num_clusters(), 1);
        assert_eq!(s.centroids()[0], g.values());
        assert_eq!(s.counts(), &[1]);
    }

    #[test]
    fn minor_variation_joins_and_centroid_becomes_mean() {
        let mut s = ClusterState::new(0.6).unwrap();
        s.cluster_assign(&wv(&[0.1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5])).unwrap();
        let a = s.assign(&wv(&[0.2, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5])).unwrap();
        assert_eq!(a.k_prime, 1);
        assert!(!a.new_cluster);
        assert!((a.min_distance - 0.1).abs() < 1e-12);
        assert!((s.centroids()[0][0] - 0.15).abs() < 1e-15);
        assert!(s.centroids()[0][1..].iter().all(|&c| c == 0.5));
        assert_eq!(s.counts(), &[2]);
    }

    #[test]
    fn far_vector_founds_second_cluster() {
        let mut s = ClusterState::new(0.6).unwrap();
        s.cluster_assign(&wv(&[0.0; 8])).unwrap();
        let a = s.assign(&wv(&[1.0; 8])).unwrap();
        assert_eq!(a.k_prime, 2);
        assert!(a.new_cluster);
        assert!((a.min_distance - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.num_clusters(), 2);
    }

    #[test]
    fn distance_exactly_tau_joins() {
        // 0.5 and 0.25 are exact in binary, so the distance is exactly tau
        let mut s = ClusterState::new(0.5).unwrap();
        s.cluster_assign(&wv(&[0.25, 0.0])).unwrap();
        let a = s.assign(&wv(&[0.75, 0.0])).unwrap();
        assert_eq!(a.min_distance, 0.5);
        assert_eq!(a.k_prime, 1);
        assert!(!a.new_cluster);
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let mut s = ClusterState::new(0.3).unwrap();
        s.cluster_assign(&wv(&[0.0, 0.0])).unwrap();
        s.cluster_assign(&wv(&[0.5, 0.0])).unwrap();
        assert_eq!(s.num_clusters(), 2);
        assert_eq!(s.cluster_assign(&wv(&[0.25, 0.0])).unwrap(), 1);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut s = ClusterState::new(0.6).unwrap();
        s.cluster_assign(&wv(&[0.0; 8])).unwrap();
        assert!(matches!(s.cluster_assign(&wv(&[0.0; 7])), Err(AncError::Config(_))));
        assert!(ClusterState::new(-1.0).is_err());
    }

    #[test]
    fn gated_update_examples() {
        let mut s = ClusterState::new(0.6).unwrap();
        let zero = wv(&[0.0; 8]);
        let g = wv(&[0.4; 8]);
        let (out, updated, _) = s.gated_update(&zero, &g).unwrap();
        assert!(updated);
        assert_eq!(out, g);
        assert_eq!(s.current_index(), 1);
        let (out, updated, _) = s.gated_update(&out, &g).unwrap();
        assert!(!updated);
        assert_eq!(out, g);
        // centroid bookkeeping happened on the rejected call too
        assert_eq!(s.counts(), &[2]);
    }

    #[test]
    fn alternating_far_vectors_always_update() {
        let mut s = ClusterState::new(0.6).unwrap();
        let a = wv(&[0.0; 8]);
        let b = wv(&[1.0; 8]);
        let mut g = wv(&[0.0; 8]);
        for i in 0..10 {
            let next = if i % 2 == 0 { &a } else { &b };
            let (out, updated, _) = s.gated_update(&g, next).unwrap();
            assert!(updated, "call {i}");
            g = out;
        }
        assert_eq!(s.num_clusters(), 2);
    }

    #[test]
    fn zero_tau_gives_each_distinct_vector_its_own_cluster() {
        let mut s = ClusterState::new(0.0).unwrap();
        let seq = [wv(&[0.1, 0.2]), wv(&[0.1, 0.2]), wv(&[0.3, 0.2])];
        let mut g = wv(&[0.0, 0.0]);
        let mut flags = Vec::new();
        for v in &seq {
            let (out, updated, _) = s.gated_update(&g, v).unwrap();
            flags.push(updated);
            g = out;
        }
        assert_eq!(flags, vec![true, false, true]);
        assert_eq!(s.num_clusters(), 2);
    }

    #[test]
    fn jitter_within_tau_triggers_a_single_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = [1.0, 1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0];
        let mut s = ClusterState::new(0.6).unwrap();
        let mut g = wv(&[0.0; 8]);
        let mut updates = 0;
        for _ in 0..200 {
            let jittered: Vec<f64> = base.iter().map(|b| b + rng.random_range(-0.05..=0.05)).collect();
            let (out, updated, _) = s.gated_update(&g, &wv(&jittered)).unwrap();
            updates += updated as usize;
            g = out;
        }
        assert_eq!(updates, 1);
        assert_eq!(s.num_clusters(), 1);
    }

    #[test]
    fn log_row_format() {
        let ev = ClusterEvent {
            frame_index: 3,
            assignment: Assignment { k_prime: 2, clusters: 2, min_distance: 0.75, new_cluster: true },
            updated: true,
        };
        assert_eq!(ev.csv_row(), "3,2,2,0.75,true");
    }

    proptest! {
        #[test]
        fn centroids_are_means_of_their_members(
            vs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 1..60),
            tau in 0.0f64..1.5,
        ) {
            let mut s = ClusterState::new(tau).unwrap();
            let mut prev_k = 0;
            for v in &vs {
                let before: Vec<Vec<f64>> = s.centroids().to_vec();
                let a = s.assign(&wv(v)).unwrap();
                prop_assert!(a.clusters >= prev_k);
                prev_k = a.clusters;
                let min = before.iter().map(|c| euclidean(v, c)).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(a.new_cluster, before.is_empty() || min > tau);
                if !a.new_cluster {
                    prop_assert!(euclidean(v, &before[a.k_prime - 1]) <= tau);
                }
            }
            for (j, c) in s.centroids().iter().enumerate() {
                let members: Vec<&Vec<f64>> =
                    s.history().iter().filter(|(k, _)| *k == j + 1).map(|(_, v)| v).collect();
                prop_assert_eq!(members.len(), s.counts()[j]);
                for d in 0..c.len() {
                    let mean = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                    prop_assert!((mean - c[d]).abs() <= 1e-12);
                }
            }
        }
    }
}
