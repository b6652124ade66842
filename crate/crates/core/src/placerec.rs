//! Cross-domain place recognition.
//!
//! Sonar and LiDAR keyframe clouds are reduced to range histograms: point
//! ranges capped at a shared maximum, counted into uniform bins, and
//! normalized by the largest bin count. Range is rotation-invariant about the
//! sensor origin, which is what lets descriptors built from two different
//! sensing modalities be compared at all. Candidates come from a k-d tree
//! over the surface vehicle's descriptors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::Cloud2;
use crate::spatial::{KdEntry, VecKdTree};

/// Normalized range-occupancy descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeHistogram {
    pub bins: Vec<f64>,
    pub r_max: f64,
}

impl RangeHistogram {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn distance(&self, other: &RangeHistogram) -> Result<f64, PlacerecError> {
        if self.bins.len() != other.bins.len() || self.r_max != other.r_max {
            return Err(PlacerecError::MismatchedDescriptors);
        }
        let mut acc = 0.0;
        for (a, b) in self.bins.iter().zip(other.bins.iter()) {
            let d = a - b;
            acc += d * d;
        }
        Ok(libm::sqrt(acc))
    }
}

/// Count point ranges into `bins` uniform bins over `[0, r_max]`, discarding
/// points beyond `r_max`, then normalize by the maximum count. Empty clouds
/// (or clouds entirely beyond `r_max`) give the all-zero histogram.
pub fn build_descriptor(cloud: &Cloud2, r_max: f64, bins: usize) -> RangeHistogram {
    assert!(r_max > 0.0 && bins >= 1);
    let mut counts = vec![0u32; bins];
    for p in &cloud.points {
        let range = p.norm();
        if range > r_max {
            continue;
        }
        let idx = ((range / r_max) * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let bins = if max == 0 {
        vec![0.0; bins]
    } else {
        counts.iter().map(|&c| c as f64 / max as f64).collect()
    };
    RangeHistogram { bins, r_max }
}

/// A loop-closure candidate: one underwater keyframe paired with one surface
/// keyframe, scored by descriptor distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub auv_robot_id: u16,
    pub auv_keyframe: u32,
    pub usv_keyframe: u32,
    pub descriptor_distance: f64,
}

/// Searchable store of surface-vehicle descriptors.
///
/// Insertions land in a small pending buffer that queries scan linearly; the
/// k-d tree is rebuilt once `rebuild_every` descriptors accumulate, so query
/// semantics never depend on the rebuild cadence. Single writer, any number
/// of concurrent readers.
pub struct DescriptorIndex {
    r_max: f64,
    bins: usize,
    rebuild_every: usize,
    tree: VecKdTree,
    tree_keys: Vec<u32>,
    pending: Vec<(u32, RangeHistogram)>,
    all: Vec<(u32, RangeHistogram)>,
}

impl DescriptorIndex {
    pub fn new(r_max: f64, bins: usize, rebuild_every: usize) -> Self {
        DescriptorIndex {
            r_max,
            bins,
            rebuild_every: rebuild_every.max(1),
            tree: VecKdTree::build(Vec::new(), bins),
            tree_keys: Vec::new(),
            pending: Vec::new(),
            all: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn insert(
        &mut self,
        usv_keyframe: u32,
        descriptor: RangeHistogram,
    ) -> Result<(), PlacerecError> {
        if descriptor.bins.len() != self.bins || descriptor.r_max != self.r_max {
            return Err(PlacerecError::MismatchedDescriptors);
        }
        self.pending.push((usv_keyframe, descriptor.clone()));
        self.all.push((usv_keyframe, descriptor));
        if self.pending.len() >= self.rebuild_every {
            self.rebuild();
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        self.tree_keys = self.all.iter().map(|(k, _)| *k).collect();
        let entries: Vec<KdEntry> = self
            .all
            .iter()
            .map(|(k, h)| KdEntry {
                id: *k as u64,
                vector: h.bins.clone(),
            })
            .collect();
        self.tree = VecKdTree::build(entries, self.bins);
        self.pending.clear();
    }

    /// `k` nearest stored descriptors within `max_distance`, sorted by
    /// (distance, keyframe index).
    pub fn query(
        &self,
        query: &RangeHistogram,
        k: usize,
        max_distance: f64,
    ) -> Result<Vec<(u32, f64)>, PlacerecError> {
        if query.bins.len() != self.bins || query.r_max != self.r_max {
            return Err(PlacerecError::MismatchedDescriptors);
        }
        let mut results: Vec<(u32, f64)> = self
            .tree
            .knn(&query.bins, k)
            .into_iter()
            .map(|(id, d)| (id as u32, d))
            .collect();
        for (key, h) in &self.pending {
            let d = h.distance(query).expect("index entries share layout");
            results.push((*key, d));
        }
        results.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        results.dedup_by_key(|r| r.0);
        results.truncate(k);
        results.retain(|&(_, d)| d <= max_distance);
        Ok(results)
    }
}

/// Wrap a query for one underwater keyframe into candidate pairs.
pub fn query_candidates(
    index: &DescriptorIndex,
    auv_robot_id: u16,
    auv_keyframe: u32,
    query: &RangeHistogram,
    k: usize,
    max_distance: f64,
) -> Result<Vec<CandidatePair>, PlacerecError> {
    Ok(index
        .query(query, k, max_distance)?
        .into_iter()
        .map(|(usv_keyframe, d)| CandidatePair {
            auv_robot_id,
            auv_keyframe,
            usv_keyframe,
            descriptor_distance: d,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacerecError {
    MismatchedDescriptors,
}

impl fmt::Display for PlacerecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlacerecError::MismatchedDescriptors => {
                write!(f, "descriptors disagree on bin count or maximum range")
            }
        }
    }
}

impl core::error::Error for PlacerecError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Point2, Pose2};
    use crate::rng::Pcg32;

    #[test]
    fn empty_cloud_gives_zero_histogram() {
        let h = build_descriptor(&Cloud2::default(), 30.0, 16);
        assert!(h.bins.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn single_point_lands_in_its_bin() {
        let cloud = Cloud2::new(vec![Point2::new(15.0, 0.0)]);
        let h = build_descriptor(&cloud, 30.0, 10);
        assert_eq!(h.bins[5], 1.0);
        assert_eq!(h.bins.iter().filter(|&&b| b > 0.0).count(), 1);
    }

    #[test]
    fn points_beyond_r_max_are_dropped() {
        let cloud = Cloud2::new(vec![Point2::new(31.0, 0.0), Point2::new(5.0, 0.0)]);
        let h = build_descriptor(&cloud, 30.0, 10);
        assert_eq!(h.bins[1], 1.0);
        assert_eq!(h.bins.iter().filter(|&&b| b > 0.0).count(), 1);
    }

    #[test]
    fn rotation_invariance_is_exact() {
        let mut rng = Pcg32::new(31, 4);
        let cloud = Cloud2::new(
            (0..200)
                .map(|_| Point2::new(rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)))
                .collect(),
        );
        let h0 = build_descriptor(&cloud, 30.0, 32);
        for theta in [0.3, 1.7, -2.9] {
            let rotated = cloud.transformed(&Pose2::new(0.0, 0.0, theta));
            let h = build_descriptor(&rotated, 30.0, 32);
            // Bin membership can only change if rotation changed a range,
            // which it cannot do beyond float rounding at the bin edges.
            assert_eq!(h0.bins, h.bins, "theta {theta}");
        }
    }

    #[test]
    fn duplication_invariance_after_normalization() {
        let cloud = Cloud2::new(vec![
            Point2::new(3.0, 1.0),
            Point2::new(8.0, -2.0),
            Point2::new(8.2, -2.2),
        ]);
        let mut doubled = cloud.clone();
        doubled.extend_from(&cloud);
        let a = build_descriptor(&cloud, 30.0, 24);
        let b = build_descriptor(&doubled, 30.0, 24);
        assert_eq!(a.bins, b.bins);
    }

    #[test]
    fn query_exact_match_first_and_k_overflow() {
        let mut index = DescriptorIndex::new(30.0, 16, 4);
        let mut rng = Pcg32::new(9, 9);
        let mut stored = Vec::new();
        for key in 0..10u32 {
            let cloud = Cloud2::new(
                (0..50)
                    .map(|_| Point2::new(rng.uniform(-25.0, 25.0), rng.uniform(-25.0, 25.0)))
                    .collect(),
            );
            let h = build_descriptor(&cloud, 30.0, 16);
            index.insert(key, h.clone()).unwrap();
            stored.push(h);
        }
        let hits = index.query(&stored[6], 3, f64::INFINITY).unwrap();
        assert_eq!(hits[0].0, 6);
        assert!(hits[0].1 < 1e-12);

        // k larger than the database: everything comes back, sorted.
        let all = index.query(&stored[2], 50, f64::INFINITY).unwrap();
        assert_eq!(all.len(), 10);
        for w in all.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn pending_buffer_is_visible_before_rebuild() {
        let mut index = DescriptorIndex::new(30.0, 8, 100);
        let cloud = Cloud2::new(vec![Point2::new(4.0, 0.0)]);
        let h = build_descriptor(&cloud, 30.0, 8);
        index.insert(42, h.clone()).unwrap();
        let hits = index.query(&h, 1, 0.5).unwrap();
        assert_eq!(hits, vec![(42, 0.0)]);
    }

    #[test]
    fn mismatched_layout_is_rejected() {
        let mut index = DescriptorIndex::new(30.0, 8, 4);
        let other = build_descriptor(&Cloud2::default(), 20.0, 8);
        assert_eq!(
            index.insert(0, other.clone()),
            Err(PlacerecError::MismatchedDescriptors)
        );
        assert_eq!(
            index.query(&other, 1, 1.0),
            Err(PlacerecError::MismatchedDescriptors)
        );
        let wrong_bins = build_descriptor(&Cloud2::default(), 30.0, 4);
        assert_eq!(
            index.insert(0, wrong_bins),
            Err(PlacerecError::MismatchedDescriptors)
        );
    }

    #[test]
    fn distance_ties_break_by_lower_keyframe() {
        let mut index = DescriptorIndex::new(30.0, 8, 2);
        let cloud = Cloud2::new(vec![Point2::new(4.0, 0.0)]);
        let h = build_descriptor(&cloud, 30.0, 8);
        for key in [9u32, 3, 7] {
            index.insert(key, h.clone()).unwrap();
        }
        let hits = index.query(&h, 2, 1.0).unwrap();
        assert_eq!(hits[0].0, 3);
        assert_eq!(hits[1].0, 7);
    }
}
