//! Balanced k-d tree over a point cloud.
//!
//! Answers are exact and deterministic: candidates are ordered by
//! `(squared distance, point id)`, so equidistant points come back lowest
//! id first, identical to a sorted exhaustive scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom::{dist2, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdIndex {
    points: Vec<Point3>,
    // point ids permuted so every leaf owns a contiguous range
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// One query answer: point id and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

#[inline]
fn coord(p: &Point3, axis: usize) -> f64 {
    p.coords[axis]
}

impl KdIndex {
    pub fn build(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("k-d index needs at least one point"));
        }
        let mut index = KdIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        // split on the axis of largest spread
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                let c = coord(&self.points[i], a);
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coord(&points[a], axis).total_cmp(&coord(&points[b], axis))
        });
        let value = coord(&self.points[self.order[mid]], axis);
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Nearest point: `(id, squared distance)`.
    pub fn nearest_sq(&self, query: &Point3) -> (usize, f64) {
        let mut best = Candidate {
            d2: f64::INFINITY,
            id: usize::MAX,
        };
        self.nearest_rec(0, query, &mut best);
        (best.id, best.d2)
    }

    fn nearest_rec(&self, node: usize, q: &Point3, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        d2: dist2(q, &self.points[i]),
                        id: i,
                    };
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = coord(q, axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.d2 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points in ascending `(distance, id)` order.
    pub fn nearest_k(&self, query: &Point3, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if k > self.len() {
            return Err(Error::invalid(format!(
                "k = {k} exceeds cloud size {}",
                self.len()
            )));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out
            .into_iter()
            .map(|c| Neighbor {
                id: c.id,
                dist: c.d2.sqrt(),
            })
            .collect())
    }

    fn knn_rec(&self, node: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        d2: dist2(q, &self.points[i]),
                        id: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = coord(q, axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |c| c.d2)
                };
                if diff * diff <= worst {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// All points with distance `<= radius`, ascending `(distance, id)`.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<Neighbor> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.radius_rec(0, query, r2, &mut out);
        out.sort();
        out.into_iter()
            .map(|c| Neighbor {
                id: c.id,
                dist: c.d2.sqrt(),
            })
            .collect()
    }

    fn radius_rec(&self, node: usize, q: &Point3, r2: f64, out: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = dist2(q, &self.points[i]);
                    if d2 <= r2 {
                        out.push(Candidate { d2, id: i });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = coord(q, axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_rec(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use rand::Rng;

    fn random_points(rng: &mut SeededRng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn brute_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, dist2(q, p))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert!(matches!(KdIndex::build(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn single_point_is_always_nearest() {
        let idx = KdIndex::build(&[Point3::new(1.0, 2.0, 3.0)]).unwrap();
        let nn = idx.nearest_k(&Point3::new(-40.0, 7.0, 0.5), 1).unwrap();
        assert_eq!(nn[0].id, 0);
    }

    #[test]
    fn nn_matches_exhaustive_scan() {
        let mut rng = SeededRng::new(3).derive("kd");
        let pts = random_points(&mut rng, 1000);
        let idx = KdIndex::build(&pts).unwrap();
        for q in random_points(&mut rng, 100) {
            let (id, d2) = idx.nearest_sq(&q);
            let b = brute_knn(&pts, &q, 1)[0];
            assert_eq!(id, b.0);
            assert_eq!(d2.sqrt(), b.1);
        }
    }

    #[test]
    fn k15_matches_sorted_exhaustive() {
        let mut rng = SeededRng::new(4).derive("kd15");
        let pts = random_points(&mut rng, 100);
        let idx = KdIndex::build(&pts).unwrap();
        for q in random_points(&mut rng, 50) {
            let got: Vec<(usize, f64)> = idx.nearest_k(&q, 15).unwrap().iter().map(|n| (n.id, n.dist)).collect();
            assert_eq!(got, brute_knn(&pts, &q, 15));
        }
    }

    #[test]
    fn query_on_member_has_zero_distance() {
        let mut rng = SeededRng::new(5);
        let pts = random_points(&mut rng, 200);
        let idx = KdIndex::build(&pts).unwrap();
        let nn = idx.nearest_k(&pts[17], 1).unwrap();
        assert_eq!(nn[0], Neighbor { id: 17, dist: 0.0 });
    }

    #[test]
    fn equidistant_candidates_lowest_id_first() {
        // many duplicates force ties across leaves
        let mut pts = vec![Point3::new(1.0, 0.0, 0.0); 20];
        pts.extend(vec![Point3::new(-1.0, 0.0, 0.0); 20]);
        let idx = KdIndex::build(&pts).unwrap();
        let nn = idx.nearest_k(&Point3::origin(), 5).unwrap();
        let ids: Vec<usize> = nn.iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(idx.nearest_sq(&Point3::origin()).0, 0);
    }

    #[test]
    fn zero_radius_off_member_is_empty() {
        let idx = KdIndex::build(&[Point3::origin(), Point3::new(1.0, 1.0, 1.0)]).unwrap();
        assert!(idx.within_radius(&Point3::new(0.5, 0.5, 0.5), 0.0).is_empty());
        assert_eq!(idx.within_radius(&Point3::origin(), 0.0).len(), 1);
    }

    #[test]
    fn k_larger_than_cloud_errors() {
        let idx = KdIndex::build(&[Point3::origin()]).unwrap();
        assert!(idx.nearest_k(&Point3::origin(), 2).is_err());
        assert!(idx.nearest_k(&Point3::origin(), 0).is_err());
    }

    #[test]
    fn radius_matches_brute_force() {
        let mut rng = SeededRng::new(6);
        let pts = random_points(&mut rng, 500);
        let idx = KdIndex::build(&pts).unwrap();
        for q in random_points(&mut rng, 20) {
            let got: Vec<usize> = idx.within_radius(&q, 1.5).iter().map(|n| n.id).collect();
            let mut want: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, dist2(&q, p)))
                .filter(|(_, d2)| *d2 <= 2.25)
                .collect();
            want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, want.into_iter().map(|w| w.0).collect::<Vec<_>>());
        }
    }
}
