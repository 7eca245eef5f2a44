//! Exact nearest-neighbor queries over 3-D points.

use nalgebra::Vector3;

use crate::Real;

const LEAF: usize = 8;

enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Static kd-tree; duplicate and coplanar points are fine.
pub struct KdTree<'a, T: Real = f64> {
    points: &'a [Vector3<T>],
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Real> KdTree<'a, T> {
    pub fn new(points: &'a [Vector3<T>]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(T::max_value().unwrap());
        let mut hi = Vector3::repeat(T::min_value().unwrap());
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let ext = hi - lo;
        let axis = (0..3).fold(0, |a, i| if ext[i] > ext[a] { i } else { a });
        if hi[axis] <= lo[axis] {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].partial_cmp(&pts[b][axis]).unwrap_or(std::cmp::Ordering::Equal));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Index of the closest point and its squared distance; `None` when empty.
    pub fn nearest(&self, q: &Vector3<T>) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, T::max_value().unwrap());
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Vector3<T>, best: &mut (usize, T)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// Squared distance to the nearest point.
    pub fn nearest_distance_squared(&self, q: &Vector3<T>) -> T {
        self.nearest(q).map_or(T::max_value().unwrap(), |(_, d)| d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vector3<f64>> = (0..2000)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.1))
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..300 {
            let q = Vector3::new(rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2), rng.random_range(-0.2..0.3));
            let brute = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest(&q).unwrap().1, brute);
        }
    }

    #[test]
    fn handles_duplicates_and_planes() {
        let pts: Vec<Vector3<f64>> = (0..5000).map(|i| Vector3::new((i % 3) as f64, 0.0, 1.0)).collect();
        let tree = KdTree::new(&pts);
        let (i, d) = tree.nearest(&Vector3::new(1.1, 0.0, 1.0)).unwrap();
        assert_eq!(i, 1);
        assert!((d - 0.01).abs() < 1e-12);
        assert!(KdTree::<f64>::new(&[]).nearest(&Vector3::zeros()).is_none());
    }
}
