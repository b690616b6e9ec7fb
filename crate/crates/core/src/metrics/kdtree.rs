//! Static k-d tree for exact nearest-neighbour distance queries in 2 or 3
//! dimensions.

use super::Dims;

#[inline]
pub(crate) fn dist_sq(a: &[f64; 3], b: &[f64; 3], k: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..k {
        let v = a[d] - b[d];
        s += v * v;
    }
    s
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dims: usize,
    /// Points permuted into tree order; the node of a subtree spanning
    /// `lo..hi` sits at the midpoint.
    points: Vec<[f64; 3]>,
    /// Original index of each entry of `points`.
    index: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>, dims: Dims) -> Self {
        let index = (0..points.len()).collect();
        let mut tree = Self {
            dims: dims.count(),
            points,
            index,
        };
        let n = tree.points.len();
        tree.build(0, n, 0);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, lo: usize, hi: usize, depth: usize) {
        if hi - lo <= 1 {
            return;
        }
        let axis = depth % self.dims;
        let mid = lo + (hi - lo) / 2;
        let mut order: Vec<usize> = (lo..hi).collect();
        order.select_nth_unstable_by(mid - lo, |&a, &b| self.points[a][axis].total_cmp(&self.points[b][axis]));
        let pts: Vec<_> = order.iter().map(|&k| self.points[k]).collect();
        let idx: Vec<_> = order.iter().map(|&k| self.index[k]).collect();
        self.points[lo..hi].copy_from_slice(&pts);
        self.index[lo..hi].copy_from_slice(&idx);
        self.build(lo, mid, depth + 1);
        self.build(mid + 1, hi, depth + 1);
    }

    /// Squared distance from `q` to its nearest stored point, or `None`
    /// when the tree is empty.
    pub fn nearest_sq(&self, q: &[f64; 3]) -> Option<f64> {
        self.nearest(q).map(|(_, d)| d)
    }

    /// Original index and squared distance of the nearest stored point.
    /// Ties go to the first node visited.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.points.len(), 0, &mut best);
        (best.0 != usize::MAX).then(|| (self.index[best.0], best.1))
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d = dist_sq(q, p, self.dims);
        if d < best.1 {
            *best = (mid, d);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = depth % self.dims;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}
