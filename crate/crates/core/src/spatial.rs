//! Nearest-neighbour queries over point sets and triangle soups.

use crate::mesh::TriangleMesh;
use crate::Vec3;

/// Static k-d tree over 3-D points.
pub struct KdTree {
    points: Vec<Vec3>,
    // Implicit tree: each subslice stores its splitting node at the midpoint.
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest point, `None` when empty.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(&self.order, 0, q, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, slice: &[usize], depth: usize, q: &Vec3, best: &mut (usize, f64)) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let node = slice[mid];
        let p = &self.points[node];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && node < best.0) {
            *best = (node, d2);
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(near, depth + 1, q, best);
        if delta * delta <= best.1 {
            self.search(far, depth + 1, q, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

/// Closest point to `p` on triangle `abc`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Clone, Copy)]
struct BvhNode {
    min: Vec3,
    max: Vec3,
    // Leaf: triangles [start, start + count). Inner: children at `start`, `start + 1`.
    start: usize,
    count: usize,
}

impl BvhNode {
    fn dist2(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&Vec3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }
}

/// Bounding-volume hierarchy for point-to-surface distance queries.
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    nodes: Vec<BvhNode>,
}

const LEAF_SIZE: usize = 4;

impl TriangleBvh {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles().len()).map(|i| mesh.triangle(i)).collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            nodes.push(BvhNode {
                min: Vec3::zeros(),
                max: Vec3::zeros(),
                start: 0,
                count: 0,
            });
            Self::build(&tris, &mut order, 0, 0, tris.len(), &mut nodes);
        }
        let tris = order.iter().map(|&i| tris[i]).collect();
        TriangleBvh { tris, nodes }
    }

    fn build(tris: &[[Vec3; 3]], order: &mut [usize], node: usize, lo: usize, hi: usize, nodes: &mut Vec<BvhNode>) {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &t in &order[lo..hi] {
            for p in &tris[t] {
                min = min.inf(p);
                max = max.sup(p);
            }
        }
        if hi - lo <= LEAF_SIZE {
            nodes[node] = BvhNode {
                min,
                max,
                start: lo,
                count: hi - lo,
            };
            return;
        }
        let extent = max - min;
        let axis = extent.imax();
        let centroid = |t: usize| (tris[t][0][axis] + tris[t][1][axis] + tris[t][2][axis]) / 3.0;
        let mid = (lo + hi) / 2;
        order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| centroid(a).total_cmp(&centroid(b)).then(a.cmp(&b)));
        let left = nodes.len();
        let blank = nodes[node];
        nodes.push(blank);
        nodes.push(blank);
        nodes[node] = BvhNode {
            min,
            max,
            start: left,
            count: 0,
        };
        Self::build(tris, order, left, lo, mid, nodes);
        Self::build(tris, order, left + 1, mid, hi, nodes);
    }

    /// Squared distance and closest point on the surface, `None` when empty.
    pub fn closest(&self, p: &Vec3) -> Option<(f64, Vec3)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, Vec3::zeros());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = self.nodes[n];
            if node.dist2(p) > best.0 {
                continue;
            }
            if node.count > 0 {
                for [a, b, c] in &self.tris[node.start..node.start + node.count] {
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.0 {
                        best = (d2, q);
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let (dl, dr) = (self.nodes[l].dist2(p), self.nodes[r].dist2(p));
                // Visit the nearer child first (pushed last).
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some(best)
    }
}
