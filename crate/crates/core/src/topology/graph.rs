use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::{translate, BoxUnion, TopologyError};
use crate::model::{HTable, Supports, XId, ZId};

/// Component labeling of a box union's overlap graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connectivity {
    pub connected: bool,
    pub components: usize,
    /// Component of each box, numbered by first appearance.
    pub labels: Vec<usize>,
}

/// Labels `n` nodes by the connected components of the given edges.
fn components_of(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> (usize, Vec<usize>) {
    let mut uf = UnionFind::<usize>::new(n);
    for (a, b) in edges {
        uf.union(a, b);
    }
    let mut renumber = BTreeMap::new();
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let root = uf.find(i);
            let next = renumber.len();
            *renumber.entry(root).or_insert(next)
        })
        .collect();
    (renumber.len(), labels)
}

/// Connectedness of a union of boxes under the interior-overlap rule.
pub fn is_connected(u: &BoxUnion) -> Connectivity {
    let n = u.boxes.len();
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |k| (i, k)));
    let edges: Vec<(usize, usize)> = edges.filter(|&(i, k)| u.boxes[i].overlaps(&u.boxes[k])).collect();
    let (components, labels) = components_of(n, edges);
    Connectivity { connected: components == 1, components, labels }
}

/// A source of `h(x)` values: the hidden truth or a recovered table.
pub trait HValues {
    fn h_value(&self, x: XId) -> Option<&[f64]>;
}

impl HValues for HTable {
    fn h_value(&self, x: XId) -> Option<&[f64]> {
        self.entries.get(&x).map(Vec::as_slice)
    }
}

impl HValues for BTreeMap<XId, Vec<f64>> {
    fn h_value(&self, x: XId) -> Option<&[f64]> {
        self.get(&x).map(Vec::as_slice)
    }
}

/// `A(x,z) = G(x,z) + h(x)`.
pub fn a_support<H: HValues + ?Sized>(supports: &Supports, h: &H, x: XId, z: ZId) -> Result<BoxUnion, TopologyError> {
    let hx = h.h_value(x).ok_or(TopologyError::Unavailable { x })?;
    translate(supports.get(x, z), hx)
}

/// `A(z) = ∪_x A(x,z)` over the x's whose `h` the source knows, together
/// with the x each box came from.
pub fn a_support_z<H: HValues + ?Sized>(supports: &Supports, h: &H, z: ZId) -> (BoxUnion, Vec<XId>) {
    let mut union = BoxUnion::empty();
    let mut owners = Vec::new();
    for x in supports.x_in(z) {
        if let Ok(a) = a_support(supports, h, x, z) {
            owners.extend(std::iter::repeat_n(x, a.len()));
            union.extend(a);
        }
    }
    (union, owners)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapEdge<N> {
    pub a: N,
    pub b: N,
    /// Shared x carrying the overlap, for control-level graphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<XId>,
    /// Point interior to both incident supports.
    pub witness: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapGraph<N> {
    pub nodes: Vec<N>,
    pub edges: Vec<OverlapEdge<N>>,
}

impl<N: Copy + Ord> OverlapGraph<N> {
    /// Components of the subgraph induced by `subset`, each ascending, in
    /// order of their smallest node.
    pub fn components_within(&self, subset: &[N]) -> Vec<Vec<N>> {
        let nodes: Vec<N> = self.nodes.iter().copied().filter(|n| subset.contains(n)).collect();
        let index: BTreeMap<N, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| Some((*index.get(&e.a)?, *index.get(&e.b)?)));
        let (count, labels) = components_of(nodes.len(), edges);
        let mut out = vec![Vec::new(); count];
        for (n, l) in nodes.iter().zip(labels) {
            out[l].push(*n);
        }
        out
    }

    pub fn components(&self) -> Vec<Vec<N>> {
        self.components_within(&self.nodes)
    }

    pub fn connected_within(&self, subset: &[N]) -> bool {
        self.components_within(subset).len() <= 1
    }

    /// The component of `start` in the subgraph induced by `subset`.
    pub fn component_of(&self, start: N, subset: &[N]) -> Vec<N> {
        self.components_within(subset)
            .into_iter()
            .find(|c| c.contains(&start))
            .unwrap_or_default()
    }
}

/// Control-level graph: `z ~ z'` when some shared x has
/// `G(x,z) ∩ G(x,z') ≠ ∅`. The witness belongs to the smallest such x.
pub fn mz_overlap_graph(supports: &Supports, z_ids: &[ZId]) -> OverlapGraph<ZId> {
    let mut edges = Vec::new();
    for (i, &za) in z_ids.iter().enumerate() {
        let xa = supports.x_in(za);
        for &zb in &z_ids[i + 1..] {
            let found = xa.iter().find_map(|&x| {
                supports.get(x, za).overlap_witness(supports.get(x, zb)).map(|w| (x, w))
            });
            if let Some((x, witness)) = found {
                edges.push(OverlapEdge { a: za, b: zb, via: Some(x), witness });
            }
        }
    }
    OverlapGraph { nodes: z_ids.to_vec(), edges }
}

/// x-level graph at one control: `x ~ x'` when `A(x,z) ∩ A(x',z) ≠ ∅`,
/// over the x's whose `h` the source knows.
pub fn a_overlap_graph<H: HValues + ?Sized>(supports: &Supports, h: &H, z: ZId) -> OverlapGraph<XId> {
    let xs: Vec<(XId, BoxUnion)> = supports
        .x_in(z)
        .into_iter()
        .filter_map(|x| a_support(supports, h, x, z).ok().map(|a| (x, a)))
        .collect();
    let mut edges = Vec::new();
    for (i, (xa, ua)) in xs.iter().enumerate() {
        for (xb, ub) in &xs[i + 1..] {
            if let Some(witness) = ua.overlap_witness(ub) {
                edges.push(OverlapEdge { a: *xa, b: *xb, via: None, witness });
            }
        }
    }
    OverlapGraph { nodes: xs.into_iter().map(|(x, _)| x).collect(), edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::AaBox;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(lo: &[f64], hi: &[f64]) -> AaBox {
        AaBox::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn single_box_is_connected() {
        let c = is_connected(&BoxUnion::single(b(&[0.0, 0.0], &[1.0, 1.0])));
        assert!(c.connected);
        assert_eq!(c.labels, vec![0]);
    }

    #[test]
    fn face_touching_boxes_are_not_connected() {
        let u = BoxUnion::new(vec![b(&[0.0, 0.0], &[1.0, 1.0]), b(&[1.0, 0.0], &[2.0, 1.0])]).unwrap();
        let c = is_connected(&u);
        assert!(!c.connected);
        assert_eq!(c.components, 2);
    }

    #[test]
    fn empty_union_has_no_components() {
        let c = is_connected(&BoxUnion::empty());
        assert_eq!(c.components, 0);
        assert!(!c.connected);
    }

    fn with_support(entries: &[(u32, u32, AaBox)]) -> Supports {
        let mut s = Supports::new();
        for (x, z, bx) in entries {
            let mut u = s.get(XId(*x), ZId(*z)).clone();
            u.boxes.push(bx.clone());
            s.insert(XId(*x), ZId(*z), u);
        }
        s
    }

    #[test]
    fn single_control_graph_is_connected() {
        let s = with_support(&[(0, 0, b(&[0.0], &[1.0]))]);
        let g = mz_overlap_graph(&s, &[ZId(0)]);
        assert!(g.connected_within(&[ZId(0)]));
        assert!(g.edges.is_empty());
    }

    #[test]
    fn control_edges_need_a_shared_overlapping_x() {
        let s = with_support(&[
            (0, 0, b(&[0.0], &[1.0])),
            (0, 1, b(&[0.5], &[1.5])),
            (1, 1, b(&[0.0], &[1.0])),
            (1, 2, b(&[1.0], &[2.0])),
        ]);
        let zs = [ZId(0), ZId(1), ZId(2)];
        let g = mz_overlap_graph(&s, &zs);
        assert_eq!(g.edges.len(), 1);
        let e = &g.edges[0];
        assert_eq!((e.a, e.b, e.via), (ZId(0), ZId(1), Some(XId(0))));
        assert!(s.get(XId(0), ZId(0)).contains_interior(&e.witness));
        assert!(s.get(XId(0), ZId(1)).contains_interior(&e.witness));
        assert_eq!(g.components(), vec![vec![ZId(0), ZId(1)], vec![ZId(2)]]);
    }

    #[test]
    fn a_support_translates_by_h() {
        let s = with_support(&[(0, 0, b(&[0.0, 0.0], &[1.0, 1.0])), (1, 0, b(&[0.0, 0.0], &[1.0, 1.0]))]);
        let mut h = BTreeMap::new();
        h.insert(XId(0), vec![0.0, 0.0]);
        h.insert(XId(1), vec![5.0, 0.0]);
        assert_eq!(&a_support(&s, &h, XId(0), ZId(0)).unwrap(), s.get(XId(0), ZId(0)));
        let a1 = a_support(&s, &h, XId(1), ZId(0)).unwrap();
        assert!(!a1.overlaps(s.get(XId(0), ZId(0))));
        h.remove(&XId(1));
        assert!(matches!(a_support(&s, &h, XId(1), ZId(0)), Err(TopologyError::Unavailable { .. })));
    }

    #[test]
    fn random_chains_are_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let k = rng.random_range(1..15);
            let mut boxes = vec![b(&[0.0, 0.0], &[1.0, 1.0])];
            for _ in 1..k {
                let prev = boxes.last().unwrap().clone();
                let lo: Vec<f64> = prev.lo.iter().zip(&prev.hi).map(|(l, h)| rng.random_range(*l..*h - 0.05)).collect();
                let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.3..1.2)).collect();
                boxes.push(AaBox::new(lo, hi).unwrap());
            }
            assert!(is_connected(&BoxUnion::new(boxes).unwrap()).connected);
        }
    }

    /// Transitive closure of the pairwise overlap relation by repeated
    /// squaring of the adjacency matrix.
    fn closure_components(u: &BoxUnion) -> Vec<Vec<bool>> {
        let n = u.boxes.len();
        let mut reach: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|k| i == k || u.boxes[i].overlaps(&u.boxes[k])).collect())
            .collect();
        for m in 0..n {
            for i in 0..n {
                for k in 0..n {
                    reach[i][k] = reach[i][k] || (reach[i][m] && reach[m][k]);
                }
            }
        }
        reach
    }

    fn arb_union() -> impl Strategy<Value = BoxUnion> {
        let side = (0u8..6, 1u8..4).prop_map(|(l, w)| (l as f64 * 0.5, (l + w) as f64 * 0.5));
        proptest::collection::vec(proptest::collection::vec(side, 2), 0..=12).prop_map(|bs| {
            BoxUnion::new(
                bs.into_iter()
                    .map(|s| AaBox::new(s.iter().map(|p| p.0).collect(), s.iter().map(|p| p.1).collect()).unwrap())
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn union_find_matches_transitive_closure(u in arb_union()) {
            let c = is_connected(&u);
            let reach = closure_components(&u);
            for i in 0..u.len() {
                for k in 0..u.len() {
                    prop_assert_eq!(c.labels[i] == c.labels[k], reach[i][k]);
                }
            }
            prop_assert_eq!(c.connected, !u.is_empty() && reach[0].iter().all(|r| *r));
        }
    }
}
