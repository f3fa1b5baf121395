//! Finite hypercubic lattices with free boundary: vertices, oriented edges,
//! oriented plaquettes, orientation signs, graph distances and plaquette
//! clusters.
//!
//! The cube `Λ_L = {−L, …, L}^d` is [`Geometry::cube`]; general boxes are
//! available through [`Geometry::new_box`]. Only plaquettes whose four edges
//! lie inside the box exist (no wraparound).

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlaquetteId(pub u32);

impl EdgeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
    pub fn forward(self) -> OrientedEdge {
        OrientedEdge {
            edge: self,
            forward: true,
        }
    }
    pub fn backward(self) -> OrientedEdge {
        OrientedEdge {
            edge: self,
            forward: false,
        }
    }
}

impl PlaquetteId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl VertexId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A positive edge together with a traversal direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrientedEdge {
    pub edge: EdgeId,
    pub forward: bool,
}

impl OrientedEdge {
    pub fn inverse(self) -> Self {
        Self {
            edge: self.edge,
            forward: !self.forward,
        }
    }

    /// `+1` for the positive orientation, `−1` otherwise.
    pub fn sign(self) -> i8 {
        if self.forward {
            1
        } else {
            -1
        }
    }
}

/// A plaquette traversal: the positive plaquette `id`, possibly reversed, and
/// cyclically rotated by `rotation` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OrientedPlaquette {
    pub id: PlaquetteId,
    pub forward: bool,
    pub rotation: u8,
}

impl OrientedPlaquette {
    pub fn positive(id: PlaquetteId) -> Self {
        Self {
            id,
            forward: true,
            rotation: 0,
        }
    }

    pub fn inverse(self) -> Self {
        // Reversing a rotated traversal t_r t_{r+1} t_{r+2} t_{r+3} gives the
        // reversed base traversal started at a different offset.
        let rotation = (4 - self.rotation) % 4;
        Self {
            id: self.id,
            forward: !self.forward,
            rotation,
        }
    }
}

/// Plaquette traversal rooted at an edge: `e, rest[0], rest[1], rest[2]`.
/// `orientation` is `+1` if this is a rotation of the positive plaquette and
/// `−1` if it is a rotation of its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RootedPlaquette {
    pub plaquette: PlaquetteId,
    pub orientation: i8,
    pub rest: [OrientedEdge; 3],
}

#[derive(Clone, Copy, Debug)]
struct EdgeInfo {
    base: u32,
    axis: u8,
}

#[derive(Clone, Copy, Debug)]
struct PlaquetteInfo {
    base: u32,
    axes: (u8, u8),
    traversal: [OrientedEdge; 4],
}

#[derive(Clone, Copy, Debug)]
struct Incidence {
    plaquette: PlaquetteId,
    position: u8,
    sign: i8,
}

/// Immutable lattice geometry with canonical enumerations.
///
/// Vertices are indexed lexicographically (first axis most significant);
/// positive edges are enumerated by base vertex, then axis; positive
/// plaquettes by base vertex, then axis pair `(a, b)` with `a < b`, traversed
/// `+a, +b, −a, −b` from the base vertex.
#[derive(Clone, Debug)]
pub struct Geometry {
    dim: usize,
    extents: Vec<usize>,
    origin: Vec<i64>,
    strides: Vec<usize>,
    n_vertices: usize,
    edges: Vec<EdgeInfo>,
    edge_lookup: Vec<u32>,
    plaquettes: Vec<PlaquetteInfo>,
    incidence: Vec<Vec<Incidence>>,
    rooted: Vec<Vec<RootedPlaquette>>,
}

const NO_EDGE: u32 = u32::MAX;

impl Geometry {
    /// `Λ_L = {−L, …, L}^d`; requires `d ≥ 2` and `L ≥ 1`.
    pub fn cube(dim: usize, half_width: usize) -> Result<Self> {
        if half_width == 0 {
            return Err(Error::Geometry("half-width L must be at least 1".into()));
        }
        let extents = vec![2 * half_width + 1; dim];
        let origin = vec![-(half_width as i64); dim];
        Self::with_origin(&extents, &origin)
    }

    /// Box with `extents[a]` vertices along axis `a`, coordinates from 0.
    pub fn new_box(extents: &[usize]) -> Result<Self> {
        Self::with_origin(extents, &vec![0; extents.len()])
    }

    pub fn with_origin(extents: &[usize], origin: &[i64]) -> Result<Self> {
        let dim = extents.len();
        if dim < 2 {
            return Err(Error::Geometry(format!("dimension must be at least 2, got {dim}")));
        }
        if origin.len() != dim {
            return Err(Error::Geometry("origin and extents differ in length".into()));
        }
        if let Some(a) = extents.iter().position(|&n| n < 2) {
            return Err(Error::Geometry(format!("axis {a} has fewer than 2 vertices")));
        }
        let n_vertices = extents.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
        let n_vertices = match n_vertices {
            Some(v) if v < (u32::MAX as usize) / dim => v,
            _ => return Err(Error::Geometry("lattice too large".into())),
        };
        let mut strides = vec![1usize; dim];
        for a in (0..dim - 1).rev() {
            strides[a] = strides[a + 1] * extents[a + 1];
        }
        let mut geom = Self {
            dim,
            extents: extents.to_vec(),
            origin: origin.to_vec(),
            strides,
            n_vertices,
            edges: Vec::new(),
            edge_lookup: vec![NO_EDGE; n_vertices * dim],
            plaquettes: Vec::new(),
            incidence: Vec::new(),
            rooted: Vec::new(),
        };
        geom.build();
        Ok(geom)
    }

    fn build(&mut self) {
        let dim = self.dim;
        let mut coords = vec![0usize; dim];
        for v in 0..self.n_vertices {
            self.unravel_into(v, &mut coords);
            for (a, &c) in coords.iter().enumerate() {
                if c + 1 < self.extents[a] {
                    self.edge_lookup[v * dim + a] = self.edges.len() as u32;
                    self.edges.push(EdgeInfo {
                        base: v as u32,
                        axis: a as u8,
                    });
                }
            }
        }
        for v in 0..self.n_vertices {
            self.unravel_into(v, &mut coords);
            for a in 0..dim {
                for b in a + 1..dim {
                    if coords[a] + 1 < self.extents[a] && coords[b] + 1 < self.extents[b] {
                        let va = v + self.strides[a];
                        let vb = v + self.strides[b];
                        let e1 = EdgeId(self.edge_lookup[v * dim + a]);
                        let e2 = EdgeId(self.edge_lookup[va * dim + b]);
                        let e3 = EdgeId(self.edge_lookup[vb * dim + a]);
                        let e4 = EdgeId(self.edge_lookup[v * dim + b]);
                        self.plaquettes.push(PlaquetteInfo {
                            base: v as u32,
                            axes: (a as u8, b as u8),
                            traversal: [e1.forward(), e2.forward(), e3.backward(), e4.backward()],
                        });
                    }
                }
            }
        }
        self.incidence = vec![Vec::new(); self.edges.len()];
        for (pi, p) in self.plaquettes.iter().enumerate() {
            for (k, oe) in p.traversal.iter().enumerate() {
                self.incidence[oe.edge.index()].push(Incidence {
                    plaquette: PlaquetteId(pi as u32),
                    position: k as u8,
                    sign: oe.sign(),
                });
            }
        }
        self.rooted = (0..self.edges.len())
            .map(|e| {
                self.incidence[e]
                    .iter()
                    .map(|inc| {
                        let t = &self.plaquettes[inc.plaquette.index()].traversal;
                        let k = inc.position as usize;
                        let rest = if inc.sign > 0 {
                            [t[(k + 1) % 4], t[(k + 2) % 4], t[(k + 3) % 4]]
                        } else {
                            [
                                t[(k + 3) % 4].inverse(),
                                t[(k + 2) % 4].inverse(),
                                t[(k + 1) % 4].inverse(),
                            ]
                        };
                        RootedPlaquette {
                            plaquette: inc.plaquette,
                            orientation: inc.sign,
                            rest,
                        }
                    })
                    .collect()
            })
            .collect();
    }

    fn unravel_into(&self, v: usize, coords: &mut [usize]) {
        let mut rem = v;
        for (c, s) in coords.iter_mut().zip(&self.strides) {
            *c = rem / s;
            rem %= s;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn extents(&self) -> &[usize] {
        &self.extents
    }
    pub fn origin(&self) -> &[i64] {
        &self.origin
    }
    pub fn num_vertices(&self) -> usize {
        self.n_vertices
    }
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn num_plaquettes(&self) -> usize {
        self.plaquettes.len()
    }

    /// Positive edges in canonical order.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = EdgeId> + '_ {
        (0..self.edges.len() as u32).map(EdgeId)
    }

    /// Positive plaquettes in canonical order.
    pub fn plaquettes(&self) -> impl ExactSizeIterator<Item = PlaquetteId> + '_ {
        (0..self.plaquettes.len() as u32).map(PlaquetteId)
    }

    pub fn vertex_coords(&self, v: VertexId) -> Vec<i64> {
        let mut c = vec![0usize; self.dim];
        self.unravel_into(v.index(), &mut c);
        c.iter().zip(&self.origin).map(|(&x, &o)| x as i64 + o).collect()
    }

    pub fn vertex_at(&self, coords: &[i64]) -> Option<VertexId> {
        if coords.len() != self.dim {
            return None;
        }
        let mut v = 0usize;
        for (a, &c) in coords.iter().enumerate() {
            let x = c - self.origin[a];
            if x < 0 || x as usize >= self.extents[a] {
                return None;
            }
            v += x as usize * self.strides[a];
        }
        Some(VertexId(v as u32))
    }

    /// Positive edge from `coords` along `axis`.
    pub fn edge_at(&self, coords: &[i64], axis: usize) -> Option<EdgeId> {
        if axis >= self.dim {
            return None;
        }
        let v = self.vertex_at(coords)?;
        let id = self.edge_lookup[v.index() * self.dim + axis];
        (id != NO_EDGE).then_some(EdgeId(id))
    }

    pub fn edge_base(&self, e: EdgeId) -> VertexId {
        VertexId(self.edges[e.index()].base)
    }

    pub fn edge_axis(&self, e: EdgeId) -> usize {
        self.edges[e.index()].axis as usize
    }

    pub fn tail(&self, e: OrientedEdge) -> VertexId {
        let info = self.edges[e.edge.index()];
        if e.forward {
            VertexId(info.base)
        } else {
            VertexId(info.base + self.strides[info.axis as usize] as u32)
        }
    }

    pub fn head(&self, e: OrientedEdge) -> VertexId {
        self.tail(e.inverse())
    }

    pub fn plaquette_base(&self, p: PlaquetteId) -> VertexId {
        VertexId(self.plaquettes[p.index()].base)
    }

    pub fn plaquette_axes(&self, p: PlaquetteId) -> (usize, usize) {
        let (a, b) = self.plaquettes[p.index()].axes;
        (a as usize, b as usize)
    }

    /// Positive plaquette with base `coords` in the `(a, b)` plane, `a < b`.
    pub fn plaquette_at(&self, coords: &[i64], a: usize, b: usize) -> Option<PlaquetteId> {
        let e = self.edge_at(coords, a)?;
        self.incidence[e.index()]
            .iter()
            .find(|inc| inc.position == 0 && self.plaquettes[inc.plaquette.index()].axes == (a as u8, b as u8))
            .map(|inc| inc.plaquette)
    }

    /// The four positive edges of `p`, with the traversal signs `(+, +, −, −)`.
    pub fn plaquette_edges(&self, p: PlaquetteId) -> [OrientedEdge; 4] {
        self.plaquettes[p.index()].traversal
    }

    /// Ordered traversal of an oriented, rotated plaquette.
    pub fn traversal(&self, p: OrientedPlaquette) -> [OrientedEdge; 4] {
        let t = self.plaquettes[p.id.index()].traversal;
        let base = if p.forward {
            t
        } else {
            [t[3].inverse(), t[2].inverse(), t[1].inverse(), t[0].inverse()]
        };
        let r = p.rotation as usize % 4;
        [base[r], base[(r + 1) % 4], base[(r + 2) % 4], base[(r + 3) % 4]]
    }

    /// `sgn(e, p)`: `+1` if `e` occurs in the traversal of `p`, `−1` if
    /// `e^{-1}` does, `0` otherwise.
    pub fn sgn(&self, e: OrientedEdge, p: OrientedPlaquette) -> i8 {
        let t = self.traversal(p);
        if t.contains(&e) {
            1
        } else if t.contains(&e.inverse()) {
            -1
        } else {
            0
        }
    }

    /// `sgn(e, p)` for a positive edge and positive plaquette.
    pub fn sgn_positive(&self, e: EdgeId, p: PlaquetteId) -> i8 {
        self.incidence[e.index()]
            .iter()
            .find(|inc| inc.plaquette == p)
            .map_or(0, |inc| inc.sign)
    }

    /// Positive plaquettes having `e` as one of their edges.
    pub fn plaquettes_containing(&self, e: EdgeId) -> Vec<PlaquetteId> {
        self.incidence[e.index()].iter().map(|inc| inc.plaquette).collect()
    }

    /// `(p, sgn(e, p))` pairs over the positive plaquettes containing `e`.
    pub fn incident_signs(&self, e: EdgeId) -> impl Iterator<Item = (PlaquetteId, i8)> + '_ {
        self.incidence[e.index()].iter().map(|inc| (inc.plaquette, inc.sign))
    }

    /// Each positive plaquette containing `e`, rotated so that its traversal
    /// starts with `e` or `e^{-1}`, with the sign of that first edge.
    pub fn plaquettes_first_edge(&self, e: EdgeId) -> Vec<(OrientedPlaquette, i8)> {
        self.incidence[e.index()]
            .iter()
            .map(|inc| {
                (
                    OrientedPlaquette {
                        id: inc.plaquette,
                        forward: true,
                        rotation: inc.position,
                    },
                    inc.sign,
                )
            })
            .collect()
    }

    /// Traversals of the plaquettes containing `e`, oriented and rotated so
    /// that they start with `e` itself.
    pub fn rooted(&self, e: EdgeId) -> &[RootedPlaquette] {
        &self.rooted[e.index()]
    }

    /// Neighbouring vertices (lattice graph).
    pub fn vertex_neighbors(&self, v: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        let mut c = vec![0usize; self.dim];
        self.unravel_into(v.index(), &mut c);
        (0..self.dim).flat_map(move |a| {
            let mut out = [None, None];
            if c[a] + 1 < self.extents[a] {
                out[0] = Some(VertexId((v.index() + self.strides[a]) as u32));
            }
            if c[a] > 0 {
                out[1] = Some(VertexId((v.index() - self.strides[a]) as u32));
            }
            out.into_iter().flatten()
        })
    }

    fn edge_endpoints(&self, e: EdgeId) -> [VertexId; 2] {
        [self.tail(e.forward()), self.head(e.forward())]
    }

    /// Shortest-path distance in the lattice graph between the endpoint sets
    /// of two edge sets.
    pub fn graph_distance(&self, a: &[EdgeId], b: &[EdgeId]) -> Result<usize> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyEdgeSet);
        }
        let dist = self.vertex_distances(a);
        Ok(b.iter()
            .flat_map(|&e| self.edge_endpoints(e))
            .map(|v| dist[v.index()])
            .min()
            .unwrap_or(usize::MAX))
    }

    /// BFS distance of every vertex from the endpoints of `sources`.
    pub fn vertex_distances(&self, sources: &[EdgeId]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_vertices];
        let mut queue = VecDeque::new();
        for &e in sources {
            for v in self.edge_endpoints(e) {
                if dist[v.index()] != 0 {
                    dist[v.index()] = 0;
                    queue.push_back(v);
                }
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v.index()];
            for w in self.vertex_neighbors(v) {
                if dist[w.index()] == usize::MAX {
                    dist[w.index()] = d + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Plaquettes sharing an edge with `p` (excluding `p`).
    pub fn plaquette_neighbors(&self, p: PlaquetteId) -> Vec<PlaquetteId> {
        let mut out: Vec<PlaquetteId> = self.plaquettes[p.index()]
            .traversal
            .iter()
            .flat_map(|oe| self.incidence[oe.edge.index()].iter().map(|i| i.plaquette))
            .filter(|&q| q != p)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Positive plaquettes that contain at least one edge of `edges`.
    pub fn plaquettes_touching(&self, edges: &[EdgeId]) -> Vec<PlaquetteId> {
        let mut out: Vec<PlaquetteId> = edges
            .iter()
            .flat_map(|e| self.incidence[e.index()].iter().map(|i| i.plaquette))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Positive edges of a plaquette set, sorted.
    pub fn edges_of(&self, plaquettes: &[PlaquetteId]) -> Vec<EdgeId> {
        let mut out: Vec<EdgeId> = plaquettes
            .iter()
            .flat_map(|p| self.plaquettes[p.index()].traversal.iter().map(|oe| oe.edge))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Closed lattice path `e_1 ⋯ e_n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    edges: Vec<OrientedEdge>,
}

impl Loop {
    /// Validates that consecutive edges are head-to-tail and the path closes.
    pub fn new(geom: &Geometry, edges: Vec<OrientedEdge>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyEdgeSet);
        }
        for i in 0..edges.len() {
            let next = edges[(i + 1) % edges.len()];
            if geom.head(edges[i]) != geom.tail(next) {
                return Err(Error::OpenLoop(i));
            }
        }
        Ok(Self { edges })
    }

    pub fn plaquette(geom: &Geometry, p: PlaquetteId) -> Self {
        Self {
            edges: geom.plaquette_edges(p).to_vec(),
        }
    }

    /// Boundary of the `len_a × len_b` rectangle with corner `base` in the
    /// `(a, b)` plane, traversed `+a, +b, −a, −b`.
    pub fn rectangle(geom: &Geometry, base: &[i64], a: usize, b: usize, len_a: usize, len_b: usize) -> Result<Self> {
        let mut edges = Vec::with_capacity(2 * (len_a + len_b));
        let mut pos = base.to_vec();
        let missing = || Error::Geometry("rectangle leaves the lattice".into());
        for (axis, len, forward) in [(a, len_a, true), (b, len_b, true), (a, len_a, false), (b, len_b, false)] {
            for _ in 0..len {
                if forward {
                    edges.push(geom.edge_at(&pos, axis).ok_or_else(missing)?.forward());
                    pos[axis] += 1;
                } else {
                    pos[axis] -= 1;
                    edges.push(geom.edge_at(&pos, axis).ok_or_else(missing)?.backward());
                }
            }
        }
        Self::new(geom, edges)
    }

    pub fn edges(&self) -> &[OrientedEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Distinct positive edges visited by the loop.
    pub fn support(&self) -> Vec<EdgeId> {
        let mut s: Vec<EdgeId> = self.edges.iter().map(|e| e.edge).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// A plaquette set `K` anchored to a seed edge set `Λ_f`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterSet {
    pub plaquettes: Vec<PlaquetteId>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.plaquettes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.plaquettes.is_empty()
    }
}

/// All clusters of `Λ_f` up to a maximal size, grouped by size.
#[derive(Clone, Debug)]
pub struct ClusterEnumeration {
    pub seed: Vec<EdgeId>,
    pub by_size: Vec<Vec<ClusterSet>>,
}

impl ClusterEnumeration {
    pub fn counts(&self) -> Vec<usize> {
        self.by_size.iter().map(Vec::len).collect()
    }
}

/// `true` iff every connected component of `plaquettes` (adjacency: shared
/// edge) contains an edge of `seed`.
pub fn is_cluster(geom: &Geometry, plaquettes: &[PlaquetteId], seed: &[EdgeId]) -> bool {
    let set: BTreeSet<PlaquetteId> = plaquettes.iter().copied().collect();
    let touching: BTreeSet<PlaquetteId> = geom.plaquettes_touching(seed).into_iter().collect();
    let mut reached: BTreeSet<PlaquetteId> = set.intersection(&touching).copied().collect();
    let mut queue: VecDeque<PlaquetteId> = reached.iter().copied().collect();
    while let Some(p) = queue.pop_front() {
        for q in geom.plaquette_neighbors(p) {
            if set.contains(&q) && reached.insert(q) {
                queue.push_back(q);
            }
        }
    }
    reached.len() == set.len()
}

/// Plaquettes left for the complementary partition function of a cluster:
/// not in `K`, sharing no edge with a plaquette of `K`, and containing no
/// edge of `Λ_f`.
pub fn complement_plaquettes(geom: &Geometry, cluster: &[PlaquetteId], seed: &[EdgeId]) -> Vec<PlaquetteId> {
    let mut blocked = vec![false; geom.num_plaquettes()];
    for p in geom.plaquettes_touching(seed) {
        blocked[p.index()] = true;
    }
    for &p in cluster {
        blocked[p.index()] = true;
        for q in geom.plaquette_neighbors(p) {
            blocked[q.index()] = true;
        }
    }
    geom.plaquettes().filter(|p| !blocked[p.index()]).collect()
}

/// Enumerates every cluster `K` of `seed` with `|K| ≤ m_max`.
///
/// Clusters are exactly the plaquette sets that become connected once a
/// virtual root adjacent to every seed-touching plaquette is added, so they
/// are grown breadth-first one plaquette at a time from that root and
/// deduplicated by their sorted plaquette list. `budget` caps the total
/// number of stored clusters.
pub fn enumerate_clusters(geom: &Geometry, seed: &[EdgeId], m_max: usize, budget: usize) -> Result<ClusterEnumeration> {
    let roots = geom.plaquettes_touching(seed);
    let neighbors: Vec<Vec<PlaquetteId>> = geom.plaquettes().map(|p| geom.plaquette_neighbors(p)).collect();
    let mut by_size: Vec<Vec<ClusterSet>> = vec![vec![ClusterSet { plaquettes: Vec::new() }]];
    let mut total = 1usize;
    for m in 1..=m_max {
        let mut next: BTreeSet<Vec<PlaquetteId>> = BTreeSet::new();
        for k in &by_size[m - 1] {
            let mut frontier: BTreeSet<PlaquetteId> = roots.iter().copied().collect();
            for p in &k.plaquettes {
                frontier.extend(neighbors[p.index()].iter().copied());
            }
            for p in frontier {
                if k.plaquettes.binary_search(&p).is_ok() {
                    continue;
                }
                let mut grown = k.plaquettes.clone();
                let pos = grown.binary_search(&p).unwrap_err();
                grown.insert(pos, p);
                next.insert(grown);
                if total + next.len() > budget {
                    return Err(Error::Resource(format!(
                        "cluster enumeration exceeded {budget} clusters at size {m}"
                    )));
                }
            }
        }
        total += next.len();
        by_size.push(next.into_iter().map(|plaquettes| ClusterSet { plaquettes }).collect());
    }
    Ok(ClusterEnumeration {
        seed: seed.to_vec(),
        by_size,
    })
}

/// `e^{2d|Λ_f|} · 40^{md}`, the combinatorial bound on clusters of size `m`.
pub fn cluster_count_bound(dim: usize, seed_len: usize, m: usize) -> f64 {
    crate::math::exp(2.0 * (dim * seed_len) as f64) * crate::math::powf(40.0, (m * dim) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_closed_forms() {
        for (d, l) in [(2, 1), (2, 2), (3, 1), (3, 2), (4, 1)] {
            let g = Geometry::cube(d, l).unwrap();
            let side = 2 * l + 1;
            assert_eq!(g.num_vertices(), side.pow(d as u32));
            assert_eq!(g.num_edges(), d * 2 * l * side.pow(d as u32 - 1));
            assert_eq!(
                g.num_plaquettes(),
                d * (d - 1) / 2 * (2 * l).pow(2) * side.pow(d as u32 - 2)
            );
        }
        assert_eq!(Geometry::cube(2, 1).unwrap().num_edges(), 12);
        assert_eq!(Geometry::cube(3, 1).unwrap().num_edges(), 54);
        assert_eq!(Geometry::cube(2, 1).unwrap().num_plaquettes(), 4);
        assert_eq!(Geometry::cube(3, 1).unwrap().num_plaquettes(), 36);
        assert_eq!(Geometry::cube(2, 2).unwrap().num_plaquettes(), 16);
    }

    #[test]
    fn degenerate_lattices_are_rejected() {
        assert!(Geometry::cube(2, 0).is_err());
        assert!(Geometry::cube(1, 3).is_err());
        assert!(Geometry::new_box(&[2, 1]).is_err());
    }

    #[test]
    fn edge_order_is_lexicographic() {
        let g = Geometry::cube(2, 1).unwrap();
        let listed: Vec<(Vec<i64>, usize)> = g
            .edges()
            .map(|e| (g.vertex_coords(g.edge_base(e)), g.edge_axis(e)))
            .collect();
        let mut sorted = listed.clone();
        sorted.sort();
        assert_eq!(listed, sorted);
        assert_eq!(listed[0], (vec![-1, -1], 0));
        assert_eq!(listed[1], (vec![-1, -1], 1));
    }

    #[test]
    fn standard_plaquette_signs() {
        let g = Geometry::new_box(&[2, 2]).unwrap();
        let p = OrientedPlaquette::positive(PlaquetteId(0));
        let t = g.traversal(p);
        assert_eq!(g.sgn(t[0], p), 1);
        // Top edge: positive orientation runs rightward, p traverses it leftward.
        let top = g.edge_at(&[0, 1], 0).unwrap();
        assert_eq!(t[2], top.backward());
        assert_eq!(g.sgn(top.forward(), p), -1);
        let far = Geometry::cube(2, 2).unwrap();
        let p0 = far.plaquette_at(&[-2, -2], 0, 1).unwrap();
        let e = far.edge_at(&[1, 2], 0).unwrap();
        assert_eq!(far.sgn(e.forward(), OrientedPlaquette::positive(p0)), 0);
    }

    #[test]
    fn traversal_closes_and_uses_distinct_edges() {
        let g = Geometry::cube(3, 1).unwrap();
        for p in g.plaquettes() {
            let t = g.plaquette_edges(p);
            for k in 0..4 {
                assert_eq!(g.head(t[k]), g.tail(t[(k + 1) % 4]));
            }
            let mut ids: Vec<EdgeId> = t.iter().map(|e| e.edge).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 4);
            assert_eq!(t.iter().map(|e| e.sign()).collect::<Vec<_>>(), vec![1, 1, -1, -1]);
        }
    }

    #[test]
    fn incidence_counts() {
        let g2 = Geometry::cube(2, 2).unwrap();
        let interior = g2.edge_at(&[0, 0], 0).unwrap();
        assert_eq!(g2.plaquettes_containing(interior).len(), 2);
        let boundary = g2.edge_at(&[-2, -2], 0).unwrap();
        assert_eq!(g2.plaquettes_containing(boundary).len(), 1);
        assert_eq!(g2.plaquettes_first_edge(boundary).len(), 1);
        let g3 = Geometry::cube(3, 2).unwrap();
        let interior = g3.edge_at(&[0, 0, 0], 1).unwrap();
        assert_eq!(g3.plaquettes_containing(interior).len(), 4);
    }

    #[test]
    fn first_edge_rotations_start_at_e() {
        let g = Geometry::cube(2, 2).unwrap();
        let e = g.edge_at(&[0, 0], 0).unwrap();
        let rot = g.plaquettes_first_edge(e);
        assert_eq!(rot.len(), 2);
        for (p, s) in rot {
            let t = g.traversal(p);
            assert_eq!(t[0].edge, e);
            assert_eq!(g.sgn(e.forward(), p), s);
        }
        for r in g.rooted(e) {
            assert_eq!(g.head(e.forward()), g.tail(r.rest[0]));
            assert_eq!(g.head(r.rest[2]), g.tail(e.forward()));
        }
    }

    #[test]
    fn distances() {
        let g = Geometry::cube(2, 2).unwrap();
        let a = g.edge_at(&[-2, -2], 0).unwrap();
        assert_eq!(g.graph_distance(&[a], &[a]).unwrap(), 0);
        let b = g.edge_at(&[-2, -1], 0).unwrap();
        assert_eq!(g.graph_distance(&[a], &[b]).unwrap(), 1);
        let far = g.edge_at(&[1, 2], 0).unwrap();
        assert_eq!(g.graph_distance(&[a], &[far]).unwrap(), 6);
        assert_eq!(g.graph_distance(&[], &[far]), Err(Error::EmptyEdgeSet));
    }

    #[test]
    fn small_cluster_enumeration() {
        let g = Geometry::cube(2, 2).unwrap();
        let e = g.edge_at(&[0, 0], 0).unwrap();
        let c = enumerate_clusters(&g, &[e], 1, 1000).unwrap();
        assert_eq!(c.counts(), vec![1, 2]);
        assert!(c.by_size[0][0].is_empty());
        assert!(enumerate_clusters(&g, &[e], 4, 10).is_err());
    }

    #[test]
    fn loops_validate() {
        let g = Geometry::cube(2, 2).unwrap();
        let l = Loop::rectangle(&g, &[-1, -1], 0, 1, 2, 1).unwrap();
        assert_eq!(l.len(), 6);
        let e = g.edge_at(&[0, 0], 0).unwrap();
        assert_eq!(Loop::new(&g, vec![e.forward()]), Err(Error::OpenLoop(0)));
    }
}
