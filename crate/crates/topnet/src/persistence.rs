//! Persistence diagrams over Z/2: union-find for dimension 0, column
//! reduction for all dimensions, vertex-augmented diagrams on graphs, and
//! independent rank-based oracles used by the tests.

use crate::autodiff::{Tape, Val};
use crate::complex::SimplicialComplex;
use crate::filtration::Filtration;
use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PersistenceError {
    #[error("augmented diagrams are defined on graphs; complex has dimension {dim}")]
    NotAGraph { dim: usize },
}

/// One birth/death event. `death == None` marks an essential class. The ids
/// name the simplices whose ranks produced the two coordinates, which is what
/// gradient routing needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistencePair {
    pub dim: usize,
    pub birth: f64,
    pub death: Option<f64>,
    pub birth_id: usize,
    pub death_id: Option<usize>,
}

impl PersistencePair {
    pub fn essential(&self) -> bool {
        self.death.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PersistenceDiagram {
    by_dim: Vec<Vec<PersistencePair>>,
}

impl PersistenceDiagram {
    pub fn push(&mut self, pair: PersistencePair) {
        if self.by_dim.len() <= pair.dim {
            self.by_dim.resize_with(pair.dim + 1, Vec::new);
        }
        self.by_dim[pair.dim].push(pair);
    }

    pub fn pairs(&self, dim: usize) -> &[PersistencePair] {
        self.by_dim.get(dim).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Largest dimension holding any pair, if nonempty.
    pub fn max_dim(&self) -> Option<usize> {
        (0..self.by_dim.len()).rev().find(|&d| !self.by_dim[d].is_empty())
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = &PersistencePair> {
        self.by_dim.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_dim.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn essential_count(&self, dim: usize) -> usize {
        self.pairs(dim).iter().filter(|p| p.essential()).count()
    }

    /// (birth, death) multiset for one dimension, essential deaths mapped to
    /// +inf, sorted for comparisons.
    pub fn multiset(&self, dim: usize) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .pairs(dim)
            .iter()
            .map(|p| (p.birth, p.death.unwrap_or(f64::INFINITY)))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        out
    }

    fn sort(&mut self) {
        for pairs in &mut self.by_dim {
            pairs.sort_by(|a, b| {
                a.birth
                    .total_cmp(&b.birth)
                    .then(
                        a.death
                            .unwrap_or(f64::INFINITY)
                            .total_cmp(&b.death.unwrap_or(f64::INFINITY)),
                    )
                    .then(a.birth_id.cmp(&b.birth_id))
            });
        }
    }

    /// Index of the dim-0 pair each vertex created. Total because every
    /// vertex starts its own component and zero-persistence pairs are kept.
    pub fn vertex_pair_indices(&self, n_vertices: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_vertices];
        for (ix, p) in self.pairs(0).iter().enumerate() {
            out[p.birth_id] = ix;
        }
        assert!(
            out.iter().all(|&ix| ix != usize::MAX),
            "every vertex owns exactly one dim-0 pair"
        );
        out
    }

    /// Line format: `dim birth death essential_flag birth_id death_id`, with
    /// `inf` and id -1 standing in for an essential death.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for (dim, pairs) in self.by_dim.iter().enumerate() {
            for p in pairs {
                let death = match p.death {
                    Some(d) => format!("{d:?}"),
                    None => "inf".to_string(),
                };
                let death_id = p.death_id.map(|d| d as i64).unwrap_or(-1);
                s.push_str(&format!(
                    "{} {:?} {} {} {} {}\n",
                    dim,
                    p.birth,
                    death,
                    u8::from(p.essential()),
                    p.birth_id,
                    death_id
                ));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct RootData {
    birth: f64,
    alpha: f64,
    creator: usize,
}

/// Elder rule: the larger (birth, alpha, creator id) component dies.
fn elder_cmp(a: &RootData, b: &RootData) -> Ordering {
    a.birth
        .total_cmp(&b.birth)
        .then(a.alpha.total_cmp(&b.alpha))
        .then(a.creator.cmp(&b.creator))
}

struct UnionFind {
    parent: Vec<usize>,
    data: Vec<RootData>,
}

impl UnionFind {
    fn new(roots: Vec<RootData>) -> Self {
        Self { parent: (0..roots.len()).collect(), data: roots }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Attaches the elder-rule loser under the winner; returns the loser's
    /// root data. `ra != rb` required.
    fn merge(&mut self, ra: usize, rb: usize) -> RootData {
        let (die, live) = if elder_cmp(&self.data[ra], &self.data[rb]) == Ordering::Greater {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[die] = live;
        self.data[die]
    }
}

/// Dimension-0 persistence by union-find over the filtration order. Every
/// vertex yields exactly one pair (merges emit the younger component's pair,
/// survivors become essential).
pub fn pd_dim0_unionfind(k: &SimplicialComplex, filt: &Filtration) -> PersistenceDiagram {
    let nv = k.vertex_count();
    let mut uf = UnionFind::new(
        (0..nv)
            .map(|v| RootData { birth: filt.rank(v), alpha: filt.rank(v), creator: v })
            .collect(),
    );
    let mut diagram = PersistenceDiagram::default();
    for &sid in filt.order() {
        if k.simplex(sid).dim() != 1 {
            continue;
        }
        let vs = k.simplex(sid).vertices();
        let (ra, rb) = (uf.find(vs[0]), uf.find(vs[1]));
        if ra == rb {
            continue;
        }
        let dying = uf.merge(ra, rb);
        diagram.push(PersistencePair {
            dim: 0,
            birth: dying.birth,
            death: Some(filt.rank(sid)),
            birth_id: dying.creator,
            death_id: Some(sid),
        });
    }
    for v in 0..nv {
        if uf.find(v) == v {
            let d = uf.data[v];
            diagram.push(PersistencePair {
                dim: 0,
                birth: d.birth,
                death: None,
                birth_id: d.creator,
                death_id: None,
            });
        }
    }
    diagram.sort();
    diagram
}

/// Persistence in dimensions 0..=max_p by left-to-right column reduction of
/// the Z/2 boundary matrix in filtration order.
pub fn pd_matrix_reduction(
    k: &SimplicialComplex,
    filt: &Filtration,
    max_p: usize,
) -> PersistenceDiagram {
    let order = filt.order();
    let mut pos = vec![0usize; k.len()];
    for (ix, &id) in order.iter().enumerate() {
        pos[id] = ix;
    }
    let mut reduced: Vec<BTreeSet<usize>> = Vec::with_capacity(order.len());
    let mut owner_of_low: HashMap<usize, usize> = HashMap::new();
    let mut killed = vec![false; order.len()];
    let mut diagram = PersistenceDiagram::default();
    for j in 0..order.len() {
        let sid = order[j];
        let mut col: BTreeSet<usize> = k
            .boundary_neighbors(sid)
            .expect("valid id")
            .iter()
            .map(|&f| pos[f])
            .collect();
        while let Some(&low) = col.iter().next_back() {
            let Some(&o) = owner_of_low.get(&low) else { break };
            // Z/2 column addition is symmetric difference
            for &r in &reduced[o] {
                if !col.remove(&r) {
                    col.insert(r);
                }
            }
        }
        if let Some(&low) = col.iter().next_back() {
            owner_of_low.insert(low, j);
            killed[low] = true;
            let bid = order[low];
            let pair_dim = k.simplex(sid).dim() - 1;
            if pair_dim <= max_p {
                diagram.push(PersistencePair {
                    dim: pair_dim,
                    birth: filt.rank(bid),
                    death: Some(filt.rank(sid)),
                    birth_id: bid,
                    death_id: Some(sid),
                });
            }
        }
        reduced.push(col);
    }
    for j in 0..order.len() {
        let sid = order[j];
        let d = k.simplex(sid).dim();
        if reduced[j].is_empty() && !killed[j] && d <= max_p {
            diagram.push(PersistencePair {
                dim: d,
                birth: filt.rank(sid),
                death: None,
                birth_id: sid,
                death_id: None,
            });
        }
    }
    diagram.sort();
    diagram
}

fn z2_rank(mut rows: Vec<Vec<bool>>) -> usize {
    let width = rows.first().map(Vec::len).unwrap_or(0);
    let mut rank = 0;
    for c in 0..width {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][c]) else { continue };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[c] {
                for (x, y) in row.iter_mut().zip(&pivot) {
                    *x ^= *y;
                }
            }
        }
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    rank
}

/// Boundary of a p-simplex as a dense vector over the full (p-1)-stratum.
fn boundary_vector(k: &SimplicialComplex, id: usize) -> Vec<bool> {
    let p = k.simplex(id).dim();
    let rows = k.stratum(p - 1);
    let mut v = vec![false; rows.len()];
    for &f in k.boundary_neighbors(id).expect("valid id") {
        v[f - rows.start] = true;
    }
    v
}

/// Betti number of the subcomplex selected by `member` (which must be closed
/// under faces) via rank-nullity of dense Z/2 boundary operators.
pub fn betti_oracle_sub(k: &SimplicialComplex, member: &[bool], p: usize) -> usize {
    let c_p = k.stratum(p).filter(|&id| member[id]).count();
    let rank_p = if p == 0 {
        0
    } else {
        z2_rank(
            k.stratum(p)
                .filter(|&id| member[id])
                .map(|id| boundary_vector(k, id))
                .collect(),
        )
    };
    let rank_p1 = z2_rank(
        k.stratum(p + 1)
            .filter(|&id| member[id])
            .map(|id| boundary_vector(k, id))
            .collect(),
    );
    c_p - rank_p - rank_p1
}

pub fn betti_oracle(k: &SimplicialComplex, p: usize) -> usize {
    betti_oracle_sub(k, &vec![true; k.len()], p)
}

/// Basis of the p-cycle space of the subcomplex, as vectors over the full
/// p-stratum: column reduction of the restricted boundary with tracking.
fn cycle_basis(k: &SimplicialComplex, member: &[bool], p: usize) -> Vec<Vec<bool>> {
    let stratum = k.stratum(p);
    let cols: Vec<usize> = stratum.clone().filter(|&id| member[id]).collect();
    if p == 0 {
        return cols
            .iter()
            .map(|&id| {
                let mut v = vec![false; stratum.len()];
                v[id - stratum.start] = true;
                v
            })
            .collect();
    }
    let mut colsets: Vec<BTreeSet<usize>> = cols
        .iter()
        .map(|&id| k.boundary_neighbors(id).expect("valid id").iter().copied().collect())
        .collect();
    let mut track: Vec<BTreeSet<usize>> =
        (0..cols.len()).map(|ci| BTreeSet::from([ci])).collect();
    let mut owner: HashMap<usize, usize> = HashMap::new();
    let mut kernel = Vec::new();
    for ci in 0..cols.len() {
        loop {
            let Some(&low) = colsets[ci].iter().next_back() else { break };
            let Some(&o) = owner.get(&low) else {
                owner.insert(low, ci);
                break;
            };
            let (other_col, other_track) = (colsets[o].clone(), track[o].clone());
            for r in other_col {
                if !colsets[ci].remove(&r) {
                    colsets[ci].insert(r);
                }
            }
            for r in other_track {
                if !track[ci].remove(&r) {
                    track[ci].insert(r);
                }
            }
        }
        if colsets[ci].is_empty() {
            let mut v = vec![false; stratum.len()];
            for &t in &track[ci] {
                v[cols[t] - stratum.start] = true;
            }
            kernel.push(v);
        }
    }
    kernel
}

/// dim Z_p(K_i) - dim(Z_p(K_i) ∩ B_p(K_j)): the rank of the map induced on
/// p-th homology by the inclusion K_i ⊆ K_j. Masks must be face-closed and
/// nested.
pub fn persistent_betti_oracle(
    k: &SimplicialComplex,
    member_i: &[bool],
    member_j: &[bool],
    p: usize,
) -> usize {
    let cycles = cycle_basis(k, member_i, p);
    let boundaries: Vec<Vec<bool>> = k
        .stratum(p + 1)
        .filter(|&id| member_j[id])
        .map(|id| boundary_vector(k, id))
        .collect();
    let dim_z = cycles.len();
    let dim_b = z2_rank(boundaries.clone());
    let mut stacked = cycles;
    stacked.extend(boundaries);
    let dim_zb = z2_rank(stacked);
    let dim_intersection = dim_z + dim_b - dim_zb;
    dim_z - dim_intersection
}

/// Appendix-style bookkeeping oracle: walks every distinct rank value as a
/// threshold, computes persistent Betti numbers by linear algebra, and reads
/// pair multiplicities off their differences. Zero-persistence pairs are
/// invisible at this granularity, so comparisons against the reduction drop
/// birth == death pairs first. Returns per-dim sorted (birth, death) lists
/// with None for essential classes.
pub fn diagram_oracle(
    k: &SimplicialComplex,
    filt: &Filtration,
    max_p: usize,
) -> Vec<Vec<(f64, Option<f64>)>> {
    let mut ts: Vec<f64> = filt.ranks().to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let m = ts.len();
    let masks: Vec<Vec<bool>> = (0..=m)
        .map(|i| {
            (0..k.len())
                .map(|id| i > 0 && filt.rank(id) <= ts[i - 1])
                .collect()
        })
        .collect();
    let top = max_p.min(k.dim());
    let mut out: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); top + 1];
    for (p, pairs) in out.iter_mut().enumerate() {
        let mut b = vec![vec![0i64; m + 1]; m + 1];
        for i in 1..=m {
            for j in i..=m {
                b[i][j] = persistent_betti_oracle(k, &masks[i], &masks[j], p) as i64;
            }
        }
        for i in 1..=m {
            for j in i + 1..=m {
                let mult = (b[i][j - 1] - b[i][j]) - (b[i - 1][j - 1] - b[i - 1][j]);
                assert!(mult >= 0, "multiplicities are counts");
                for _ in 0..mult {
                    pairs.push((ts[i - 1], Some(ts[j - 1])));
                }
            }
            let ess = b[i][m] - b[i - 1][m];
            assert!(ess >= 0);
            for _ in 0..ess {
                pairs.push((ts[i - 1], None));
            }
        }
        pairs.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then(
                a.1.unwrap_or(f64::INFINITY).total_cmp(&b.1.unwrap_or(f64::INFINITY)),
            )
        });
    }
    out
}

/// One tuple per vertex: b = 0 marks the survivor of its component (death is
/// then the finite stand-in for infinity), alpha is the vertex's own filter
/// value, gamma the smallest incident edge value. The edge ids drive gradient
/// routing; `gamma_edge == None` iff the vertex is isolated.
#[derive(Debug, Clone, PartialEq)]
pub struct RePHINETuple {
    pub b: u8,
    pub d: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub owner: usize,
    pub death_edge: Option<usize>,
    pub gamma_edge: Option<usize>,
}

impl RePHINETuple {
    pub fn as_array(&self) -> [f64; 4] {
        [f64::from(self.b), self.d, self.alpha, self.gamma]
    }
}

/// Vertex tuples plus the ordinary dim-1 pairs of the edge filtration (all
/// essential on a graph).
#[derive(Debug, Clone, PartialEq)]
pub struct RePHINEDiagram {
    pub tuples: Vec<RePHINETuple>,
    pub dim1: Vec<PersistencePair>,
    pub sentinel: f64,
}

impl RePHINEDiagram {
    /// Components = survivors.
    pub fn component_count(&self) -> usize {
        self.tuples.iter().filter(|t| t.b == 0).count()
    }

    /// Same line format as ordinary diagrams; tuples project to dim-0 lines
    /// (birth 0 under the edge filtration, alpha and gamma elided).
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for t in &self.tuples {
            let death_id = t.death_edge.map(|d| d as i64).unwrap_or(-1);
            s.push_str(&format!(
                "0 0.0 {:?} {} {} {}\n",
                t.d,
                u8::from(t.b == 0),
                t.owner,
                death_id
            ));
        }
        for p in &self.dim1 {
            s.push_str(&format!("1 {:?} inf 1 {} -1\n", p.birth, p.birth_id));
        }
        s
    }
}

/// Augmented dim-0 persistence on a graph: all vertices born at 0, edges
/// enter by their filter value, each merge kills the root with the larger
/// vertex filter value (ties: larger vertex id). `f_v` is indexed by vertex
/// id, `f_e` by position within the edge stratum.
pub fn rephine_diagram(
    k: &SimplicialComplex,
    f_v: &[f64],
    f_e: &[f64],
) -> Result<RePHINEDiagram, PersistenceError> {
    if k.dim() > 1 {
        return Err(PersistenceError::NotAGraph { dim: k.dim() });
    }
    let nv = k.vertex_count();
    let estart = k.stratum(1).start;
    assert_eq!(f_v.len(), nv);
    assert_eq!(f_e.len(), k.stratum(1).len());

    let sentinel = f_e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sentinel = if f_e.is_empty() { 1.0 } else { sentinel + 1.0 };

    let mut gamma = vec![(sentinel, None); nv];
    for v in 0..nv {
        for &e in k.coboundary_neighbors(v).expect("valid id") {
            let val = f_e[e - estart];
            if gamma[v].1.is_none() || val < gamma[v].0 {
                gamma[v] = (val, Some(e));
            }
        }
    }

    let mut uf = UnionFind::new(
        (0..nv)
            .map(|v| RootData { birth: 0.0, alpha: f_v[v], creator: v })
            .collect(),
    );
    let mut edge_order: Vec<usize> = k.stratum(1).collect();
    edge_order.sort_by(|&a, &b| f_e[a - estart].total_cmp(&f_e[b - estart]).then(a.cmp(&b)));

    let mut tuples = Vec::with_capacity(nv);
    let mut dim1 = Vec::new();
    for e in edge_order {
        let vs = k.simplex(e).vertices();
        let (ra, rb) = (uf.find(vs[0]), uf.find(vs[1]));
        if ra == rb {
            dim1.push(PersistencePair {
                dim: 1,
                birth: f_e[e - estart],
                death: None,
                birth_id: e,
                death_id: None,
            });
            continue;
        }
        let dying = uf.merge(ra, rb);
        let v = dying.creator;
        tuples.push(RePHINETuple {
            b: 1,
            d: f_e[e - estart],
            alpha: f_v[v],
            gamma: gamma[v].0,
            owner: v,
            death_edge: Some(e),
            gamma_edge: gamma[v].1,
        });
    }
    for v in 0..nv {
        if uf.find(v) == v {
            tuples.push(RePHINETuple {
                b: 0,
                d: sentinel,
                alpha: f_v[v],
                gamma: gamma[v].0,
                owner: v,
                death_edge: None,
                gamma_edge: gamma[v].1,
            });
        }
    }
    tuples.sort_by_key(|t| t.owner);
    dim1.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.birth_id.cmp(&b.birth_id)));
    Ok(RePHINEDiagram { tuples, dim1, sentinel })
}

/// A diagram point reconnected to tape values for backpropagation.
#[derive(Debug, Clone, Copy)]
pub struct DiffPair {
    pub dim: usize,
    pub birth: Val,
    pub death: Val,
    pub essential: bool,
}

/// Min positive gap between distinct sorted values. Exact ties contribute
/// nothing: they are assumed structural (constant ranks), since a parametric
/// exact tie cannot be told apart from a constant one at the f64 level.
fn note_order_margin(t: &mut Tape, values: &[f64]) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        let gap = w[1] - w[0];
        if gap > 0.0 {
            t.note_margin(gap);
        }
    }
}

/// Reconnects a combinatorial diagram to the tape ranks it was computed
/// from. Essential deaths become the differentiable sentinel (max rank over
/// the defining stratum, plus one). Also records the filtration's order
/// margin so finite-difference checks skip configurations where a small
/// perturbation could change the pairing.
pub fn diff_pairs(
    t: &mut Tape,
    k: &SimplicialComplex,
    filt: &Filtration,
    pd: &PersistenceDiagram,
    rank_vals: &[Val],
) -> Vec<DiffPair> {
    note_order_margin(t, filt.ranks());
    let defining: Vec<Val> = k.stratum(filt.defining_dim()).map(|id| rank_vals[id]).collect();
    let sentinel = match t.max_fold(&defining) {
        Some(m) => {
            let one = t.leaf(1.0);
            t.add(m, one)
        }
        None => t.leaf(filt.inf_sentinel()),
    };
    pd.all_pairs()
        .map(|p| DiffPair {
            dim: p.dim,
            birth: rank_vals[p.birth_id],
            death: p.death_id.map(|d| rank_vals[d]).unwrap_or(sentinel),
            essential: p.essential(),
        })
        .collect()
}

/// Tape view of an augmented diagram: per-vertex 4-tuples [b, d, alpha,
/// gamma] plus dim-1 pairs. `vertex_vals` indexed by vertex id, `edge_vals`
/// by position within the edge stratum.
pub struct DiffRephine {
    pub tuples: Vec<[Val; 4]>,
    pub dim1: Vec<DiffPair>,
}

pub fn diff_rephine(
    t: &mut Tape,
    k: &SimplicialComplex,
    rd: &RePHINEDiagram,
    vertex_vals: &[Val],
    edge_vals: &[Val],
) -> DiffRephine {
    let vertex_ranks: Vec<f64> = vertex_vals.iter().map(|&v| t.value(v)).collect();
    let edge_ranks: Vec<f64> = edge_vals.iter().map(|&v| t.value(v)).collect();
    note_order_margin(t, &vertex_ranks);
    note_order_margin(t, &edge_ranks);
    let estart = k.stratum(1).start;
    let sentinel = match t.max_fold(edge_vals) {
        Some(m) => {
            let one = t.leaf(1.0);
            t.add(m, one)
        }
        None => t.leaf(rd.sentinel),
    };
    let tuples = rd
        .tuples
        .iter()
        .map(|tp| {
            let b = t.leaf(f64::from(tp.b));
            let d = tp.death_edge.map(|e| edge_vals[e - estart]).unwrap_or(sentinel);
            let alpha = vertex_vals[tp.owner];
            let gamma = tp.gamma_edge.map(|e| edge_vals[e - estart]).unwrap_or(sentinel);
            [b, d, alpha, gamma]
        })
        .collect();
    let dim1 = rd
        .dim1
        .iter()
        .map(|p| DiffPair {
            dim: 1,
            birth: edge_vals[p.birth_id - estart],
            death: sentinel,
            essential: true,
        })
        .collect();
    DiffRephine { tuples, dim1 }
}
