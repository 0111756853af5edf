//! Color-refinement tests (1-WL on graphs, its simplicial analogue on
//! complexes) and the search for complex pairs that refinement cannot tell
//! apart but persistence diagrams can.

use crate::complex::{graph_complex, SimplicialComplex};
use crate::filtration::rank_by_max;
use crate::persistence::pd_matrix_reduction;
use itertools::Itertools;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

/// Unordered vertex pairs of an n-vertex graph, lexicographic.
pub fn pair_index(n: usize) -> Vec<(usize, usize)> {
    (0..n).tuple_combinations().collect()
}

/// Decodes an edge bitmask over `pair_index(n)`.
pub fn graph_from_mask(n: usize, mask: u64) -> Vec<(usize, usize)> {
    pair_index(n)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, e)| e)
        .collect()
}

pub fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Isomorphism-invariant encoding: the minimum edge bitmask over all vertex
/// relabelings. Factorial in n; fine for n <= 6.
pub fn canonical_edge_mask(n: usize, edges: &[(usize, usize)]) -> u64 {
    let pairs = pair_index(n);
    let slot: std::collections::HashMap<(usize, usize), usize> =
        pairs.iter().copied().enumerate().map(|(i, p)| (p, i)).collect();
    let mut best = u64::MAX;
    for perm in (0..n).permutations(n) {
        let mut mask = 0u64;
        for &(a, b) in edges {
            let (x, y) = (perm[a].min(perm[b]), perm[a].max(perm[b]));
            mask |= 1 << slot[&(x, y)];
        }
        best = best.min(mask);
    }
    best
}

/// One representative per isomorphism class of connected simple graphs on
/// exactly n vertices. The first mask of each class marks its whole orbit as
/// seen, so the factorial relabeling cost is paid once per class, not once
/// per mask.
pub fn connected_graphs_up_to_iso(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs = pair_index(n);
    let mut slot = vec![vec![0usize; n]; n];
    for (i, &(a, b)) in pairs.iter().enumerate() {
        slot[a][b] = i;
        slot[b][a] = i;
    }
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for mask in 0..(1u64 << pairs.len()) {
        if seen.contains(&mask) {
            continue;
        }
        let edges = graph_from_mask(n, mask);
        if !is_connected(n, &edges) {
            continue;
        }
        for perm in &perms {
            let mut relabeled = 0u64;
            for &(a, b) in &edges {
                relabeled |= 1 << slot[perm[a]][perm[b]];
            }
            seen.insert(relabeled);
        }
        out.push(edges);
    }
    out
}

/// Exact canonical-form color map: structurally equal keys get equal ids,
/// distinct keys never collide. Refinement correctness rests on this, so no
/// probabilistic hashing.
#[derive(Default)]
pub struct Interner {
    map: HashMap<Vec<u64>, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, key: &[u64]) -> u32 {
        let next = self.map.len() as u32;
        *self.map.entry(key.to_vec()).or_insert(next)
    }
}

const INIT_TAG: u64 = 0;
const ROUND_TAG: u64 = 1;

fn distinct_count(colorings: &[Vec<u32>]) -> usize {
    let mut seen = HashSet::new();
    for c in colorings {
        seen.extend(c.iter().copied());
    }
    seen.len()
}

/// 1-WL color refinement run jointly over several graphs so the stable
/// colors are comparable across them. Initial colors are arbitrary labels.
/// Returns per-graph vertex colors and the number of refinement rounds.
pub fn wl1_refine_many(inputs: &[(&SimplicialComplex, &[u64])]) -> (Vec<Vec<u32>>, usize) {
    let mut interner = Interner::new();
    let mut colors: Vec<Vec<u32>> = inputs
        .iter()
        .map(|(k, init)| {
            assert!(k.dim() <= 1, "1-WL runs on graphs");
            assert_eq!(init.len(), k.vertex_count());
            init.iter().map(|&c| interner.intern(&[INIT_TAG, c])).collect()
        })
        .collect();
    let mut classes = distinct_count(&colors);
    let total: usize = inputs.iter().map(|(k, _)| k.vertex_count()).sum();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut next = Vec::with_capacity(colors.len());
        for (gi, (k, _)) in inputs.iter().enumerate() {
            let mut fresh = Vec::with_capacity(k.vertex_count());
            for v in 0..k.vertex_count() {
                let mut nbr: Vec<u64> = Neighbors::of(k, v)
                    .iter()
                    .map(|&u| colors[gi][u] as u64)
                    .collect();
                nbr.sort_unstable();
                let mut key = vec![ROUND_TAG, colors[gi][v] as u64];
                key.extend(nbr);
                fresh.push(interner.intern(&key));
            }
            next.push(fresh);
        }
        let new_classes = distinct_count(&next);
        debug_assert!(new_classes >= classes, "refinement never coarsens");
        if new_classes == classes {
            return (next, rounds);
        }
        colors = next;
        classes = new_classes;
        assert!(rounds <= total + 1, "refinement exceeded simplex count");
    }
}

struct Neighbors;
impl Neighbors {
    fn of(k: &SimplicialComplex, v: usize) -> Vec<usize> {
        k.upper_adjacent(v).expect("valid vertex")
    }
}

pub fn wl1_refine(k: &SimplicialComplex, init: &[u64]) -> Vec<u32> {
    wl1_refine_many(&[(k, init)]).0.pop().unwrap()
}

/// Simplicial color refinement over all simplices, run jointly. A simplex's
/// new color combines its own color, the sorted multiset of boundary-neighbor
/// colors, and the sorted multiset of (upper-adjacent color, shared co-face
/// color) pairs; for vertices the pair form is what lets edge colors feed
/// back into vertex updates. Initial labels are namespaced by dimension.
pub fn swl_refine_many(inputs: &[(&SimplicialComplex, &[u64])]) -> (Vec<Vec<u32>>, usize) {
    let mut interner = Interner::new();
    let mut colors: Vec<Vec<u32>> = inputs
        .iter()
        .map(|(k, init)| {
            assert_eq!(init.len(), k.len());
            (0..k.len())
                .map(|id| interner.intern(&[INIT_TAG, k.simplex(id).dim() as u64, init[id]]))
                .collect()
        })
        .collect();
    let mut classes = distinct_count(&colors);
    let total: usize = inputs.iter().map(|(k, _)| k.len()).sum();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut next = Vec::with_capacity(colors.len());
        for (ci, (k, _)) in inputs.iter().enumerate() {
            let mut fresh = Vec::with_capacity(k.len());
            for id in 0..k.len() {
                let mut bnd: Vec<u64> = k
                    .boundary_neighbors(id)
                    .expect("valid id")
                    .iter()
                    .map(|&b| colors[ci][b] as u64)
                    .collect();
                bnd.sort_unstable();
                let mut upp: Vec<(u64, u64)> = k
                    .upper_adjacent_with_cofaces(id)
                    .expect("valid id")
                    .iter()
                    .map(|&(nb, cf)| (colors[ci][nb] as u64, colors[ci][cf] as u64))
                    .collect();
                upp.sort_unstable();
                let mut key = vec![ROUND_TAG, colors[ci][id] as u64, bnd.len() as u64];
                key.extend(bnd);
                key.push(upp.len() as u64);
                for (a, b) in upp {
                    key.push(a);
                    key.push(b);
                }
                fresh.push(interner.intern(&key));
            }
            next.push(fresh);
        }
        let new_classes = distinct_count(&next);
        debug_assert!(new_classes >= classes, "refinement never coarsens");
        if new_classes == classes {
            return (next, rounds);
        }
        colors = next;
        classes = new_classes;
        assert!(rounds <= total + 1, "refinement exceeded simplex count");
    }
}

pub fn swl_refine(k: &SimplicialComplex, init: &[u64]) -> Vec<u32> {
    swl_refine_many(&[(k, init)]).0.pop().unwrap()
}

/// Sorted (color, count) pairs; comparable across complexes only when the
/// colors came from one joint refinement run.
pub fn histogram(colors: &[u32]) -> Vec<(u32, usize)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &c in colors {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// Sorted class sizes: a run-stable canonical summary of a partition.
pub fn class_sizes(colors: &[u32]) -> Vec<usize> {
    let mut sizes: Vec<usize> = histogram(colors).into_iter().map(|(_, c)| c).collect();
    sizes.sort_unstable();
    sizes
}

/// Renumbers colors by first occurrence, so two colorings induce the same
/// partition exactly when their normal forms are equal.
pub fn partition_normal_form(colors: &[u32]) -> Vec<u32> {
    let mut seen: HashMap<u32, u32> = HashMap::new();
    colors
        .iter()
        .map(|&c| {
            let next = seen.len() as u32;
            *seen.entry(c).or_insert(next)
        })
        .collect()
}

fn component_count(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut count = n;
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            count -= 1;
        }
    }
    count
}

/// Component counts of a colored graph before and after deleting every edge
/// whose color lies in `q`. A pair of refinement-equivalent graphs whose
/// after-counts differ certifies that diagrams see what refinement cannot.
pub fn color_disconnecting_check(
    k: &SimplicialComplex,
    edge_colors: &[u64],
    q: &[u64],
) -> (usize, usize) {
    assert!(k.dim() <= 1, "edge deletion is a graph operation");
    let n = k.vertex_count();
    let stratum = k.stratum(1);
    let (lo, hi) = (stratum.start, stratum.end);
    assert_eq!(edge_colors.len(), hi - lo);
    let edge = |id: usize| {
        let vs = k.simplex(id).vertices();
        (vs[0], vs[1])
    };
    let before = component_count(n, (lo..hi).map(edge));
    let after = component_count(
        n,
        (lo..hi).filter(|&id| !q.contains(&edge_colors[id - lo])).map(edge),
    );
    (before, after)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColoredGraph {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
    /// One integer color per vertex; colors double as filter values.
    pub colors: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiltKind {
    VertexColor,
    EdgeColor,
}

/// Witness that simplicial refinement is blind to a difference persistence
/// sees: two colored graphs, equal stable histograms on their clique
/// complexes, distinct diagrams under the named color filtration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub schema: String,
    pub left: ColoredGraph,
    pub right: ColoredGraph,
    pub filtration: FiltKind,
    pub differing_dim: usize,
    /// Class sizes of the joint stable partition, identical on both sides.
    pub swl_class_sizes: Vec<usize>,
    /// Same summary for plain 1-WL on the uncolored graphs.
    pub wl1_class_sizes: Vec<usize>,
    pub diagrams_left: Vec<Vec<(f64, Option<f64>)>>,
    pub diagrams_right: Vec<Vec<(f64, Option<f64>)>>,
}

pub const CERTIFICATE_SCHEMA: &str = "expressivity-certificate v1";

const LIFT_DIM: usize = 2;

fn lift_with_init(g: &ColoredGraph) -> (SimplicialComplex, Vec<u64>) {
    let k = graph_complex(g.vertices, &g.edges)
        .clique_lift(LIFT_DIM)
        .expect("clique lift");
    let init: Vec<u64> = (0..k.len())
        .map(|id| {
            let s = k.simplex(id);
            if s.dim() == 0 {
                g.colors[s.vertices()[0]]
            } else {
                0
            }
        })
        .collect();
    (k, init)
}

/// Per-dimension (birth, death) multisets of the color filtration on the
/// clique complex, deaths of essential pairs as None. Colors are small
/// integers, so the f64 values compare exactly.
pub fn color_filtration_diagrams(g: &ColoredGraph, kind: FiltKind) -> Vec<Vec<(f64, Option<f64>)>> {
    let (k, _) = lift_with_init(g);
    let filt = match kind {
        FiltKind::VertexColor => rank_by_max(&k, 0, |vid| g.colors[vid] as f64),
        FiltKind::EdgeColor => rank_by_max(&k, 1, |eid| {
            let vs = k.simplex(eid).vertices();
            g.colors[vs[0]].max(g.colors[vs[1]]) as f64
        }),
    }
    .expect("color ranks are nested");
    let pd = pd_matrix_reduction(&k, &filt, LIFT_DIM);
    (0..=LIFT_DIM)
        .map(|d| {
            let mut points: Vec<(f64, Option<f64>)> =
                pd.pairs(d).iter().map(|p| (p.birth, p.death)).collect();
            points.sort_by(|a, b| {
                let da = a.1.unwrap_or(f64::INFINITY);
                let db = b.1.unwrap_or(f64::INFINITY);
                (a.0, da).partial_cmp(&(b.0, db)).unwrap()
            });
            points
        })
        .collect()
}

/// Minimum of (edge mask, permuted colors) over all relabelings: exact
/// equality test for colored-graph isomorphism at search sizes.
fn colored_canonical(n: usize, edges: &[(usize, usize)], colors: &[u64]) -> (u64, Vec<u64>) {
    let pairs = pair_index(n);
    let slot: HashMap<(usize, usize), usize> =
        pairs.iter().copied().enumerate().map(|(i, p)| (p, i)).collect();
    let mut best: Option<(u64, Vec<u64>)> = None;
    for perm in (0..n).permutations(n) {
        let mut mask = 0u64;
        for &(a, b) in edges {
            let (x, y) = (perm[a].min(perm[b]), perm[a].max(perm[b]));
            mask |= 1 << slot[&(x, y)];
        }
        let mut cols = vec![0u64; n];
        for v in 0..n {
            cols[perm[v]] = colors[v];
        }
        let cand = (mask, cols);
        if best.as_ref().is_none_or(|b| cand < *b) {
            best = Some(cand);
        }
    }
    best.unwrap()
}

fn partitions_into_parts(total: usize, min_part: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, cap: usize, min_part: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        let mut part = rest.min(cap);
        while part >= min_part {
            cur.push(part);
            rec(rest - part, part, min_part, cur, out);
            cur.pop();
            part -= 1;
        }
    }
    let mut out = Vec::new();
    rec(total, total, min_part, &mut Vec::new(), &mut out);
    out
}

fn assemble_union(parts: &[usize], components: &[&Vec<(usize, usize)>]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let mut offset = 0;
    for (size, comp) in parts.iter().zip(components) {
        edges.extend(comp.iter().map(|&(a, b)| (a + offset, b + offset)));
        offset += size;
    }
    edges
}

/// One representative per isomorphism class of all simple graphs on exactly
/// n vertices, assembled as multisets of connected components. Two disjoint
/// unions are isomorphic exactly when their component multisets match, so no
/// further dedup is needed.
pub fn graphs_up_to_iso(n: usize) -> Vec<Vec<(usize, usize)>> {
    let by_size: Vec<Vec<Vec<(usize, usize)>>> =
        (0..=n).map(|s| if s == 0 { Vec::new() } else { connected_graphs_up_to_iso(s) }).collect();
    let mut out = Vec::new();
    for parts in partitions_into_parts(n, 1) {
        // group equal part sizes, choose component multisets per group
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for &p in &parts {
            match groups.last_mut() {
                Some((size, count)) if *size == p => *count += 1,
                _ => groups.push((p, 1)),
            }
        }
        let choices: Vec<Vec<Vec<usize>>> = groups
            .iter()
            .map(|&(size, count)| {
                (0..by_size[size].len())
                    .combinations_with_replacement(count)
                    .collect()
            })
            .collect();
        for combo in choices.into_iter().multi_cartesian_product() {
            let mut comps: Vec<&Vec<(usize, usize)>> = Vec::new();
            for (gi, picks) in combo.iter().enumerate() {
                let size = groups[gi].0;
                for &idx in picks {
                    comps.push(&by_size[size][idx]);
                }
            }
            out.push(assemble_union(&parts, &comps));
        }
    }
    out
}

/// Disjoint unions of cycles covering n vertices (including the single
/// n-cycle): every 2-regular graph, one per cycle-length partition.
pub fn cycle_unions(n: usize) -> Vec<Vec<(usize, usize)>> {
    let cycle = |len: usize| -> Vec<(usize, usize)> {
        (0..len).map(|i| (i.min((i + 1) % len), i.max((i + 1) % len))).collect()
    };
    partitions_into_parts(n, 3)
        .iter()
        .map(|parts| {
            let comps: Vec<Vec<(usize, usize)>> = parts.iter().map(|&p| cycle(p)).collect();
            let refs: Vec<&Vec<(usize, usize)>> = comps.iter().collect();
            assemble_union(parts, &refs)
        })
        .collect()
}

fn first_differing_dim(
    a: &[Vec<(f64, Option<f64>)>],
    b: &[Vec<(f64, Option<f64>)>],
) -> Option<usize> {
    (0..a.len().max(b.len())).find(|&d| {
        a.get(d).map(Vec::as_slice).unwrap_or(&[]) != b.get(d).map(Vec::as_slice).unwrap_or(&[])
    })
}

fn decolored_wl1_equal(a: &ColoredGraph, b: &ColoredGraph) -> bool {
    let ga = graph_complex(a.vertices, &a.edges);
    let gb = graph_complex(b.vertices, &b.edges);
    let ia = vec![0u64; a.vertices];
    let ib = vec![0u64; b.vertices];
    let (colors, _) = wl1_refine_many(&[(&ga, &ia), (&gb, &ib)]);
    histogram(&colors[0]) == histogram(&colors[1])
}

fn certify(a: &ColoredGraph, b: &ColoredGraph) -> Option<Certificate> {
    for kind in [FiltKind::VertexColor, FiltKind::EdgeColor] {
        let dl = color_filtration_diagrams(a, kind);
        let dr = color_filtration_diagrams(b, kind);
        if let Some(dim) = first_differing_dim(&dl, &dr) {
            if !decolored_wl1_equal(a, b) {
                return None;
            }
            let (ka, ia) = lift_with_init(a);
            let (kb, ib) = lift_with_init(b);
            let (swl, _) = swl_refine_many(&[(&ka, &ia), (&kb, &ib)]);
            debug_assert_eq!(histogram(&swl[0]), histogram(&swl[1]));
            let ga = graph_complex(a.vertices, &a.edges);
            let gb = graph_complex(b.vertices, &b.edges);
            let (wl, _) = wl1_refine_many(&[
                (&ga, &vec![0u64; a.vertices]),
                (&gb, &vec![0u64; b.vertices]),
            ]);
            return Some(Certificate {
                schema: CERTIFICATE_SCHEMA.to_string(),
                left: a.clone(),
                right: b.clone(),
                filtration: kind,
                differing_dim: dim,
                swl_class_sizes: class_sizes(&swl[0]),
                wl1_class_sizes: class_sizes(&wl[0]),
                diagrams_left: dl,
                diagrams_right: dr,
            });
        }
    }
    None
}

fn run_stage(cands: &[ColoredGraph]) -> Option<Certificate> {
    if cands.len() < 2 {
        return None;
    }
    let lifted: Vec<(SimplicialComplex, Vec<u64>)> = cands.iter().map(lift_with_init).collect();
    let inputs: Vec<(&SimplicialComplex, &[u64])> =
        lifted.iter().map(|(k, i)| (k, i.as_slice())).collect();
    let (colors, _) = swl_refine_many(&inputs);
    let mut buckets: BTreeMap<Vec<(u32, usize)>, Vec<usize>> = BTreeMap::new();
    for (i, c) in colors.iter().enumerate() {
        buckets.entry(histogram(c)).or_default().push(i);
    }
    for members in buckets.values() {
        for (pos, &i) in members.iter().enumerate() {
            for &j in &members[pos + 1..] {
                if let Some(cert) = certify(&cands[i], &cands[j]) {
                    return Some(cert);
                }
            }
        }
    }
    None
}

/// Staged exhaustive search for a refinement-blind, diagram-visible pair.
/// Small orders get full colored enumeration; order 6 gets all graphs with
/// uniform colors; orders 7 and 8 get the 2-regular graphs, where cycle
/// unions give equal refinement histograms but different component and cycle
/// counts. Deterministic: candidate order and bucket traversal are fixed.
pub fn find_counterexample_pair(max_vertices: usize) -> Option<Certificate> {
    assert!(max_vertices <= 8, "search bounded to 8 vertices");
    let uniform = |edges: Vec<(usize, usize)>, n: usize| ColoredGraph {
        vertices: n,
        edges,
        colors: vec![1; n],
    };
    for n in 2..=max_vertices.min(5) {
        let mut seen = HashSet::new();
        let mut cands = Vec::new();
        for edges in graphs_up_to_iso(n) {
            for bits in 0..(1u64 << n) {
                let colors: Vec<u64> = (0..n).map(|v| 1 + (bits >> v & 1)).collect();
                if seen.insert(colored_canonical(n, &edges, &colors)) {
                    cands.push(ColoredGraph { vertices: n, edges: edges.clone(), colors });
                }
            }
        }
        if let Some(cert) = run_stage(&cands) {
            return Some(cert);
        }
    }
    if max_vertices >= 6 {
        let cands: Vec<ColoredGraph> =
            graphs_up_to_iso(6).into_iter().map(|e| uniform(e, 6)).collect();
        if let Some(cert) = run_stage(&cands) {
            return Some(cert);
        }
    }
    for n in 7..=max_vertices {
        let cands: Vec<ColoredGraph> =
            cycle_unions(n).into_iter().map(|e| uniform(e, n)).collect();
        if let Some(cert) = run_stage(&cands) {
            return Some(cert);
        }
    }
    None
}

/// Re-derives every claim in a certificate from its two graphs: equal joint
/// refinement histograms on the lifts, equal 1-WL histograms on the
/// uncolored graphs, stored diagrams reproduced exactly, and a difference at
/// the stated dimension. Independent of the search path.
pub fn validate_certificate(cert: &Certificate) -> Result<(), String> {
    if cert.schema != CERTIFICATE_SCHEMA {
        return Err(format!("unknown schema {:?}", cert.schema));
    }
    for (side, g) in [("left", &cert.left), ("right", &cert.right)] {
        if g.colors.len() != g.vertices {
            return Err(format!("{side}: {} colors for {} vertices", g.colors.len(), g.vertices));
        }
        if g.edges.iter().any(|&(a, b)| a >= b || b >= g.vertices) {
            return Err(format!("{side}: malformed edge list"));
        }
    }
    let (ka, ia) = lift_with_init(&cert.left);
    let (kb, ib) = lift_with_init(&cert.right);
    let (swl, _) = swl_refine_many(&[(&ka, &ia), (&kb, &ib)]);
    if histogram(&swl[0]) != histogram(&swl[1]) {
        return Err("refinement histograms differ: not refinement-blind".into());
    }
    if class_sizes(&swl[0]) != cert.swl_class_sizes {
        return Err("stored refinement class sizes do not match".into());
    }
    if !decolored_wl1_equal(&cert.left, &cert.right) {
        return Err("uncolored graphs are 1-WL distinguishable".into());
    }
    let ga = graph_complex(cert.left.vertices, &cert.left.edges);
    let (wl, _) = wl1_refine_many(&[(&ga, &vec![0u64; cert.left.vertices])]);
    if class_sizes(&wl[0]) != cert.wl1_class_sizes {
        return Err("stored 1-WL class sizes do not match".into());
    }
    let dl = color_filtration_diagrams(&cert.left, cert.filtration);
    let dr = color_filtration_diagrams(&cert.right, cert.filtration);
    if dl != cert.diagrams_left || dr != cert.diagrams_right {
        return Err("stored diagrams do not reproduce".into());
    }
    match first_differing_dim(&dl, &dr) {
        Some(d) if d == cert.differing_dim => Ok(()),
        Some(d) => Err(format!("diagrams differ first at dim {d}, certificate says {}", cert.differing_dim)),
        None => Err("diagrams are identical".into()),
    }
}


#[cfg(test)]
mod refinement_tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cycle(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect()
    }

    #[test]
    fn six_cycle_and_two_triangles_tie_under_wl1() {
        let c6 = graph_complex(6, &cycle(6));
        let tt = graph_complex(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        let init = vec![0u64; 6];
        let (colors, _) = wl1_refine_many(&[(&c6, &init), (&tt, &init)]);
        assert_eq!(histogram(&colors[0]), histogram(&colors[1]));
    }

    #[test]
    fn path_and_triangle_split_under_wl1() {
        let p3 = graph_complex(3, &[(0, 1), (1, 2)]);
        let c3 = graph_complex(3, &[(0, 1), (1, 2), (0, 2)]);
        let init = vec![0u64; 3];
        let (colors, _) = wl1_refine_many(&[(&p3, &init), (&c3, &init)]);
        assert_ne!(histogram(&colors[0]), histogram(&colors[1]));
    }

    #[test]
    fn single_vertex_stabilizes_in_one_round() {
        let k = graph_complex(1, &[]);
        let (_, rounds) = wl1_refine_many(&[(&k, &[7])]);
        assert_eq!(rounds, 1);
    }

    #[test]
    fn lifted_triangles_break_the_wl1_tie_under_swl() {
        let c6 = graph_complex(6, &cycle(6)).clique_lift(2).unwrap();
        let tt = graph_complex(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
            .clique_lift(2)
            .unwrap();
        let ia = vec![0u64; c6.len()];
        let ib = vec![0u64; tt.len()];
        let (colors, _) = swl_refine_many(&[(&c6, &ia), (&tt, &ib)]);
        assert_ne!(histogram(&colors[0]), histogram(&colors[1]));
    }

    #[test]
    fn swl_on_graphs_matches_wl1_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for round in 0..200 {
            let n = rng.gen_range(3..8);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(0.4) {
                        edges.push((a, b));
                    }
                }
            }
            let k = graph_complex(n, &edges);
            let vcols: Vec<u64> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let wl = wl1_refine(&k, &vcols);
            let mut init = vec![0u64; k.len()];
            init[..n].copy_from_slice(&vcols);
            let swl = swl_refine(&k, &init);
            assert_eq!(
                partition_normal_form(&wl),
                partition_normal_form(&swl[..n]),
                "round {round}: vertex partitions diverge"
            );
        }
    }

    #[test]
    fn refinement_terminates_within_simplex_count_and_never_coarsens() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..30 {
            let n = rng.gen_range(3..7);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(0.5) {
                        edges.push((a, b));
                    }
                }
            }
            let k = graph_complex(n, &edges).clique_lift(2).unwrap();
            let init = vec![0u64; k.len()];
            let (colors, rounds) = swl_refine_many(&[(&k, &init)]);
            assert!(rounds <= k.len());
            assert!(!histogram(&colors[0]).is_empty());
        }
    }

    #[test]
    fn vertex_transitive_complex_keeps_one_class_per_dim() {
        let c6 = graph_complex(6, &cycle(6)).clique_lift(2).unwrap();
        let init = vec![0u64; c6.len()];
        let colors = swl_refine(&c6, &init);
        assert_eq!(class_sizes(&colors), vec![6, 6]);
    }

    #[test]
    fn deleting_the_blue_edge_splits_the_graph() {
        let k = graph_complex(2, &[(0, 1)]);
        assert_eq!(color_disconnecting_check(&k, &[5], &[5]), (1, 2));
        assert_eq!(color_disconnecting_check(&k, &[5], &[]), (1, 1));
    }

    #[test]
    fn same_wl1_class_implies_equal_gin_embeddings() {
        use crate::autodiff::{Act, MlpSpec, ParamStore, Tape};
        use crate::tnn::{gnn_layer, GnnKind, GnnLayer};
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut store = ParamStore::new(43);
        let l1 = GnnLayer::new(&mut store, "l1", GnnKind::Gin, MlpSpec::new(vec![2, 4], Act::Tanh));
        let l2 = GnnLayer::new(&mut store, "l2", GnnKind::Gin, MlpSpec::new(vec![4, 3], Act::Tanh));
        for _ in 0..20 {
            let n = rng.gen_range(3..8);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(0.4) {
                        edges.push((a, b));
                    }
                }
            }
            let k = graph_complex(n, &edges);
            let stable = wl1_refine(&k, &vec![0u64; n]);
            let mut t = Tape::new();
            let x: Vec<Vec<_>> = (0..n).map(|_| vec![t.leaf(0.5), t.leaf(-0.25)]).collect();
            let h1 = gnn_layer(&mut t, &store, &l1, &k, &x);
            let h2 = gnn_layer(&mut t, &store, &l2, &k, &h1);
            for a in 0..n {
                for b in a + 1..n {
                    if stable[a] == stable[b] {
                        for (p, q) in h2[a].iter().zip(&h2[b]) {
                            assert!((t.value(*p) - t.value(*q)).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}
