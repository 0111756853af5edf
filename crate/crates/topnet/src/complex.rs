//! Simplicial-complex core: construction, validation, clique lifting, and the
//! adjacency structures used by message passing and color refinement.

use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComplexError {
    #[error("simplex has no vertices")]
    EmptySimplex,
    #[error("simplex contains duplicate vertex ids: {0:?}")]
    DuplicateVertices(Vec<usize>),
    #[error("missing face {face:?} of simplex {simplex:?}")]
    MissingFace { simplex: Vec<usize>, face: Vec<usize> },
    #[error("unknown simplex id {0}")]
    UnknownSimplex(usize),
    #[error("expected a graph (dim <= 1), got dim {0}")]
    NotAGraph(usize),
    #[error("max_dim must be >= 1, got {0}")]
    BadMaxDim(usize),
    #[error("expected {expected} color vectors, got {got}")]
    ColorCount { expected: usize, got: usize },
    #[error("color width mismatch: simplex {id} has width {got}, expected {expected}")]
    ColorWidth { id: usize, got: usize, expected: usize },
    #[error("expected {expected} coordinate vectors, got {got}")]
    CoordCount { expected: usize, got: usize },
    #[error("coordinate width mismatch: vertex {id} has width {got}, expected {expected}")]
    CoordWidth { id: usize, got: usize, expected: usize },
}

/// A single simplex: a strictly ascending, non-empty list of vertex ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Simplex {
    vertices: Vec<usize>,
}

impl Simplex {
    /// Builds a simplex from vertex ids in any order; duplicates are rejected.
    pub fn new(mut vertices: Vec<usize>) -> Result<Self, ComplexError> {
        if vertices.is_empty() {
            return Err(ComplexError::EmptySimplex);
        }
        vertices.sort_unstable();
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(ComplexError::DuplicateVertices(vertices));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }

    /// Codimension-1 faces, in ascending vertex-list order.
    pub fn facets(&self) -> Vec<Simplex> {
        if self.dim() == 0 {
            return Vec::new();
        }
        (0..self.vertices.len())
            .map(|skip| {
                let vs = self
                    .vertices
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, v)| *v)
                    .collect();
                Simplex { vertices: vs }
            })
            .collect()
    }

    /// All faces of dimension `d` (subsets with d+1 vertices).
    pub fn faces_of_dim(&self, d: usize) -> Vec<Simplex> {
        if d > self.dim() {
            return Vec::new();
        }
        subsets_of_size(&self.vertices, d + 1)
            .into_iter()
            .map(|vertices| Simplex { vertices })
            .collect()
    }

    /// Every non-empty proper subset.
    pub fn proper_faces(&self) -> Vec<Simplex> {
        (0..self.dim()).flat_map(|d| self.faces_of_dim(d)).collect()
    }
}

/// All size-`k` subsets of a sorted slice, in lexicographic order.
fn subsets_of_size(sorted: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = sorted.len();
    if k == 0 || k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| sorted[i]).collect());
        // advance the combination
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// A finite simplicial complex with dense, deterministic simplex ids.
///
/// Ids are assigned by sorting simplices by (dimension, vertex list), so faces
/// always receive smaller ids than their co-faces and the 0-simplices occupy
/// ids `0..vertex_count` in ascending vertex order. Construction tolerates
/// missing faces so that [`SimplicialComplex::validate`] can report them.
#[derive(Debug, Clone)]
pub struct SimplicialComplex {
    simplices: Vec<Simplex>,
    index: HashMap<Vec<usize>, usize>,
    dim: usize,
    stratum_bounds: Vec<usize>, // len dim+2; stratum d is stratum_bounds[d]..stratum_bounds[d+1]
    boundary: Vec<Vec<usize>>,
    coboundary: Vec<Vec<usize>>,
    lower: Vec<Vec<usize>>,
    upper: Vec<Vec<(usize, usize)>>, // (equal-dim neighbor, shared co-face)
}

impl SimplicialComplex {
    /// Builds a complex from simplices, deduplicating repeats.
    pub fn from_simplices(simplices: Vec<Simplex>) -> Self {
        let mut uniq: Vec<Simplex> = Vec::with_capacity(simplices.len());
        let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(simplices.len());
        for s in simplices {
            if seen.insert(s.vertices.clone()) {
                uniq.push(s);
            }
        }
        uniq.sort_by(|a, b| (a.dim(), &a.vertices).cmp(&(b.dim(), &b.vertices)));

        let dim = uniq.iter().map(|s| s.dim()).max().unwrap_or(0);
        let mut index = HashMap::with_capacity(uniq.len());
        for (id, s) in uniq.iter().enumerate() {
            index.insert(s.vertices.clone(), id);
        }
        let mut stratum_bounds = vec![0usize; dim + 2];
        for s in &uniq {
            stratum_bounds[s.dim() + 1] += 1;
        }
        for d in 0..dim + 1 {
            stratum_bounds[d + 1] += stratum_bounds[d];
        }

        let n = uniq.len();
        let mut boundary = vec![Vec::new(); n];
        let mut coboundary = vec![Vec::new(); n];
        for (id, s) in uniq.iter().enumerate() {
            for facet in s.facets() {
                if let Some(&fid) = index.get(facet.vertices()) {
                    boundary[id].push(fid);
                    coboundary[fid].push(id);
                }
            }
            boundary[id].sort_unstable();
        }
        coboundary.iter_mut().for_each(|v| v.sort_unstable());

        // Upper adjacency: two equal-dim simplices sharing a co-face. The
        // witnessing co-face is unique: it must equal their vertex union.
        let mut upper: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for id in 0..n {
            let mut seen_nb: HashSet<usize> = HashSet::new();
            for &cof in &coboundary[id] {
                for &sib in &boundary[cof] {
                    if sib != id && seen_nb.insert(sib) {
                        upper[id].push((sib, cof));
                    }
                }
            }
            upper[id].sort_unstable();
        }

        // Lower adjacency: two equal-dim simplices sharing a codim-1 face.
        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); n];
        for id in 0..n {
            let mut seen_nb: HashSet<usize> = HashSet::new();
            for &face in &boundary[id] {
                for &sib in &coboundary[face] {
                    if sib != id && seen_nb.insert(sib) {
                        lower[id].push(sib);
                    }
                }
            }
            lower[id].sort_unstable();
        }

        Self {
            simplices: uniq,
            index,
            dim,
            stratum_bounds,
            boundary,
            coboundary,
            lower,
            upper,
        }
    }

    /// Builds the face closure of the given simplices.
    pub fn closed_from(simplices: Vec<Simplex>) -> Self {
        let mut all: Vec<Simplex> = Vec::new();
        for s in simplices {
            all.extend(s.proper_faces());
            all.push(s);
        }
        Self::from_simplices(all)
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    /// Maximum simplex dimension (0 for an empty complex).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.stratum_bounds[1]
    }

    pub fn simplex(&self, id: usize) -> &Simplex {
        &self.simplices[id]
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn id_of(&self, vertices: &[usize]) -> Option<usize> {
        self.index.get(vertices).copied()
    }

    /// Ids of the dim-`d` simplices: the contiguous range of their stratum.
    pub fn stratum(&self, d: usize) -> std::ops::Range<usize> {
        if d > self.dim {
            return 0..0;
        }
        self.stratum_bounds[d]..self.stratum_bounds[d + 1]
    }

    fn check_id(&self, id: usize) -> Result<(), ComplexError> {
        if id < self.simplices.len() {
            Ok(())
        } else {
            Err(ComplexError::UnknownSimplex(id))
        }
    }

    /// Codimension-1 faces of `id` present in the complex.
    pub fn boundary_neighbors(&self, id: usize) -> Result<&[usize], ComplexError> {
        self.check_id(id)?;
        Ok(&self.boundary[id])
    }

    /// Codimension-1 co-faces of `id`.
    pub fn coboundary_neighbors(&self, id: usize) -> Result<&[usize], ComplexError> {
        self.check_id(id)?;
        Ok(&self.coboundary[id])
    }

    /// Equal-dim simplices sharing a codim-1 face with `id`.
    pub fn lower_adjacent(&self, id: usize) -> Result<&[usize], ComplexError> {
        self.check_id(id)?;
        Ok(&self.lower[id])
    }

    /// Equal-dim simplices sharing a co-face with `id`; for vertices this is
    /// graph adjacency.
    pub fn upper_adjacent(&self, id: usize) -> Result<Vec<usize>, ComplexError> {
        self.check_id(id)?;
        Ok(self.upper[id].iter().map(|&(nb, _)| nb).collect())
    }

    /// Upper adjacency along with the witnessing co-face of each neighbor.
    pub fn upper_adjacent_with_cofaces(&self, id: usize) -> Result<&[(usize, usize)], ComplexError> {
        self.check_id(id)?;
        Ok(&self.upper[id])
    }

    /// Checks face closure; reports the first offending (simplex, face) in id
    /// order. Vertex-list sortedness holds by construction of [`Simplex`].
    pub fn validate(&self) -> Result<(), ComplexError> {
        for s in &self.simplices {
            for facet in s.facets() {
                if !self.index.contains_key(facet.vertices()) {
                    return Err(ComplexError::MissingFace {
                        simplex: s.vertices.clone(),
                        face: facet.vertices.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// The subcomplex of simplices with dimension at most `d`. Canonical ids
    /// order by dimension first, so the skeleton's ids coincide with this
    /// complex's first `stratum(d).end` ids.
    pub fn skeleton(&self, d: usize) -> SimplicialComplex {
        if self.is_empty() || d >= self.dim {
            return self.clone();
        }
        let simplices: Vec<Simplex> = (0..self.stratum(d).end)
            .map(|id| Simplex::new(self.simplex(id).vertices().to_vec()).unwrap())
            .collect();
        SimplicialComplex::closed_from(simplices)
    }

    /// Lifts a graph to its clique complex, keeping cliques on at most
    /// `max_dim + 1` vertices.
    pub fn clique_lift(&self, max_dim: usize) -> Result<SimplicialComplex, ComplexError> {
        self.validate()?;
        if self.dim > 1 {
            return Err(ComplexError::NotAGraph(self.dim));
        }
        if max_dim < 1 {
            return Err(ComplexError::BadMaxDim(max_dim));
        }
        let adj: HashMap<usize, HashSet<usize>> = {
            let mut adj: HashMap<usize, HashSet<usize>> = HashMap::new();
            for id in self.stratum(0) {
                adj.entry(self.simplices[id].vertices[0]).or_default();
            }
            for id in self.stratum(1) {
                let vs = &self.simplices[id].vertices;
                adj.entry(vs[0]).or_default().insert(vs[1]);
                adj.entry(vs[1]).or_default().insert(vs[0]);
            }
            adj
        };

        let mut all: Vec<Simplex> = Vec::new();
        let mut frontier: Vec<Vec<usize>> = Vec::new();
        for id in self.stratum(0) {
            let vs = self.simplices[id].vertices.clone();
            all.push(Simplex { vertices: vs.clone() });
            frontier.push(vs);
        }
        for _size in 2..=max_dim + 1 {
            let mut next: Vec<Vec<usize>> = Vec::new();
            for clique in &frontier {
                let last = *clique.last().unwrap();
                for &cand in adj[&last].iter() {
                    if cand <= last {
                        continue;
                    }
                    if clique.iter().all(|v| adj[v].contains(&cand)) {
                        let mut ext = clique.clone();
                        ext.push(cand);
                        next.push(ext);
                    }
                }
            }
            for vs in &next {
                all.push(Simplex { vertices: vs.clone() });
            }
            frontier = next;
        }
        Ok(SimplicialComplex::from_simplices(all))
    }

    /// Rebuilds the complex under a vertex relabeling.
    pub fn relabel_vertices(&self, map: impl Fn(usize) -> usize) -> Result<SimplicialComplex, ComplexError> {
        let mut out = Vec::with_capacity(self.simplices.len());
        for s in &self.simplices {
            out.push(Simplex::new(s.vertices.iter().map(|&v| map(v)).collect())?);
        }
        Ok(SimplicialComplex::from_simplices(out))
    }
}

/// A complex with one color vector per simplex, all of equal width.
#[derive(Debug, Clone)]
pub struct AttributedComplex {
    pub complex: SimplicialComplex,
    colors: Vec<Vec<f64>>,
    width: usize,
}

impl AttributedComplex {
    pub fn new(complex: SimplicialComplex, colors: Vec<Vec<f64>>) -> Result<Self, ComplexError> {
        if colors.len() != complex.len() {
            return Err(ComplexError::ColorCount {
                expected: complex.len(),
                got: colors.len(),
            });
        }
        let width = colors.first().map_or(0, |c| c.len());
        for (id, c) in colors.iter().enumerate() {
            if c.len() != width {
                return Err(ComplexError::ColorWidth {
                    id,
                    got: c.len(),
                    expected: width,
                });
            }
        }
        Ok(Self { complex, colors, width })
    }

    /// Colors vertices as given and every higher simplex with the elementwise
    /// sum of its vertices' colors (a fixed permutation-invariant synthesis).
    pub fn from_vertex_colors(
        complex: SimplicialComplex,
        vertex_colors: Vec<Vec<f64>>,
    ) -> Result<Self, ComplexError> {
        if vertex_colors.len() != complex.vertex_count() {
            return Err(ComplexError::ColorCount {
                expected: complex.vertex_count(),
                got: vertex_colors.len(),
            });
        }
        let width = vertex_colors.first().map_or(0, |c| c.len());
        let mut colors = Vec::with_capacity(complex.len());
        for id in 0..complex.len() {
            let s = complex.simplex(id);
            if s.dim() == 0 {
                colors.push(vertex_colors[id].clone());
            } else {
                let mut acc = vec![0.0; width];
                for &v in s.vertices() {
                    let vid = complex.id_of(&[v]).expect("vertex simplex present");
                    for (a, b) in acc.iter_mut().zip(&vertex_colors[vid]) {
                        *a += b;
                    }
                }
                colors.push(acc);
            }
        }
        Self::new(complex, colors)
    }

    pub fn color(&self, id: usize) -> &[f64] {
        &self.colors[id]
    }

    pub fn colors(&self) -> &[Vec<f64>] {
        &self.colors
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// An attributed complex whose vertices carry coordinates in a common ambient
/// space. Coordinates are indexed by 0-simplex id (`0..vertex_count`).
#[derive(Debug, Clone)]
pub struct GeometricComplex {
    pub attributed: AttributedComplex,
    coords: Vec<Vec<f64>>,
    ambient: usize,
}

impl GeometricComplex {
    pub fn new(attributed: AttributedComplex, coords: Vec<Vec<f64>>) -> Result<Self, ComplexError> {
        let nv = attributed.complex.vertex_count();
        if coords.len() != nv {
            return Err(ComplexError::CoordCount {
                expected: nv,
                got: coords.len(),
            });
        }
        let ambient = coords.first().map_or(0, |c| c.len());
        for (id, c) in coords.iter().enumerate() {
            if c.len() != ambient {
                return Err(ComplexError::CoordWidth {
                    id,
                    got: c.len(),
                    expected: ambient,
                });
            }
        }
        Ok(Self { attributed, coords, ambient })
    }

    pub fn coord(&self, vertex_id: usize) -> &[f64] {
        &self.coords[vertex_id]
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }
}

/// Convenience graph constructors used across tests and generators.
pub fn graph_complex(n_vertices: usize, edges: &[(usize, usize)]) -> SimplicialComplex {
    let mut simplices: Vec<Simplex> = (0..n_vertices)
        .map(|v| Simplex::new(vec![v]).unwrap())
        .collect();
    for &(a, b) in edges {
        simplices.push(Simplex::new(vec![a, b]).unwrap());
    }
    SimplicialComplex::from_simplices(simplices)
}

/// Cycle graph on `n >= 3` vertices, ids offset by `base`.
pub fn cycle_edges(n: usize, base: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (base + i, base + (i + 1) % n)).collect()
}
