//! Diagram vectorizers: the generic weighted-transform-aggregate form,
//! per-vertex MLP embeddings with a set-pooled dim-1 summary, and DeepSets
//! over augmented vertex tuples.

use crate::autodiff::{DeepSet, DeepSetSpec, Mlp, MlpSpec, ParamStore, Tape, Val};

/// Point weight: constant 1, the pair's persistence, or a learned scalar.
#[derive(Debug, Clone)]
pub enum Omega {
    One,
    /// death - birth; diagonal points contribute nothing.
    Persistence,
    Learned(Mlp),
}

#[derive(Debug, Clone)]
pub enum OmegaSpec {
    One,
    Persistence,
    Mlp(MlpSpec),
}

/// Pointwise transform applied before aggregation.
#[derive(Debug, Clone)]
pub enum Phi {
    Identity(usize),
    Mlp(Mlp),
}

#[derive(Debug, Clone)]
pub enum PhiSpec {
    Identity(usize),
    Mlp(MlpSpec),
}

impl Phi {
    pub fn output_width(&self) -> usize {
        match self {
            Phi::Identity(w) => *w,
            Phi::Mlp(m) => m.spec.output_width(),
        }
    }

    fn forward(&self, t: &mut Tape, store: &ParamStore, point: &[Val]) -> Vec<Val> {
        match self {
            Phi::Identity(w) => {
                assert_eq!(point.len(), *w);
                point.to_vec()
            }
            Phi::Mlp(m) => m.forward(t, store, point),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agg {
    Sum,
    Mean,
    Max,
}

/// Aggregate of weighted transformed points: Agg({omega(p) * phi(p)}).
#[derive(Debug, Clone)]
pub struct PersLay {
    pub omega: Omega,
    pub phi: Phi,
    pub agg: Agg,
}

#[derive(Debug, Clone)]
pub struct PersLaySpec {
    pub omega: OmegaSpec,
    pub phi: PhiSpec,
    pub agg: Agg,
}

impl PersLaySpec {
    /// Default used across models: identity weight, point MLP in -> 16 -> 16,
    /// sum aggregation.
    pub fn default_for_width(point_width: usize) -> Self {
        Self {
            omega: OmegaSpec::One,
            phi: PhiSpec::Mlp(MlpSpec::new(
                vec![point_width, 16, 16],
                crate::autodiff::Act::Relu,
            )),
            agg: Agg::Sum,
        }
    }
}

impl PersLay {
    pub fn new(store: &mut ParamStore, name: &str, spec: &PersLaySpec) -> Self {
        let omega = match &spec.omega {
            OmegaSpec::One => Omega::One,
            OmegaSpec::Persistence => Omega::Persistence,
            OmegaSpec::Mlp(m) => {
                assert_eq!(m.output_width(), 1, "weight net is scalar");
                Omega::Learned(Mlp::new(store, &format!("{name}/omega"), m.clone()))
            }
        };
        let phi = match &spec.phi {
            PhiSpec::Identity(w) => Phi::Identity(*w),
            PhiSpec::Mlp(m) => Phi::Mlp(Mlp::new(store, &format!("{name}/phi"), m.clone())),
        };
        Self { omega, phi, agg: spec.agg }
    }

    pub fn output_width(&self) -> usize {
        self.phi.output_width()
    }
}

/// Weighted aggregation of diagram points. Empty diagrams map to the zero
/// vector for every Agg kind.
pub fn perslay_vectorize(
    t: &mut Tape,
    store: &ParamStore,
    layer: &PersLay,
    points: &[Vec<Val>],
) -> Vec<Val> {
    let width = layer.output_width();
    if points.is_empty() {
        let zero = t.leaf(0.0);
        return vec![zero; width];
    }
    let mut transformed: Vec<Vec<Val>> = Vec::with_capacity(points.len());
    for p in points {
        let w = match &layer.omega {
            Omega::One => None,
            Omega::Persistence => Some(t.sub(p[1], p[0])),
            Omega::Learned(m) => Some(m.forward(t, store, p)[0]),
        };
        let y = layer.phi.forward(t, store, p);
        let y = match w {
            Some(w) => y.iter().map(|&c| t.mul(c, w)).collect(),
            None => y,
        };
        transformed.push(y);
    }
    match layer.agg {
        Agg::Sum => crate::autodiff::vec_sum(t, &transformed, width),
        Agg::Mean => {
            let s = crate::autodiff::vec_sum(t, &transformed, width);
            s.iter().map(|&c| t.scale(c, 1.0 / points.len() as f64)).collect()
        }
        Agg::Max => (0..width)
            .map(|c| {
                let col: Vec<Val> = transformed.iter().map(|y| y[c]).collect();
                t.max_fold(&col).expect("nonempty")
            })
            .collect(),
    }
}

/// Per-vertex embedding of the dim-0 pair each vertex generated, plus one
/// set-pooled vector for the dim-1 pairs.
pub struct ToglVectorizer {
    pub psi: Phi,
    pub d1: DeepSet,
}

impl ToglVectorizer {
    pub fn new(store: &mut ParamStore, name: &str, psi: PhiSpec, d1: DeepSetSpec) -> Self {
        let psi = match psi {
            PhiSpec::Identity(w) => Phi::Identity(w),
            PhiSpec::Mlp(m) => Phi::Mlp(Mlp::new(store, &format!("{name}/psi"), m)),
        };
        Self { psi, d1: DeepSet::new(store, &format!("{name}/d1"), d1) }
    }
}

/// `d0_by_vertex[v]` is vertex v's (birth, death) on the tape; totality is
/// guaranteed because zero-persistence pairs are kept.
pub fn togl_vectorize(
    t: &mut Tape,
    store: &ParamStore,
    v: &ToglVectorizer,
    d0_by_vertex: &[[Val; 2]],
    d1_points: &[Vec<Val>],
) -> (Vec<Vec<Val>>, Vec<Val>) {
    let per_vertex = d0_by_vertex
        .iter()
        .map(|pair| v.psi.forward(t, store, pair))
        .collect();
    let graph = v.d1.forward(t, store, d1_points);
    (per_vertex, graph)
}

/// DeepSet over the per-vertex 4-tuples, DeepSet over dim-1 pairs,
/// concatenated dim-ascending.
pub struct RephineVectorizer {
    pub tuples: DeepSet,
    pub d1: DeepSet,
}

impl RephineVectorizer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        tuples: DeepSetSpec,
        d1: DeepSetSpec,
    ) -> Self {
        Self {
            tuples: DeepSet::new(store, &format!("{name}/tuples"), tuples),
            d1: DeepSet::new(store, &format!("{name}/d1"), d1),
        }
    }

    pub fn output_width(&self) -> usize {
        self.tuples.output_width() + self.d1.output_width()
    }
}

pub fn rephine_vectorize(
    t: &mut Tape,
    store: &ParamStore,
    v: &RephineVectorizer,
    tuples: &[Vec<Val>],
    d1_points: &[Vec<Val>],
) -> Vec<Val> {
    let mut out = v.tuples.forward(t, store, tuples);
    out.extend(v.d1.forward(t, store, d1_points));
    out
}
