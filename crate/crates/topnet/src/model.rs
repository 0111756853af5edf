//! Full models: layers interleaving message passing with differentiable
//! persistence, pooled readouts with a classifier head, and fixed-step ODE
//! variants whose Euler discretization is exactly a residual network.

use crate::autodiff::{Act, DeepSetSpec, Mlp, MlpSpec, ParamStore, Pool, Tape, Val};
use crate::complex::SimplicialComplex;
use crate::filtration::{rank_on_tape, FixedFilter, LearnedFilter};
use crate::persistence::{diff_pairs, diff_rephine, pd_matrix_reduction, rephine_diagram};
use crate::tnn::{
    empsn_layer, gnn_layer, tnn_layer, EmpsnLayer, EmpsnLayerSpec, GnnKind, GnnLayer,
    NeighborhoodSet, TnnLayer, TnnLayerSpec,
};
use crate::vectorize::{
    perslay_vectorize, rephine_vectorize, togl_vectorize, PersLay, PersLaySpec, PhiSpec,
    RephineVectorizer, ToglVectorizer,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ModelError {
    #[error("non-finite state at integration step {step}")]
    NonFinite { step: usize },
    #[error("feature width {got} does not match configured input width {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("geometric model needs vertex coordinates")]
    MissingCoords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Features pass through untouched; persistence does all the work.
    Identity,
    /// Vertex-only message passing on the 1-skeleton.
    Gin,
    /// Message passing across all strata.
    Tnn,
    /// Geometric message passing with coordinate updates.
    Empsn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    /// Positive MLP of the current features.
    Learned,
    /// Mean vertex degree, parameter-free.
    Degree,
}

/// Topology head: which diagrams a layer computes and how they re-enter the
/// network. Keeping the aggregation style inside the same variant as the
/// diagram style makes inconsistent pairings unrepresentable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HeadSpec {
    /// No topology: plain message passing.
    None,
    /// Per-vertex dim-0 pairs added onto vertex features, dim-1 pairs pooled.
    Togl { n_filtrations: usize, filter_hidden: usize, ph_width: usize },
    /// Diagrams pooled per dimension into readout vectors; features untouched.
    Perslay {
        n_filtrations: usize,
        filter_hidden: usize,
        ph_width: usize,
        /// Highest homology dimension vectorized.
        ph_dims: usize,
        filter: FilterKind,
    },
    /// Per-vertex augmented tuples plus dim-1 pairs, pooled; features untouched.
    Rephine { n_filtrations: usize, filter_hidden: usize, ph_width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DepthSpec {
    /// Stacked layers with independent parameters.
    Discrete { layers: usize },
    /// One shared field integrated over [0, 1] in `steps` fixed steps.
    Continuous { integrator: Integrator, steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopNetSpec {
    pub input_width: usize,
    pub feature_width: usize,
    pub n_classes: usize,
    /// Strata 0..=max_dim are modeled; lower-dimensional inputs pool zeros
    /// for the missing strata.
    pub max_dim: usize,
    pub backbone: BackboneKind,
    pub head: HeadSpec,
    pub depth: DepthSpec,
    pub pool: PoolKind,
    pub msg_hidden: usize,
    pub update_hidden: usize,
}

impl TopNetSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.feature_width == 0 || self.input_width == 0 {
            return Err("zero widths".into());
        }
        if self.n_classes == 0 {
            return Err("need at least one output".into());
        }
        match self.depth {
            DepthSpec::Continuous { steps: 0, .. } => {
                return Err("integration needs at least one step".into())
            }
            _ => {}
        }
        if let HeadSpec::Perslay { ph_dims, .. } = self.head {
            if ph_dims > self.max_dim {
                return Err("ph_dims exceeds modeled dimension".into());
            }
        }
        Ok(())
    }

    fn layer_count(&self) -> usize {
        match self.depth {
            DepthSpec::Discrete { layers } => layers,
            DepthSpec::Continuous { .. } => 1,
        }
    }

    /// Widths of the pooled topological vectors one layer emits.
    fn m_widths(&self) -> Vec<usize> {
        match &self.head {
            HeadSpec::None => vec![],
            HeadSpec::Togl { ph_width, .. } => vec![*ph_width],
            HeadSpec::Perslay { ph_width, ph_dims, .. } => vec![*ph_width; ph_dims + 1],
            HeadSpec::Rephine { ph_width, .. } => vec![2 * ph_width],
        }
    }

    fn readout_width(&self) -> usize {
        let h = (self.max_dim + 1) * self.feature_width;
        let m: usize = self.m_widths().iter().sum();
        h + self.layer_count() * m
    }
}

pub enum BackboneNets {
    Identity,
    Gin(GnnLayer),
    Tnn(TnnLayer),
    Empsn(EmpsnLayer),
}

pub enum HeadNets {
    None,
    Togl { filters: Vec<LearnedFilter>, v: ToglVectorizer },
    Perslay { filters: Vec<LearnedFilter>, layers: Vec<PersLay> },
    Rephine { fv: Vec<LearnedFilter>, fe: Vec<LearnedFilter>, v: RephineVectorizer },
}

pub struct LayerNets {
    pub backbone: BackboneNets,
    pub head: HeadNets,
}

pub struct TopNet {
    pub spec: TopNetSpec,
    pub embed: Mlp,
    pub layers: Vec<LayerNets>,
    pub classifier: Mlp,
}

fn scalar_filter(store: &mut ParamStore, name: &str, d: usize, hidden: usize) -> LearnedFilter {
    LearnedFilter::new(store, name, MlpSpec::new(vec![d, hidden, 1], Act::Tanh))
}

fn set_spec(point: usize, hidden: usize, out: usize) -> DeepSetSpec {
    DeepSetSpec {
        inner: MlpSpec::new(vec![point, hidden, out], Act::Relu),
        pool: Pool::Sum,
        outer: MlpSpec::new(vec![out, out], Act::Relu),
    }
}

impl TopNet {
    pub fn new(store: &mut ParamStore, spec: TopNetSpec) -> Self {
        spec.validate().expect("valid spec");
        let d = spec.feature_width;
        let embed = Mlp::new(store, "embed", MlpSpec::new(vec![spec.input_width, d], Act::Tanh));
        let mut layers = Vec::new();
        for li in 0..spec.layer_count() {
            let name = format!("layer{li}");
            let backbone = match spec.backbone {
                BackboneKind::Identity => BackboneNets::Identity,
                BackboneKind::Gin => BackboneNets::Gin(GnnLayer::new(
                    store,
                    &format!("{name}/gnn"),
                    GnnKind::Gin,
                    MlpSpec::new(vec![d, spec.update_hidden, d], Act::Tanh),
                )),
                BackboneKind::Tnn => BackboneNets::Tnn(TnnLayer::new(
                    store,
                    &format!("{name}/tnn"),
                    TnnLayerSpec {
                        neighborhoods: NeighborhoodSet::standard(),
                        msg: MlpSpec::new(vec![2 * d, spec.msg_hidden], Act::Tanh),
                        update: MlpSpec::new(
                            vec![d + spec.msg_hidden, spec.update_hidden, d],
                            Act::Tanh,
                        ),
                        max_dim: spec.max_dim,
                    },
                )),
                BackboneKind::Empsn => BackboneNets::Empsn(EmpsnLayer::new(
                    store,
                    &format!("{name}/empsn"),
                    EmpsnLayerSpec {
                        tnn: TnnLayerSpec {
                            neighborhoods: NeighborhoodSet::standard(),
                            msg: MlpSpec::new(vec![2 * d + 2, spec.msg_hidden], Act::Tanh),
                            update: MlpSpec::new(
                                vec![d + spec.msg_hidden, spec.update_hidden, d],
                                Act::Tanh,
                            ),
                            max_dim: spec.max_dim,
                        },
                        phi_z: MlpSpec::new(vec![spec.msg_hidden, spec.msg_hidden, 1], Act::Tanh),
                    },
                )),
            };
            let head = match &spec.head {
                HeadSpec::None => HeadNets::None,
                HeadSpec::Togl { n_filtrations, filter_hidden, ph_width } => HeadNets::Togl {
                    filters: (0..*n_filtrations)
                        .map(|f| {
                            scalar_filter(store, &format!("{name}/filt{f}"), d, *filter_hidden)
                        })
                        .collect(),
                    v: ToglVectorizer::new(
                        store,
                        &format!("{name}/togl"),
                        PhiSpec::Mlp(MlpSpec::new(vec![2, *filter_hidden, d], Act::Relu)),
                        set_spec(2, *filter_hidden, *ph_width),
                    ),
                },
                HeadSpec::Perslay { n_filtrations, filter_hidden, ph_width, ph_dims, filter } => {
                    let filters = match filter {
                        FilterKind::Learned => (0..*n_filtrations)
                            .map(|f| {
                                scalar_filter(store, &format!("{name}/filt{f}"), d, *filter_hidden)
                            })
                            .collect(),
                        FilterKind::Degree => Vec::new(),
                    };
                    HeadNets::Perslay {
                        filters,
                        layers: (0..=*ph_dims)
                            .map(|i| {
                                PersLay::new(
                                    store,
                                    &format!("{name}/perslay/d{i}"),
                                    &PersLaySpec {
                                        omega: crate::vectorize::OmegaSpec::One,
                                        phi: PhiSpec::Mlp(MlpSpec::new(
                                            vec![2, *filter_hidden, *ph_width],
                                            Act::Relu,
                                        )),
                                        agg: crate::vectorize::Agg::Sum,
                                    },
                                )
                            })
                            .collect(),
                    }
                }
                HeadSpec::Rephine { n_filtrations, filter_hidden, ph_width } => HeadNets::Rephine {
                    fv: (0..*n_filtrations)
                        .map(|f| scalar_filter(store, &format!("{name}/fv{f}"), d, *filter_hidden))
                        .collect(),
                    fe: (0..*n_filtrations)
                        .map(|f| scalar_filter(store, &format!("{name}/fe{f}"), d, *filter_hidden))
                        .collect(),
                    v: RephineVectorizer::new(
                        store,
                        &format!("{name}/rephine"),
                        set_spec(4, *filter_hidden, *ph_width),
                        set_spec(2, *filter_hidden, *ph_width),
                    ),
                },
            };
            layers.push(LayerNets { backbone, head });
        }
        let classifier = Mlp::new(
            store,
            "classifier",
            MlpSpec::new(vec![spec.readout_width(), d, spec.n_classes], Act::Relu),
        );
        Self { spec, embed, layers, classifier }
    }
}

fn add_vecs(t: &mut Tape, a: &[Val], b: &[Val]) -> Vec<Val> {
    a.iter().zip(b).map(|(&x, &y)| t.add(x, y)).collect()
}

/// The 1-skeleton shares its first simplex ids with the full complex, so
/// features indexed by id carry over unchanged.
fn one_skeleton(k: &SimplicialComplex) -> SimplicialComplex {
    k.skeleton(1)
}

/// Sum of per-filtration vectorizer outputs. One shared vectorizer across
/// filtrations keeps widths independent of the filtration count.
fn accumulate(t: &mut Tape, acc: &mut Option<Vec<Val>>, part: Vec<Val>) {
    *acc = Some(match acc.take() {
        None => part,
        Some(prev) => add_vecs(t, &prev, &part),
    });
}

/// Diagrams and their vectorizations for one layer, computed from the layer
/// input. Returns optional per-vertex feature bumps (the only head that
/// touches features) and the pooled topological vectors.
pub fn head_forward(
    t: &mut Tape,
    store: &ParamStore,
    head: &HeadNets,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
) -> (Option<Vec<Vec<Val>>>, Vec<Vec<Val>>) {
    let nv = k.vertex_count();
    match head {
        HeadNets::None => (None, vec![]),
        HeadNets::Togl { filters, v } => {
            let mut r_acc: Vec<Option<Vec<Val>>> = vec![None; nv];
            let mut m_acc: Option<Vec<Val>> = None;
            for filter in filters {
                let mut face_vals = HashMap::new();
                for vid in 0..nv {
                    face_vals.insert(vid, filter.eval(t, store, &x[vid]));
                }
                let (filt, rank_vals) = rank_on_tape(t, k, 0, &face_vals).expect("vertex ranks");
                let pd = pd_matrix_reduction(k, &filt, 1);
                let diffs = diff_pairs(t, k, &filt, &pd, &rank_vals);
                let idx = pd.vertex_pair_indices(nv);
                let d0: Vec<[Val; 2]> =
                    idx.iter().map(|&i| [diffs[i].birth, diffs[i].death]).collect();
                let d1: Vec<Vec<Val>> = diffs
                    .iter()
                    .filter(|p| p.dim == 1)
                    .map(|p| vec![p.birth, p.death])
                    .collect();
                let (r, m1) = togl_vectorize(t, store, v, &d0, &d1);
                for (vi, rv) in r.into_iter().enumerate() {
                    accumulate(t, &mut r_acc[vi], rv);
                }
                accumulate(t, &mut m_acc, m1);
            }
            (
                Some(r_acc.into_iter().map(|r| r.unwrap()).collect()),
                vec![m_acc.unwrap()],
            )
        }
        HeadNets::Perslay { filters, layers } => {
            let mut m_acc: Vec<Option<Vec<Val>>> = vec![None; layers.len()];
            let runs: usize = filters.len().max(1);
            for f in 0..runs {
                let mut face_vals = HashMap::new();
                for vid in 0..nv {
                    let val = match filters.get(f) {
                        Some(filter) => filter.eval(t, store, &x[vid]),
                        None => t.leaf(FixedFilter::Degree.eval(k, vid, &[])),
                    };
                    face_vals.insert(vid, val);
                }
                let (filt, rank_vals) = rank_on_tape(t, k, 0, &face_vals).expect("vertex ranks");
                let pd = pd_matrix_reduction(k, &filt, layers.len() - 1);
                let diffs = diff_pairs(t, k, &filt, &pd, &rank_vals);
                for (dim, layer) in layers.iter().enumerate() {
                    let points: Vec<Vec<Val>> = diffs
                        .iter()
                        .filter(|p| p.dim == dim)
                        .map(|p| vec![p.birth, p.death])
                        .collect();
                    let out = perslay_vectorize(t, store, layer, &points);
                    accumulate(t, &mut m_acc[dim], out);
                }
            }
            (None, m_acc.into_iter().map(|m| m.unwrap()).collect())
        }
        HeadNets::Rephine { fv, fe, v } => {
            let skel = one_skeleton(k);
            let n_edges = skel.stratum(1).len();
            let mut m_acc: Option<Vec<Val>> = None;
            for (filter_v, filter_e) in fv.iter().zip(fe) {
                let vertex_vals: Vec<Val> =
                    (0..nv).map(|vid| filter_v.eval(t, store, &x[vid])).collect();
                let estart = skel.stratum(1).start;
                let edge_vals: Vec<Val> = (0..n_edges)
                    .map(|e| filter_e.eval(t, store, &x[estart + e]))
                    .collect();
                let f_v: Vec<f64> = vertex_vals.iter().map(|&v| t.value(v)).collect();
                let f_e: Vec<f64> = edge_vals.iter().map(|&v| t.value(v)).collect();
                let rd = rephine_diagram(&skel, &f_v, &f_e).expect("skeleton is a graph");
                let dr = diff_rephine(t, &skel, &rd, &vertex_vals, &edge_vals);
                let tuples: Vec<Vec<Val>> = dr.tuples.iter().map(|tp| tp.to_vec()).collect();
                let d1: Vec<Vec<Val>> =
                    dr.dim1.iter().map(|p| vec![p.birth, p.death]).collect();
                let out = rephine_vectorize(t, store, v, &tuples, &d1);
                accumulate(t, &mut m_acc, out);
            }
            (None, vec![m_acc.unwrap()])
        }
    }
}

pub fn backbone_forward(
    t: &mut Tape,
    store: &ParamStore,
    backbone: &BackboneNets,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
    z: Option<&[Vec<Val>]>,
) -> (Vec<Vec<Val>>, Option<Vec<Vec<Val>>>) {
    match backbone {
        BackboneNets::Identity => (x.to_vec(), z.map(|z| z.to_vec())),
        BackboneNets::Gin(layer) => {
            let nv = k.vertex_count();
            let refined = gnn_layer(t, store, layer, k, &x[..nv]);
            let mut out = x.to_vec();
            out[..nv].clone_from_slice(&refined);
            (out, z.map(|z| z.to_vec()))
        }
        BackboneNets::Tnn(layer) => (tnn_layer(t, store, layer, k, x), z.map(|z| z.to_vec())),
        BackboneNets::Empsn(layer) => {
            let z = z.expect("geometric backbone needs coordinates");
            let (fx, fz) = empsn_layer(t, store, layer, k, x, z);
            (fx, Some(fz))
        }
    }
}

/// One full layer: diagrams from the input features, message passing, then
/// the head's feature routing. Returns refined features, refined coordinates
/// when geometric, and the pooled topological vectors.
pub fn topnet_layer(
    t: &mut Tape,
    store: &ParamStore,
    model: &TopNet,
    li: usize,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
    z: Option<&[Vec<Val>]>,
) -> (Vec<Vec<Val>>, Option<Vec<Vec<Val>>>, Vec<Vec<Val>>) {
    let layer = &model.layers[li];
    let (r, m) = head_forward(t, store, &layer.head, k, x);
    let (mut out, new_z) = backbone_forward(t, store, &layer.backbone, k, x, z);
    if let Some(r) = r {
        for (v, rv) in r.into_iter().enumerate() {
            out[v] = add_vecs(t, &out[v], &rv);
        }
    }
    (out, new_z, m)
}

pub fn pool_stratum(
    t: &mut Tape,
    pool: PoolKind,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
    dim: usize,
    width: usize,
) -> Vec<Val> {
    let ids = k.stratum(dim);
    let rows: Vec<Vec<Val>> = ids.clone().map(|id| x[id].clone()).collect();
    let mut pooled = crate::autodiff::vec_sum(t, &rows, width);
    if pool == PoolKind::Mean && !rows.is_empty() {
        let inv = 1.0 / rows.len() as f64;
        pooled = pooled.iter().map(|&p| t.scale(p, inv)).collect();
    }
    pooled
}

/// Pools final features per dimension (missing strata pool to zero), then
/// classifies the concatenation of pooled features and every layer's
/// topological vectors.
pub fn readout(
    t: &mut Tape,
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
    m_all: &[Vec<Val>],
) -> Vec<Val> {
    let d = model.spec.feature_width;
    let mut input = Vec::new();
    for dim in 0..=model.spec.max_dim {
        input.extend(pool_stratum(t, model.spec.pool, k, x, dim, d));
    }
    for m in m_all {
        input.extend(m.iter().copied());
    }
    assert_eq!(input.len(), model.spec.readout_width());
    model.classifier.forward(t, store, &input)
}

pub fn embed_all(
    t: &mut Tape,
    store: &ParamStore,
    model: &TopNet,
    colors: &[Vec<f64>],
) -> Result<Vec<Vec<Val>>, ModelError> {
    let w = model.spec.input_width;
    colors
        .iter()
        .map(|c| {
            if c.len() != w {
                return Err(ModelError::InputWidth { expected: w, got: c.len() });
            }
            let leaves: Vec<Val> = c.iter().map(|&v| t.leaf(v)).collect();
            Ok(model.embed.forward(t, store, &leaves))
        })
        .collect()
}

fn leaf_coords(t: &mut Tape, coords: &[Vec<f64>]) -> Vec<Vec<Val>> {
    coords.iter().map(|r| r.iter().map(|&v| t.leaf(v)).collect()).collect()
}

/// Full forward pass to prediction logits. Continuous-depth models integrate
/// their field and use the per-step mean of the topological vectors.
pub fn forward(
    t: &mut Tape,
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    colors: &[Vec<f64>],
    coords: Option<&[Vec<f64>]>,
) -> Result<Vec<Val>, ModelError> {
    assert_eq!(colors.len(), k.len());
    if model.spec.backbone == BackboneKind::Empsn && coords.is_none() {
        return Err(ModelError::MissingCoords);
    }
    let mut x = embed_all(t, store, model, colors)?;
    let mut z = coords.map(|c| leaf_coords(t, c));
    let mut m_all: Vec<Vec<Val>> = Vec::new();
    match model.spec.depth {
        DepthSpec::Discrete { layers } => {
            for li in 0..layers {
                let (nx, nz, m) = topnet_layer(t, store, model, li, k, &x, z.as_deref());
                x = nx;
                z = nz;
                m_all.extend(m);
            }
        }
        DepthSpec::Continuous { integrator, steps } => {
            let traj = integrate(t, store, model, k, x, z, integrator, steps, true)?;
            x = traj.states.last().unwrap().clone();
            z = traj.coords.as_ref().map(|c| c.last().unwrap().clone());
            m_all = traj.m_mean.clone();
        }
    }
    let _ = z;
    Ok(readout(t, store, model, k, &x, &m_all))
}

/// One evaluation of the shared field: feature derivatives for all simplices
/// and coordinate derivatives for vertices (zero unless geometric).
pub fn vector_field(
    t: &mut Tape,
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
    z: Option<&[Vec<Val>]>,
) -> (Vec<Vec<Val>>, Option<Vec<Vec<Val>>>) {
    assert!(
        matches!(model.spec.depth, DepthSpec::Continuous { .. }),
        "fields come from continuous models"
    );
    let (fx, fz) = backbone_forward(t, store, &model.layers[0].backbone, k, x, z);
    let dz = match (fz, z) {
        (Some(new_z), Some(z)) => {
            Some(new_z.iter().zip(z).map(|(n, old)| {
                n.iter().zip(old).map(|(&a, &b)| t.sub(a, b)).collect()
            }).collect())
        }
        _ => None,
    };
    (fx, dz)
}

/// State trajectory of a fixed-step integration. `m_mean` averages the
/// topological vectors evaluated at each visited state after step zero.
#[derive(Debug)]
pub struct Trajectory {
    pub states: Vec<Vec<Vec<Val>>>,
    pub coords: Option<Vec<Vec<Vec<Val>>>>,
    pub times: Vec<f64>,
    pub m_mean: Vec<Vec<Val>>,
}

struct State {
    x: Vec<Vec<Val>>,
    z: Option<Vec<Vec<Val>>>,
}

fn state_axpy(t: &mut Tape, base: &State, h: f64, dir: &(Vec<Vec<Val>>, Option<Vec<Vec<Val>>>)) -> State {
    let x = base
        .x
        .iter()
        .zip(&dir.0)
        .map(|(row, drow)| {
            row.iter()
                .zip(drow)
                .map(|(&a, &d)| {
                    let s = t.scale(d, h);
                    t.add(a, s)
                })
                .collect()
        })
        .collect();
    let z = match (&base.z, &dir.1) {
        (Some(z), Some(dz)) => Some(
            z.iter()
                .zip(dz)
                .map(|(row, drow)| {
                    row.iter()
                        .zip(drow)
                        .map(|(&a, &d)| {
                            let s = t.scale(d, h);
                            t.add(a, s)
                        })
                        .collect()
                })
                .collect(),
        ),
        (Some(z), None) => Some(z.clone()),
        _ => None,
    };
    State { x, z }
}

fn state_finite(t: &Tape, s: &State) -> bool {
    let rows = s.x.iter().chain(s.z.iter().flatten());
    rows.flatten().all(|&v| t.value(v).is_finite())
}

/// Fixed-step integration over [0, 1]. Euler makes each step
/// x + h*field(x), identical to a depth-N residual network sharing the same
/// step function; RK4 is the classical four-stage step. With `with_heads`,
/// the head runs at every post-step state and the results are averaged.
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    t: &mut Tape,
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    x0: Vec<Vec<Val>>,
    z0: Option<Vec<Vec<Val>>>,
    integrator: Integrator,
    steps: usize,
    with_heads: bool,
) -> Result<Trajectory, ModelError> {
    assert!(steps >= 1);
    let h = 1.0 / steps as f64;
    let mut state = State { x: x0, z: z0 };
    let mut states = vec![state.x.clone()];
    let mut coords = state.z.as_ref().map(|z| vec![z.clone()]);
    let mut times = vec![0.0];
    let mut m_sum: Vec<Vec<Val>> = Vec::new();
    for step in 1..=steps {
        let next = match integrator {
            Integrator::Euler => {
                let k1 = vector_field(t, store, model, k, &state.x, state.z.as_deref());
                state_axpy(t, &state, h, &k1)
            }
            Integrator::Rk4 => {
                let k1 = vector_field(t, store, model, k, &state.x, state.z.as_deref());
                let s2 = state_axpy(t, &state, h / 2.0, &k1);
                let k2 = vector_field(t, store, model, k, &s2.x, s2.z.as_deref());
                let s3 = state_axpy(t, &state, h / 2.0, &k2);
                let k3 = vector_field(t, store, model, k, &s3.x, s3.z.as_deref());
                let s4 = state_axpy(t, &state, h, &k3);
                let k4 = vector_field(t, store, model, k, &s4.x, s4.z.as_deref());
                let mut s = state_axpy(t, &state, h / 6.0, &k1);
                s = state_axpy(t, &s, h / 3.0, &k2);
                s = state_axpy(t, &s, h / 3.0, &k3);
                state_axpy(t, &s, h / 6.0, &k4)
            }
        };
        if !state_finite(t, &next) {
            return Err(ModelError::NonFinite { step });
        }
        state = next;
        states.push(state.x.clone());
        if let (Some(cs), Some(z)) = (&mut coords, &state.z) {
            cs.push(z.clone());
        }
        times.push(step as f64 * h);
        if with_heads {
            let (_, m) = head_forward(t, store, &model.layers[0].head, k, &state.x);
            if m_sum.is_empty() {
                m_sum = m;
            } else {
                for (acc, part) in m_sum.iter_mut().zip(m) {
                    *acc = add_vecs(t, acc, &part);
                }
            }
        }
    }
    let m_mean = m_sum
        .into_iter()
        .map(|m| {
            let inv = 1.0 / steps as f64;
            m.iter().map(|&v| t.scale(v, inv)).collect()
        })
        .collect();
    Ok(Trajectory { states, coords, times, m_mean })
}

/// The depth-N residual counterpart of the continuous model: a plain layer
/// loop applying x + (1/N) * field(x). Exists to make the correspondence
/// with the Euler trajectory checkable against an independent code path.
pub fn forward_residual_discrete(
    t: &mut Tape,
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    x0: Vec<Vec<Val>>,
    z0: Option<Vec<Vec<Val>>>,
    n: usize,
) -> (Vec<Vec<Val>>, Option<Vec<Vec<Val>>>) {
    let h = 1.0 / n as f64;
    let mut x = x0;
    let mut z = z0;
    for _ in 0..n {
        let (dx, dz) = vector_field(t, store, model, k, &x, z.as_deref());
        x = x
            .iter()
            .zip(&dx)
            .map(|(row, drow)| {
                row.iter()
                    .zip(drow)
                    .map(|(&a, &d)| {
                        let s = t.scale(d, h);
                        t.add(a, s)
                    })
                    .collect()
            })
            .collect();
        if let (Some(zs), Some(dzs)) = (&mut z, dz) {
            *zs = zs
                .iter()
                .zip(&dzs)
                .map(|(row, drow)| {
                    row.iter()
                        .zip(drow)
                        .map(|(&a, &d)| {
                            let s = t.scale(d, h);
                            t.add(a, s)
                        })
                        .collect()
                })
                .collect();
        }
    }
    (x, z)
}

/// Integration without a tape: each field evaluation runs on a throwaway
/// tape, so long reference trajectories stay in constant memory. Returns the
/// final feature state (and coordinates when geometric).
pub fn integrate_values(
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    x0: Vec<Vec<f64>>,
    z0: Option<Vec<Vec<f64>>>,
    integrator: Integrator,
    steps: usize,
) -> Result<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>), ModelError> {
    let h = 1.0 / steps as f64;
    let eval = |x: &[Vec<f64>], z: Option<&Vec<Vec<f64>>>| {
        let mut t = Tape::new();
        let xv: Vec<Vec<Val>> =
            x.iter().map(|r| r.iter().map(|&v| t.leaf(v)).collect()).collect();
        let zv: Option<Vec<Vec<Val>>> =
            z.map(|z| z.iter().map(|r| r.iter().map(|&v| t.leaf(v)).collect()).collect());
        let (dx, dz) = vector_field(&mut t, store, model, k, &xv, zv.as_deref());
        let dxf: Vec<Vec<f64>> =
            dx.iter().map(|r| r.iter().map(|&v| t.value(v)).collect()).collect();
        let dzf: Option<Vec<Vec<f64>>> =
            dz.map(|dz| dz.iter().map(|r| r.iter().map(|&v| t.value(v)).collect()).collect());
        (dxf, dzf)
    };
    let axpy = |x: &[Vec<f64>], h: f64, d: &[Vec<f64>]| -> Vec<Vec<f64>> {
        x.iter()
            .zip(d)
            .map(|(r, dr)| r.iter().zip(dr).map(|(a, b)| a + h * b).collect())
            .collect()
    };
    let mut x = x0;
    let mut z = z0;
    for step in 1..=steps {
        let (nx, nz) = match integrator {
            Integrator::Euler => {
                let (dx, dz) = eval(&x, z.as_ref());
                (axpy(&x, h, &dx), z.as_ref().map(|z| axpy(z, h, dz.as_ref().unwrap_or(&vec![vec![0.0; z[0].len()]; z.len()]))))
            }
            Integrator::Rk4 => {
                let (k1x, k1z) = eval(&x, z.as_ref());
                let x2 = axpy(&x, h / 2.0, &k1x);
                let z2 = match (&z, &k1z) {
                    (Some(z), Some(kz)) => Some(axpy(z, h / 2.0, kz)),
                    _ => z.clone(),
                };
                let (k2x, k2z) = eval(&x2, z2.as_ref());
                let x3 = axpy(&x, h / 2.0, &k2x);
                let z3 = match (&z, &k2z) {
                    (Some(z), Some(kz)) => Some(axpy(z, h / 2.0, kz)),
                    _ => z.clone(),
                };
                let (k3x, k3z) = eval(&x3, z3.as_ref());
                let x4 = axpy(&x, h, &k3x);
                let z4 = match (&z, &k3z) {
                    (Some(z), Some(kz)) => Some(axpy(z, h, kz)),
                    _ => z.clone(),
                };
                let (k4x, k4z) = eval(&x4, z4.as_ref());
                let mut nx = axpy(&x, h / 6.0, &k1x);
                nx = axpy(&nx, h / 3.0, &k2x);
                nx = axpy(&nx, h / 3.0, &k3x);
                nx = axpy(&nx, h / 6.0, &k4x);
                let nz = match (&z, &k1z, &k2z, &k3z, &k4z) {
                    (Some(z), Some(a), Some(b), Some(c), Some(d)) => {
                        let mut nz = axpy(z, h / 6.0, a);
                        nz = axpy(&nz, h / 3.0, b);
                        nz = axpy(&nz, h / 3.0, c);
                        Some(axpy(&nz, h / 6.0, d))
                    }
                    _ => z.clone(),
                };
                (nx, nz)
            }
        };
        if nx.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { step });
        }
        x = nx;
        z = nz;
    }
    Ok((x, z))
}

fn embed_values(store: &ParamStore, model: &TopNet, colors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut t = Tape::new();
    let rows: Vec<Vec<Val>> = colors
        .iter()
        .map(|c| {
            let leaves: Vec<Val> = c.iter().map(|&v| t.leaf(v)).collect();
            model.embed.forward(&mut t, store, &leaves)
        })
        .collect();
    rows.iter().map(|r| r.iter().map(|&v| t.value(v)).collect()).collect()
}

fn l1_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .sum()
}

/// One row per requested step count: Euler error against a fine RK4
/// reference, and the same gap measured after the topological head.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRow {
    pub steps: usize,
    pub e_v: f64,
    pub e_r: f64,
}

fn head_values(
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    x: &[Vec<f64>],
) -> Vec<f64> {
    let mut t = Tape::new();
    let xv: Vec<Vec<Val>> = x.iter().map(|r| r.iter().map(|&v| t.leaf(v)).collect()).collect();
    let (_, m) = head_forward(&mut t, store, &model.layers[0].head, k, &xv);
    m.into_iter().flatten().map(|v| t.value(v)).collect()
}

/// Discretization errors e_v(N) (final features, L1) and e_r(N) (final
/// topological embedding, L1) of Euler at each N against an RK4 reference at
/// `ref_multiplier * max(N)` steps.
pub fn discretization_error_experiment(
    store: &ParamStore,
    model: &TopNet,
    k: &SimplicialComplex,
    colors: &[Vec<f64>],
    coords: Option<&[Vec<f64>]>,
    step_counts: &[usize],
    ref_multiplier: usize,
) -> Result<Vec<ErrorRow>, ModelError> {
    let x0 = embed_values(store, model, colors);
    let z0 = coords.map(|c| c.to_vec());
    let n_ref = ref_multiplier * step_counts.iter().copied().max().unwrap_or(1);
    let (x_ref, _) =
        integrate_values(store, model, k, x0.clone(), z0.clone(), Integrator::Rk4, n_ref)?;
    let m_ref = head_values(store, model, k, &x_ref);
    let mut rows = Vec::new();
    for &n in step_counts {
        let (x_n, _) =
            integrate_values(store, model, k, x0.clone(), z0.clone(), Integrator::Euler, n)?;
        let e_v = l1_distance(&x_ref, &x_n);
        let m_n = head_values(store, model, k, &x_n);
        let e_r = m_ref.iter().zip(&m_n).map(|(a, b)| (a - b).abs()).sum();
        rows.push(ErrorRow { steps: n, e_v, e_r });
    }
    Ok(rows)
}

/// Generic fixed-step integration of a small state vector; the closed-form
/// integrator tests drive this directly.
pub fn integrate_scalar_field(
    x0: Vec<f64>,
    field: impl Fn(&[f64]) -> Vec<f64>,
    integrator: Integrator,
    steps: usize,
) -> Vec<f64> {
    let h = 1.0 / steps as f64;
    let axpy = |x: &[f64], h: f64, d: &[f64]| -> Vec<f64> {
        x.iter().zip(d).map(|(a, b)| a + h * b).collect()
    };
    let mut x = x0;
    for _ in 0..steps {
        x = match integrator {
            Integrator::Euler => {
                let d = field(&x);
                axpy(&x, h, &d)
            }
            Integrator::Rk4 => {
                let k1 = field(&x);
                let k2 = field(&axpy(&x, h / 2.0, &k1));
                let k3 = field(&axpy(&x, h / 2.0, &k2));
                let k4 = field(&axpy(&x, h, &k3));
                let mut n = axpy(&x, h / 6.0, &k1);
                n = axpy(&n, h / 3.0, &k2);
                n = axpy(&n, h / 3.0, &k3);
                axpy(&n, h / 6.0, &k4)
            }
        };
    }
    x
}

/// Cross-entropy of integer label against logits, stabilized by the max
/// logit. The max fold records tie margins for finite-difference checks.
pub fn cross_entropy(t: &mut Tape, logits: &[Val], label: usize) -> Val {
    let m = t.max_fold(logits).expect("non-empty logits");
    let shifted: Vec<Val> = logits.iter().map(|&l| t.sub(l, m)).collect();
    let exps: Vec<Val> = shifted.iter().map(|&s| t.exp(s)).collect();
    let total = t.sum(&exps);
    let lse = t.ln(total);
    t.sub(lse, shifted[label])
}

pub fn l1_loss(t: &mut Tape, pred: Val, target: f64) -> Val {
    let tv = t.leaf(target);
    let d = t.sub(pred, tv);
    t.abs(d)
}

/// Softmax argmax as a plain prediction.
pub fn predict(t: &Tape, logits: &[Val]) -> usize {
    logits
        .iter()
        .enumerate()
        .max_by(|a, b| t.value(*a.1).total_cmp(&t.value(*b.1)))
        .map(|(i, _)| i)
        .unwrap()
}
