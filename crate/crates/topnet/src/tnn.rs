//! Message-passing layers over complexes: plain vertex GNNs, simplicial
//! message passing across the four adjacency structures, and the
//! E(n)-equivariant variant with coordinate updates.

use crate::autodiff::{Init, Mlp, MlpSpec, ParamStore, Tape, Val};
use crate::complex::SimplicialComplex;
use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Neighborhood {
    Boundary,
    Coboundary,
    Lower,
    Upper,
}

pub const ALL_NEIGHBORHOODS: [Neighborhood; 4] = [
    Neighborhood::Boundary,
    Neighborhood::Coboundary,
    Neighborhood::Lower,
    Neighborhood::Upper,
];

impl Neighborhood {
    fn index(self) -> usize {
        match self {
            Neighborhood::Boundary => 0,
            Neighborhood::Coboundary => 1,
            Neighborhood::Lower => 2,
            Neighborhood::Upper => 3,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Neighborhood::Boundary => "bnd",
            Neighborhood::Coboundary => "cob",
            Neighborhood::Lower => "low",
            Neighborhood::Upper => "upp",
        }
    }

    pub fn resolve(self, k: &SimplicialComplex, id: usize) -> Vec<usize> {
        match self {
            Neighborhood::Boundary => k.boundary_neighbors(id).expect("valid id").to_vec(),
            Neighborhood::Coboundary => k.coboundary_neighbors(id).expect("valid id").to_vec(),
            Neighborhood::Lower => k.lower_adjacent(id).expect("valid id").to_vec(),
            Neighborhood::Upper => k.upper_adjacent(id).expect("valid id"),
        }
    }
}

/// Which adjacencies feed messages, per simplex dimension. `Uniform` applies
/// one set everywhere; `PerDim` indexes by dimension and repeats its last
/// entry above that.
#[derive(Debug, Clone)]
pub enum NeighborhoodSet {
    Uniform(Vec<Neighborhood>),
    PerDim(Vec<Vec<Neighborhood>>),
}

impl NeighborhoodSet {
    pub fn for_dim(&self, d: usize) -> &[Neighborhood] {
        match self {
            NeighborhoodSet::Uniform(v) => v,
            NeighborhoodSet::PerDim(per) => &per[d.min(per.len() - 1)],
        }
    }

    /// Boundary + upper adjacency, the usual simplicial default.
    pub fn standard() -> Self {
        NeighborhoodSet::Uniform(vec![Neighborhood::Boundary, Neighborhood::Upper])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnnKind {
    Gin,
    Gcn,
}

/// Vertex-only message passing on the 1-skeleton.
pub struct GnnLayer {
    pub kind: GnnKind,
    pub update: Mlp,
    eps_slot: Option<usize>,
}

impl GnnLayer {
    /// `update` consumes one feature-width vector (the mixed self/neighbor
    /// term) for both kinds.
    pub fn new(store: &mut ParamStore, name: &str, kind: GnnKind, update: MlpSpec) -> Self {
        let eps_slot = match kind {
            GnnKind::Gin => Some(store.get_or_create(&format!("{name}/eps"), &[1], Init::Zeros)),
            GnnKind::Gcn => None,
        };
        Self { kind, update: Mlp::new(store, &format!("{name}/update"), update), eps_slot }
    }
}

/// One round of vertex updates. `x` is indexed by vertex id. The GIN variant
/// feeds update((1+eps)x_v + sum of neighbors); the GCN variant feeds
/// update(mean over the closed neighborhood).
pub fn gnn_layer(
    t: &mut Tape,
    store: &ParamStore,
    layer: &GnnLayer,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
) -> Vec<Vec<Val>> {
    let nv = k.vertex_count();
    assert_eq!(x.len(), nv);
    let width = x.first().map(Vec::len).unwrap_or(0);
    let mut out = Vec::with_capacity(nv);
    for v in 0..nv {
        let neighbors = Neighborhood::Upper.resolve(k, v);
        let neighbor_feats: Vec<Vec<Val>> = neighbors.iter().map(|&u| x[u].clone()).collect();
        let agg = crate::autodiff::vec_sum(t, &neighbor_feats, width);
        let mixed: Vec<Val> = match layer.kind {
            GnnKind::Gin => {
                let eps = t.param(store, layer.eps_slot.unwrap(), 0);
                x[v].iter()
                    .zip(&agg)
                    .map(|(&xc, &ac)| {
                        let scaled = t.mul(eps, xc);
                        let self_term = t.add(xc, scaled);
                        t.add(self_term, ac)
                    })
                    .collect()
            }
            GnnKind::Gcn => {
                let inv_deg = 1.0 / (1.0 + neighbors.len() as f64);
                x[v].iter()
                    .zip(&agg)
                    .map(|(&xc, &ac)| {
                        let s = t.add(xc, ac);
                        t.scale(s, inv_deg)
                    })
                    .collect()
            }
        };
        out.push(layer.update.forward(t, store, &mixed));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TnnLayerSpec {
    pub neighborhoods: NeighborhoodSet,
    /// Message net; input width 2*feature (plus invariant features for the
    /// geometric variant), replicated per (dim, neighborhood).
    pub msg: MlpSpec,
    /// Update net; input feature + message width, replicated per dim.
    pub update: MlpSpec,
    pub max_dim: usize,
}

/// Simplicial message passing: per-neighborhood messages, within-sum, a
/// per-neighborhood linear mix, between-sum, then a per-dim update.
pub struct TnnLayer {
    spec: TnnLayerSpec,
    msg_nets: Vec<[Option<Mlp>; 4]>,
    lin_nets: Vec<[Option<Mlp>; 4]>,
    update_nets: Vec<Mlp>,
    warned: AtomicBool,
}

impl TnnLayer {
    pub fn new(store: &mut ParamStore, name: &str, spec: TnnLayerSpec) -> Self {
        let d_msg = spec.msg.output_width();
        let mut msg_nets = Vec::new();
        let mut lin_nets = Vec::new();
        let mut update_nets = Vec::new();
        for d in 0..=spec.max_dim {
            let mut msg_row: [Option<Mlp>; 4] = [None, None, None, None];
            let mut lin_row: [Option<Mlp>; 4] = [None, None, None, None];
            for &n in spec.neighborhoods.for_dim(d) {
                let base = format!("{name}/d{d}/{}", n.tag());
                msg_row[n.index()] =
                    Some(Mlp::new(store, &format!("{base}/msg"), spec.msg.clone()));
                lin_row[n.index()] = Some(Mlp::new(
                    store,
                    &format!("{base}/lin"),
                    MlpSpec::new(vec![d_msg, d_msg], crate::autodiff::Act::Relu),
                ));
            }
            msg_nets.push(msg_row);
            lin_nets.push(lin_row);
            update_nets.push(Mlp::new(store, &format!("{name}/d{d}/update"), spec.update.clone()));
        }
        Self { spec, msg_nets, lin_nets, update_nets, warned: AtomicBool::new(false) }
    }

    pub fn message_width(&self) -> usize {
        self.spec.msg.output_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.update.output_width()
    }

    pub fn msg_net(&self, dim: usize, n: Neighborhood) -> &Mlp {
        self.msg_nets[dim][n.index()].as_ref().expect("neighborhood enabled")
    }

    fn warn_if_empty_everywhere(&self, k: &SimplicialComplex) {
        if self.warned.swap(true, Ordering::Relaxed) {
            return;
        }
        for &n in ALL_NEIGHBORHOODS.iter() {
            let enabled =
                (0..=k.dim()).any(|d| self.spec.neighborhoods.for_dim(d).contains(&n));
            if !enabled {
                continue;
            }
            let any = (0..k.len()).any(|id| !n.resolve(k, id).is_empty());
            if !any {
                eprintln!(
                    "tnn: neighborhood {:?} is empty for every simplex; its term is inert",
                    n
                );
            }
        }
    }
}

/// Messages flow per (dim, neighborhood); a simplex with no neighbors in a
/// given structure contributes nothing for that term, so an everywhere-empty
/// neighborhood leaves features untouched by it.
pub fn tnn_layer(
    t: &mut Tape,
    store: &ParamStore,
    layer: &TnnLayer,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
) -> Vec<Vec<Val>> {
    tnn_layer_inner(t, store, layer, k, x, None)
}

/// Shared core for the plain and geometric variants. When `z` is given,
/// invariant geometric features are appended to every message input.
fn tnn_layer_inner(
    t: &mut Tape,
    store: &ParamStore,
    layer: &TnnLayer,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
    z: Option<&[Vec<Val>]>,
) -> Vec<Vec<Val>> {
    assert_eq!(x.len(), k.len());
    assert!(k.is_empty() || k.dim() <= layer.spec.max_dim, "layer built for lower dimensions");
    layer.warn_if_empty_everywhere(k);
    let d_msg = layer.message_width();
    let mut out = Vec::with_capacity(k.len());
    for id in 0..k.len() {
        let dim = k.simplex(id).dim();
        let mut terms: Vec<Vec<Val>> = Vec::new();
        for &n in layer.spec.neighborhoods.for_dim(dim) {
            let neighbors = n.resolve(k, id);
            if neighbors.is_empty() {
                continue;
            }
            let mut msgs: Vec<Vec<Val>> = Vec::with_capacity(neighbors.len());
            for &other in &neighbors {
                let mut input: Vec<Val> = x[id].clone();
                input.extend(&x[other]);
                if let Some(z) = z {
                    input.extend(invariant_features(t, k, id, other, z));
                }
                msgs.push(layer.msg_net(dim, n).forward(t, store, &input));
            }
            let within = crate::autodiff::vec_sum(t, &msgs, d_msg);
            let mixed = layer.lin_nets[dim][n.index()]
                .as_ref()
                .expect("enabled")
                .forward(t, store, &within);
            terms.push(mixed);
        }
        let between = crate::autodiff::vec_sum(t, &terms, d_msg);
        let mut upd_in = x[id].clone();
        upd_in.extend(between);
        out.push(layer.update_nets[dim].forward(t, store, &upd_in));
    }
    out
}

/// Distance between two coordinate vectors on the tape.
pub fn tape_distance(t: &mut Tape, a: &[Val], b: &[Val]) -> Val {
    let sq: Vec<Val> = a
        .iter()
        .zip(b)
        .map(|(&ac, &bc)| {
            let d = t.sub(ac, bc);
            t.mul(d, d)
        })
        .collect();
    let s = t.sum(&sq);
    t.sqrt(s)
}

fn barycenter(t: &mut Tape, k: &SimplicialComplex, id: usize, z: &[Vec<Val>]) -> Vec<Val> {
    let vs = k.simplex(id).vertices();
    let coords: Vec<Vec<Val>> = vs.iter().map(|&v| z[v].clone()).collect();
    let width = z[0].len();
    let s = crate::autodiff::vec_sum(t, &coords, width);
    s.iter().map(|&c| t.scale(c, 1.0 / vs.len() as f64)).collect()
}

/// E(n)- and permutation-invariant features of a simplex pair: distance
/// between barycenters and the largest pairwise vertex distance in the union.
pub fn invariant_features(
    t: &mut Tape,
    k: &SimplicialComplex,
    a: usize,
    b: usize,
    z: &[Vec<Val>],
) -> Vec<Val> {
    let ba = barycenter(t, k, a, z);
    let bb = barycenter(t, k, b, z);
    let bary_dist = tape_distance(t, &ba, &bb);
    let mut union: Vec<usize> = k
        .simplex(a)
        .vertices()
        .iter()
        .chain(k.simplex(b).vertices())
        .copied()
        .collect();
    union.sort_unstable();
    union.dedup();
    let mut dists = Vec::new();
    for (i, &u) in union.iter().enumerate() {
        for &v in &union[i + 1..] {
            dists.push(tape_distance(t, &z[u], &z[v]));
        }
    }
    let max_dist = t.max_fold(&dists).unwrap_or_else(|| t.leaf(0.0));
    vec![bary_dist, max_dist]
}

pub struct EmpsnLayerSpec {
    pub tnn: TnnLayerSpec,
    /// Scalar gate on each upper message driving the coordinate update.
    pub phi_z: MlpSpec,
}

pub struct EmpsnLayer {
    pub tnn: TnnLayer,
    pub phi_z: Mlp,
}

impl EmpsnLayer {
    pub fn new(store: &mut ParamStore, name: &str, spec: EmpsnLayerSpec) -> Self {
        assert_eq!(spec.phi_z.output_width(), 1, "coordinate gate is scalar");
        assert!(
            spec.tnn
                .neighborhoods
                .for_dim(0)
                .contains(&Neighborhood::Upper),
            "coordinate updates read upper-adjacency messages"
        );
        Self {
            tnn: TnnLayer::new(store, &format!("{name}/tnn"), spec.tnn),
            phi_z: Mlp::new(store, &format!("{name}/phi_z"), spec.phi_z),
        }
    }
}

/// Geometric layer: features update as in `tnn_layer` with invariant features
/// appended to every message; vertex coordinates move by the gated sum of
/// difference vectors, z_v + C * sum over upper neighbors u of
/// (z_v - z_u) * phi_z(msg), with C = 1/max(1, neighbor count).
pub fn empsn_layer(
    t: &mut Tape,
    store: &ParamStore,
    layer: &EmpsnLayer,
    k: &SimplicialComplex,
    x: &[Vec<Val>],
    z: &[Vec<Val>],
) -> (Vec<Vec<Val>>, Vec<Vec<Val>>) {
    assert_eq!(z.len(), k.vertex_count(), "coordinates per vertex");
    let features = tnn_layer_inner(t, store, &layer.tnn, k, x, Some(z));
    let width = z.first().map(Vec::len).unwrap_or(0);
    let mut new_z = Vec::with_capacity(z.len());
    for v in 0..k.vertex_count() {
        let neighbors = Neighborhood::Upper.resolve(k, v);
        let c = 1.0 / 1.0f64.max(neighbors.len() as f64);
        let mut displacement: Vec<Vec<Val>> = Vec::with_capacity(neighbors.len());
        for &u in &neighbors {
            let mut input: Vec<Val> = x[v].clone();
            input.extend(&x[u]);
            input.extend(invariant_features(t, k, v, u, z));
            let m = layer.tnn.msg_net(0, Neighborhood::Upper).forward(t, store, &input);
            let gate = layer.phi_z.forward(t, store, &m)[0];
            displacement.push(
                z[v].iter()
                    .zip(&z[u])
                    .map(|(&a, &b)| {
                        let d = t.sub(a, b);
                        t.mul(d, gate)
                    })
                    .collect(),
            );
        }
        let total = crate::autodiff::vec_sum(t, &displacement, width);
        new_z.push(
            z[v].iter()
                .zip(&total)
                .map(|(&zc, &dc)| {
                    let scaled = t.scale(dc, c);
                    t.add(zc, scaled)
                })
                .collect(),
        );
    }
    (features, new_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Act};
    use crate::complex::{graph_complex, Simplex, SimplicialComplex};
    use crate::filtration::{apply_rigid, random_rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf_features(t: &mut Tape, rows: &[Vec<f64>]) -> Vec<Vec<Val>> {
        rows.iter()
            .map(|r| r.iter().map(|&v| t.leaf(v)).collect())
            .collect()
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn isolated_vertex_gets_self_only_update() {
        let k = graph_complex(2, &[]);
        let mut store = ParamStore::new(1);
        for kind in [GnnKind::Gin, GnnKind::Gcn] {
            let layer = GnnLayer::new(
                &mut store,
                &format!("g-{kind:?}"),
                kind,
                MlpSpec::new(vec![2, 3], Act::Tanh),
            );
            let mut t = Tape::new();
            let x = leaf_features(&mut t, &[vec![0.3, -0.2], vec![0.3, -0.2]]);
            let out = gnn_layer(&mut t, &store, &layer, &k, &x);
            // both vertices isolated with equal features: equal outputs
            for (a, b) in out[0].iter().zip(&out[1]) {
                assert_eq!(t.value(*a), t.value(*b));
            }
            // and the mixed input equals the feature itself (sum 0 / mean of {v})
            let raw = [t.leaf(0.3), t.leaf(-0.2)];
            let direct = layer.update.forward(&mut t, &store, &raw);
            for (a, b) in out[0].iter().zip(&direct) {
                assert!((t.value(*a) - t.value(*b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn edge_symmetry_gives_equal_outputs() {
        let k = graph_complex(2, &[(0, 1)]);
        let mut store = ParamStore::new(2);
        for kind in [GnnKind::Gin, GnnKind::Gcn] {
            let layer = GnnLayer::new(
                &mut store,
                &format!("g-{kind:?}"),
                kind,
                MlpSpec::new(vec![2, 4, 3], Act::Relu),
            );
            let mut t = Tape::new();
            let x = leaf_features(&mut t, &[vec![0.5, 1.0], vec![0.5, 1.0]]);
            let out = gnn_layer(&mut t, &store, &layer, &k, &x);
            for (a, b) in out[0].iter().zip(&out[1]) {
                assert_eq!(t.value(*a), t.value(*b));
            }
        }
    }

    #[test]
    fn mpsn_with_upper_only_reduces_to_gin() {
        let k = graph_complex(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]);
        let d = 3;
        let mut store = ParamStore::new(7);
        let gnn = GnnLayer::new(&mut store, "g", GnnKind::Gin, MlpSpec::new(vec![d, 4], Act::Tanh));
        let tnn = TnnLayer::new(
            &mut store,
            "m",
            TnnLayerSpec {
                neighborhoods: NeighborhoodSet::Uniform(vec![Neighborhood::Upper]),
                msg: MlpSpec::new(vec![2 * d, d], Act::Tanh),
                update: MlpSpec::new(vec![2 * d, 4], Act::Tanh),
                max_dim: 1,
            },
        );
        // surgery: msg projects the neighbor features, the linear mix is the
        // identity, and the update folds [x | m] with the gnn weights twice
        let msg_w = store.get_or_create("m/d0/upp/msg/w0", &[d, 2 * d], Init::Zeros);
        {
            let w = store.values_mut(msg_w);
            w.fill(0.0);
            for r in 0..d {
                w[r * 2 * d + d + r] = 1.0;
            }
        }
        let lin_w = store.get_or_create("m/d0/upp/lin/w0", &[d, d], Init::Zeros);
        {
            let w = store.values_mut(lin_w);
            w.fill(0.0);
            for r in 0..d {
                w[r * d + r] = 1.0;
            }
        }
        for name in ["m/d0/upp/msg/b0", "m/d0/upp/lin/b0"] {
            let slot = store.get_or_create(name, &[d], Init::Zeros);
            store.values_mut(slot).fill(0.0);
        }
        let gw = {
            let slot = store.get_or_create("g/update/w0", &[4, d], Init::Zeros);
            store.values(slot).to_vec()
        };
        let gb = {
            let slot = store.get_or_create("g/update/b0", &[4], Init::Zeros);
            store.values(slot).to_vec()
        };
        let uw = store.get_or_create("m/d0/update/w0", &[4, 2 * d], Init::Zeros);
        {
            let w = store.values_mut(uw);
            for r in 0..4 {
                for c in 0..d {
                    w[r * 2 * d + c] = gw[r * d + c];
                    w[r * 2 * d + d + c] = gw[r * d + c];
                }
            }
        }
        let ub = store.get_or_create("m/d0/update/b0", &[4], Init::Zeros);
        store.values_mut(ub).copy_from_slice(&gb);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vx = random_features(&mut rng, 4, d);
        let mut t = Tape::new();
        let gx = leaf_features(&mut t, &vx);
        let g_out = gnn_layer(&mut t, &store, &gnn, &k, &gx);
        let mut full = vx.clone();
        full.extend(vec![vec![0.0; d]; k.len() - 4]);
        let tx = leaf_features(&mut t, &full);
        let t_out = tnn_layer(&mut t, &store, &tnn, &k, &tx);
        for v in 0..4 {
            for (a, b) in g_out[v].iter().zip(&t_out[v]) {
                assert!((t.value(*a) - t.value(*b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn filled_triangle_two_simplex_hears_its_edges() {
        let k = SimplicialComplex::closed_from(vec![Simplex::new(vec![0, 1, 2]).unwrap()]);
        let tri = k.id_of(&[0, 1, 2]).unwrap();
        assert_eq!(Neighborhood::Boundary.resolve(&k, tri).len(), 3);
        let mut store = ParamStore::new(3);
        let layer = TnnLayer::new(
            &mut store,
            "m",
            TnnLayerSpec {
                neighborhoods: NeighborhoodSet::Uniform(vec![Neighborhood::Boundary]),
                msg: MlpSpec::new(vec![2, 2], Act::Tanh),
                update: MlpSpec::new(vec![3, 2], Act::Tanh),
                max_dim: 2,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feats = random_features(&mut rng, k.len(), 1);
        let mut t = Tape::new();
        let x = leaf_features(&mut t, &feats);
        let out = tnn_layer(&mut t, &store, &layer, &k, &x);
        // changing one edge feature must change the triangle's output
        let mut bumped = feats.clone();
        bumped[k.id_of(&[0, 1]).unwrap()][0] += 0.5;
        let mut t2 = Tape::new();
        let x2 = leaf_features(&mut t2, &bumped);
        let out2 = tnn_layer(&mut t2, &store, &layer, &k, &x2);
        let before: f64 = out[tri].iter().map(|&v| t.value(v)).sum();
        let after: f64 = out2[tri].iter().map(|&v| t2.value(v)).sum();
        assert!((before - after).abs() > 1e-9);
    }

    #[test]
    fn tnn_outputs_track_vertex_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new(11);
        let layer = TnnLayer::new(
            &mut store,
            "m",
            TnnLayerSpec {
                neighborhoods: NeighborhoodSet::standard(),
                msg: MlpSpec::new(vec![4, 6], Act::Tanh),
                update: MlpSpec::new(vec![8, 5], Act::Tanh),
                max_dim: 2,
            },
        );
        for _ in 0..5 {
            let n = 5;
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(0.6) {
                        edges.push((a, b));
                    }
                }
            }
            let k = graph_complex(n, &edges).clique_lift(2).unwrap();
            let feats = random_features(&mut rng, k.len(), 2);
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let k2 = k.relabel_vertices(|v| perm[v]).unwrap();
            let map_id = |id: usize| {
                let mut vs: Vec<usize> =
                    k.simplex(id).vertices().iter().map(|&v| perm[v]).collect();
                vs.sort_unstable();
                k2.id_of(&vs).unwrap()
            };
            let mut feats2 = vec![Vec::new(); k.len()];
            for id in 0..k.len() {
                feats2[map_id(id)] = feats[id].clone();
            }
            let mut t = Tape::new();
            let x = leaf_features(&mut t, &feats);
            let out = tnn_layer(&mut t, &store, &layer, &k, &x);
            let mut t2 = Tape::new();
            let x2 = leaf_features(&mut t2, &feats2);
            let out2 = tnn_layer(&mut t2, &store, &layer, &k2, &x2);
            for id in 0..k.len() {
                let mapped = map_id(id);
                for (a, b) in out[id].iter().zip(&out2[mapped]) {
                    assert!((t.value(*a) - t2.value(*b)).abs() < 1e-12);
                }
            }
        }
    }

    fn tiny_empsn(store: &mut ParamStore, name: &str, d: usize) -> EmpsnLayer {
        EmpsnLayer::new(
            store,
            name,
            EmpsnLayerSpec {
                tnn: TnnLayerSpec {
                    neighborhoods: NeighborhoodSet::Uniform(vec![
                        Neighborhood::Boundary,
                        Neighborhood::Upper,
                    ]),
                    msg: MlpSpec::new(vec![2 * d + 2, 4], Act::Tanh),
                    update: MlpSpec::new(vec![d + 4, d], Act::Tanh),
                    max_dim: 2,
                },
                phi_z: MlpSpec::new(vec![4, 3, 1], Act::Tanh),
            },
        )
    }

    #[test]
    fn symmetric_neighbors_cancel_displacement() {
        let k = graph_complex(3, &[(0, 1), (0, 2)]);
        let mut store = ParamStore::new(17);
        let layer = tiny_empsn(&mut store, "e", 2);
        let mut t = Tape::new();
        let x = leaf_features(&mut t, &vec![vec![0.4, -0.1]; k.len()]);
        let z = leaf_features(&mut t, &[vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let (_, new_z) = empsn_layer(&mut t, &store, &layer, &k, &x, &z);
        // vertex 0 sits between equal-featured mirror neighbors: no net move
        for (c, &v) in new_z[0].iter().enumerate() {
            assert!(
                (t.value(v) - [0.0, 0.0][c]).abs() < 1e-12,
                "coordinate {c} moved to {}",
                t.value(v)
            );
        }
        // vertex 1 has a single neighbor: displacement parallel to z1 - z0
        let d1 = t.value(new_z[1][0]) - 1.0;
        let d2 = t.value(new_z[1][1]) - 0.0;
        assert!(d1.abs() > 1e-9);
        assert!(d2.abs() < 1e-15, "off-axis component {d2}");
    }

    #[test]
    fn single_neighbor_displacement_is_gated_difference() {
        let k = graph_complex(2, &[(0, 1)]);
        let mut store = ParamStore::new(19);
        let layer = tiny_empsn(&mut store, "e", 2);
        let mut t = Tape::new();
        let xf = vec![vec![0.3, 0.9]; k.len()];
        let x = leaf_features(&mut t, &xf);
        let z = leaf_features(&mut t, &[vec![0.2, 0.1, -0.3], vec![-0.5, 0.4, 0.0]]);
        let (_, new_z) = empsn_layer(&mut t, &store, &layer, &k, &x, &z);
        // recompute the gate by hand for the pair (0 <- 1)
        let mut input: Vec<Val> = x[0].clone();
        input.extend(&x[1]);
        input.extend(invariant_features(&mut t, &k, 0, 1, &z));
        let m = layer.tnn.msg_net(0, Neighborhood::Upper).forward(&mut t, &store, &input);
        let gate = layer.phi_z.forward(&mut t, &store, &m)[0];
        let g = t.value(gate);
        for c in 0..3 {
            let expect = t.value(z[0][c]) + (t.value(z[0][c]) - t.value(z[1][c])) * g;
            assert!((t.value(new_z[0][c]) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empsn_features_invariant_coords_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParamStore::new(23);
        let layer = tiny_empsn(&mut store, "e", 2);
        for _ in 0..20 {
            let n = rng.gen_range(3..6);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(0.6) {
                        edges.push((a, b));
                    }
                }
            }
            let k = graph_complex(n, &edges).clique_lift(2).unwrap();
            let feats = random_features(&mut rng, k.len(), 2);
            let coords: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let mut t = Tape::new();
            let x = leaf_features(&mut t, &feats);
            let z = leaf_features(&mut t, &coords);
            let (fx, fz) = empsn_layer(&mut t, &store, &layer, &k, &x, &z);
            let fx: Vec<Vec<f64>> =
                fx.iter().map(|r| r.iter().map(|&v| t.value(v)).collect()).collect();
            let fz: Vec<Vec<f64>> =
                fz.iter().map(|r| r.iter().map(|&v| t.value(v)).collect()).collect();
            for _ in 0..10 {
                let rot = random_rotation(&mut rng, 3);
                let trans: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let moved = apply_rigid(&coords, &rot, &trans);
                let mut t2 = Tape::new();
                let x2 = leaf_features(&mut t2, &feats);
                let z2 = leaf_features(&mut t2, &moved);
                let (gx, gz) = empsn_layer(&mut t2, &store, &layer, &k, &x2, &z2);
                for (row_a, row_b) in fx.iter().zip(&gx) {
                    for (a, &b) in row_a.iter().zip(row_b) {
                        assert!((a - t2.value(b)).abs() < 1e-9);
                    }
                }
                let expected = apply_rigid(&fz, &rot, &trans);
                for (row_a, row_b) in expected.iter().zip(&gz) {
                    for (a, &b) in row_a.iter().zip(row_b) {
                        assert!((a - t2.value(b)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_flow_through_all_layers() {
        let k = graph_complex(3, &[(0, 1), (1, 2), (0, 2)]).clique_lift(2).unwrap();
        let mut store = ParamStore::new(29);
        let feat_slot = store.get_or_create(
            "feats",
            &[k.len(), 2],
            Init::Glorot { fan_in: 2, fan_out: 2 },
        );
        let coord_slot = store.get_or_create(
            "coords",
            &[3, 2],
            Init::Glorot { fan_in: 2, fan_out: 2 },
        );
        let gnn = GnnLayer::new(&mut store, "g", GnnKind::Gin, MlpSpec::new(vec![2, 3], Act::Tanh));
        let tnn = TnnLayer::new(
            &mut store,
            "m",
            TnnLayerSpec {
                neighborhoods: NeighborhoodSet::standard(),
                msg: MlpSpec::new(vec![4, 4], Act::Tanh),
                update: MlpSpec::new(vec![6, 2], Act::Tanh),
                max_dim: 2,
            },
        );
        let empsn = tiny_empsn(&mut store, "e", 2);
        let report = grad_check(&mut store, 1e-5, 10.0, |t, s| {
            let x: Vec<Vec<Val>> = (0..k.len())
                .map(|i| (0..2).map(|j| t.param(s, feat_slot, i * 2 + j)).collect())
                .collect();
            let z: Vec<Vec<Val>> = (0..3)
                .map(|i| (0..2).map(|j| t.param(s, coord_slot, i * 2 + j)).collect())
                .collect();
            let g = gnn_layer(t, s, &gnn, &k, &x[..3]);
            let m = tnn_layer(t, s, &tnn, &k, &x);
            let (ex, ez) = empsn_layer(t, s, &empsn, &k, &x, &z);
            let mut total = Vec::new();
            for row in g.iter().chain(&m).chain(&ex).chain(&ez) {
                total.extend(row.iter().copied());
            }
            t.sum(&total)
        });
        assert!(report.passed(1e-4), "worst {:?}", report.worst);
    }
}
