//! The acceptance gate. Nine independent checks, each printing one
//! PASS/FAIL line (run with `--nocapture` to see them on success) and each
//! carrying its own wall-clock budget. Tolerances are pinned at the top of
//! every check, next to the quantities they guard.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topnet::autodiff::{grad_check, ParamStore, Tape, Val};
use topnet::complex::{graph_complex, AttributedComplex, SimplicialComplex};
use topnet::expressivity::{find_counterexample_pair, validate_certificate, Certificate};
use topnet::expressivity::connected_graphs_up_to_iso;
use topnet::filtration::{
    apply_rigid, random_rotation, rank_on_tape, vertex_color_rank, FixedFilter,
};
use topnet::harness::{
    ablation_experiment, classify_experiment, invariance_experiment, ode_error_experiment,
};
use topnet::model::{
    backbone_forward, cross_entropy, embed_all, forward, head_forward, readout, BackboneKind,
    BackboneNets, DepthSpec, FilterKind, HeadNets, HeadSpec, PoolKind, TopNet, TopNetSpec,
};
use topnet::persistence::{
    betti_oracle, diagram_oracle, diff_pairs, diff_rephine, pd_dim0_unionfind,
    pd_matrix_reduction, rephine_diagram,
};
use topnet::tnn::gnn_layer;
use topnet::vectorize::{perslay_vectorize, rephine_vectorize, togl_vectorize};

struct Criterion {
    n: usize,
    name: &'static str,
    budget: Duration,
    started: Instant,
    failures: Vec<String>,
}

impl Criterion {
    fn new(n: usize, name: &'static str, budget_secs: u64) -> Self {
        Self {
            n,
            name,
            budget: Duration::from_secs(budget_secs),
            started: Instant::now(),
            failures: Vec::new(),
        }
    }

    fn check(&mut self, cond: bool, msg: impl FnOnce() -> String) {
        if !cond {
            self.failures.push(msg());
        }
    }

    fn finish(mut self) {
        let elapsed = self.started.elapsed();
        if elapsed > self.budget {
            self.failures
                .push(format!("took {elapsed:.1?}, budget {:?}", self.budget));
        }
        let status = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {} {status} ({elapsed:.1?}): {}", self.n, self.name);
        assert!(
            self.failures.is_empty(),
            "criterion {} failed:\n  {}",
            self.n,
            self.failures.join("\n  ")
        );
    }
}

fn values(t: &Tape, vals: &[Val]) -> Vec<f64> {
    vals.iter().map(|&v| t.value(v)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_colors(rng: &mut ChaCha8Rng, k: &SimplicialComplex, w: usize) -> Vec<Vec<f64>> {
    (0..k.len()).map(|_| (0..w).map(|_| rng.gen_range(0.2..1.2)).collect()).collect()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SimplicialComplex {
    loop {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.gen_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        if !edges.is_empty() {
            return graph_complex(n, &edges);
        }
    }
}

#[test]
fn criterion_1_reduction_union_find_and_betti_bookkeeping_agree() {
    let mut c = Criterion::new(1, "diagram oracles agree integer-exactly on all small graphs", 60);
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let mut classes = 0usize;
    for n in 1..=5 {
        for edges in connected_graphs_up_to_iso(n) {
            classes += 1;
            let k = graph_complex(n, &edges).clique_lift(2).unwrap();
            for _ in 0..5 {
                let vertex_colors: Vec<Vec<f64>> =
                    (0..n).map(|_| vec![f64::from(rng.gen_range(1..=4))]).collect();
                let ac =
                    AttributedComplex::from_vertex_colors(k.clone(), vertex_colors).unwrap();
                let filt = vertex_color_rank(&ac, FixedFilter::ColorSum).unwrap();
                let pd = pd_matrix_reduction(&k, &filt, k.dim());
                let uf = pd_dim0_unionfind(&k, &filt);
                c.check(pd.multiset(0) == uf.multiset(0), || {
                    format!("n={n}: union-find and reduction differ in dim 0")
                });
                let oracle = diagram_oracle(&k, &filt, k.dim());
                for (p, oracle_pairs) in oracle.iter().enumerate() {
                    let mut reduced: Vec<(f64, Option<f64>)> = pd
                        .pairs(p)
                        .iter()
                        .filter(|pr| pr.death != Some(pr.birth))
                        .map(|pr| (pr.birth, pr.death))
                        .collect();
                    reduced.sort_by(|a, b| {
                        a.0.total_cmp(&b.0).then(
                            a.1.unwrap_or(f64::INFINITY)
                                .total_cmp(&b.1.unwrap_or(f64::INFINITY)),
                        )
                    });
                    c.check(&reduced == oracle_pairs, || {
                        format!("n={n} p={p}: reduction disagrees with bookkeeping")
                    });
                }
                for p in 0..=k.dim() {
                    c.check(pd.essential_count(p) == betti_oracle(&k, p), || {
                        format!("n={n} p={p}: essential count is not the Betti number")
                    });
                }
            }
        }
    }
    c.check(classes == 31, || format!("enumerated {classes} classes, expected 31"));
    c.finish();
}

#[test]
fn criterion_2_geometric_diagrams_ignore_rigid_motions() {
    let mut c = Criterion::new(2, "geometric diagrams invariant under 100x10 rigid motions", 60);
    let report = invariance_experiment(100, 10, 2026);
    c.check(report.n_complexes == 100, || {
        format!("ran {} complexes, expected 100", report.n_complexes)
    });
    c.check(report.max_deviation <= 1e-9, || {
        format!("max deviation {} exceeds 1e-9", report.max_deviation)
    });
    c.finish();
}

#[test]
fn criterion_3_expressivity_witness_found_and_fixture_revalidates() {
    let mut c = Criterion::new(3, "refinement-tied pair with differing diagrams within 8 vertices", 600);
    let search_started = Instant::now();
    let cert = find_counterexample_pair(8);
    let search_elapsed = search_started.elapsed();
    c.check(cert.is_some(), || "no witness pair within the vertex bound".into());
    if let Some(cert) = &cert {
        c.check(cert.left.vertices <= 8 && cert.right.vertices <= 8, || {
            "witness exceeds the vertex bound".into()
        });
        c.check(validate_certificate(cert).is_ok(), || {
            "freshly found certificate fails validation".into()
        });
    }
    c.check(search_elapsed < Duration::from_secs(600), || {
        format!("search took {search_elapsed:.1?}")
    });

    let fixture: Certificate =
        serde_json::from_str(include_str!("../fixtures/expressivity_certificate.json"))
            .expect("fixture parses");
    let revalidate_started = Instant::now();
    let revalidation = validate_certificate(&fixture);
    let revalidate_elapsed = revalidate_started.elapsed();
    c.check(revalidation.is_ok(), || {
        format!("shipped certificate fails revalidation: {revalidation:?}")
    });
    c.check(revalidate_elapsed < Duration::from_secs(1), || {
        format!("revalidation took {revalidate_elapsed:.1?}, budget 1s")
    });
    c.finish();
}

#[test]
fn criterion_4_diagram_features_separate_what_message_passing_cannot() {
    let mut c = Criterion::new(4, "refinement-tied pairs: plain GNN at chance, diagram model >= 95%", 600);
    let report = classify_experiment(100, 2026).expect("experiment runs");
    c.check(report.n_graphs >= 200, || {
        format!("{} graphs, need at least 200", report.n_graphs)
    });
    c.check(
        (0.45..=0.55).contains(&report.gin_test_accuracy),
        || format!("plain GNN accuracy {} outside [0.45, 0.55]", report.gin_test_accuracy),
    );
    c.check(report.topnet_test_accuracy >= 0.95, || {
        format!("diagram model accuracy {} below 0.95", report.topnet_test_accuracy)
    });
    c.finish();
}

fn tiny_spec(backbone: BackboneKind, head: HeadSpec, max_dim: usize) -> TopNetSpec {
    TopNetSpec {
        input_width: 2,
        feature_width: 3,
        n_classes: 2,
        max_dim,
        backbone,
        head,
        depth: DepthSpec::Discrete { layers: 1 },
        pool: PoolKind::Sum,
        msg_hidden: 3,
        update_hidden: 3,
    }
}

#[test]
fn criterion_5_gradients_match_central_differences_on_50_seeds() {
    let mut c = Criterion::new(5, "reverse-mode gradients within 1e-4 of central differences", 120);
    let tol = 1e-4;
    let mut checked = [0usize; 3];
    for seed in 0..50u64 {
        let kind = (seed % 3) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let mut store = ParamStore::new(700 + seed);
        let k = random_graph(&mut rng, 5, 0.5);
        let report = match kind {
            // Filter MLP -> ranks -> reduction -> vectorizer -> loss, no
            // backbone or classifier in the way.
            0 => {
                let spec = tiny_spec(
                    BackboneKind::Identity,
                    HeadSpec::Togl { n_filtrations: 2, filter_hidden: 3, ph_width: 2 },
                    1,
                );
                let model = TopNet::new(&mut store, spec);
                let colors = random_colors(&mut rng, &k, 2);
                grad_check(&mut store, 1e-6, 10.0, |t, store| {
                    let x = embed_all(t, store, &model, &colors).unwrap();
                    let (r, m) = head_forward(t, store, &model.layers[0].head, &k, &x);
                    let mut parts: Vec<Val> = m.into_iter().flatten().collect();
                    parts.extend(r.unwrap().into_iter().flatten());
                    sum_squares(t, &parts)
                })
            }
            1 => {
                let spec = tiny_spec(
                    BackboneKind::Identity,
                    HeadSpec::Perslay {
                        n_filtrations: 1,
                        filter_hidden: 3,
                        ph_width: 2,
                        ph_dims: 1,
                        filter: FilterKind::Learned,
                    },
                    1,
                );
                let model = TopNet::new(&mut store, spec);
                let colors = random_colors(&mut rng, &k, 2);
                grad_check(&mut store, 1e-6, 10.0, |t, store| {
                    let x = embed_all(t, store, &model, &colors).unwrap();
                    let (_, m) = head_forward(t, store, &model.layers[0].head, &k, &x);
                    let parts: Vec<Val> = m.into_iter().flatten().collect();
                    sum_squares(t, &parts)
                })
            }
            // Full one-layer forward, rotating the head kind.
            _ => {
                let head = match (seed / 3) % 3 {
                    0 => HeadSpec::Togl { n_filtrations: 1, filter_hidden: 3, ph_width: 2 },
                    1 => HeadSpec::Rephine { n_filtrations: 1, filter_hidden: 3, ph_width: 2 },
                    _ => HeadSpec::Perslay {
                        n_filtrations: 1,
                        filter_hidden: 3,
                        ph_width: 2,
                        ph_dims: 1,
                        filter: FilterKind::Learned,
                    },
                };
                let spec = tiny_spec(BackboneKind::Gin, head, 1);
                let model = TopNet::new(&mut store, spec);
                let colors = random_colors(&mut rng, &k, 2);
                let label = (seed % 2) as usize;
                grad_check(&mut store, 1e-6, 10.0, |t, store| {
                    let logits = forward(t, store, &model, &k, &colors, None).unwrap();
                    cross_entropy(t, &logits, label)
                })
            }
        };
        if report.skipped_tie_margin {
            continue;
        }
        checked[kind] += 1;
        c.check(report.max_rel_err < tol, || {
            format!("seed {seed} kind {kind}: rel err {} ({:?})", report.max_rel_err, report.worst)
        });
    }
    let total: usize = checked.iter().sum();
    c.check(total >= 35, || {
        format!("only {total}/50 seeds usable, the rest hit tie margins")
    });
    c.check(checked.iter().all(|&n| n >= 5), || {
        format!("a path kind was starved: {checked:?}")
    });
    c.finish();
}

fn sum_squares(t: &mut Tape, vals: &[Val]) -> Val {
    let squares: Vec<Val> = vals.iter().map(|&v| t.mul(v, v)).collect();
    t.sum(&squares)
}

#[test]
fn criterion_6_euler_error_halves_with_the_step_and_the_reference_is_converged() {
    let mut c = Criterion::new(6, "first-order state error decay with a converged reference", 120);
    let report = ode_error_experiment(&[8, 16, 32, 64], 2026).expect("experiment runs");
    c.check(report.ratios.len() == 3, || "expected three halving ratios".into());
    for (i, &ratio) in report.ratios.iter().enumerate() {
        c.check((0.35..=0.65).contains(&ratio), || {
            format!("e_v ratio {i} = {ratio} outside [0.35, 0.65]")
        });
    }
    for w in report.rows.windows(2) {
        c.check(w[1].e_r <= w[0].e_r * (1.0 + 1e-9), || {
            format!("e_r increased: {} -> {}", w[0].e_r, w[1].e_r)
        });
    }
    c.check(report.ref_consistency_rel_change < 0.01, || {
        format!("reference moves by {} on halving", report.ref_consistency_rel_change)
    });
    c.finish();
}

fn add_vecs(t: &mut Tape, a: &[Val], b: &[Val]) -> Vec<Val> {
    a.iter().zip(b).map(|(&x, &y)| t.add(x, y)).collect()
}

fn acc_vecs(t: &mut Tape, acc: &mut Option<Vec<Val>>, part: Vec<Val>) {
    *acc = Some(match acc.take() {
        None => part,
        Some(prev) => add_vecs(t, &prev, &part),
    });
}

#[test]
fn criterion_7_model_matches_directly_coded_pipelines() {
    let mut c = Criterion::new(7, "layer routing reproduces hand-coded pipelines to 1e-12", 60);
    let tol = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(7100);

    // Vertex-filtration head with per-vertex routing on a message-passing
    // backbone.
    for round in 0..20 {
        let mut store = ParamStore::new(7200 + round);
        let spec = tiny_spec(
            BackboneKind::Gin,
            HeadSpec::Togl { n_filtrations: 2, filter_hidden: 3, ph_width: 2 },
            1,
        );
        let model = TopNet::new(&mut store, spec);
        let n = rng.gen_range(5..=8);
        let k = random_graph(&mut rng, n, 0.35);
        let colors = random_colors(&mut rng, &k, 2);
        let mut t = Tape::new();
        let got = forward(&mut t, &store, &model, &k, &colors, None).unwrap();

        let mut x = embed_all(&mut t, &store, &model, &colors).unwrap();
        let layer = &model.layers[0];
        let (filters, v) = match &layer.head {
            HeadNets::Togl { filters, v } => (filters, v),
            _ => unreachable!(),
        };
        let nv = k.vertex_count();
        let mut r_acc: Vec<Option<Vec<Val>>> = vec![None; nv];
        let mut m_acc: Option<Vec<Val>> = None;
        for filter in filters {
            let mut face_vals = HashMap::new();
            for vid in 0..nv {
                face_vals.insert(vid, filter.eval(&mut t, &store, &x[vid]));
            }
            let (filt, rank_vals) = rank_on_tape(&mut t, &k, 0, &face_vals).unwrap();
            let pd = pd_matrix_reduction(&k, &filt, 1);
            let diffs = diff_pairs(&mut t, &k, &filt, &pd, &rank_vals);
            let idx = pd.vertex_pair_indices(nv);
            let d0: Vec<[Val; 2]> =
                idx.iter().map(|&i| [diffs[i].birth, diffs[i].death]).collect();
            let d1: Vec<Vec<Val>> = diffs
                .iter()
                .filter(|p| p.dim == 1)
                .map(|p| vec![p.birth, p.death])
                .collect();
            let (r, m1) = togl_vectorize(&mut t, &store, v, &d0, &d1);
            for (vi, rv) in r.into_iter().enumerate() {
                acc_vecs(&mut t, &mut r_acc[vi], rv);
            }
            acc_vecs(&mut t, &mut m_acc, m1);
        }
        let gnn = match &layer.backbone {
            BackboneNets::Gin(g) => g,
            _ => unreachable!(),
        };
        let refined = gnn_layer(&mut t, &store, gnn, &k, &x[..nv]);
        for vid in 0..nv {
            x[vid] = add_vecs(&mut t, &refined[vid], &r_acc[vid].take().unwrap());
        }
        let want = readout(&mut t, &store, &model, &k, &x, &[m_acc.unwrap()]);
        let diff = max_abs_diff(&values(&t, &got), &values(&t, &want));
        c.check(diff < tol, || format!("per-vertex routing round {round}: diff {diff}"));
    }

    // Pure diagram-vectorization head on an identity backbone.
    for round in 0..20 {
        let mut store = ParamStore::new(7300 + round);
        let spec = tiny_spec(
            BackboneKind::Identity,
            HeadSpec::Perslay {
                n_filtrations: 2,
                filter_hidden: 3,
                ph_width: 2,
                ph_dims: 1,
                filter: FilterKind::Learned,
            },
            1,
        );
        let model = TopNet::new(&mut store, spec);
        let n = rng.gen_range(5..=8);
        let k = random_graph(&mut rng, n, 0.35);
        let colors = random_colors(&mut rng, &k, 2);
        let mut t = Tape::new();
        let got = forward(&mut t, &store, &model, &k, &colors, None).unwrap();

        let x = embed_all(&mut t, &store, &model, &colors).unwrap();
        let (filters, pls) = match &model.layers[0].head {
            HeadNets::Perslay { filters, layers } => (filters, layers),
            _ => unreachable!(),
        };
        let nv = k.vertex_count();
        let mut m_all: Vec<Option<Vec<Val>>> = vec![None; 2];
        for filter in filters {
            let mut face_vals = HashMap::new();
            for vid in 0..nv {
                face_vals.insert(vid, filter.eval(&mut t, &store, &x[vid]));
            }
            let (filt, rank_vals) = rank_on_tape(&mut t, &k, 0, &face_vals).unwrap();
            let pd = pd_matrix_reduction(&k, &filt, 1);
            let diffs = diff_pairs(&mut t, &k, &filt, &pd, &rank_vals);
            for dim in 0..2 {
                let pts: Vec<Vec<Val>> = diffs
                    .iter()
                    .filter(|p| p.dim == dim)
                    .map(|p| vec![p.birth, p.death])
                    .collect();
                let out = perslay_vectorize(&mut t, &store, &pls[dim], &pts);
                acc_vecs(&mut t, &mut m_all[dim], out);
            }
        }
        let m_all: Vec<Vec<Val>> = m_all.into_iter().map(|m| m.unwrap()).collect();
        let want = readout(&mut t, &store, &model, &k, &x, &m_all);
        let diff = max_abs_diff(&values(&t, &got), &values(&t, &want));
        c.check(diff < tol, || format!("diagram vectorization round {round}: diff {diff}"));
    }

    // Vertex-edge tuple head on a lifted complex; the head works on the
    // 1-skeleton while the backbone sees every stratum.
    for round in 0..20 {
        let mut store = ParamStore::new(7400 + round);
        let spec = tiny_spec(
            BackboneKind::Tnn,
            HeadSpec::Rephine { n_filtrations: 2, filter_hidden: 3, ph_width: 2 },
            2,
        );
        let model = TopNet::new(&mut store, spec);
        let n = rng.gen_range(5..=7);
        let k = random_graph(&mut rng, n, 0.45).clique_lift(2).unwrap();
        let colors = random_colors(&mut rng, &k, 2);
        let mut t = Tape::new();
        let got = forward(&mut t, &store, &model, &k, &colors, None).unwrap();

        let x = embed_all(&mut t, &store, &model, &colors).unwrap();
        let (fv, fe, v) = match &model.layers[0].head {
            HeadNets::Rephine { fv, fe, v } => (fv, fe, v),
            _ => unreachable!(),
        };
        let skel = k.skeleton(1);
        let nv = k.vertex_count();
        let mut m_acc: Option<Vec<Val>> = None;
        for (filter_v, filter_e) in fv.iter().zip(fe) {
            let vertex_vals: Vec<Val> =
                (0..nv).map(|vid| filter_v.eval(&mut t, &store, &x[vid])).collect();
            let edge_vals: Vec<Val> = skel
                .stratum(1)
                .map(|id| filter_e.eval(&mut t, &store, &x[id]))
                .collect();
            let f_v: Vec<f64> = values(&t, &vertex_vals);
            let f_e: Vec<f64> = values(&t, &edge_vals);
            let rd = rephine_diagram(&skel, &f_v, &f_e).unwrap();
            let dr = diff_rephine(&mut t, &skel, &rd, &vertex_vals, &edge_vals);
            let tuples: Vec<Vec<Val>> = dr.tuples.iter().map(|tp| tp.to_vec()).collect();
            let d1: Vec<Vec<Val>> = dr.dim1.iter().map(|p| vec![p.birth, p.death]).collect();
            let out = rephine_vectorize(&mut t, &store, v, &tuples, &d1);
            acc_vecs(&mut t, &mut m_acc, out);
        }
        let backbone = match &model.layers[0].backbone {
            BackboneNets::Tnn(l) => l,
            _ => unreachable!(),
        };
        let refined = topnet::tnn::tnn_layer(&mut t, &store, backbone, &k, &x);
        let want = readout(&mut t, &store, &model, &k, &refined, &[m_acc.unwrap()]);
        let diff = max_abs_diff(&values(&t, &got), &values(&t, &want));
        c.check(diff < tol, || format!("tuple head round {round}: diff {diff}"));
    }
    c.finish();
}

#[test]
fn criterion_8_geometric_model_is_invariant_and_coordinates_are_equivariant() {
    let mut c = Criterion::new(8, "logits invariant and coordinates equivariant under rigid motions", 60);
    let logits_tol = 1e-7;
    let coords_tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(8100);
    for round in 0..20 {
        let mut store = ParamStore::new(8200 + round);
        let spec = tiny_spec(
            BackboneKind::Empsn,
            HeadSpec::Togl { n_filtrations: 1, filter_hidden: 3, ph_width: 2 },
            2,
        );
        let model = TopNet::new(&mut store, spec);
        let n = rng.gen_range(5..=7);
        let k = random_graph(&mut rng, n, 0.45).clique_lift(2).unwrap();
        let colors = random_colors(&mut rng, &k, 2);
        let coords: Vec<Vec<f64>> =
            (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let rot = random_rotation(&mut rng, 3);
        let trans: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let moved = apply_rigid(&coords, &rot, &trans);

        let mut t = Tape::new();
        let a = forward(&mut t, &store, &model, &k, &colors, Some(&coords)).unwrap();
        let b = forward(&mut t, &store, &model, &k, &colors, Some(&moved)).unwrap();
        let logit_diff = max_abs_diff(&values(&t, &a), &values(&t, &b));
        c.check(logit_diff <= logits_tol, || {
            format!("round {round}: logits moved by {logit_diff}")
        });

        let x = embed_all(&mut t, &store, &model, &colors).unwrap();
        let as_leaves = |t: &mut Tape, pts: &[Vec<f64>]| -> Vec<Vec<Val>> {
            pts.iter().map(|p| p.iter().map(|&v| t.leaf(v)).collect()).collect()
        };
        let z = as_leaves(&mut t, &coords);
        let z_moved = as_leaves(&mut t, &moved);
        let backbone = &model.layers[0].backbone;
        let (_, z_out) = backbone_forward(&mut t, &store, backbone, &k, &x, Some(&z));
        let (_, z_out_moved) = backbone_forward(&mut t, &store, backbone, &k, &x, Some(&z_moved));
        let z_out: Vec<Vec<f64>> =
            z_out.unwrap().iter().map(|p| values(&t, p)).collect();
        let z_out_moved: Vec<Vec<f64>> =
            z_out_moved.unwrap().iter().map(|p| values(&t, p)).collect();
        let expected = apply_rigid(&z_out, &rot, &trans);
        let coord_diff = expected
            .iter()
            .zip(&z_out_moved)
            .map(|(e, g)| max_abs_diff(e, g))
            .fold(0.0, f64::max);
        c.check(coord_diff <= coords_tol, || {
            format!("round {round}: coordinates off by {coord_diff}")
        });
    }
    c.finish();
}

#[test]
fn criterion_9_dimension_2_features_help_exactly_where_voids_live() {
    let mut c = Criterion::new(9, "dimension-2 diagrams: harmless on cycles, decisive on voids", 600);
    let report = ablation_experiment(2026).expect("experiment runs");
    c.check(report.wl_d2_accuracy + 1e-9 >= report.wl_d1_accuracy, || {
        format!(
            "dimension-2 features hurt the cycle task: {} -> {}",
            report.wl_d1_accuracy, report.wl_d2_accuracy
        )
    });
    c.check(
        report.beta2_d2_accuracy - report.beta2_d1_accuracy >= 0.10,
        || {
            format!(
                "void-count gain {} -> {} is under 10 points",
                report.beta2_d1_accuracy, report.beta2_d2_accuracy
            )
        },
    );
    c.finish();
}
