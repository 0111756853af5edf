//! Filtering functions and filtration construction: vertex-color,
//! i-simplex-color, and geometric i-simplex-color rankings of a complex.

use crate::autodiff::{DeepSet, Mlp, ParamStore, Tape, Val};
use crate::complex::{AttributedComplex, GeometricComplex, SimplicialComplex};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiltrationError {
    #[error("filtration dimension {i} exceeds complex dimension {dim}")]
    DimTooHigh { i: usize, dim: usize },
    #[error("nestedness violated: face {face:?} of {simplex:?} has larger rank ({face_rank} > {rank})")]
    Nestedness { simplex: Vec<usize>, face: Vec<usize>, face_rank: f64, rank: f64 },
    #[error("invariant feature needs at least {needs} points, but i={i} gives {got}")]
    InvArity { needs: usize, i: usize, got: usize },
    #[error("rank count {got} does not match simplex count {expected}")]
    RankCount { expected: usize, got: usize },
}

/// A simplex ranking plus the induced nested threshold sequence.
///
/// The traversal order sorts by (rank, dim, id): simplices with equal rank
/// enter dimension-ascending, so faces always precede co-faces (nestedness
/// guarantees a face never outranks its co-face).
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    ranks: Vec<f64>,
    order: Vec<usize>,
    thresholds: Vec<f64>,
    defining_dim: usize,
}

impl Filtration {
    /// Validates nestedness against the complex and precomputes the traversal
    /// order and the threshold sequence (distinct rank values over the
    /// defining dimension).
    pub fn new(
        k: &SimplicialComplex,
        ranks: Vec<f64>,
        defining_dim: usize,
    ) -> Result<Self, FiltrationError> {
        if ranks.len() != k.len() {
            return Err(FiltrationError::RankCount { expected: k.len(), got: ranks.len() });
        }
        for id in 0..k.len() {
            for &face in k.boundary_neighbors(id).expect("valid id") {
                if ranks[face] > ranks[id] {
                    return Err(FiltrationError::Nestedness {
                        simplex: k.simplex(id).vertices().to_vec(),
                        face: k.simplex(face).vertices().to_vec(),
                        face_rank: ranks[face],
                        rank: ranks[id],
                    });
                }
            }
        }
        let mut order: Vec<usize> = (0..k.len()).collect();
        order.sort_by(|&a, &b| {
            ranks[a]
                .total_cmp(&ranks[b])
                .then_with(|| k.simplex(a).dim().cmp(&k.simplex(b).dim()))
                .then_with(|| a.cmp(&b))
        });
        let mut thresholds: Vec<f64> = k.stratum(defining_dim).map(|id| ranks[id]).collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        if thresholds.is_empty() && !ranks.is_empty() {
            thresholds.push(0.0);
        }
        Ok(Self { ranks, order, thresholds, defining_dim })
    }

    pub fn rank(&self, id: usize) -> f64 {
        self.ranks[id]
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }

    /// Simplex ids sorted by (rank, dim, id).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Strictly increasing distinct ranks of the defining dimension.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn defining_dim(&self) -> usize {
        self.defining_dim
    }

    /// Finite stand-in for an infinite death when vectorizing essential
    /// pairs: one past the last threshold.
    pub fn inf_sentinel(&self) -> f64 {
        self.thresholds.last().copied().unwrap_or(0.0) + 1.0
    }

    /// Per-threshold cumulative membership: ids with rank <= threshold. The
    /// final membership is the whole complex.
    pub fn build_thresholds(&self) -> (Vec<f64>, Vec<Vec<usize>>) {
        let memberships = self
            .thresholds
            .iter()
            .map(|&a| {
                self.order
                    .iter()
                    .copied()
                    .filter(|&id| self.ranks[id] <= a)
                    .collect()
            })
            .collect();
        (self.thresholds.clone(), memberships)
    }
}

/// Fixed (parameter-free) filtering functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedFilter {
    /// Mean graph degree of the simplex's vertices, plus one (so isolated
    /// vertices still rank strictly positive).
    Degree,
    /// Sum of the simplex's color channels. Expects positive colors.
    ColorSum,
}

impl FixedFilter {
    pub fn eval(&self, k: &SimplicialComplex, id: usize, color: &[f64]) -> f64 {
        match self {
            FixedFilter::Degree => {
                let vs = k.simplex(id).vertices();
                let total: usize = vs
                    .iter()
                    .map(|&v| {
                        let vid = k.id_of(&[v]).expect("vertex present");
                        k.upper_adjacent(vid).expect("valid id").len()
                    })
                    .sum();
                total as f64 / vs.len() as f64 + 1.0
            }
            FixedFilter::ColorSum => color.iter().sum(),
        }
    }
}

/// A learned filter: softplus(mlp(input)) + eps, strictly positive.
#[derive(Debug, Clone)]
pub struct LearnedFilter {
    pub mlp: Mlp,
    pub eps: f64,
}

impl LearnedFilter {
    pub fn new(store: &mut ParamStore, name: &str, spec: crate::autodiff::MlpSpec) -> Self {
        assert_eq!(spec.output_width(), 1, "filters are scalar-valued");
        Self { mlp: Mlp::new(store, name, spec), eps: 1e-6 }
    }

    pub fn eval(&self, t: &mut Tape, store: &ParamStore, input: &[Val]) -> Val {
        let raw = self.mlp.forward(t, store, input)[0];
        let sp = t.softplus(raw);
        let eps = t.leaf(self.eps);
        t.add(sp, eps)
    }
}

/// Ids of the i-dimensional faces of a simplex, ascending.
fn i_face_ids(k: &SimplicialComplex, id: usize, i: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = k
        .simplex(id)
        .faces_of_dim(i)
        .iter()
        .map(|f| k.id_of(f.vertices()).expect("face closure"))
        .collect();
    ids.sort_unstable();
    ids
}

/// Generic i-simplex-color ranking: rank(σ) is the max filter value over σ's
/// i-faces when dim(σ) >= i, and 0 otherwise. `face_value` is indexed by
/// simplex id and consulted only on the i-stratum.
pub fn rank_by_max(
    k: &SimplicialComplex,
    i: usize,
    face_value: impl Fn(usize) -> f64,
) -> Result<Filtration, FiltrationError> {
    if !k.is_empty() && i > k.dim() {
        return Err(FiltrationError::DimTooHigh { i, dim: k.dim() });
    }
    let mut ranks = vec![0.0; k.len()];
    for id in 0..k.len() {
        if k.simplex(id).dim() >= i {
            ranks[id] = i_face_ids(k, id, i)
                .into_iter()
                .map(&face_value)
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Filtration::new(k, ranks, i)
}

/// Vertex-color filtration: rank(σ) = max over vertices of σ of f.
pub fn vertex_color_rank(
    ac: &AttributedComplex,
    f: FixedFilter,
) -> Result<Filtration, FiltrationError> {
    i_simplex_color_rank(ac, 0, f)
}

/// i-simplex-color filtration from a fixed filter on i-simplex colors.
pub fn i_simplex_color_rank(
    ac: &AttributedComplex,
    i: usize,
    f: FixedFilter,
) -> Result<Filtration, FiltrationError> {
    rank_by_max(&ac.complex, i, |id| f.eval(&ac.complex, id, ac.color(id)))
}

/// E(n)- and S_n-invariant features of a simplex's vertex positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvFeature {
    MaxPairwiseDistance,
    SumPairwiseDistance,
    /// sqrt(|det Gram|) / k! of the edge vectors from the first vertex: the
    /// k-volume of the simplex.
    VolumeProxy,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl InvFeature {
    /// Minimum number of points the feature is defined on.
    pub fn min_points(&self) -> usize {
        2
    }

    pub fn eval(&self, points: &[&[f64]]) -> f64 {
        match self {
            InvFeature::MaxPairwiseDistance => {
                let mut best: f64 = 0.0;
                for (i, a) in points.iter().enumerate() {
                    for b in &points[i + 1..] {
                        best = best.max(euclidean(a, b));
                    }
                }
                best
            }
            InvFeature::SumPairwiseDistance => {
                let mut total = 0.0;
                for (i, a) in points.iter().enumerate() {
                    for b in &points[i + 1..] {
                        total += euclidean(a, b);
                    }
                }
                total
            }
            InvFeature::VolumeProxy => {
                let kdim = points.len() - 1;
                if kdim == 0 {
                    return 0.0;
                }
                let diffs: Vec<Vec<f64>> = points[1..]
                    .iter()
                    .map(|p| p.iter().zip(points[0]).map(|(a, b)| a - b).collect())
                    .collect();
                let mut gram = vec![vec![0.0; kdim]; kdim];
                for r in 0..kdim {
                    for c in 0..kdim {
                        gram[r][c] = diffs[r].iter().zip(&diffs[c]).map(|(a, b)| a * b).sum();
                    }
                }
                let det = det_in_place(gram);
                let fact: f64 = (1..=kdim).map(|x| x as f64).product();
                det.abs().sqrt() / fact
            }
        }
    }
}

fn det_in_place(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    det
}

/// Geometric i-simplex-color filtration: rank(σ) = max over i-faces τ of
/// f(color(τ), inv(positions of τ)) when dim(σ) >= i, else 0.
pub fn geometric_rank(
    gc: &GeometricComplex,
    i: usize,
    inv: InvFeature,
    f: impl Fn(&[f64], f64) -> f64,
) -> Result<Filtration, FiltrationError> {
    if i + 1 < inv.min_points() {
        return Err(FiltrationError::InvArity { needs: inv.min_points(), i, got: i + 1 });
    }
    let k = &gc.attributed.complex;
    rank_by_max(k, i, |id| {
        let pts: Vec<&[f64]> = k.simplex(id).vertices().iter().map(|&v| {
            let vid = k.id_of(&[v]).expect("vertex present");
            gc.coord(vid)
        }).collect();
        f(gc.attributed.color(id), inv.eval(&pts))
    })
}

/// Tape-valued ranking for learned filters: `face_vals[id]` holds the filter
/// output of each i-simplex. Returns the combinatorial filtration plus one
/// differentiable rank per simplex (argmax ties route to the lowest face id).
pub fn rank_on_tape(
    t: &mut Tape,
    k: &SimplicialComplex,
    i: usize,
    face_vals: &std::collections::HashMap<usize, Val>,
) -> Result<(Filtration, Vec<Val>), FiltrationError> {
    if !k.is_empty() && i > k.dim() {
        return Err(FiltrationError::DimTooHigh { i, dim: k.dim() });
    }
    let zero = t.leaf(0.0);
    let mut rank_vals = vec![zero; k.len()];
    for id in 0..k.len() {
        if k.simplex(id).dim() >= i {
            let vals: Vec<Val> = i_face_ids(k, id, i)
                .into_iter()
                .map(|fid| face_vals[&fid])
                .collect();
            rank_vals[id] = t.max_fold(&vals).expect("dim >= i implies at least one i-face");
        }
    }
    let ranks: Vec<f64> = rank_vals.iter().map(|&v| t.value(v)).collect();
    let filt = Filtration::new(k, ranks, i)?;
    Ok((filt, rank_vals))
}

/// Permutation-invariant color synthesis for higher-order simplices.
pub enum SynthesisFn<'a> {
    ElementwiseSum,
    DeepSet { ds: &'a DeepSet, store: &'a ParamStore },
}

/// Gives every simplex of dim >= 1 the color φ({vertex colors}); vertices
/// keep their colors. φ must preserve the color width.
pub fn synthesize_higher_colors(
    ac: &AttributedComplex,
    phi: &SynthesisFn,
) -> Result<AttributedComplex, crate::complex::ComplexError> {
    let k = &ac.complex;
    let mut colors: Vec<Vec<f64>> = Vec::with_capacity(k.len());
    for id in 0..k.len() {
        let s = k.simplex(id);
        if s.dim() == 0 {
            colors.push(ac.color(id).to_vec());
            continue;
        }
        let member_colors: Vec<&[f64]> = s
            .vertices()
            .iter()
            .map(|&v| ac.color(k.id_of(&[v]).expect("vertex present")))
            .collect();
        let color = match phi {
            SynthesisFn::ElementwiseSum => {
                let mut acc = vec![0.0; ac.width()];
                for c in &member_colors {
                    for (a, b) in acc.iter_mut().zip(c.iter()) {
                        *a += b;
                    }
                }
                acc
            }
            SynthesisFn::DeepSet { ds, store } => {
                assert_eq!(ds.output_width(), ac.width(), "synthesis must preserve color width");
                let mut t = Tape::new();
                let items: Vec<Vec<Val>> = member_colors
                    .iter()
                    .map(|c| c.iter().map(|&x| t.leaf(x)).collect())
                    .collect();
                let out = ds.forward(&mut t, store, &items);
                out.iter().map(|&v| t.value(v)).collect()
            }
        };
        colors.push(color);
    }
    AttributedComplex::new(k.clone(), colors)
}

/// A random orthogonal matrix: QR of a standard-normal matrix via
/// Gram-Schmidt, sign-corrected so the R diagonal is positive.
pub fn random_rotation(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    loop {
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        // Box-Muller
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect()
            })
            .collect();
        // columns of `a` orthonormalized
        let mut q: Vec<Vec<f64>> = vec![vec![0.0; n]; n];
        let mut ok = true;
        for j in 0..n {
            let mut col: Vec<f64> = (0..n).map(|r| a[r][j]).collect();
            for prev in 0..j {
                let dot: f64 = (0..n).map(|r| q[r][prev] * col[r]).sum();
                for r in 0..n {
                    col[r] -= dot * q[r][prev];
                }
            }
            let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                ok = false;
                break;
            }
            // sign correction: make the implied R[j][j] = <a_j, q_j> positive
            let sign = if col.iter().zip((0..n).map(|r| a[r][j])).map(|(c, av)| c * av).sum::<f64>()
                >= 0.0
            {
                1.0
            } else {
                -1.0
            };
            for r in 0..n {
                q[r][j] = sign * col[r] / norm;
            }
        }
        if ok {
            return q;
        }
    }
}

/// Applies z -> R z + t to every coordinate row.
pub fn apply_rigid(coords: &[Vec<f64>], rot: &[Vec<f64>], trans: &[f64]) -> Vec<Vec<f64>> {
    coords
        .iter()
        .map(|z| {
            (0..trans.len())
                .map(|r| {
                    trans[r] + rot[r].iter().zip(z).map(|(rc, zc)| rc * zc).sum::<f64>()
                })
                .collect()
        })
        .collect()
}
