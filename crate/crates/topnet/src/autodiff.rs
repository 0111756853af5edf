//! Scalar reverse-mode automatic differentiation plus the small neural-net
//! building blocks (MLPs, DeepSets) and optimizers used by every learned map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("checkpoint header mismatch: {0}")]
    Header(String),
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param { slot: u32, idx: u32 },
    Add(Val, Val),
    Sub(Val, Val),
    Mul(Val, Val),
    Div(Val, Val),
    Neg(Val),
    Exp(Val),
    Ln(Val),
    Sqrt(Val),
    Tanh(Val),
    Relu(Val),
    Softplus(Val),
    Abs(Val),
    /// Ties route the gradient to the left argument.
    Max(Val, Val),
    /// Ties route the gradient to the left argument.
    Min(Val, Val),
}

/// Append-only scalar computation graph. Nodes are topologically ordered by
/// construction; the backward pass visits them once in reverse.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<f64>,
    /// Smallest distance from a non-smooth decision boundary seen while
    /// recording (max/min argument gap, relu/abs input magnitude). Finite
    /// differencing is unreliable below this margin.
    kink_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { ops: Vec::new(), vals: Vec::new(), kink_margin: f64::INFINITY }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Val) -> f64 {
        self.vals[v.0 as usize]
    }

    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Folds an externally-computed stability margin into the tape's kink
    /// margin. Combinatorial stages (persistence pairings, sort orders) call
    /// this so finite-difference checks know when a perturbation could flip a
    /// discrete decision the tape cannot see.
    pub fn note_margin(&mut self, m: f64) {
        self.kink_margin = self.kink_margin.min(m);
    }

    fn push(&mut self, op: Op, value: f64) -> Val {
        let id = Val(self.ops.len() as u32);
        self.ops.push(op);
        self.vals.push(value);
        id
    }

    pub fn leaf(&mut self, value: f64) -> Val {
        self.push(Op::Leaf, value)
    }

    /// Registers one scalar of a stored parameter tensor on the tape.
    pub fn param(&mut self, store: &ParamStore, slot: usize, idx: usize) -> Val {
        let value = store.tensors[slot].values[idx];
        self.push(Op::Param { slot: slot as u32, idx: idx as u32 }, value)
    }

    pub fn add(&mut self, a: Val, b: Val) -> Val {
        self.push(Op::Add(a, b), self.vals[a.0 as usize] + self.vals[b.0 as usize])
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Val {
        self.push(Op::Sub(a, b), self.vals[a.0 as usize] - self.vals[b.0 as usize])
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Val {
        self.push(Op::Mul(a, b), self.vals[a.0 as usize] * self.vals[b.0 as usize])
    }

    pub fn div(&mut self, a: Val, b: Val) -> Val {
        self.push(Op::Div(a, b), self.vals[a.0 as usize] / self.vals[b.0 as usize])
    }

    pub fn neg(&mut self, a: Val) -> Val {
        self.push(Op::Neg(a), -self.vals[a.0 as usize])
    }

    pub fn exp(&mut self, a: Val) -> Val {
        self.push(Op::Exp(a), self.vals[a.0 as usize].exp())
    }

    pub fn ln(&mut self, a: Val) -> Val {
        self.push(Op::Ln(a), self.vals[a.0 as usize].ln())
    }

    pub fn sqrt(&mut self, a: Val) -> Val {
        self.push(Op::Sqrt(a), self.vals[a.0 as usize].sqrt())
    }

    pub fn tanh(&mut self, a: Val) -> Val {
        self.push(Op::Tanh(a), self.vals[a.0 as usize].tanh())
    }

    pub fn relu(&mut self, a: Val) -> Val {
        let x = self.vals[a.0 as usize];
        self.kink_margin = self.kink_margin.min(x.abs());
        self.push(Op::Relu(a), x.max(0.0))
    }

    /// Numerically stable softplus: max(x, 0) + ln(1 + exp(-|x|)).
    pub fn softplus(&mut self, a: Val) -> Val {
        let x = self.vals[a.0 as usize];
        let value = x.max(0.0) + (-x.abs()).exp().ln_1p();
        self.push(Op::Softplus(a), value)
    }

    pub fn abs(&mut self, a: Val) -> Val {
        let x = self.vals[a.0 as usize];
        self.kink_margin = self.kink_margin.min(x.abs());
        self.push(Op::Abs(a), x.abs())
    }

    pub fn max(&mut self, a: Val, b: Val) -> Val {
        let (x, y) = (self.vals[a.0 as usize], self.vals[b.0 as usize]);
        self.kink_margin = self.kink_margin.min((x - y).abs());
        self.push(Op::Max(a, b), if x >= y { x } else { y })
    }

    pub fn min(&mut self, a: Val, b: Val) -> Val {
        let (x, y) = (self.vals[a.0 as usize], self.vals[b.0 as usize]);
        self.kink_margin = self.kink_margin.min((x - y).abs());
        self.push(Op::Min(a, b), if x <= y { x } else { y })
    }

    /// Sum of a slice; the empty sum is a fresh zero leaf.
    pub fn sum(&mut self, xs: &[Val]) -> Val {
        match xs.split_first() {
            None => self.leaf(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &x| self.add(acc, x)),
        }
    }

    /// Left fold of `max`, so argmax ties resolve toward the earliest entry.
    pub fn max_fold(&mut self, xs: &[Val]) -> Option<Val> {
        let (&first, rest) = xs.split_first()?;
        Some(rest.iter().fold(first, |acc, &x| self.max(acc, x)))
    }

    /// Left fold of `min`, so argmin ties resolve toward the earliest entry.
    pub fn min_fold(&mut self, xs: &[Val]) -> Option<Val> {
        let (&first, rest) = xs.split_first()?;
        Some(rest.iter().fold(first, |acc, &x| self.min(acc, x)))
    }

    pub fn scale(&mut self, a: Val, c: f64) -> Val {
        let cv = self.leaf(c);
        self.mul(a, cv)
    }

    /// Reverse pass from a scalar loss. Parameter gradients accumulate into
    /// the store; gradients of other nodes are returned.
    pub fn backward(&self, loss: Val, store: &mut ParamStore) -> Vec<f64> {
        let mut grad = vec![0.0; self.ops.len()];
        grad[loss.0 as usize] = 1.0;
        for i in (0..self.ops.len()).rev() {
            let g = grad[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Leaf => {}
                Op::Param { slot, idx } => {
                    store.tensors[slot as usize].grad[idx as usize] += g;
                }
                Op::Add(a, b) => {
                    grad[a.0 as usize] += g;
                    grad[b.0 as usize] += g;
                }
                Op::Sub(a, b) => {
                    grad[a.0 as usize] += g;
                    grad[b.0 as usize] -= g;
                }
                Op::Mul(a, b) => {
                    grad[a.0 as usize] += g * self.vals[b.0 as usize];
                    grad[b.0 as usize] += g * self.vals[a.0 as usize];
                }
                Op::Div(a, b) => {
                    let bv = self.vals[b.0 as usize];
                    grad[a.0 as usize] += g / bv;
                    grad[b.0 as usize] -= g * self.vals[a.0 as usize] / (bv * bv);
                }
                Op::Neg(a) => grad[a.0 as usize] -= g,
                Op::Exp(a) => grad[a.0 as usize] += g * self.vals[i],
                Op::Ln(a) => grad[a.0 as usize] += g / self.vals[a.0 as usize],
                Op::Sqrt(a) => {
                    grad[a.0 as usize] += g * 0.5 / self.vals[i];
                }
                Op::Tanh(a) => {
                    let y = self.vals[i];
                    grad[a.0 as usize] += g * (1.0 - y * y);
                }
                Op::Relu(a) => {
                    if self.vals[a.0 as usize] > 0.0 {
                        grad[a.0 as usize] += g;
                    }
                }
                Op::Softplus(a) => {
                    let x = self.vals[a.0 as usize];
                    let sig = 1.0 / (1.0 + (-x).exp());
                    grad[a.0 as usize] += g * sig;
                }
                Op::Abs(a) => {
                    let x = self.vals[a.0 as usize];
                    if x > 0.0 {
                        grad[a.0 as usize] += g;
                    } else if x < 0.0 {
                        grad[a.0 as usize] -= g;
                    }
                }
                Op::Max(a, b) => {
                    if self.vals[a.0 as usize] >= self.vals[b.0 as usize] {
                        grad[a.0 as usize] += g;
                    } else {
                        grad[b.0 as usize] += g;
                    }
                }
                Op::Min(a, b) => {
                    if self.vals[a.0 as usize] <= self.vals[b.0 as usize] {
                        grad[a.0 as usize] += g;
                    } else {
                        grad[b.0 as usize] += g;
                    }
                }
            }
        }
        grad
    }
}

/// Elementwise helpers over vectors of tape values.
pub fn vec_add(t: &mut Tape, a: &[Val], b: &[Val]) -> Vec<Val> {
    a.iter().zip(b).map(|(&x, &y)| t.add(x, y)).collect()
}

pub fn vec_sub(t: &mut Tape, a: &[Val], b: &[Val]) -> Vec<Val> {
    a.iter().zip(b).map(|(&x, &y)| t.sub(x, y)).collect()
}

pub fn vec_scale(t: &mut Tape, a: &[Val], c: f64) -> Vec<Val> {
    let cv = t.leaf(c);
    a.iter().map(|&x| t.mul(x, cv)).collect()
}

pub fn vec_zeros(t: &mut Tape, n: usize) -> Vec<Val> {
    (0..n).map(|_| t.leaf(0.0)).collect()
}

pub fn vec_sum(t: &mut Tape, items: &[Vec<Val>], width: usize) -> Vec<Val> {
    let mut acc = vec_zeros(t, width);
    for item in items {
        acc = vec_add(t, &acc, item);
    }
    acc
}

#[derive(Debug, Clone)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named parameter tensors with gradient and Adam-moment accumulators.
/// Initialization draws from a per-tensor RNG seeded by (store seed, name),
/// so values do not depend on registration order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    by_name: HashMap<String, usize>,
    seed: u64,
    adam_t: u64,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    Const(f64),
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { tensors: Vec::new(), by_name: HashMap::new(), seed, adam_t: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a tensor if absent; returns its slot. Shapes are immutable
    /// after creation.
    pub fn get_or_create(&mut self, name: &str, shape: &[usize], init: Init) -> usize {
        if let Some(&slot) = self.by_name.get(name) {
            assert_eq!(
                self.tensors[slot].shape, shape,
                "parameter {name} re-registered with a different shape"
            );
            return slot;
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
        };
        let slot = self.tensors.len();
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.by_name.insert(name.to_string(), slot);
        slot
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn values(&self, slot: usize) -> &[f64] {
        &self.tensors[slot].values
    }

    pub fn values_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.tensors[slot].values
    }

    pub fn grad(&self, slot: usize) -> &[f64] {
        &self.tensors[slot].grad
    }

    pub fn shape(&self, slot: usize) -> &[usize] {
        &self.tensors[slot].shape
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.tensors[slot].name
    }

    pub fn num_slots(&self) -> usize {
        self.tensors.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// Rescales accumulated gradients, turning per-example sums into batch
    /// means before an optimizer step.
    pub fn scale_grads(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_l1(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|g| g.abs())
            .sum()
    }

    /// Plain gradient step; zeroes gradients afterwards.
    pub fn sgd_step(&mut self, lr: f64) {
        for t in &mut self.tensors {
            for (w, g) in t.values.iter_mut().zip(&t.grad) {
                *w -= lr * g;
            }
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Bias-corrected Adam step; zeroes gradients afterwards.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.adam_t += 1;
        let bc1 = 1.0 - beta1.powi(self.adam_t as i32);
        let bc2 = 1.0 - beta2.powi(self.adam_t as i32);
        for t in &mut self.tensors {
            for i in 0..t.values.len() {
                let g = t.grad[i];
                t.m[i] = beta1 * t.m[i] + (1.0 - beta1) * g;
                t.v[i] = beta2 * t.v[i] + (1.0 - beta2) * g * g;
                let mhat = t.m[i] / bc1;
                let vhat = t.v[i] / bc2;
                t.values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Writes a versioned text checkpoint: one `name=shape:values` line per
    /// tensor, values in round-trip f64 formatting.
    pub fn save(&self, w: &mut impl Write) -> Result<(), AutodiffError> {
        writeln!(w, "topnet-params v1 seed={}", self.seed)?;
        for t in &self.tensors {
            let shape = t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let values = t.values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
            writeln!(w, "{}={}:{}", t.name, shape, values)?;
        }
        Ok(())
    }

    pub fn load(r: &mut impl BufRead) -> Result<Self, AutodiffError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| AutodiffError::Header("empty file".into()))??;
        let rest = header
            .strip_prefix("topnet-params v1 seed=")
            .ok_or_else(|| AutodiffError::Header(header.clone()))?;
        let seed: u64 = rest
            .parse()
            .map_err(|e| AutodiffError::Header(format!("bad seed: {e}")))?;
        let mut store = ParamStore::new(seed);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse = |msg: &str| AutodiffError::Parse { line: lineno + 2, msg: msg.to_string() };
            let (name, rest) = line.split_once('=').ok_or_else(|| parse("missing '='"))?;
            let (shape_s, values_s) = rest.split_once(':').ok_or_else(|| parse("missing ':'"))?;
            let shape: Vec<usize> = shape_s
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse(&format!("bad shape: {e}")))?;
            let values: Vec<f64> = if values_s.is_empty() {
                Vec::new()
            } else {
                values_s
                    .split(',')
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse(&format!("bad value: {e}")))?
            };
            if values.len() != shape.iter().product::<usize>() {
                return Err(parse("value count does not match shape"));
            }
            let slot = store.get_or_create(name, &shape, Init::Zeros);
            store.tensors[slot].values = values;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    Tanh,
}

#[derive(Debug, Clone)]
pub struct MlpSpec {
    /// Layer widths, input first: [in, hidden..., out].
    pub widths: Vec<usize>,
    pub activation: Act,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Act) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        Self { widths, activation }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// A multi-layer perceptron over tape values. The activation is applied
/// between layers, not after the last one.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    weight_slots: Vec<usize>,
    bias_slots: Vec<usize>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec) -> Self {
        let mut weight_slots = Vec::new();
        let mut bias_slots = Vec::new();
        for l in 0..spec.widths.len() - 1 {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            weight_slots.push(store.get_or_create(
                &format!("{name}/w{l}"),
                &[fan_out, fan_in],
                Init::Glorot { fan_in, fan_out },
            ));
            bias_slots.push(store.get_or_create(&format!("{name}/b{l}"), &[fan_out], Init::Zeros));
        }
        Self { spec, weight_slots, bias_slots }
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, x: &[Val]) -> Vec<Val> {
        assert_eq!(x.len(), self.spec.input_width(), "MLP input width mismatch");
        let mut cur: Vec<Val> = x.to_vec();
        let last = self.weight_slots.len() - 1;
        for l in 0..self.weight_slots.len() {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut acc = t.param(store, self.bias_slots[l], o);
                for i in 0..fan_in {
                    let w = t.param(store, self.weight_slots[l], o * fan_in + i);
                    let prod = t.mul(w, cur[i]);
                    acc = t.add(acc, prod);
                }
                if l != last {
                    acc = match self.spec.activation {
                        Act::Relu => t.relu(acc),
                        Act::Tanh => t.tanh(acc),
                    };
                }
                next.push(acc);
            }
            cur = next;
        }
        cur
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
pub struct DeepSetSpec {
    pub inner: MlpSpec,
    pub pool: Pool,
    pub outer: MlpSpec,
}

/// DeepSet: inner MLP per element, sum/mean pool, outer MLP. The empty set
/// pools to the zero vector.
#[derive(Debug, Clone)]
pub struct DeepSet {
    pub inner: Mlp,
    pub pool: Pool,
    pub outer: Mlp,
}

impl DeepSet {
    pub fn new(store: &mut ParamStore, name: &str, spec: DeepSetSpec) -> Self {
        assert_eq!(
            spec.inner.output_width(),
            spec.outer.input_width(),
            "DeepSet inner output must match outer input"
        );
        Self {
            inner: Mlp::new(store, &format!("{name}/inner"), spec.inner),
            pool: spec.pool,
            outer: Mlp::new(store, &format!("{name}/outer"), spec.outer),
        }
    }

    pub fn output_width(&self) -> usize {
        self.outer.spec.output_width()
    }

    pub fn forward(&self, t: &mut Tape, store: &ParamStore, items: &[Vec<Val>]) -> Vec<Val> {
        let width = self.inner.spec.output_width();
        let mapped: Vec<Vec<Val>> = items
            .iter()
            .map(|item| self.inner.forward(t, store, item))
            .collect();
        let mut pooled = vec_sum(t, &mapped, width);
        if self.pool == Pool::Mean && !items.is_empty() {
            pooled = vec_scale(t, &pooled, 1.0 / items.len() as f64);
        }
        self.outer.forward(t, store, &pooled)
    }
}

/// One finite-difference comparison for a single parameter scalar.
#[derive(Debug, Clone)]
pub struct GradCheckWorst {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Set when the recorded tape came closer than `margin_factor * h` to a
    /// non-smooth decision boundary; finite differences are then meaningless
    /// and the case must be discarded, not failed.
    pub skipped_tie_margin: bool,
    pub kink_margin: f64,
    pub max_rel_err: f64,
    pub worst: Option<GradCheckWorst>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        !self.skipped_tie_margin && self.max_rel_err < tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences (step `h`) for every parameter scalar in the store.
pub fn grad_check(
    store: &mut ParamStore,
    h: f64,
    margin_factor: f64,
    mut loss_fn: impl FnMut(&mut Tape, &ParamStore) -> Val,
) -> GradCheckReport {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    let kink_margin = tape.kink_margin();
    if kink_margin <= margin_factor * h {
        return GradCheckReport {
            checked: 0,
            skipped_tie_margin: true,
            kink_margin,
            max_rel_err: f64::NAN,
            worst: None,
        };
    }
    tape.backward(loss, store);
    let analytic: Vec<Vec<f64>> = (0..store.num_slots()).map(|s| store.grad(s).to_vec()).collect();
    store.zero_grads();

    let mut report = GradCheckReport {
        checked: 0,
        skipped_tie_margin: false,
        kink_margin,
        max_rel_err: 0.0,
        worst: None,
    };
    for slot in 0..store.num_slots() {
        for i in 0..store.values(slot).len() {
            let orig = store.values(slot)[i];
            store.values_mut(slot)[i] = orig + h;
            let mut tp = Tape::new();
            let lp = loss_fn(&mut tp, store);
            let plus = tp.value(lp);
            store.values_mut(slot)[i] = orig - h;
            let mut tm = Tape::new();
            let lm = loss_fn(&mut tm, store);
            let minus = tm.value(lm);
            store.values_mut(slot)[i] = orig;
            // A perturbed run that crossed a decision boundary invalidates
            // this single comparison.
            if tp.kink_margin() <= 0.0 || tm.kink_margin() <= 0.0 {
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_err(analytic[slot][i], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(GradCheckWorst {
                    name: store.name(slot).to_string(),
                    index: i,
                    analytic: analytic[slot][i],
                    numeric,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;

    #[test]
    fn product_value_and_gradients() {
        let mut store = ParamStore::new(0);
        let a_slot = store.get_or_create("a", &[1], Init::Const(2.0));
        let b_slot = store.get_or_create("b", &[1], Init::Const(3.0));
        let mut t = Tape::new();
        let a = t.param(&store, a_slot, 0);
        let b = t.param(&store, b_slot, 0);
        let loss = t.mul(a, b);
        assert_eq!(t.value(loss), 6.0);
        t.backward(loss, &mut store);
        assert_eq!(store.grad(a_slot), &[3.0]);
        assert_eq!(store.grad(b_slot), &[2.0]);
    }

    #[test]
    fn relu_clamps_and_blocks_gradient() {
        let mut store = ParamStore::new(0);
        let slot = store.get_or_create("x", &[1], Init::Const(-1.0));
        let mut t = Tape::new();
        let x = t.param(&store, slot, 0);
        let y = t.relu(x);
        assert_eq!(t.value(y), 0.0);
        t.backward(y, &mut store);
        assert_eq!(store.grad(slot), &[0.0]);
    }

    #[test]
    fn max_and_min_route_ties_left() {
        let mut store = ParamStore::new(0);
        let a_slot = store.get_or_create("a", &[1], Init::Const(1.5));
        let b_slot = store.get_or_create("b", &[1], Init::Const(1.5));
        let mut t = Tape::new();
        let a = t.param(&store, a_slot, 0);
        let b = t.param(&store, b_slot, 0);
        let m = t.max(a, b);
        t.backward(m, &mut store);
        assert_eq!(store.grad(a_slot), &[1.0]);
        assert_eq!(store.grad(b_slot), &[0.0]);

        store.zero_grads();
        let mut t = Tape::new();
        let a = t.param(&store, a_slot, 0);
        let b = t.param(&store, b_slot, 0);
        let m = t.min(a, b);
        t.backward(m, &mut store);
        assert_eq!(store.grad(a_slot), &[1.0]);
        assert_eq!(store.grad(b_slot), &[0.0]);
        assert_eq!(t.kink_margin(), 0.0);
    }

    #[test]
    fn softplus_matches_closed_form_and_is_positive() {
        let mut t = Tape::new();
        for x in [-30.0, -2.0, 0.0, 0.5, 40.0] {
            let v = t.leaf(x);
            let s = t.softplus(v);
            let expected = if x > 30.0 { x } else { (1.0 + x.exp()).ln() };
            assert!((t.value(s) - expected).abs() < 1e-12, "softplus({x})");
            assert!(t.value(s) >= 0.0);
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut store = ParamStore::new(7);
        let mlp = Mlp::new(&mut store, "mlp", MlpSpec::new(vec![3, 8, 2], Act::Tanh));
        let report = grad_check(&mut store, 1e-5, 10.0, |t, s| {
            let x = [t.leaf(0.3), t.leaf(-1.2), t.leaf(0.7)];
            let y = mlp.forward(t, s, &x);
            let sq: Vec<Val> = y.iter().map(|&v| t.mul(v, v)).collect();
            t.sum(&sq)
        });
        assert!(!report.skipped_tie_margin);
        assert!(report.checked > 0);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn relu_mlp_gradients_match_finite_differences() {
        let mut store = ParamStore::new(19);
        let mlp = Mlp::new(&mut store, "mlp", MlpSpec::new(vec![2, 6, 6, 1], Act::Relu));
        let report = grad_check(&mut store, 1e-5, 10.0, |t, s| {
            let x = [t.leaf(0.9), t.leaf(0.4)];
            let y = mlp.forward(t, s, &x);
            t.mul(y[0], y[0])
        });
        assert!(!report.skipped_tie_margin, "margin {}", report.kink_margin);
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn deepset_empty_set_uses_zero_pool() {
        let mut store = ParamStore::new(3);
        let spec = DeepSetSpec {
            inner: MlpSpec::new(vec![2, 4], Act::Relu),
            pool: Pool::Sum,
            outer: MlpSpec::new(vec![4, 3], Act::Relu),
        };
        let ds = DeepSet::new(&mut store, "ds", spec);
        let mut t = Tape::new();
        let out = ds.forward(&mut t, &store, &[]);
        let zeros = vec_zeros(&mut t, 4);
        let direct = ds.outer.forward(&mut t, &store, &zeros);
        for (a, b) in out.iter().zip(&direct) {
            assert_eq!(t.value(*a), t.value(*b));
        }
    }

    #[test]
    fn deepset_is_permutation_invariant() {
        let mut store = ParamStore::new(11);
        let spec = DeepSetSpec {
            inner: MlpSpec::new(vec![2, 8], Act::Tanh),
            pool: Pool::Mean,
            outer: MlpSpec::new(vec![8, 4], Act::Tanh),
        };
        let ds = DeepSet::new(&mut store, "ds", spec);
        let items: Vec<Vec<f64>> =
            vec![vec![0.1, 1.0], vec![-0.4, 0.2], vec![0.9, -0.3], vec![0.5, 0.5]];
        let mut reference: Option<Vec<f64>> = None;
        for perm in (0..items.len()).permutations(items.len()) {
            let mut t = Tape::new();
            let vals: Vec<Vec<Val>> = perm
                .iter()
                .map(|&i| items[i].iter().map(|&x| t.leaf(x)).collect())
                .collect();
            let out: Vec<f64> = ds
                .forward(&mut t, &store, &vals)
                .iter()
                .map(|&v| t.value(v))
                .collect();
            match &reference {
                None => reference = Some(out),
                Some(r) => {
                    for (a, b) in r.iter().zip(&out) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn deepset_gradients_match_finite_differences() {
        let mut store = ParamStore::new(23);
        let spec = DeepSetSpec {
            inner: MlpSpec::new(vec![2, 6], Act::Tanh),
            pool: Pool::Sum,
            outer: MlpSpec::new(vec![6, 1], Act::Tanh),
        };
        let ds = DeepSet::new(&mut store, "ds", spec);
        let report = grad_check(&mut store, 1e-5, 10.0, |t, s| {
            let items: Vec<Vec<Val>> = vec![
                vec![t.leaf(1.0), t.leaf(2.0)],
                vec![t.leaf(0.5), t.leaf(0.5)],
                vec![t.leaf(-1.0), t.leaf(0.25)],
            ];
            let y = ds.forward(t, s, &items);
            t.mul(y[0], y[0])
        });
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn sgd_step_updates_and_zeroes() {
        let mut store = ParamStore::new(0);
        let slot = store.get_or_create("w", &[1], Init::Const(1.0));
        let mut t = Tape::new();
        let w = t.param(&store, slot, 0);
        let two = t.leaf(2.0);
        let loss = t.mul(w, two);
        t.backward(loss, &mut store);
        store.sgd_step(0.1);
        assert!((store.values(slot)[0] - 0.8).abs() < 1e-15);
        assert_eq!(store.grad(slot), &[0.0]);
        // zero grad: no change
        store.sgd_step(0.1);
        assert!((store.values(slot)[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let g = 0.5;
        let mut store = ParamStore::new(0);
        let slot = store.get_or_create("w", &[1], Init::Const(1.0));
        let mut t = Tape::new();
        let w = t.param(&store, slot, 0);
        let c = t.leaf(g);
        let loss = t.mul(w, c);
        t.backward(loss, &mut store);
        store.adam_step(lr, b1, b2, eps);
        // one bias-corrected step, written out longhand
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1);
        let vhat = v / (1.0 - b2);
        let expected = 1.0 - lr * mhat / (vhat.sqrt() + eps);
        assert!((store.values(slot)[0] - expected).abs() < 1e-15);
        // magnitude is lr times the sign of the gradient, up to eps
        assert!((store.values(slot)[0] - (1.0 - lr)).abs() < 1e-7);
    }

    #[test]
    fn init_is_seed_deterministic_and_order_independent() {
        let mut s1 = ParamStore::new(42);
        let a1 = s1.get_or_create("a", &[4, 4], Init::Glorot { fan_in: 4, fan_out: 4 });
        let b1 = s1.get_or_create("b", &[4], Init::Glorot { fan_in: 4, fan_out: 1 });
        let mut s2 = ParamStore::new(42);
        let b2 = s2.get_or_create("b", &[4], Init::Glorot { fan_in: 4, fan_out: 1 });
        let a2 = s2.get_or_create("a", &[4, 4], Init::Glorot { fan_in: 4, fan_out: 4 });
        assert_eq!(s1.values(a1), s2.values(a2));
        assert_eq!(s1.values(b1), s2.values(b2));
        let mut s3 = ParamStore::new(43);
        let a3 = s3.get_or_create("a", &[4, 4], Init::Glorot { fan_in: 4, fan_out: 4 });
        assert_ne!(s1.values(a1), s3.values(a3));
    }

    #[test]
    fn backward_is_deterministic() {
        let mut store = ParamStore::new(5);
        let mlp = Mlp::new(&mut store, "m", MlpSpec::new(vec![2, 5, 1], Act::Tanh));
        let run = |store: &mut ParamStore| -> Vec<f64> {
            store.zero_grads();
            let mut t = Tape::new();
            let x = [t.leaf(0.2), t.leaf(-0.8)];
            let y = mlp.forward(&mut t, store, &x);
            t.backward(y[0], store);
            (0..store.num_slots()).flat_map(|s| store.grad(s).to_vec()).collect()
        };
        let g1 = run(&mut store);
        let g2 = run(&mut store);
        assert_eq!(g1, g2);
    }

    #[test]
    fn grad_check_reports_tie_margin_skip() {
        let mut store = ParamStore::new(0);
        let slot = store.get_or_create("w", &[1], Init::Const(1.0));
        let report = grad_check(&mut store, 1e-5, 10.0, |t, s| {
            let w = t.param(s, slot, 0);
            // exact tie: max(w, w)
            t.max(w, w)
        });
        assert!(report.skipped_tie_margin);
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut store = ParamStore::new(99);
        store.get_or_create("layer/w0", &[3, 2], Init::Glorot { fan_in: 2, fan_out: 3 });
        store.get_or_create("layer/b0", &[3], Init::Const(0.125));
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();
        let loaded = ParamStore::load(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.seed(), 99);
        for slot in 0..store.num_slots() {
            let name = store.name(slot);
            let lslot = loaded.slot(name).unwrap();
            assert_eq!(store.values(slot), loaded.values(lslot));
            assert_eq!(store.shape(slot), loaded.shape(lslot));
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let mut bad = "not a checkpoint".as_bytes();
        assert!(matches!(ParamStore::load(&mut bad), Err(AutodiffError::Header(_))));
        let mut bad2 = "topnet-params v1 seed=1\nw=2x2:1.0\n".as_bytes();
        assert!(matches!(ParamStore::load(&mut bad2), Err(AutodiffError::Parse { line: 2, .. })));
    }

    #[test]
    fn sum_of_empty_slice_is_zero() {
        let mut t = Tape::new();
        let s = t.sum(&[]);
        assert_eq!(t.value(s), 0.0);
    }

    #[test]
    fn fold_ties_pick_earliest_entry() {
        let mut store = ParamStore::new(0);
        let slot = store.get_or_create("xs", &[3], Init::Zeros);
        store.values_mut(slot).copy_from_slice(&[2.0, 2.0, 1.0]);
        let mut t = Tape::new();
        let xs: Vec<Val> = (0..3).map(|i| t.param(&store, slot, i)).collect();
        let m = t.max_fold(&xs).unwrap();
        t.backward(m, &mut store);
        assert_eq!(store.grad(slot), &[1.0, 0.0, 0.0]);
    }
}
