//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every intermediate is a `B x C` matrix. Ops record their parents; a
//! backward sweep walks the tape in reverse and accumulates parameter
//! gradients into flat buffers aligned with the originating [`ParamStore`]s.
//! Evaluation order is fixed by construction order, so runs are
//! deterministic for fixed inputs and weights.

use crate::nn::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use ndarray::{Array2, Axis};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    /// Constant input; no gradient.
    Leaf,
    /// Parameter leaf: (store slot, flat offset).
    Param { slot: usize, offset: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    /// (B,N) plus a (1,N) row vector broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// y = a * x + b (elementwise, constants).
    Affine(Var, S, S),
    ConcatCols(Vec<Var>),
    /// Stack same-width values vertically (batch assembly).
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Tanh(Var),
    Sigmoid(Var),
    /// Mean over all elements -> 1x1.
    Mean(Var),
    AddN(Vec<Var>),
    /// Smooth L1 between two same-shape values, averaged -> 1x1.
    SmoothL1(Var, Var),
    /// Binary cross-entropy with logits against a constant target -> 1x1.
    BceWithLogits(Var, S),
}

struct Node<S: Scalar> {
    value: Array2<S>,
    op: Op<S>,
}

/// Computation tape. Build a graph by calling op methods, then run
/// [`Tape::backward`] from a scalar (1x1) loss node.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<S> {
        &self.nodes[v.0].value
    }

    /// Extract a scalar from a 1x1 node.
    pub fn scalar(&self, v: Var) -> S {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() needs a 1x1 node");
        m[(0, 0)]
    }

    pub fn constant(&mut self, value: Array2<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Bind a parameter tensor from `store` as a leaf. `slot` names the
    /// position of this store in the `stores` argument of [`Tape::backward`].
    pub fn param(&mut self, slot: usize, store: &ParamStore<S>, id: ParamId) -> Var {
        let value = store.matrix(id);
        let offset = store.entry(id).offset;
        self.push(value, Op::Param { slot, offset })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul inner dims {ar}x{ac} . {br}x{bc}");
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shapes");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, ac) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, ac), "add_row bias shape");
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shapes");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shapes");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        self.affine(a, factor, S::zero())
    }

    /// Elementwise a*x + b.
    pub fn affine(&mut self, x: Var, a: S, b: S) -> Var {
        let value = self.value(x).mapv(|v| a * v + b);
        self.push(value, Op::Affine(x, a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).dim().0;
        let total: usize = parts.iter().map(|&p| self.value(p).dim().1).sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.dim().0, rows, "concat_cols row mismatch");
            value
                .slice_mut(ndarray::s![.., at..at + v.dim().1])
                .assign(v);
            at += v.dim().1;
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).dim().1;
        let total: usize = parts.iter().map(|&p| self.value(p).dim().0).sum();
        let mut value = Array2::zeros((total, cols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.dim().1, cols, "concat_rows col mismatch");
            value.slice_mut(ndarray::s![at..at + v.dim().0, ..]).assign(v);
            at += v.dim().0;
        }
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (_, cols) = self.value(a).dim();
        assert!(start < end && end <= cols, "slice_cols bounds {start}..{end} of {cols}");
        let value = self.value(a).slice(ndarray::s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.tanh());
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = S::one();
        let value = self.value(a).mapv(|v| one / (one + (-v).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = S::from_usize(v.len()).expect("len fits scalar");
        let total: S = v.iter().copied().fold(S::zero(), |acc, x| acc + x);
        let value = Array2::from_elem((1, 1), total / n);
        self.push(value, Op::Mean(a))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut value = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            assert_eq!(self.value(p).dim(), value.dim(), "add_n shapes");
            value = &value + self.value(p);
        }
        self.push(value, Op::AddN(parts.to_vec()))
    }

    /// Mean of smooth-L1 applied elementwise to (a - b): quadratic inside
    /// the unit transition point, linear outside.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "smooth_l1 shapes");
        let one = S::one();
        let half = S::from_f64_lossy(0.5);
        let n = S::from_usize(self.value(a).len()).expect("len fits scalar");
        let mut total = S::zero();
        for (&x, &y) in self.value(a).iter().zip(self.value(b).iter()) {
            let d = x - y;
            let ad = d.abs();
            total = total + if ad < one { half * d * d } else { ad - half };
        }
        let value = Array2::from_elem((1, 1), total / n);
        self.push(value, Op::SmoothL1(a, b))
    }

    /// Numerically stable BCE against a constant 0/1 target, averaged over
    /// the batch: mean(max(x,0) - x*t + ln(1 + e^{-|x|})).
    pub fn bce_with_logits(&mut self, logits: Var, target: S) -> Var {
        let n = S::from_usize(self.value(logits).len()).expect("len fits scalar");
        let zero = S::zero();
        let one = S::one();
        let mut total = S::zero();
        for &x in self.value(logits).iter() {
            let pos = if x > zero { x } else { zero };
            total = total + pos - x * target + (one + (-x.abs()).exp()).ln();
        }
        let value = Array2::from_elem((1, 1), total / n);
        self.push(value, Op::BceWithLogits(logits, target))
    }

    /// Reverse sweep from a scalar loss. Returns one flat gradient buffer
    /// per store in `stores`, addressed by the `slot` passed to
    /// [`Tape::param`].
    pub fn backward(&self, loss: Var, stores: &[&ParamStore<S>]) -> Vec<Vec<S>> {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut store_grads: Vec<Vec<S>> = stores.iter().map(|s| vec![S::zero(); s.len()]).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), S::one()));

        let one = S::one();

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            macro_rules! accum {
                ($var:expr, $grad:expr) => {{
                    let var: Var = $var;
                    let grad: Array2<S> = $grad;
                    match &mut grads[var.0] {
                        Some(existing) => *existing = &*existing + &grad,
                        slot => *slot = Some(grad),
                    }
                }};
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param { slot, offset } => {
                    let buf = &mut store_grads[*slot];
                    for (k, gv) in g.iter().enumerate() {
                        buf[offset + k] += *gv;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&g);
                    accum!(*a, ga);
                    accum!(*b, gb);
                }
                Op::Add(a, b) => {
                    accum!(*a, g.clone());
                    accum!(*b, g);
                }
                Op::AddRow(a, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum!(*a, g);
                    accum!(*row, grow);
                }
                Op::Sub(a, b) => {
                    accum!(*a, g.clone());
                    accum!(*b, g.mapv(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accum!(*a, ga);
                    accum!(*b, gb);
                }
                Op::Affine(a, m, _) => {
                    accum!(*a, g.mapv(|v| v * *m));
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.dim().1;
                        let gp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        accum!(p, gp);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let r = self.nodes[p.0].value.dim().0;
                        let gp = g.slice(ndarray::s![at..at + r, ..]).to_owned();
                        accum!(p, gp);
                        at += r;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                    ga.slice_mut(ndarray::s![.., *start..*end]).assign(&g);
                    accum!(*a, ga);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let ga = &g * &y.mapv(|v| one - v * v);
                    accum!(*a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let ga = &g * &y.mapv(|v| v * (one - v));
                    accum!(*a, ga);
                }
                Op::Mean(a) => {
                    let n = S::from_usize(self.nodes[a.0].value.len()).expect("len fits scalar");
                    let gv = g[(0, 0)] / n;
                    accum!(*a, Array2::from_elem(self.nodes[a.0].value.dim(), gv));
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        accum!(p, g.clone());
                    }
                }
                Op::SmoothL1(a, b) => {
                    let n = S::from_usize(self.nodes[a.0].value.len()).expect("len fits scalar");
                    let gv = g[(0, 0)] / n;
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let mut ga = Array2::zeros(va.dim());
                    for ((out, &x), &y) in ga.iter_mut().zip(va.iter()).zip(vb.iter()) {
                        let d = x - y;
                        let slope = if d.abs() < one {
                            d
                        } else if d > S::zero() {
                            one
                        } else {
                            -one
                        };
                        *out = gv * slope;
                    }
                    accum!(*b, ga.mapv(|v| -v));
                    accum!(*a, ga);
                }
                Op::BceWithLogits(a, target) => {
                    let n = S::from_usize(self.nodes[a.0].value.len()).expect("len fits scalar");
                    let gv = g[(0, 0)] / n;
                    let ga = self.nodes[a.0]
                        .value
                        .mapv(|x| gv * (one / (one + (-x).exp()) - *target));
                    accum!(*a, ga);
                }
            }
        }
        store_grads
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::zeros;
    use ndarray::arr2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Finite-difference check of a scalar function of one parameter store.
    fn fd_check(
        build: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
        store: &mut ParamStore<f64>,
        probes: usize,
        seed: u64,
    ) {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store);
        let grads = tape.backward(loss, &[store]);
        let analytic = &grads[0];

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        for _ in 0..probes {
            let i = rng.gen_range(0..store.len());
            let orig = store.values()[i];
            store.values_mut()[i] = orig + h;
            let mut tp = Tape::new();
            let vp = build(&mut tp, store);
            let lp = tp.scalar(vp);
            store.values_mut()[i] = orig - h;
            let mut tm = Tape::new();
            let vm = build(&mut tm, store);
            let lm = tm.scalar(vm);
            store.values_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[i];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((an - fd) / denom).abs() < 1e-4,
                "param {i}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn matmul_tanh_mean_gradient_matches_fd() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = store.add("w", 4, 3, |_, _| rng.gen_range(-0.8..0.8));
        let b = store.add("b", 1, 3, |_, _| rng.gen_range(-0.2..0.2));
        let x = arr2(&[[0.3, -0.1, 0.9, 0.4], [1.2, 0.0, -0.7, 0.1]]);

        fd_check(
            move |tape, ps| {
                let xv = tape.constant(x.clone());
                let wv = tape.param(0, ps, w);
                let bv = tape.param(0, ps, b);
                let y = tape.matmul(xv, wv);
                let y = tape.add_row(y, bv);
                let y = tape.tanh(y);
                tape.mean_all(y)
            },
            &mut store,
            12,
            2,
        );
    }

    #[test]
    fn composite_graph_gradient_matches_fd() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w1 = store.add("w1", 5, 6, |_, _| rng.gen_range(-0.5..0.5));
        let w2 = store.add("w2", 3, 6, |_, _| rng.gen_range(-0.5..0.5));
        let x = ndarray::Array2::from_shape_fn((2, 5), |_| rng.gen_range(-1.0..1.0));
        let t = ndarray::Array2::from_shape_fn((2, 6), |_| rng.gen_range(-2.0..2.0));
        let x2 = ndarray::Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));

        fd_check(
            move |tape, ps| {
                let xv = tape.constant(x.clone());
                let x2v = tape.constant(x2.clone());
                let tv = tape.constant(t.clone());
                let w1v = tape.param(0, ps, w1);
                let w2v = tape.param(0, ps, w2);
                let a = tape.matmul(xv, w1v);
                let b = tape.matmul(x2v, w2v);
                let s = tape.sigmoid(b);
                let prod = tape.mul(a, s);
                let sl = tape.slice_cols(prod, 3, 6);
                let sr = tape.slice_cols(prod, 0, 3);
                let cat = tape.concat_cols(&[sl, sr]);
                let diff_target = tape.slice_cols(tv, 0, 6);
                let catb = tape.concat_cols(&[sr, sl]);
                let both = tape.add(cat, catb);
                let scaled = tape.affine(both, 0.7, -0.1);
                let l1 = tape.smooth_l1(scaled, diff_target);
                // second loss head through bce
                let logits = tape.slice_cols(prod, 0, 1);
                let l2 = tape.bce_with_logits(logits, 1.0);
                let l2s = tape.scale(l2, 0.3);
                tape.add_n(&[l1, l2s])
            },
            &mut store,
            20,
            4,
        );
    }

    #[test]
    fn smooth_l1_values_by_branch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(arr2(&[[0.5]]));
        let z = tape.constant(arr2(&[[0.0]]));
        let l = tape.smooth_l1(a, z);
        assert!((tape.scalar(l) - 0.125).abs() < 1e-15);

        let b = tape.constant(arr2(&[[3.0]]));
        let l2 = tape.smooth_l1(b, z);
        assert!((tape.scalar(l2) - 2.5).abs() < 1e-15);

        let l3 = tape.smooth_l1(a, a);
        assert_eq!(tape.scalar(l3), 0.0);
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(arr2(&[[0.0]]));
        let l = tape.bce_with_logits(x, 1.0);
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
        let l0 = tape.bce_with_logits(x, 0.0);
        assert!((tape.scalar(l0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn param_used_twice_accumulates_both_paths() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", 1, 1, zeros());
        store.values_mut()[0] = 2.0;
        let mut tape = Tape::new();
        let w1 = tape.param(0, &store, w);
        let w2 = tape.param(0, &store, w);
        let prod = tape.mul(w1, w2); // w^2
        let loss = tape.mean_all(prod);
        let grads = tape.backward(loss, &[&store]);
        assert_eq!(grads[0][0], 4.0); // d(w^2)/dw = 2w
    }

    #[test]
    fn backward_routes_gradients_to_correct_store() {
        let mut gen = ParamStore::<f64>::new();
        let mut disc = ParamStore::<f64>::new();
        let wg = gen.add("wg", 1, 1, zeros());
        let wd = disc.add("wd", 1, 1, zeros());
        gen.values_mut()[0] = 3.0;
        disc.values_mut()[0] = 5.0;
        let mut tape = Tape::new();
        let g = tape.param(0, &gen, wg);
        let d = tape.param(1, &disc, wd);
        let prod = tape.mul(g, d);
        let loss = tape.mean_all(prod);
        let grads = tape.backward(loss, &[&gen, &disc]);
        assert_eq!(grads[0][0], 5.0);
        assert_eq!(grads[1][0], 3.0);
    }
}
