use std::rc::Rc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sarcgen_autograd::{grad, init, no_grad, Tensor};

fn rand_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init::normal(r, c, 1.0, &mut rng)
}

/// Central differences of a scalar function of one matrix.
fn numeric_grad(x: &Array2<f64>, f: &dyn Fn(&Tensor) -> Tensor) -> Array2<f64> {
    let h = 1e-6;
    let mut out = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let mut xp = x.clone();
        xp[[i, j]] += h;
        let mut xm = x.clone();
        xm[[i, j]] -= h;
        let fp = no_grad(|| f(&Tensor::constant(xp)).sum().item());
        let fm = no_grad(|| f(&Tensor::constant(xm)).sum().item());
        out[[i, j]] = (fp - fm) / (2.0 * h);
    }
    out
}

fn assert_close(a: &Array2<f64>, b: &Array2<f64>, rel: f64, what: &str) {
    assert_eq!(a.dim(), b.dim(), "{what}: shape");
    for (x, y) in a.iter().zip(b.iter()) {
        let tol = rel * x.abs().max(y.abs()) + 1e-7;
        assert!((x - y).abs() <= tol, "{what}: analytic {x} vs numeric {y}");
    }
}

fn check(name: &str, x: Array2<f64>, f: impl Fn(&Tensor) -> Tensor) {
    let v = Tensor::variable(x.clone());
    let out = f(&v).sum();
    let g = grad(&out, &[&v], false).remove(0);
    let n = numeric_grad(&x, &|t| f(t));
    assert_close(g.value(), &n, 1e-5, name);
}

#[test]
fn unary_ops_match_finite_differences() {
    let x = rand_matrix(3, 4, 1);
    let pos = x.mapv(|v| v.abs() + 0.5);
    check("exp", x.clone(), |t| t.exp());
    check("ln", pos.clone(), |t| t.ln());
    check("powf", pos.clone(), |t| t.powf(1.7));
    check("sqrt", pos, |t| t.sqrt());
    check("relu", x.clone(), |t| t.relu().mul(&t.add_scalar(2.0)));
    check("sigmoid", x.clone(), |t| t.sigmoid());
    check("tanh", x.clone(), |t| t.tanh());
    check("softplus", x.clone(), |t| t.softplus());
    check("log_softmax", x.clone(), |t| {
        t.log_softmax().mul(&Tensor::constant(rand_matrix(3, 4, 9)))
    });
    check("softmax", x, |t| t.softmax().mul(&Tensor::constant(rand_matrix(3, 4, 8))));
}

#[test]
fn binary_ops_broadcast_and_match_finite_differences() {
    let a = rand_matrix(3, 4, 2);
    let row = Tensor::constant(rand_matrix(1, 4, 3));
    let col = Tensor::constant(rand_matrix(3, 1, 4).mapv(|v| v.abs() + 1.0));
    let r2 = row.clone();
    check("add row", a.clone(), move |t| t.add(&r2).square());
    let r3 = row.clone();
    check("sub row", a.clone(), move |t| r3.sub(t).square());
    let c2 = col.clone();
    check("mul col", a.clone(), move |t| t.mul(&c2).square());
    check("div col", a.clone(), move |t| t.div(&col));
    let a2 = Tensor::constant(rand_matrix(3, 4, 5).mapv(|v| v.abs() + 1.0));
    check("div by var", a.mapv(|v| v.abs() + 1.0), move |t| a2.div(t));
    // gradient with respect to the broadcast operand itself
    let big = Tensor::constant(rand_matrix(3, 4, 6));
    check("bias grad", rand_matrix(1, 4, 7), move |t| big.add(t).square());
}

#[test]
fn structural_ops_match_finite_differences() {
    let x = rand_matrix(5, 3, 10);
    let w = Tensor::constant(rand_matrix(3, 2, 11));
    check("matmul lhs", x.clone(), move |t| t.matmul(&w).square());
    let l = Tensor::constant(rand_matrix(2, 5, 12));
    check("matmul rhs", x.clone(), move |t| l.matmul(t).square());
    check("transpose", x.clone(), |t| t.t().mul(&Tensor::constant(rand_matrix(3, 5, 13))));
    check("slice rows", x.clone(), |t| t.slice_rows(1, 4).square());
    check("slice cols", x.clone(), |t| t.slice_cols(1, 2).square());
    check("concat", x.clone(), |t| {
        Tensor::concat_cols(&[t.slice_cols(0, 1), t.exp()]).square()
    });
    check("concat rows", x.clone(), |t| {
        Tensor::concat_rows(&[t.slice_rows(2, 3), t.square()]).sin_free()
    });
    let idx = Rc::new(vec![4, 0, 0, 2]);
    check("index_rows", x.clone(), move |t| t.index_rows(&idx).square());
    let idx = Rc::new(vec![1, 1, 0, 2, 1]);
    check("scatter_rows", x.clone(), move |t| t.scatter_rows(&idx, 3).square());
    check("pick", x.clone(), |t| t.log_softmax().pick(&[0, 2, 1, 1, 0]));
    check("segment_max", rand_matrix(6, 3, 14), |t| t.segment_max(3).square());
    check("sum_cols", x.clone(), |t| t.sum_cols().square());
    check("sum_rows", x.clone(), |t| t.sum_rows().square());
    check("mean", x, |t| t.mean().square());
}

trait SinFree {
    fn sin_free(&self) -> Tensor;
}

impl SinFree for Tensor {
    // a smooth non-linearity built from existing ops
    fn sin_free(&self) -> Tensor {
        self.tanh().mul(self)
    }
}

/// Second-order: differentiate a gradient norm and compare with finite
/// differences of the first-order gradient norm.
#[test]
fn gradient_of_gradient_norm_matches_finite_differences() {
    let w1 = rand_matrix(4, 5, 20);
    let w2 = rand_matrix(5, 1, 21);
    let x = rand_matrix(3, 4, 22);
    let pos = Rc::new(vec![0usize, 2, 1]);

    let penalty = |w1v: &Tensor| -> Tensor {
        let xv = Tensor::variable(x.clone());
        let h = xv.matmul(w1v).relu();
        let score = h.segment_max(3).square().sum().add(&h.index_rows(&pos).matmul(&Tensor::constant(w2.clone())).sum());
        let g = grad(&score, &[&xv], true).remove(0);
        g.square().sum().add_scalar(1e-12).sqrt().add_scalar(-1.0).square()
    };

    let wv = Tensor::variable(w1.clone());
    let p = penalty(&wv);
    let analytic = grad(&p, &[&wv], false).remove(0);

    let h = 1e-6;
    let mut numeric = Array2::zeros(w1.dim());
    for i in 0..w1.nrows() {
        for j in 0..w1.ncols() {
            let mut a = w1.clone();
            a[[i, j]] += h;
            let mut b = w1.clone();
            b[[i, j]] -= h;
            let fa = penalty(&Tensor::variable(a)).item();
            let fb = penalty(&Tensor::variable(b)).item();
            numeric[[i, j]] = (fa - fb) / (2.0 * h);
        }
    }
    assert_close(analytic.value(), &numeric, 1e-4, "double backward");
}

#[test]
fn untouched_inputs_get_zero_gradients() {
    let a = Tensor::variable(rand_matrix(2, 2, 30));
    let b = Tensor::variable(rand_matrix(2, 2, 31));
    let g = grad(&a.square().sum(), &[&a, &b], false);
    assert!(g[1].value().iter().all(|&v| v == 0.0));
}

#[test]
fn no_grad_records_nothing() {
    let a = Tensor::variable(rand_matrix(2, 2, 32));
    let y = no_grad(|| a.exp());
    assert!(!y.requires_grad());
    assert!(a.exp().requires_grad());
}

#[test]
fn gradients_accumulate_over_shared_subgraphs() {
    let a = Tensor::variable(Array2::from_elem((1, 1), 3.0));
    // f = a^2 + a^2 -> df/da = 4a
    let s = a.square();
    let f = s.add(&s);
    let g = grad(&f, &[&a], false).remove(0);
    assert!((g.item() - 12.0).abs() < 1e-12);
}
