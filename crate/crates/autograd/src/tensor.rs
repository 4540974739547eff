use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether newly created tensors record the operation that produced them.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Restores the previous recording mode when dropped.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn new(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::new(false);
    f()
}

pub(crate) type BackwardFn = Box<dyn Fn(&[Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>>>;

pub(crate) struct Node {
    pub(crate) id: usize,
    pub(crate) value: Arc<Array2<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) backward: Option<BackwardFn>,
}

/// A 2-D `f64` value that optionally remembers how it was computed.
///
/// Every op's backward rule is itself written in terms of `Tensor` ops, so
/// gradients computed with `create_graph = true` can be differentiated again.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("value", &*self.0.value)
            .finish()
    }
}

type Shape = (usize, usize);

fn broadcast_shape(a: Shape, b: Shape) -> Shape {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("shapes {a:?} and {b:?} do not broadcast")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn zip_broadcast(a: &Array2<f64>, b: &Array2<f64>, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
    let shape = broadcast_shape(a.dim(), b.dim());
    let av = a.broadcast(shape).expect("broadcast lhs");
    let bv = b.broadcast(shape).expect("broadcast rhs");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

fn reduce_to(a: &Array2<f64>, shape: Shape) -> Array2<f64> {
    let mut out = if shape.0 == 1 && a.nrows() != 1 {
        a.sum_axis(Axis(0)).insert_axis(Axis(0))
    } else {
        a.clone()
    };
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    assert_eq!(out.dim(), shape, "cannot reduce {:?} to {:?}", a.dim(), shape);
    out
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn leaf(value: Arc<Array2<f64>>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            inputs: Vec::new(),
            backward: None,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Array2<f64>) -> Tensor {
        Self::leaf(Arc::new(value), false)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(value: Array2<f64>) -> Tensor {
        Self::leaf(Arc::new(value), true)
    }

    pub fn from_shared(value: Arc<Array2<f64>>, requires_grad: bool) -> Tensor {
        Self::leaf(value, requires_grad)
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Self::constant(Array2::zeros((rows, cols)))
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::constant(Array2::from_elem((1, 1), v))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let flat: Vec<f64> = rows.iter().flat_map(|x| x.iter().copied()).collect();
        Self::constant(Array2::from_shape_vec((r, c), flat).expect("ragged rows"))
    }

    pub(crate) fn from_op(
        value: Array2<f64>,
        inputs: Vec<Tensor>,
        backward: impl Fn(&[Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Tensor {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if !track {
            return Self::leaf(Arc::new(value), false);
        }
        Tensor(Rc::new(Node {
            id: next_id(),
            value: Arc::new(value),
            requires_grad: true,
            inputs,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.0.value
    }

    pub fn shared_value(&self) -> Arc<Array2<f64>> {
        Arc::clone(&self.0.value)
    }

    pub fn shape(&self) -> Shape {
        self.0.value.dim()
    }

    pub fn rows(&self) -> usize {
        self.0.value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.value.ncols()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single element of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar tensor");
        self.0.value[[0, 0]]
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.shared_value(), false)
    }

    // ---- elementwise binary ops (row/column/scalar broadcasting) ----

    pub fn add(&self, other: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), other.value(), |x, y| x + y);
        let (sa, sb) = (self.shape(), other.shape());
        Tensor::from_op(v, vec![self.clone(), other.clone()], move |_, _, g| {
            vec![Some(g.sum_to(sa)), Some(g.sum_to(sb))]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), other.value(), |x, y| x - y);
        let (sa, sb) = (self.shape(), other.shape());
        Tensor::from_op(v, vec![self.clone(), other.clone()], move |_, _, g| {
            vec![Some(g.sum_to(sa)), Some(g.neg().sum_to(sb))]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), other.value(), |x, y| x * y);
        let (sa, sb) = (self.shape(), other.shape());
        Tensor::from_op(v, vec![self.clone(), other.clone()], move |inp, _, g| {
            vec![
                Some(g.mul(&inp[1]).sum_to(sa)),
                Some(g.mul(&inp[0]).sum_to(sb)),
            ]
        })
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), other.value(), |x, y| x / y);
        let (sa, sb) = (self.shape(), other.shape());
        Tensor::from_op(v, vec![self.clone(), other.clone()], move |inp, _, g| {
            let (a, b) = (&inp[0], &inp[1]);
            vec![
                Some(g.div(b).sum_to(sa)),
                Some(g.mul(a).div(&b.mul(b)).neg().sum_to(sb)),
            ]
        })
    }

    // ---- elementwise unary ops ----

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let v = self.value().mapv(|x| x * c);
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| vec![Some(g.scale(c))])
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let v = self.value().mapv(|x| x + c);
        Tensor::from_op(v, vec![self.clone()], |_, _, g| vec![Some(g.clone())])
    }

    /// `c - self`.
    pub fn rsub_scalar(&self, c: f64) -> Tensor {
        self.neg().add_scalar(c)
    }

    pub fn exp(&self) -> Tensor {
        let v = self.value().mapv(f64::exp);
        Tensor::from_op(v, vec![self.clone()], |_, out, g| vec![Some(g.mul(out))])
    }

    pub fn ln(&self) -> Tensor {
        let v = self.value().mapv(f64::ln);
        Tensor::from_op(v, vec![self.clone()], |inp, _, g| vec![Some(g.div(&inp[0]))])
    }

    pub fn powf(&self, p: f64) -> Tensor {
        let v = self.value().mapv(|x| x.powf(p));
        Tensor::from_op(v, vec![self.clone()], move |inp, _, g| {
            vec![Some(g.mul(&inp[0].powf(p - 1.0)).scale(p))]
        })
    }

    pub fn sqrt(&self) -> Tensor {
        self.powf(0.5)
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    pub fn relu(&self) -> Tensor {
        let v = self.value().mapv(|x| x.max(0.0));
        Tensor::from_op(v, vec![self.clone()], |inp, _, g| {
            let mask = inp[0].value().mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            vec![Some(g.mul(&Tensor::constant(mask)))]
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let v = self.value().mapv(sigmoid_scalar);
        Tensor::from_op(v, vec![self.clone()], |_, out, g| {
            vec![Some(g.mul(&out.mul(&out.rsub_scalar(1.0))))]
        })
    }

    pub fn tanh(&self) -> Tensor {
        let v = self.value().mapv(f64::tanh);
        Tensor::from_op(v, vec![self.clone()], |_, out, g| {
            vec![Some(g.mul(&out.square().rsub_scalar(1.0)))]
        })
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Tensor {
        let v = self.value().mapv(softplus_scalar);
        Tensor::from_op(v, vec![self.clone()], |inp, _, g| {
            vec![Some(g.mul(&inp[0].sigmoid()))]
        })
    }

    // ---- row-wise normalizers ----

    /// Log-softmax along each row.
    pub fn log_softmax(&self) -> Tensor {
        let mut v = self.value().clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        Tensor::from_op(v, vec![self.clone()], |_, out, g| {
            vec![Some(g.sub(&out.exp().mul(&g.sum_cols())))]
        })
    }

    pub fn softmax(&self) -> Tensor {
        self.log_softmax().exp()
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols(),
            other.rows(),
            "matmul shape mismatch {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let v = self.value().dot(other.value());
        Tensor::from_op(v, vec![self.clone(), other.clone()], |inp, _, g| {
            vec![
                Some(g.matmul(&inp[1].t())),
                Some(inp[0].t().matmul(g)),
            ]
        })
    }

    pub fn t(&self) -> Tensor {
        let v = self.value().t().as_standard_layout().into_owned();
        Tensor::from_op(v, vec![self.clone()], |_, _, g| vec![Some(g.t())])
    }

    // ---- reductions and broadcasting ----

    /// Sums down to `shape`, which must equal the current shape with some
    /// dimensions collapsed to 1.
    pub fn sum_to(&self, shape: Shape) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let v = reduce_to(self.value(), shape);
        let orig = self.shape();
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| {
            vec![Some(g.broadcast_to(orig))]
        })
    }

    pub fn broadcast_to(&self, shape: Shape) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .broadcast(shape)
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", self.shape(), shape))
            .to_owned();
        let orig = self.shape();
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| vec![Some(g.sum_to(orig))])
    }

    pub fn sum(&self) -> Tensor {
        self.sum_to((1, 1))
    }

    pub fn mean(&self) -> Tensor {
        let n = (self.rows() * self.cols()) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row sums, shape `(rows, 1)`.
    pub fn sum_cols(&self) -> Tensor {
        self.sum_to((self.rows(), 1))
    }

    /// Column sums, shape `(1, cols)`.
    pub fn sum_rows(&self) -> Tensor {
        self.sum_to((1, self.cols()))
    }

    // ---- structural ops ----

    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.rows(), "row slice out of range");
        let v = self.value().slice(ndarray::s![start..end, ..]).to_owned();
        let (n, c) = self.shape();
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| {
            let mut parts = Vec::with_capacity(3);
            if start > 0 {
                parts.push(Tensor::zeros(start, c));
            }
            parts.push(g.clone());
            if end < n {
                parts.push(Tensor::zeros(n - end, c));
            }
            vec![Some(Tensor::concat_rows(&parts))]
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.cols(), "column slice out of range");
        let v = self.value().slice(ndarray::s![.., start..end]).to_owned();
        let (r, n) = self.shape();
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| {
            let mut parts = Vec::with_capacity(3);
            if start > 0 {
                parts.push(Tensor::zeros(r, start));
            }
            parts.push(g.clone());
            if end < n {
                parts.push(Tensor::zeros(r, n - end));
            }
            vec![Some(Tensor::concat_cols(&parts))]
        })
    }

    pub fn concat_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        let bounds: Vec<usize> = parts.iter().map(|p| p.rows()).collect();
        Tensor::from_op(v, parts.to_vec(), move |_, _, g| {
            let mut off = 0;
            bounds
                .iter()
                .map(|&n| {
                    let s = g.slice_rows(off, off + n);
                    off += n;
                    Some(s)
                })
                .collect()
        })
    }

    pub fn concat_cols(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let bounds: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        Tensor::from_op(v, parts.to_vec(), move |_, _, g| {
            let mut off = 0;
            bounds
                .iter()
                .map(|&n| {
                    let s = g.slice_cols(off, off + n);
                    off += n;
                    Some(s)
                })
                .collect()
        })
    }

    /// Row gather: output row `i` is input row `idx[i]`.
    pub fn index_rows(&self, idx: &Rc<Vec<usize>>) -> Tensor {
        let src = self.value();
        let c = src.ncols();
        let mut v = Array2::zeros((idx.len(), c));
        for (i, &r) in idx.iter().enumerate() {
            v.row_mut(i).assign(&src.row(r));
        }
        let n = src.nrows();
        let idx_b = Rc::clone(idx);
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| {
            vec![Some(g.scatter_rows(&idx_b, n))]
        })
    }

    /// Row scatter-add into `n` rows: output row `idx[i]` accumulates input row `i`.
    pub fn scatter_rows(&self, idx: &Rc<Vec<usize>>, n: usize) -> Tensor {
        assert_eq!(idx.len(), self.rows(), "scatter_rows index length");
        let src = self.value();
        let mut v = Array2::zeros((n, src.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            let mut dst = v.row_mut(r);
            dst += &src.row(i);
        }
        let idx_b = Rc::clone(idx);
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| {
            vec![Some(g.index_rows(&idx_b))]
        })
    }

    /// Element gather into a tensor of `shape`, filled row-major from `pos`.
    pub fn gather(&self, pos: &Rc<Vec<(usize, usize)>>, shape: Shape) -> Tensor {
        assert_eq!(pos.len(), shape.0 * shape.1, "gather position count");
        let src = self.value();
        let flat: Vec<f64> = pos.iter().map(|&(r, c)| src[[r, c]]).collect();
        let v = Array2::from_shape_vec(shape, flat).expect("gather shape");
        let in_shape = self.shape();
        let pos_b = Rc::clone(pos);
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| {
            vec![Some(g.scatter(&pos_b, in_shape))]
        })
    }

    /// Inverse of [`Tensor::gather`]: element `k` (row-major) is added at `pos[k]`.
    pub fn scatter(&self, pos: &Rc<Vec<(usize, usize)>>, shape: Shape) -> Tensor {
        let src = self.value();
        assert_eq!(pos.len(), src.len(), "scatter position count");
        let mut v = Array2::zeros(shape);
        for (&x, &(r, c)) in src.iter().zip(pos.iter()) {
            v[[r, c]] += x;
        }
        let out_shape = self.shape();
        let pos_b = Rc::clone(pos);
        Tensor::from_op(v, vec![self.clone()], move |_, _, g| {
            vec![Some(g.gather(&pos_b, out_shape))]
        })
    }

    /// Picks column `idx[i]` from each row `i`; shape `(rows, 1)`.
    pub fn pick(&self, idx: &[usize]) -> Tensor {
        assert_eq!(idx.len(), self.rows(), "pick index length");
        let pos: Vec<(usize, usize)> = idx.iter().enumerate().map(|(r, &c)| (r, c)).collect();
        self.gather(&Rc::new(pos), (idx.len(), 1))
    }

    /// Column-wise max over consecutive blocks of `seg` rows.
    /// Output has `rows / seg` rows.
    pub fn segment_max(&self, seg: usize) -> Tensor {
        let (r, c) = self.shape();
        assert!(seg > 0 && r % seg == 0, "segment_max: {r} rows not divisible by {seg}");
        let nseg = r / seg;
        let src = self.value();
        let mut pos = Vec::with_capacity(nseg * c);
        for s in 0..nseg {
            for j in 0..c {
                let mut best = s * seg;
                for i in s * seg + 1..(s + 1) * seg {
                    if src[[i, j]] > src[[best, j]] {
                        best = i;
                    }
                }
                pos.push((best, j));
            }
        }
        self.gather(&Rc::new(pos), (nseg, c))
    }
}
