//! Forward primitives and their adjoint rules.
//!
//! Binary elementwise ops broadcast in three cases: identical shapes, one
//! scalar operand, or matrix `[m, n]` against row vector `[n]`. Reductions
//! and softmax-family ops act over the last axis.
//!
//! Backward closures never capture tensors; they receive the node's parents
//! as an argument, which keeps graph teardown iterative and leak-free.

use super::Tensor;
use crate::util;

#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
    /// lhs `[m, n]`, rhs `[n]`: rhs repeated across rows.
    RowRhs,
    /// lhs `[n]`, rhs `[m, n]`.
    RowLhs,
}

fn broadcast_kind(op: &str, a: &Tensor, b: &Tensor) -> Broadcast {
    if a.shape() == b.shape() {
        Broadcast::Same
    } else if b.is_scalar() {
        // Checked before LhsScalar so that `[1] op []` keeps the lhs shape.
        Broadcast::RhsScalar
    } else if a.is_scalar() {
        Broadcast::LhsScalar
    } else if a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0] {
        Broadcast::RowRhs
    } else if a.rank() == 1 && b.rank() == 2 && b.shape()[1] == a.shape()[0] {
        Broadcast::RowLhs
    } else {
        panic!("{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    }
}

fn binary_op(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    dfda: impl Fn(f64, f64) -> f64 + 'static,
    dfdb: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let kind = broadcast_kind(op, a, b);
    let (out_shape, n, cols) = match kind {
        Broadcast::Same | Broadcast::RhsScalar => (a.shape().to_vec(), a.len(), 0),
        Broadcast::LhsScalar => (b.shape().to_vec(), b.len(), 0),
        Broadcast::RowRhs => (a.shape().to_vec(), a.len(), a.shape()[1]),
        Broadcast::RowLhs => (b.shape().to_vec(), b.len(), b.shape()[1]),
    };
    let index = move |l: usize| -> (usize, usize) {
        match kind {
            Broadcast::Same => (l, l),
            Broadcast::LhsScalar => (0, l),
            Broadcast::RhsScalar => (l, 0),
            Broadcast::RowRhs => (l, l % cols),
            Broadcast::RowLhs => (l % cols, l),
        }
    };
    let values = {
        let av = a.values();
        let bv = b.values();
        (0..n)
            .map(|l| {
                let (i, j) = index(l);
                f(av[i], bv[j])
            })
            .collect()
    };
    Tensor::from_op(op, out_shape, values, vec![a.clone(), b.clone()], move |g, parents, adj| {
        let av = parents[0].values();
        let bv = parents[1].values();
        adj.add_with(&parents[0], |ga| {
            for l in 0..n {
                let (i, j) = index(l);
                ga[i] += g[l] * dfda(av[i], bv[j]);
            }
        });
        adj.add_with(&parents[1], |gb| {
            for l in 0..n {
                let (i, j) = index(l);
                gb[j] += g[l] * dfdb(av[i], bv[j]);
            }
        });
    })
}

fn unary_op(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64 + 'static,
) -> Tensor {
    let values: Vec<f64> = x.values().iter().map(|&v| f(v)).collect();
    Tensor::from_op(op, x.shape().to_vec(), values, vec![x.clone()], move |g, parents, adj| {
        let xv = parents[0].values();
        adj.add_with(&parents[0], |gx| {
            for (i, gi) in g.iter().enumerate() {
                gx[i] += gi * df(xv[i]);
            }
        });
    })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        binary_op("add", self, other, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        binary_op("sub", self, other, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        binary_op("mul", self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        binary_op("div", self, other, |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    pub fn neg(&self) -> Tensor {
        unary_op("neg", self, |v| -v, |_| -1.0)
    }

    /// `exp` with the argument clamped so finite inputs give finite outputs.
    pub fn exp(&self) -> Tensor {
        unary_op("exp", self, util::safe_exp, |v| util::safe_exp(v))
    }

    /// `ln` with arguments clamped at 1e-300; degenerate probabilities come
    /// out around -690 instead of `-inf`.
    pub fn log(&self) -> Tensor {
        unary_op("log", self, util::safe_ln, |v| 1.0 / v.max(util::LOG_CLAMP))
    }

    pub fn tanh(&self) -> Tensor {
        unary_op("tanh", self, f64::tanh, |v| {
            let t = v.tanh();
            1.0 - t * t
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary_op("sigmoid", self, util::sigmoid, |v| {
            let s = util::sigmoid(v);
            s * (1.0 - s)
        })
    }

    pub fn relu(&self) -> Tensor {
        unary_op("relu", self, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn abs(&self) -> Tensor {
        unary_op("abs", self, f64::abs, |v| if v >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn softplus(&self) -> Tensor {
        unary_op("softplus", self, util::softplus, util::sigmoid)
    }

    /// Multiply by a plain constant.
    pub fn scale(&self, c: f64) -> Tensor {
        unary_op("scale", self, move |v| c * v, move |_| c)
    }

    pub fn add_const(&self, c: f64) -> Tensor {
        unary_op("add_const", self, move |v| v + c, |_| 1.0)
    }

    /// `max(x, c)` elementwise; gradient passes only where `x >= c`.
    pub fn clamp_min(&self, c: f64) -> Tensor {
        unary_op("clamp_min", self, move |v| v.max(c), move |v| if v >= c { 1.0 } else { 0.0 })
    }

    /// Matrix product: `[m, k] x [k, n] -> [m, n]` or `[m, k] x [k] -> [m]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let a = self;
        let b = other;
        match (a.rank(), b.rank()) {
            (2, 1) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                if b.shape()[0] != k {
                    panic!("matmul: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
                }
                let values = {
                    let av = a.values();
                    let bv = b.values();
                    (0..m).map(|i| util::dot(&av[i * k..(i + 1) * k], &bv)).collect()
                };
                Tensor::from_op("matmul", vec![m], values, vec![a.clone(), b.clone()], move |g, parents, adj| {
                    let av = parents[0].values();
                    let bv = parents[1].values();
                    adj.add_with(&parents[0], |ga| {
                        for i in 0..m {
                            for j in 0..k {
                                ga[i * k + j] += g[i] * bv[j];
                            }
                        }
                    });
                    adj.add_with(&parents[1], |gb| {
                        for i in 0..m {
                            for j in 0..k {
                                gb[j] += g[i] * av[i * k + j];
                            }
                        }
                    });
                })
            }
            (2, 2) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let (k2, n) = (b.shape()[0], b.shape()[1]);
                if k != k2 {
                    panic!("matmul: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
                }
                let values = {
                    let av = a.values();
                    let bv = b.values();
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        for l in 0..k {
                            let ail = av[i * k + l];
                            for j in 0..n {
                                out[i * n + j] += ail * bv[l * n + j];
                            }
                        }
                    }
                    out
                };
                Tensor::from_op("matmul", vec![m, n], values, vec![a.clone(), b.clone()], move |g, parents, adj| {
                    let av = parents[0].values();
                    let bv = parents[1].values();
                    adj.add_with(&parents[0], |ga| {
                        for i in 0..m {
                            for l in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bv[l * n + j];
                                }
                                ga[i * k + l] += acc;
                            }
                        }
                    });
                    adj.add_with(&parents[1], |gb| {
                        for l in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += av[i * k + l] * g[i * n + j];
                                }
                                gb[l * n + j] += acc;
                            }
                        }
                    });
                })
            }
            _ => panic!("matmul: unsupported ranks {:?} x {:?}", a.shape(), b.shape()),
        }
    }

    /// Inner product of two equal-length vectors.
    pub fn dot(&self, other: &Tensor) -> Tensor {
        if self.rank() != 1 || other.rank() != 1 || self.len() != other.len() {
            panic!("dot: shape mismatch {:?} vs {:?}", self.shape(), other.shape());
        }
        let value = util::dot(&self.values(), &other.values());
        Tensor::from_op("dot", vec![], vec![value], vec![self.clone(), other.clone()], move |g, parents, adj| {
            let av = parents[0].values();
            let bv = parents[1].values();
            adj.add_with(&parents[0], |ga| {
                for (gi, bi) in ga.iter_mut().zip(bv.iter()) {
                    *gi += g[0] * bi;
                }
            });
            adj.add_with(&parents[1], |gb| {
                for (gi, ai) in gb.iter_mut().zip(av.iter()) {
                    *gi += g[0] * ai;
                }
            });
        })
    }

    /// Row lookup (embedding): `[m, n].row(i) -> [n]`.
    pub fn row(&self, i: usize) -> Tensor {
        if self.rank() != 2 {
            panic!("row: expected matrix, got shape {:?}", self.shape());
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        assert!(i < m, "row: index {i} out of range for shape {:?}", self.shape());
        let values = self.values()[i * n..(i + 1) * n].to_vec();
        Tensor::from_op("row", vec![n], values, vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| {
                for (j, gj) in g.iter().enumerate() {
                    gp[i * n + j] += gj;
                }
            });
        })
    }

    /// Element lookup on a vector, producing a scalar.
    pub fn get(&self, i: usize) -> Tensor {
        if self.rank() != 1 {
            panic!("get: expected vector, got shape {:?}", self.shape());
        }
        assert!(i < self.len(), "get: index {i} out of range for shape {:?}", self.shape());
        let value = self.values()[i];
        Tensor::from_op("get", vec![], vec![value], vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| gp[i] += g[0]);
        })
    }

    /// Concatenate vectors (scalars count as length-1) into one vector.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat: no inputs");
        for p in parts {
            if p.rank() > 1 {
                panic!("concat: expected vectors, got shape {:?}", p.shape());
            }
        }
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut values = Vec::with_capacity(total);
        for p in parts {
            values.extend_from_slice(&p.values());
        }
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Tensor::from_op("concat", vec![total], values, owned, move |g, parents, adj| {
            let mut start = 0;
            for p in parents {
                let len = p.len();
                adj.add_with(p, |gp| {
                    for (j, gj) in gp.iter_mut().enumerate() {
                        *gj += g[start + j];
                    }
                });
                start += len;
            }
        })
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(rows: &[Tensor]) -> Tensor {
        assert!(!rows.is_empty(), "stack_rows: no inputs");
        let n = rows[0].len();
        for r in rows {
            if r.rank() != 1 || r.len() != n {
                panic!("stack_rows: expected vectors of length {n}, got shape {:?}", r.shape());
            }
        }
        let m = rows.len();
        let mut values = Vec::with_capacity(m * n);
        for r in rows {
            values.extend_from_slice(&r.values());
        }
        Tensor::from_op("stack_rows", vec![m, n], values, rows.to_vec(), move |g, parents, adj| {
            for (i, r) in parents.iter().enumerate() {
                adj.add_with(r, |gr| {
                    for (j, gj) in gr.iter_mut().enumerate() {
                        *gj += g[i * n + j];
                    }
                });
            }
        })
    }

    pub fn transpose(&self) -> Tensor {
        if self.rank() != 2 {
            panic!("transpose: expected matrix, got shape {:?}", self.shape());
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let values = {
            let v = self.values();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = v[i * n + j];
                }
            }
            out
        };
        Tensor::from_op("transpose", vec![n, m], values, vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| {
                for i in 0..m {
                    for j in 0..n {
                        gp[i * n + j] += g[j * m + i];
                    }
                }
            });
        })
    }

    pub fn sum(&self) -> Tensor {
        let value: f64 = self.values().iter().sum();
        Tensor::from_op("sum", vec![], vec![value], vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| {
                for gi in gp.iter_mut() {
                    *gi += g[0];
                }
            });
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum of a matrix over one axis: axis 0 collapses rows (`[m,n] -> [n]`),
    /// axis 1 collapses columns (`[m,n] -> [m]`).
    pub fn sum_axis(&self, axis: usize) -> Tensor {
        if self.rank() != 2 {
            panic!("sum_axis: expected matrix, got shape {:?}", self.shape());
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        assert!(axis < 2, "sum_axis: axis {axis} out of range");
        let v = self.values();
        let (out_len, values) = if axis == 0 {
            let mut out = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    out[j] += v[i * n + j];
                }
            }
            (n, out)
        } else {
            let mut out = vec![0.0; m];
            for i in 0..m {
                for j in 0..n {
                    out[i] += v[i * n + j];
                }
            }
            (m, out)
        };
        drop(v);
        Tensor::from_op("sum_axis", vec![out_len], values, vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| {
                for i in 0..m {
                    for j in 0..n {
                        gp[i * n + j] += if axis == 0 { g[j] } else { g[i] };
                    }
                }
            });
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor {
        let denom = self.shape()[axis] as f64;
        self.sum_axis(axis).scale(1.0 / denom)
    }

    fn last_axis_rows(&self, op: &str) -> (usize, usize) {
        match self.rank() {
            1 => (1, self.len()),
            2 => (self.shape()[0], self.shape()[1]),
            _ => panic!("{op}: expected vector or matrix, got shape {:?}", self.shape()),
        }
    }

    /// Softmax over the last axis; each output row sums to one.
    pub fn softmax(&self) -> Tensor {
        let (rows, cols) = self.last_axis_rows("softmax");
        let values = {
            let v = self.values();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                out.extend(util::softmax(&v[r * cols..(r + 1) * cols]));
            }
            out
        };
        let saved = values.clone();
        Tensor::from_op("softmax", self.shape().to_vec(), values, vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| {
                for r in 0..rows {
                    let o = r * cols;
                    let y = &saved[o..o + cols];
                    let gy = &g[o..o + cols];
                    let inner: f64 = y.iter().zip(gy).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..cols {
                        gp[o + j] += y[j] * (gy[j] - inner);
                    }
                }
            });
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Tensor {
        let (rows, cols) = self.last_axis_rows("log_softmax");
        let (values, probs) = {
            let v = self.values();
            let mut out = Vec::with_capacity(rows * cols);
            let mut probs = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = &v[r * cols..(r + 1) * cols];
                let ls = util::log_softmax(row);
                probs.extend(ls.iter().map(|l| l.exp()));
                out.extend(ls);
            }
            (out, probs)
        };
        Tensor::from_op("log_softmax", self.shape().to_vec(), values, vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| {
                for r in 0..rows {
                    let o = r * cols;
                    let gsum: f64 = g[o..o + cols].iter().sum();
                    for j in 0..cols {
                        gp[o + j] += g[o + j] - probs[o + j] * gsum;
                    }
                }
            });
        })
    }

    /// `log(sum(exp))` over the last axis: vector -> scalar, matrix -> one
    /// value per row. Stable for inputs anywhere in the finite range.
    pub fn logsumexp(&self) -> Tensor {
        let (rows, cols) = self.last_axis_rows("logsumexp");
        let (values, probs) = {
            let v = self.values();
            let mut out = Vec::with_capacity(rows);
            let mut probs = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = &v[r * cols..(r + 1) * cols];
                out.push(util::log_sum_exp(row));
                probs.extend(util::softmax(row));
            }
            (out, probs)
        };
        let out_shape = if self.rank() == 1 { vec![] } else { vec![rows] };
        Tensor::from_op("logsumexp", out_shape, values, vec![self.clone()], move |g, parents, adj| {
            adj.add_with(&parents[0], |gp| {
                for r in 0..rows {
                    for j in 0..cols {
                        gp[r * cols + j] += g[r] * probs[r * cols + j];
                    }
                }
            });
        })
    }
}

macro_rules! impl_binary_operator {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait<&Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                Tensor::$method(self, rhs)
            }
        }
        impl std::ops::$trait<Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                Tensor::$method(&self, &rhs)
            }
        }
        impl std::ops::$trait<&Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                Tensor::$method(&self, rhs)
            }
        }
        impl std::ops::$trait<Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                Tensor::$method(self, &rhs)
            }
        }
    };
}

impl_binary_operator!(Add, add);
impl_binary_operator!(Sub, sub);
impl_binary_operator!(Mul, mul);
impl_binary_operator!(Div, div);

impl std::ops::Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(self)
    }
}

impl std::ops::Neg for Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(&self)
    }
}
