//! Elementwise, reduction, shape, and matrix operations on the tape.

use super::{Tape, Var};
use ndarray::{concatenate, ArrayD, Axis, Ix2, IxDyn, Slice, Zip};
use std::rc::Rc;

/// NumPy-style broadcast result shape (right-aligned).
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast shapes {a:?} vs {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Sum a gradient down to `target` shape (inverse of broadcasting).
fn reduce_to_shape(g: &ArrayD<f64>, target: &[usize]) -> ArrayD<f64> {
    let mut out = g.clone();
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    for (ax, (&have, &want)) in out.shape().to_vec().iter().zip(target).enumerate() {
        if want == 1 && have != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    assert_eq!(out.shape(), target);
    out
}

fn broadcast_to(v: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    v.broadcast(IxDyn(shape))
        .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", v.shape(), shape))
        .to_owned()
}

impl Tape {
    fn zip_binary(
        &self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> (ArrayD<f64>, Rc<ArrayD<f64>>, Rc<ArrayD<f64>>) {
        let va = self.value(a);
        let vb = self.value(b);
        let shape = broadcast_shape(va.shape(), vb.shape());
        let ab = va.broadcast(IxDyn(&shape)).unwrap();
        let bb = vb.broadcast(IxDyn(&shape)).unwrap();
        let mut out = ArrayD::zeros(IxDyn(&shape));
        Zip::from(&mut out)
            .and(&ab)
            .and(&bb)
            .for_each(|o, &x, &y| *o = f(x, y));
        (out, va, vb)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (out, va, vb) = self.zip_binary(a, b, |x, y| x + y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.binary(a, b, out, move |g, na, nb| {
            (
                na.then(|| reduce_to_shape(g, &sa)),
                nb.then(|| reduce_to_shape(g, &sb)),
            )
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (out, va, vb) = self.zip_binary(a, b, |x, y| x - y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.binary(a, b, out, move |g, na, nb| {
            (
                na.then(|| reduce_to_shape(g, &sa)),
                nb.then(|| reduce_to_shape(&g.mapv(|x| -x), &sb)),
            )
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (out, va, vb) = self.zip_binary(a, b, |x, y| x * y);
        let shape = out.shape().to_vec();
        self.binary(a, b, out, move |g, na, nb| {
            let ga = na.then(|| {
                let full = g * &broadcast_to(&vb, &shape);
                reduce_to_shape(&full, va.shape())
            });
            let gb = nb.then(|| {
                let full = g * &broadcast_to(&va, &shape);
                reduce_to_shape(&full, vb.shape())
            });
            (ga, gb)
        })
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (out, va, vb) = self.zip_binary(a, b, |x, y| x / y);
        let shape = out.shape().to_vec();
        self.binary(a, b, out, move |g, na, nb| {
            let bb = broadcast_to(&vb, &shape);
            let ga = na.then(|| reduce_to_shape(&(g / &bb), va.shape()));
            let gb = nb.then(|| {
                let ab = broadcast_to(&va, &shape);
                let full = Zip::from(g)
                    .and(&ab)
                    .and(&bb)
                    .map_collect(|&gi, &x, &y| -gi * x / (y * y));
                reduce_to_shape(&full, vb.shape())
            });
            (ga, gb)
        })
    }

    pub fn neg(&self, v: Var) -> Var {
        let out = self.value(v).mapv(|x| -x);
        self.unary(v, out, |g| g.mapv(|x| -x))
    }

    pub fn abs(&self, v: Var) -> Var {
        let value = self.value(v);
        let out = value.mapv(f64::abs);
        self.unary(v, out, move |g| {
            Zip::from(g)
                .and(&*value)
                .map_collect(|&gi, &x| gi * if x >= 0.0 { 1.0 } else { -1.0 })
        })
    }

    pub fn square(&self, v: Var) -> Var {
        let value = self.value(v);
        let out = value.mapv(|x| x * x);
        self.unary(v, out, move |g| {
            Zip::from(g).and(&*value).map_collect(|&gi, &x| 2.0 * gi * x)
        })
    }

    pub fn sqrt(&self, v: Var) -> Var {
        let out = Rc::new(self.value(v).mapv(f64::sqrt));
        let saved = Rc::clone(&out);
        let out_val = (*out).clone();
        self.unary(v, out_val, move |g| {
            Zip::from(g)
                .and(&*saved)
                .map_collect(|&gi, &y| gi / (2.0 * y))
        })
    }

    pub fn recip(&self, v: Var) -> Var {
        let out = Rc::new(self.value(v).mapv(|x| 1.0 / x));
        let saved = Rc::clone(&out);
        let out_val = (*out).clone();
        self.unary(v, out_val, move |g| {
            Zip::from(g).and(&*saved).map_collect(|&gi, &y| -gi * y * y)
        })
    }

    pub fn exp(&self, v: Var) -> Var {
        let out = Rc::new(self.value(v).mapv(f64::exp));
        let saved = Rc::clone(&out);
        let out_val = (*out).clone();
        self.unary(v, out_val, move |g| {
            Zip::from(g).and(&*saved).map_collect(|&gi, &y| gi * y)
        })
    }

    pub fn ln(&self, v: Var) -> Var {
        let value = self.value(v);
        let out = value.mapv(f64::ln);
        self.unary(v, out, move |g| {
            Zip::from(g).and(&*value).map_collect(|&gi, &x| gi / x)
        })
    }

    pub fn tanh(&self, v: Var) -> Var {
        let out = Rc::new(self.value(v).mapv(f64::tanh));
        let saved = Rc::clone(&out);
        let out_val = (*out).clone();
        self.unary(v, out_val, move |g| {
            Zip::from(g)
                .and(&*saved)
                .map_collect(|&gi, &y| gi * (1.0 - y * y))
        })
    }

    pub fn relu(&self, v: Var) -> Var {
        self.leaky_relu(v, 0.0)
    }

    pub fn leaky_relu(&self, v: Var, slope: f64) -> Var {
        let value = self.value(v);
        let out = value.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.unary(v, out, move |g| {
            Zip::from(g)
                .and(&*value)
                .map_collect(|&gi, &x| gi * if x > 0.0 { 1.0 } else { slope })
        })
    }

    pub fn scale(&self, v: Var, c: f64) -> Var {
        let out = self.value(v).mapv(|x| c * x);
        self.unary(v, out, move |g| g.mapv(|x| c * x))
    }

    pub fn add_scalar(&self, v: Var, c: f64) -> Var {
        let out = self.value(v).mapv(|x| x + c);
        self.unary(v, out, |g| g.clone())
    }

    pub fn sum_all(&self, v: Var) -> Var {
        let value = self.value(v);
        let shape = value.raw_dim();
        let out = ArrayD::from_elem(IxDyn(&[1]), value.sum());
        self.unary(v, out, move |g| {
            ArrayD::from_elem(shape.clone(), g[[0]])
        })
    }

    pub fn mean_all(&self, v: Var) -> Var {
        let n = self.value(v).len() as f64;
        let s = self.sum_all(v);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the given axes, keeping them as size-1 dims.
    pub fn sum_axes(&self, v: Var, axes: &[usize]) -> Var {
        let value = self.value(v);
        let in_shape = value.shape().to_vec();
        let mut out = (*value).clone();
        let mut sorted: Vec<usize> = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &ax in &sorted {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
        self.unary(v, out, move |g| broadcast_to(g, &in_shape))
    }

    /// Mean over the given axes, keeping them as size-1 dims.
    pub fn mean_axes(&self, v: Var, axes: &[usize]) -> Var {
        let shape = self.shape(v);
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let s = self.sum_axes(v, axes);
        self.scale(s, 1.0 / count as f64)
    }

    /// Maximum over the last axis (kept as a size-1 dim). Ties route the
    /// gradient to the smallest index.
    pub fn max_last(&self, v: Var) -> Var {
        let value = self.value(v);
        let in_shape = value.shape().to_vec();
        let last = *in_shape.last().expect("max_last on 0-d tensor");
        let rows = value.len() / last;
        let flat = value.as_slice().expect("standard layout");
        let mut out_flat = Vec::with_capacity(rows);
        let mut argmax = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &flat[r * last..(r + 1) * last];
            let (mut best_i, mut best) = (0usize, row[0]);
            for (i, &x) in row.iter().enumerate().skip(1) {
                if x > best {
                    best = x;
                    best_i = i;
                }
            }
            out_flat.push(best);
            argmax.push(best_i);
        }
        let mut out_shape = in_shape.clone();
        *out_shape.last_mut().unwrap() = 1;
        let out = ArrayD::from_shape_vec(IxDyn(&out_shape), out_flat).unwrap();
        self.unary(v, out, move |g| {
            let gflat = g.as_slice().expect("standard layout");
            let mut gi = vec![0.0; rows * last];
            for r in 0..rows {
                gi[r * last + argmax[r]] = gflat[r];
            }
            ArrayD::from_shape_vec(IxDyn(&in_shape), gi).unwrap()
        })
    }

    /// Row-wise softmax over the last axis with max subtraction.
    pub fn softmax_last(&self, v: Var) -> Var {
        let value = self.value(v);
        let shape = value.shape().to_vec();
        let last = *shape.last().expect("softmax_last on 0-d tensor");
        let rows = value.len() / last;
        let flat = value.as_slice().expect("standard layout");
        let mut y = vec![0.0; flat.len()];
        for r in 0..rows {
            let row = &flat[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (i, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                y[r * last + i] = e;
                s += e;
            }
            for i in 0..last {
                y[r * last + i] /= s;
            }
        }
        let out = Rc::new(ArrayD::from_shape_vec(IxDyn(&shape), y).unwrap());
        let saved = Rc::clone(&out);
        let out_val = (*out).clone();
        self.unary(v, out_val, move |g| {
            let gflat = g.as_slice().expect("standard layout");
            let yflat = saved.as_slice().expect("standard layout");
            let mut gi = vec![0.0; gflat.len()];
            for r in 0..rows {
                let base = r * last;
                let mut dot = 0.0;
                for i in 0..last {
                    dot += gflat[base + i] * yflat[base + i];
                }
                for i in 0..last {
                    gi[base + i] = yflat[base + i] * (gflat[base + i] - dot);
                }
            }
            ArrayD::from_shape_vec(IxDyn(&shape), gi).unwrap()
        })
    }

    pub fn reshape(&self, v: Var, dims: &[usize]) -> Var {
        let value = self.value(v);
        let in_shape = value.shape().to_vec();
        assert_eq!(
            value.len(),
            dims.iter().product::<usize>(),
            "reshape {in_shape:?} -> {dims:?} changes element count"
        );
        let out = (*value)
            .clone()
            .into_shape_with_order(IxDyn(dims))
            .expect("reshape of standard-layout array");
        self.unary(v, out, move |g| {
            g.clone()
                .into_shape_with_order(IxDyn(&in_shape))
                .expect("reshape gradient")
        })
    }

    pub fn permute(&self, v: Var, order: &[usize]) -> Var {
        let value = self.value(v);
        assert_eq!(order.len(), value.ndim(), "permute order length");
        let out = value
            .view()
            .permuted_axes(IxDyn(order))
            .as_standard_layout()
            .to_owned();
        let mut inverse = vec![0usize; order.len()];
        for (i, &o) in order.iter().enumerate() {
            inverse[o] = i;
        }
        self.unary(v, out, move |g| {
            g.view()
                .permuted_axes(IxDyn(&inverse))
                .as_standard_layout()
                .to_owned()
        })
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        // concatenate along axis > 0 yields non-standard layout
        let out = concatenate(Axis(axis), &views)
            .expect("concat shapes")
            .as_standard_layout()
            .to_owned();
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.nary(parts, out, move |g, flags| {
            let mut offset = 0usize;
            lens.iter()
                .zip(flags)
                .map(|(&len, &needs)| {
                    let piece = needs.then(|| {
                        g.slice_axis(Axis(axis), Slice::from(offset..offset + len))
                            .to_owned()
                    });
                    offset += len;
                    piece
                })
                .collect()
        })
    }

    pub fn slice_axis_op(&self, v: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = self.value(v);
        let in_shape = value.shape().to_vec();
        assert!(start + len <= in_shape[axis], "slice out of bounds");
        let out = value
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        self.unary(v, out, move |g| {
            let mut full = ArrayD::zeros(IxDyn(&in_shape));
            full.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            full
        })
    }

    /// Select rows along axis 0 (duplicates allowed; gradient scatter-adds).
    pub fn select_rows(&self, v: Var, indices: &[usize]) -> Var {
        let value = self.value(v);
        let in_shape = value.shape().to_vec();
        let idx = indices.to_vec();
        let out = value.select(Axis(0), &idx);
        self.unary(v, out, move |g| {
            let mut full = ArrayD::zeros(IxDyn(&in_shape));
            for (row, &i) in idx.iter().enumerate() {
                let mut dst = full.index_axis_mut(Axis(0), i);
                dst += &g.index_axis(Axis(0), row);
            }
            full
        })
    }

    /// Tile a leading batch dim of size 1 up to `batch`.
    pub fn broadcast_batch(&self, v: Var, batch: usize) -> Var {
        let value = self.value(v);
        assert_eq!(value.shape()[0], 1, "broadcast_batch needs leading dim 1");
        let mut target = value.shape().to_vec();
        target[0] = batch;
        let out = broadcast_to(&value, &target);
        self.unary(v, out, move |g| {
            g.sum_axis(Axis(0)).insert_axis(Axis(0))
        })
    }

    /// 2-d matrix product.
    pub fn mm(&self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let a2 = va.view().into_dimensionality::<Ix2>().expect("mm lhs 2-d");
        let b2 = vb.view().into_dimensionality::<Ix2>().expect("mm rhs 2-d");
        assert_eq!(a2.ncols(), b2.nrows(), "mm inner dims");
        let out = a2.dot(&b2).into_dyn();
        self.binary(a, b, out, move |g, na, nb| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let a2 = va.view().into_dimensionality::<Ix2>().unwrap();
            let b2 = vb.view().into_dimensionality::<Ix2>().unwrap();
            (
                na.then(|| g2.dot(&b2.t()).into_dyn()),
                nb.then(|| a2.t().dot(&g2).into_dyn()),
            )
        })
    }

    /// Batched matrix product: [B,M,K] x [B,K,N] -> [B,M,N].
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        assert_eq!(sa.len(), 3, "bmm lhs must be 3-d");
        assert_eq!(sb.len(), 3, "bmm rhs must be 3-d");
        assert_eq!(sa[0], sb[0], "bmm batch dims");
        assert_eq!(sa[2], sb[1], "bmm inner dims");
        let (bsz, m, n) = (sa[0], sa[1], sb[2]);
        let mut out = ArrayD::zeros(IxDyn(&[bsz, m, n]));
        for i in 0..bsz {
            let ai = va
                .index_axis(Axis(0), i)
                .into_dimensionality::<Ix2>()
                .unwrap();
            let bi = vb
                .index_axis(Axis(0), i)
                .into_dimensionality::<Ix2>()
                .unwrap();
            out.index_axis_mut(Axis(0), i).assign(&ai.dot(&bi));
        }
        self.binary(a, b, out, move |g, na, nb| {
            let ga = na.then(|| {
                let mut ga = ArrayD::zeros(IxDyn(&sa));
                for i in 0..bsz {
                    let gi = g
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    let bi = vb
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    ga.index_axis_mut(Axis(0), i).assign(&gi.dot(&bi.t()));
                }
                ga
            });
            let gb = nb.then(|| {
                let mut gb = ArrayD::zeros(IxDyn(&sb));
                for i in 0..bsz {
                    let gi = g
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    let ai = va
                        .index_axis(Axis(0), i)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    gb.index_axis_mut(Axis(0), i).assign(&ai.t().dot(&gi));
                }
                gb
            });
            (ga, gb)
        })
    }
}
