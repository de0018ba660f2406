//! Spatial operations: convolution, pooling, and resampling.

use super::{Tape, Var};
use ndarray::{Array2, ArrayD, Axis, Ix4, IxDyn};

/// Lower a [B,C,H,W] tensor into a [C*kh*kw, B*ho*wo] patch matrix.
fn im2col(
    x: &ArrayD<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let x4 = x.view().into_dimensionality::<Ix4>().expect("im2col 4-d");
    let (b, c, h, w) = x4.dim();
    let mut cols = Array2::<f64>::zeros((c * kh * kw, b * ho * wo));
    let xs = x4.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().unwrap();
    let col_w = b * ho * wo;
    for bi in 0..b {
        for ci in 0..c {
            let x_base = (bi * c + ci) * h * w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let out_base = row * col_w + bi * ho * wo;
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src_row = x_base + ih as usize * w;
                        let dst_row = out_base + oh * wo;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            cs[dst_row + ow] = xs[src_row + iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a patch-matrix gradient back into input layout.
fn col2im(
    cols: &Array2<f64>,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> ArrayD<f64> {
    let mut x = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
    let xs = x.as_slice_mut().unwrap();
    let cs = cols.as_slice().expect("standard layout");
    let col_w = b * ho * wo;
    for bi in 0..b {
        for ci in 0..c {
            let x_base = (bi * c + ci) * h * w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let in_base = row * col_w + bi * ho * wo;
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst_row = x_base + ih as usize * w;
                        let src_row = in_base + oh * wo;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            xs[dst_row + iw as usize] += cs[src_row + ow];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Per-axis bilinear sample table: (i0, i1, frac) using half-pixel centers.
fn bilinear_table(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Tape {
    /// 2-d convolution with zero padding: x [B,Cin,H,W], w [Cout,Cin,kh,kw].
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let vx = self.value(x);
        let vw = self.value(w);
        let xs = vx.shape().to_vec();
        let ws = vw.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be 4-d, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be 4-d, got {ws:?}");
        assert_eq!(
            xs[1], ws[1],
            "conv2d channel mismatch: input {xs:?} vs weight {ws:?}"
        );
        let (b, cin, h, win) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(
            h + 2 * pad >= kh && win + 2 * pad >= kw,
            "conv2d kernel larger than padded input"
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (win + 2 * pad - kw) / stride + 1;

        let cols = std::rc::Rc::new(im2col(&vx, kh, kw, stride, pad, ho, wo));
        let w_mat = vw
            .view()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap();
        let y_mat = w_mat.dot(&*cols); // [Cout, B*ho*wo]
        let mut y = y_mat
            .into_shape_with_order(IxDyn(&[cout, b, ho, wo]))
            .unwrap()
            .permuted_axes(IxDyn(&[1, 0, 2, 3]))
            .as_standard_layout()
            .to_owned();
        if let Some(bv) = bias {
            let vb = self.value(bv);
            assert_eq!(vb.shape(), [cout], "conv2d bias shape");
            for (co, &bval) in vb.iter().enumerate() {
                y.index_axis_mut(Axis(1), co).mapv_inplace(|v| v + bval);
            }
        }

        let parents: Vec<Var> = match bias {
            Some(bv) => vec![x, w, bv],
            None => vec![x, w],
        };
        self.nary(&parents, y, move |g, flags| {
            let g_mat = g
                .view()
                .permuted_axes(IxDyn(&[1, 0, 2, 3]))
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order((cout, b * ho * wo))
                .unwrap();
            let w_mat = vw
                .view()
                .into_shape_with_order((cout, cin * kh * kw))
                .unwrap();
            let gx = flags[0].then(|| {
                let col_grad = w_mat.t().dot(&g_mat);
                col2im(&col_grad, b, cin, h, win, kh, kw, stride, pad, ho, wo)
            });
            let gw = flags[1].then(|| {
                g_mat
                    .dot(&cols.t())
                    .into_shape_with_order(IxDyn(&[cout, cin, kh, kw]))
                    .unwrap()
            });
            let mut out = vec![gx, gw];
            if flags.len() == 3 {
                let gb = flags[2].then(|| {
                    let mut acc = vec![0.0; cout];
                    for (co, a) in acc.iter_mut().enumerate() {
                        *a = g.index_axis(Axis(1), co).sum();
                    }
                    ArrayD::from_shape_vec(IxDyn(&[cout]), acc).unwrap()
                });
                out.push(gb);
            }
            out
        })
    }

    /// 2x2 average pooling with stride 2 (even spatial dims required).
    pub fn avg_pool2(&self, x: Var) -> Var {
        let vx = self.value(x);
        let xs = vx.shape().to_vec();
        assert_eq!(xs.len(), 4, "avg_pool2 input must be 4-d");
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let x4 = vx.view().into_dimensionality::<Ix4>().unwrap();
        let mut y = ArrayD::<f64>::zeros(IxDyn(&[b, c, ho, wo]));
        {
            let ys = y.as_slice_mut().unwrap();
            let xsl = x4.as_slice().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let ib = (bi * c + ci) * h * w;
                    let ob = (bi * c + ci) * ho * wo;
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let p = ib + 2 * oh * w + 2 * ow;
                            ys[ob + oh * wo + ow] =
                                0.25 * (xsl[p] + xsl[p + 1] + xsl[p + w] + xsl[p + w + 1]);
                        }
                    }
                }
            }
        }
        self.unary(x, y, move |g| {
            let gs = g.as_slice().unwrap();
            let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
            let gxs = gx.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let ib = (bi * c + ci) * h * w;
                    let ob = (bi * c + ci) * ho * wo;
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let v = 0.25 * gs[ob + oh * wo + ow];
                            let p = ib + 2 * oh * w + 2 * ow;
                            gxs[p] += v;
                            gxs[p + 1] += v;
                            gxs[p + w] += v;
                            gxs[p + w + 1] += v;
                        }
                    }
                }
            }
            gx
        })
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let vx = self.value(x);
        let xs = vx.shape().to_vec();
        assert_eq!(xs.len(), 4, "upsample_nearest2 input must be 4-d");
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = (2 * h, 2 * w);
        let mut y = ArrayD::<f64>::zeros(IxDyn(&[b, c, ho, wo]));
        {
            let ys = y.as_slice_mut().unwrap();
            let xsl = vx.as_slice().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let ib = (bi * c + ci) * h * w;
                    let ob = (bi * c + ci) * ho * wo;
                    for ih in 0..h {
                        for iw in 0..w {
                            let v = xsl[ib + ih * w + iw];
                            let p = ob + 2 * ih * wo + 2 * iw;
                            ys[p] = v;
                            ys[p + 1] = v;
                            ys[p + wo] = v;
                            ys[p + wo + 1] = v;
                        }
                    }
                }
            }
        }
        self.unary(x, y, move |g| {
            let gs = g.as_slice().unwrap();
            let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
            let gxs = gx.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let ib = (bi * c + ci) * h * w;
                    let ob = (bi * c + ci) * ho * wo;
                    for ih in 0..h {
                        for iw in 0..w {
                            let p = ob + 2 * ih * wo + 2 * iw;
                            gxs[ib + ih * w + iw] += gs[p] + gs[p + 1] + gs[p + wo] + gs[p + wo + 1];
                        }
                    }
                }
            }
            gx
        })
    }

    /// Bilinear resize to (oh, ow) using half-pixel centers.
    pub fn resize_bilinear(&self, x: Var, oh: usize, ow: usize) -> Var {
        let vx = self.value(x);
        let xs = vx.shape().to_vec();
        assert_eq!(xs.len(), 4, "resize_bilinear input must be 4-d");
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let ty = bilinear_table(h, oh);
        let tx = bilinear_table(w, ow);
        let mut y = ArrayD::<f64>::zeros(IxDyn(&[b, c, oh, ow]));
        {
            let ys = y.as_slice_mut().unwrap();
            let xsl = vx.as_slice().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let ib = (bi * c + ci) * h * w;
                    let ob = (bi * c + ci) * oh * ow;
                    for (o_i, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (o_j, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let v00 = xsl[ib + y0 * w + x0];
                            let v01 = xsl[ib + y0 * w + x1];
                            let v10 = xsl[ib + y1 * w + x0];
                            let v11 = xsl[ib + y1 * w + x1];
                            let top = v00 + fx * (v01 - v00);
                            let bot = v10 + fx * (v11 - v10);
                            ys[ob + o_i * ow + o_j] = top + fy * (bot - top);
                        }
                    }
                }
            }
        }
        self.unary(x, y, move |g| {
            let gs = g.as_slice().unwrap();
            let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, c, h, w]));
            let gxs = gx.as_slice_mut().unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    let ib = (bi * c + ci) * h * w;
                    let ob = (bi * c + ci) * oh * ow;
                    for (o_i, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (o_j, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let gv = gs[ob + o_i * ow + o_j];
                            gxs[ib + y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            gxs[ib + y0 * w + x1] += gv * (1.0 - fy) * fx;
                            gxs[ib + y1 * w + x0] += gv * fy * (1.0 - fx);
                            gxs[ib + y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
            }
            gx
        })
    }
}
