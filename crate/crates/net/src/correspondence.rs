//! Cross-domain dense correspondence: domain adaptors into a shared feature
//! domain, the pairwise correlation matrix, and softmax warping of the
//! exemplar (forward and backward).

use crate::ctx::Forward;
use crate::layers::{Conv2dLayer, ResBlock, instance_norm, LEAKY_SLOPE};
use ndarray::{Array3, Array4, ArrayD, IxDyn};
use warpgen_core::config::ModelConfig;
use warpgen_core::{CoreError, FeatureMap, ImageTensor, ParamStore, SeedRng, Tape, Var};

/// Epsilon for cosine/normalization denominators.
pub const COSINE_EPS: f64 = 1e-8;
const IN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

/// Per-sample (HW x HW) cosine-affinity matrix over the shared domain grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    data: Array3<f64>,
    grid: usize,
}

impl CorrelationMatrix {
    pub fn new(data: Array3<f64>, grid: usize) -> Result<Self, CoreError> {
        let (_, hw, hw2) = data.dim();
        if hw != hw2 || hw != grid * grid {
            return Err(CoreError::Shape {
                context: "CorrelationMatrix".into(),
                expected: format!("[batch, {0}, {0}] for grid {grid}", grid * grid),
                got: format!("{:?}", data.shape()),
            });
        }
        if let Some(v) = data.iter().find(|v| v.abs() > 1.0 + 1e-9) {
            return Err(CoreError::Invariant(format!(
                "correlation entry {v} outside [-1, 1]"
            )));
        }
        Ok(CorrelationMatrix { data, grid })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn side(&self) -> usize {
        self.grid * self.grid
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }
}

/// Warped exemplar at correlation resolution, 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedExemplar(pub ImageTensor);

/// One domain branch: conv stem, strided pyramid, and residual tail.
struct AdaptorBranch {
    stem: Conv2dLayer,
    downs: Vec<(Conv2dLayer, Conv2dLayer)>,
    res: Vec<ResBlock>,
}

impl AdaptorBranch {
    fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        in_channels: usize,
        cfg: &ModelConfig,
    ) -> Self {
        let c = cfg.feature_channels;
        let n_down = (cfg.image_size / cfg.corr_size).trailing_zeros() as usize;
        let stem = Conv2dLayer::init(store, rng, &format!("{name}.stem"), in_channels, c / 4, 3, 1, 1, true, false);
        let mut downs = Vec::new();
        let mut chans = c / 4;
        for d in 0..n_down {
            let after_down = (chans * 2).min(2 * c);
            let after_conv = (after_down * 2).min(2 * c);
            let down = Conv2dLayer::init(
                store, rng, &format!("{name}.down{d}"), chans, after_down, 4, 2, 1, true, false,
            );
            let keep = Conv2dLayer::init(
                store, rng, &format!("{name}.keep{d}"), after_down, after_conv, 3, 1, 1, true, false,
            );
            downs.push((down, keep));
            chans = after_conv;
        }
        let mut res = Vec::new();
        for i in 0..3 {
            let cout = c;
            res.push(ResBlock::init(store, rng, &format!("{name}.res{i}"), chans, cout, IN_EPS));
            chans = cout;
        }
        AdaptorBranch { stem, downs, res }
    }

    fn forward(&self, fx: &Forward, x: Var) -> Var {
        let t = fx.tape;
        let mut h = t.leaky_relu(instance_norm(t, self.stem.forward(fx, x), IN_EPS), LEAKY_SLOPE);
        for (down, keep) in &self.downs {
            h = t.leaky_relu(instance_norm(t, down.forward(fx, h), IN_EPS), LEAKY_SLOPE);
            h = t.leaky_relu(instance_norm(t, keep.forward(fx, h), IN_EPS), LEAKY_SLOPE);
        }
        for block in &self.res {
            h = block.forward(fx, h);
        }
        h
    }
}

/// Shared adaptive feature block applied to both branches.
struct SharedBlock {
    res: Vec<ResBlock>,
    out_conv: Conv2dLayer,
}

impl SharedBlock {
    fn init(store: &mut ParamStore, rng: &mut SeedRng, cfg: &ModelConfig) -> Self {
        let c = cfg.feature_channels;
        let res = (0..4)
            .map(|i| ResBlock::init(store, rng, &format!("corr.shared.res{i}"), c, c, IN_EPS))
            .collect();
        let out_conv = Conv2dLayer::init(store, rng, "corr.shared.out", c, c, 1, 1, 0, true, false);
        // a non-zero output bias keeps features away from the zero vector so
        // per-position normalization stays well defined for constant inputs
        let bias_id = out_conv.bias.unwrap();
        let mut brng = SeedRng::derive(rng.next_u64(), &[0x0b1a5]);
        let bias: Vec<f64> = (0..c).map(|_| brng.normal_scaled(0.0, 0.1)).collect();
        store.set(bias_id, ArrayD::from_shape_vec(IxDyn(&[c]), bias).unwrap());
        SharedBlock { res, out_conv }
    }

    fn forward(&self, fx: &Forward, x: Var) -> Var {
        let mut h = x;
        for block in &self.res {
            h = block.forward(fx, h);
        }
        self.out_conv.forward(fx, h)
    }
}

/// Both domain adaptors plus the shared adaptive block. The two branches
/// hold independent parameter sets; only the adaptive block is shared.
pub struct DomainAdaptor {
    branch_a: AdaptorBranch,
    branch_b: AdaptorBranch,
    shared: SharedBlock,
    pub in_channels_a: usize,
    pub in_channels_b: usize,
    corr_size: usize,
    feature_channels: usize,
}

impl DomainAdaptor {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        cfg: &ModelConfig,
        in_channels_a: usize,
        in_channels_b: usize,
    ) -> Self {
        let branch_a = AdaptorBranch::init(store, rng, "corr.a", in_channels_a, cfg);
        let branch_b = AdaptorBranch::init(store, rng, "corr.b", in_channels_b, cfg);
        let shared = SharedBlock::init(store, rng, cfg);
        DomainAdaptor {
            branch_a,
            branch_b,
            shared,
            in_channels_a,
            in_channels_b,
            corr_size: cfg.corr_size,
            feature_channels: cfg.feature_channels,
        }
    }

    /// Map an input into the shared domain; output is channel-wise
    /// L2-normalized per spatial position.
    pub fn adapt_g(&self, fx: &Forward, x: Var, which: Domain) -> Var {
        let t = fx.tape;
        let in_ch = t.shape(x)[1];
        let expected = match which {
            Domain::A => self.in_channels_a,
            Domain::B => self.in_channels_b,
        };
        assert_eq!(
            in_ch, expected,
            "adapt: domain {which:?} expects {expected} channels, got {in_ch}"
        );
        let branch = match which {
            Domain::A => &self.branch_a,
            Domain::B => &self.branch_b,
        };
        let h = branch.forward(fx, x);
        let h = self.shared.forward(fx, h);
        channel_l2_normalize_g(t, h)
    }

    /// Value-level adapt for inference and tests.
    pub fn adapt(
        &self,
        store: &ParamStore,
        x: &ImageTensor,
        which: Domain,
    ) -> Result<FeatureMap, CoreError> {
        let t = Tape::new();
        let fx = Forward::eval(&t, store);
        let xv = t.leaf(x.data().clone().into_dyn(), false);
        let out = self.adapt_g(&fx, xv, which);
        let arr: Array4<f64> = t.array(out).into_dimensionality().unwrap();
        let (_, c, h, w) = arr.dim();
        debug_assert_eq!((c, h, w), (self.feature_channels, self.corr_size, self.corr_size));
        FeatureMap::new(arr)
    }
}

/// Unit-normalize the channel vector at every spatial position.
pub fn channel_l2_normalize_g(t: &Tape, x: Var) -> Var {
    let norm = t.sqrt(t.sum_axes(t.square(x), &[1]));
    t.div(x, t.add_scalar(norm, COSINE_EPS))
}

/// Subtract the channel mean at every spatial position.
pub fn centralize_g(t: &Tape, f: Var) -> Var {
    let mu = t.mean_axes(f, &[1]);
    t.sub(f, mu)
}

pub fn centralize(f: &FeatureMap) -> FeatureMap {
    let t = Tape::new();
    let v = t.leaf(f.data().clone().into_dyn(), false);
    let out = centralize_g(&t, v);
    FeatureMap::new(t.array(out).into_dimensionality().unwrap()).expect("finite")
}

/// Correlation matrix between two shared-domain maps: entries are cosines of
/// channel-wise centralized feature vectors. [B,C,h,w] x2 -> [B,hw,hw].
pub fn correlation_g(t: &Tape, xs: Var, ys: Var) -> Var {
    let sx = t.shape(xs);
    let sy = t.shape(ys);
    assert_eq!(sx, sy, "correlation operands must share shape");
    let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
    let hw = h * w;
    let normalized = |f: Var| {
        let cent = centralize_g(t, f);
        let norm = t.sqrt(t.sum_axes(t.square(cent), &[1]));
        let unit = t.div(cent, t.add_scalar(norm, COSINE_EPS));
        // [B,C,h,w] -> [B,HW,C]
        t.permute(t.reshape(unit, &[b, c, hw]), &[0, 2, 1])
    };
    let xn = normalized(xs);
    let yn = normalized(ys);
    t.bmm(xn, t.permute(yn, &[0, 2, 1]))
}

pub fn correlation(xs: &FeatureMap, ys: &FeatureMap) -> Result<CorrelationMatrix, CoreError> {
    let t = Tape::new();
    let xv = t.leaf(xs.data().clone().into_dyn(), false);
    let yv = t.leaf(ys.data().clone().into_dyn(), false);
    let m = correlation_g(&t, xv, yv);
    let arr: Array3<f64> = t.array(m).into_dimensionality().unwrap();
    CorrelationMatrix::new(arr, xs.height())
}

/// Core warp over flattened grids: r(u) = sum_v softmax_v(alpha M(u,v)) y(v).
/// `m` is [B,HW,HW], `y_flat` is [B,HW,C]; rows of the softmax sum to one.
pub fn warp_flat_g(t: &Tape, m: Var, y_flat: Var, alpha: f64) -> Var {
    assert!(alpha > 0.0, "softmax alpha must be positive");
    let weights = t.softmax_last(t.scale(m, alpha));
    t.bmm(weights, y_flat)
}

/// Core backward warp: r_back(v) = sum_u softmax_u(alpha M(u,v)) r(u).
pub fn warp_backward_flat_g(t: &Tape, m: Var, r_flat: Var, alpha: f64) -> Var {
    assert!(alpha > 0.0, "softmax alpha must be positive");
    let mt = t.permute(m, &[0, 2, 1]);
    let weights = t.softmax_last(t.scale(mt, alpha)); // [B, v, u]
    t.bmm(weights, r_flat)
}

/// Softmax-weighted warp of the exemplar onto the input grid. The exemplar
/// is bilinearly downsampled to the correlation grid before weighting.
pub fn warp_g(t: &Tape, m: Var, y: Var, alpha: f64, grid: usize) -> Var {
    let sy = t.shape(y);
    let (b, c) = (sy[0], sy[1]);
    let hw = grid * grid;
    assert_eq!(t.shape(m), vec![b, hw, hw], "correlation matrix shape");
    let y_down = if sy[2] == grid && sy[3] == grid {
        y
    } else {
        t.resize_bilinear(y, grid, grid)
    };
    let y_flat = t.permute(t.reshape(y_down, &[b, c, hw]), &[0, 2, 1]);
    let r = warp_flat_g(t, m, y_flat, alpha); // [B,HW,C]
    t.reshape(t.permute(r, &[0, 2, 1]), &[b, c, grid, grid])
}

pub fn warp(
    m: &CorrelationMatrix,
    y: &ImageTensor,
    alpha: f64,
) -> Result<WarpedExemplar, CoreError> {
    let t = Tape::new();
    let mv = t.leaf(m.data().clone().into_dyn(), false);
    let yv = t.leaf(y.data().clone().into_dyn(), false);
    let r = warp_g(&t, mv, yv, alpha, m.grid());
    let arr: Array4<f64> = t.array(r).into_dimensionality().unwrap();
    Ok(WarpedExemplar(ImageTensor::new(arr)?))
}

/// Backward warp: column-softmax weights pull the warped image back onto the
/// exemplar grid.
pub fn warp_backward_g(t: &Tape, m: Var, r: Var, alpha: f64, grid: usize) -> Var {
    let sr = t.shape(r);
    let (b, c) = (sr[0], sr[1]);
    let hw = grid * grid;
    assert_eq!(sr[2] * sr[3], hw, "warped input must be at correlation resolution");
    let r_flat = t.permute(t.reshape(r, &[b, c, hw]), &[0, 2, 1]);
    let back = warp_backward_flat_g(t, m, r_flat, alpha); // [B, v, C]
    t.reshape(t.permute(back, &[0, 2, 1]), &[b, c, grid, grid])
}

pub fn warp_backward(
    m: &CorrelationMatrix,
    r: &WarpedExemplar,
    alpha: f64,
) -> Result<ImageTensor, CoreError> {
    let t = Tape::new();
    let mv = t.leaf(m.data().clone().into_dyn(), false);
    let rv = t.leaf(r.0.data().clone().into_dyn(), false);
    let back = warp_backward_g(&t, mv, rv, alpha, m.grid());
    ImageTensor::new(t.array(back).into_dimensionality().unwrap())
}

/// For each query grid position, the argmax-correlated position in the other
/// image. Ties break toward the smallest linear index. Uses sample 0.
pub fn export_sparse_correspondence(
    m: &CorrelationMatrix,
    query_points: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>, CoreError> {
    let grid = m.grid();
    let data = m.data();
    query_points
        .iter()
        .map(|&(row, col)| {
            if row >= grid || col >= grid {
                return Err(CoreError::Invariant(format!(
                    "query point ({row}, {col}) outside {grid}x{grid} grid"
                )));
            }
            let u = row * grid + col;
            let mut best = (0usize, f64::NEG_INFINITY);
            for v in 0..m.side() {
                let val = data[[0, u, v]];
                if val > best.1 {
                    best = (v, val);
                }
            }
            Ok((best.0 / grid, best.0 % grid))
        })
        .collect()
}

/// Plain-text export: one `u_row u_col v_row v_col` line per query point.
pub fn format_sparse_correspondence(
    queries: &[(usize, usize)],
    matches: &[(usize, usize)],
) -> String {
    queries
        .iter()
        .zip(matches)
        .map(|((ur, uc), (vr, vc))| format!("{ur} {uc} {vr} {vc}\n"))
        .collect()
}
