//! Network building blocks: convolutions with optional spectral
//! normalization, instance/positional normalization, and residual blocks.

use crate::ctx::Forward;
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use warpgen_core::{ParamId, ParamStore, SeedRng, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
const SN_EPS: f64 = 1e-12;

/// Default initialization scale for conv weights.
pub const INIT_STD: f64 = 0.02;

pub fn init_conv_weight(
    rng: &mut SeedRng,
    cout: usize,
    cin: usize,
    k: usize,
    std: f64,
) -> ArrayD<f64> {
    let n = cout * cin * k * k;
    let data: Vec<f64> = (0..n).map(|_| rng.normal_scaled(0.0, std)).collect();
    ArrayD::from_shape_vec(IxDyn(&[cout, cin, k, k]), data).unwrap()
}

fn l2_normalized(v: &Array1<f64>) -> Array1<f64> {
    let norm = v.dot(v).sqrt() + SN_EPS;
    v / norm
}

/// Spectral-norm state: persistent left/right singular vector estimates.
pub struct SpectralNorm {
    pub u: ParamId,
    pub v: ParamId,
}

impl SpectralNorm {
    /// A few warm-start iterations align u/v with the top singular pair so
    /// sigma is positive and meaningful before the first training step.
    fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        weight: &ArrayD<f64>,
        rows: usize,
        cols: usize,
    ) -> Self {
        let w_mat = weight
            .view()
            .into_shape_with_order((rows, cols))
            .unwrap()
            .to_owned();
        let start: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        let mut u = l2_normalized(&Array1::from(start));
        let mut v = l2_normalized(&w_mat.t().dot(&u));
        for _ in 0..3 {
            v = l2_normalized(&w_mat.t().dot(&u));
            u = l2_normalized(&w_mat.dot(&v));
        }
        SpectralNorm {
            u: store.insert(&format!("{name}.sn_u"), u.into_dyn(), false),
            v: store.insert(&format!("{name}.sn_v"), v.into_dyn(), false),
        }
    }
}

/// Convolution layer; weights live in the store, referenced by id.
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub sn: Option<SpectralNorm>,
    rows: usize,
    cols: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
        spectral: bool,
    ) -> Self {
        let w_init = init_conv_weight(rng, cout, cin, k, INIT_STD);
        let (rows, cols) = (cout, cin * k * k);
        let sn = spectral.then(|| SpectralNorm::init(store, rng, name, &w_init, rows, cols));
        let weight = store.insert(&format!("{name}.weight"), w_init, true);
        let bias = with_bias.then(|| {
            store.insert(
                &format!("{name}.bias"),
                ArrayD::zeros(IxDyn(&[cout])),
                true,
            )
        });
        Conv2dLayer {
            weight,
            bias,
            stride,
            pad,
            sn,
            rows,
            cols,
        }
    }

    /// Effective (possibly spectrally normalized) weight on the tape.
    ///
    /// Power-iteration vectors are treated as constants when differentiating;
    /// sigma itself stays a function of the raw weight so the normalization
    /// is exactly checkable with finite differences when the vectors are
    /// frozen (eval mode).
    pub fn effective_weight(&self, fx: &Forward) -> Var {
        let t = fx.tape;
        let w = fx.param(self.weight);
        let Some(sn) = &self.sn else {
            return w;
        };
        let w_val = fx.store.array(self.weight);
        let w_mat = w_val
            .view()
            .into_shape_with_order((self.rows, self.cols))
            .unwrap()
            .to_owned();
        let (u, v) = if fx.training {
            let u_old = self.buffer_vec(fx, sn.u);
            let v_new = l2_normalized(&w_mat.t().dot(&u_old));
            let u_new = l2_normalized(&w_mat.dot(&v_new));
            fx.queue_buffer_update(sn.u, u_new.clone().into_dyn());
            fx.queue_buffer_update(sn.v, v_new.clone().into_dyn());
            (u_new, v_new)
        } else {
            (self.buffer_vec(fx, sn.u), self.buffer_vec(fx, sn.v))
        };
        // sigma = u^T W v = <W, u ⊗ v>
        let mut outer = Array2::<f64>::zeros((self.rows, self.cols));
        for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                outer[[i, j]] = ui * vj;
            }
        }
        let outer = t.constant(
            outer
                .into_dyn()
                .into_shape_with_order(IxDyn(fx.store.value(self.weight).shape()))
                .unwrap(),
        );
        let sigma = t.sum_all(t.mul(w, outer));
        t.mul(w, t.recip(sigma))
    }

    fn buffer_vec(&self, fx: &Forward, id: ParamId) -> Array1<f64> {
        fx.buffer_value(id)
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
    }

    pub fn forward(&self, fx: &Forward, x: Var) -> Var {
        let w = self.effective_weight(fx);
        let bias = self.bias.map(|b| fx.param(b));
        fx.tape.conv2d(x, w, bias, self.stride, self.pad)
    }

    /// Spectrally-normalized weight values (for spectrum tests).
    pub fn normalized_weight_value(&self, fx: &Forward) -> ArrayD<f64> {
        let t = Tape::new();
        let inner = Forward::eval(&t, fx.store);
        let layer = Conv2dLayer {
            weight: self.weight,
            bias: None,
            stride: self.stride,
            pad: self.pad,
            sn: self.sn.as_ref().map(|s| SpectralNorm { u: s.u, v: s.v }),
            rows: self.rows,
            cols: self.cols,
        };
        let w = layer.effective_weight(&inner);
        t.array(w)
    }

    /// Run `n` power iterations directly on the stored weight, updating the
    /// u/v buffers in the store.
    pub fn power_iterate(&self, store: &mut ParamStore, n: usize) {
        let Some(sn) = &self.sn else { return };
        let w_val = store.array(self.weight);
        let w_mat = w_val
            .view()
            .into_shape_with_order((self.rows, self.cols))
            .unwrap()
            .to_owned();
        let mut u = store
            .array(sn.u)
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let mut v;
        let mut v_last = store
            .array(sn.v)
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        for _ in 0..n {
            v = l2_normalized(&w_mat.t().dot(&u));
            u = l2_normalized(&w_mat.dot(&v));
            v_last = v;
        }
        store.set(sn.u, u.into_dyn());
        store.set(sn.v, v_last.into_dyn());
    }
}

/// Instance normalization (per sample, per channel over spatial dims).
pub fn instance_norm(t: &Tape, x: Var, eps: f64) -> Var {
    let mu = t.mean_axes(x, &[2, 3]);
    let d = t.sub(x, mu);
    let var = t.mean_axes(t.square(d), &[2, 3]);
    let inv = t.recip(t.sqrt(t.add_scalar(var, eps)));
    t.mul(d, inv)
}

/// Positional normalization: statistics across channels per spatial position.
/// Returns the normalized map and the (mu, sigma) used.
pub fn positional_norm(t: &Tape, x: Var, eps: f64) -> (Var, Var, Var) {
    let mu = t.mean_axes(x, &[1]);
    let d = t.sub(x, mu);
    let var = t.mean_axes(t.square(d), &[1]);
    let sigma = t.sqrt(t.add_scalar(var, eps));
    (t.div(d, sigma), mu, sigma)
}

/// Residual block of two convolutions with instance norm and leaky ReLU;
/// a 1x1 projection aligns channels when they differ.
pub struct ResBlock {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    skip: Option<Conv2dLayer>,
    eps: f64,
}

impl ResBlock {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut SeedRng,
        name: &str,
        cin: usize,
        cout: usize,
        eps: f64,
    ) -> Self {
        let conv1 = Conv2dLayer::init(store, rng, &format!("{name}.conv1"), cin, cout, 3, 1, 1, true, false);
        let conv2 = Conv2dLayer::init(store, rng, &format!("{name}.conv2"), cout, cout, 3, 1, 1, true, false);
        let skip = (cin != cout).then(|| {
            Conv2dLayer::init(store, rng, &format!("{name}.skip"), cin, cout, 1, 1, 0, false, false)
        });
        ResBlock {
            conv1,
            conv2,
            skip,
            eps,
        }
    }

    pub fn forward(&self, fx: &Forward, x: Var) -> Var {
        let t = fx.tape;
        let h = instance_norm(t, self.conv1.forward(fx, x), self.eps);
        let h = t.leaky_relu(h, LEAKY_SLOPE);
        let h = instance_norm(t, self.conv2.forward(fx, h), self.eps);
        let s = match &self.skip {
            Some(proj) => proj.forward(fx, x),
            None => x,
        };
        t.add(s, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Ix2;

    fn top_singular_value(w: &Array2<f64>) -> f64 {
        // power iteration oracle, run to convergence
        let mut u = Array1::from_elem(w.nrows(), 1.0 / (w.nrows() as f64).sqrt());
        for _ in 0..500 {
            let v = l2_normalized(&w.t().dot(&u));
            u = l2_normalized(&w.dot(&v));
        }
        let v = l2_normalized(&w.t().dot(&u));
        u.dot(&w.dot(&v))
    }

    #[test]
    fn spectral_norm_bounds_top_singular_value() {
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(5);
        let layer = Conv2dLayer::init(&mut store, &mut rng, "c", 4, 6, 3, 1, 1, false, true);
        layer.power_iterate(&mut store, 50);
        let t = Tape::new();
        let fx = Forward::eval(&t, &store);
        let w_hat = layer.normalized_weight_value(&fx);
        let w_mat = w_hat
            .into_shape_with_order((6, 4 * 9))
            .unwrap()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let sigma = top_singular_value(&w_mat);
        assert!(sigma <= 1.05, "top singular value {sigma}");
        assert!(sigma > 0.5, "suspiciously small sigma {sigma}");
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let t = Tape::new();
        let mut rng = SeedRng::new(1);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.normal_scaled(2.0, 3.0)).collect();
        let x = t.leaf(ArrayD::from_shape_vec(IxDyn(&[2, 3, 4, 4]), data).unwrap(), false);
        let y = t.array(instance_norm(&t, x, 1e-8));
        for b in 0..2 {
            for c in 0..3 {
                let ch = y.slice(ndarray::s![b, c, .., ..]);
                let mean = ch.mean().unwrap();
                let var = ch.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn positional_norm_two_channel_hand_case() {
        let t = Tape::new();
        // single position with channel values (1, 3): mu = 2, sigma = 1
        let x = t.leaf(
            ArrayD::from_shape_vec(IxDyn(&[1, 2, 1, 1]), vec![1.0, 3.0]).unwrap(),
            false,
        );
        let (y, mu, sigma) = positional_norm(&t, x, 1e-12);
        let yv = t.array(y);
        assert!((yv[[0, 0, 0, 0]] + 1.0).abs() < 1e-6);
        assert!((yv[[0, 1, 0, 0]] - 1.0).abs() < 1e-6);
        assert!((t.array(mu)[[0, 0, 0, 0]] - 2.0).abs() < 1e-12);
        assert!((t.array(sigma)[[0, 0, 0, 0]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resblock_projects_channels() {
        let mut store = ParamStore::new();
        let mut rng = SeedRng::new(2);
        let block = ResBlock::init(&mut store, &mut rng, "rb", 4, 8, 1e-5);
        let t = Tape::new();
        let fx = Forward::eval(&t, &store);
        let x = t.leaf(ArrayD::zeros(IxDyn(&[1, 4, 6, 6])), false);
        let y = block.forward(&fx, x);
        assert_eq!(t.shape(y), vec![1, 8, 6, 6]);
    }
}
