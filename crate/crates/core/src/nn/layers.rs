use super::ops::{axpy, dot, gelu, gelu_grad, matmul_acc};
use super::params::{Init, ParamBuilder, Slot};
use super::Tensor;

/// Standard deviation of projection weights at initialization.
pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// Affine map with weight stored `[din x dout]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Slot,
    pub b: Option<Slot>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize) -> Self {
        Self::with_init(pb, name, din, dout, INIT_STD, true)
    }

    pub fn with_init(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize, std: f64, bias: bool) -> Self {
        let w = pb.add(format!("{name}.weight"), &[din, dout], Init::Normal(std));
        let b = bias.then(|| pb.add(format!("{name}.bias"), &[dout], Init::Zeros));
        Linear { w, b, din, dout }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.cols(), self.din);
        let rows = x.rows();
        let mut y = Tensor::zeros(&[rows, self.dout]);
        if let Some(b) = self.b {
            let b = b.of(p);
            for r in 0..rows {
                y.row_mut(r).copy_from_slice(b);
            }
        }
        matmul_acc(x.data(), self.din, self.w.of(p), self.dout, y.data_mut());
        y
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Tensor, dy: &Tensor) -> Tensor {
        self.backward_params(g, x, dy);
        let w = self.w.of(p);
        let mut dx = Tensor::zeros(&[x.rows(), self.din]);
        for r in 0..x.rows() {
            let dyr = dy.row(r);
            for (i, d) in dx.row_mut(r).iter_mut().enumerate() {
                *d = dot(&w[i * self.dout..(i + 1) * self.dout], dyr);
            }
        }
        dx
    }

    /// Parameter gradients only (for inputs that are not differentiable).
    pub fn backward_params(&self, g: &mut [f64], x: &Tensor, dy: &Tensor) {
        {
            let gw = self.w.of_mut(g);
            for r in 0..x.rows() {
                let dyr = dy.row(r);
                for (i, &a) in x.row(r).iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, dyr, &mut gw[i * self.dout..(i + 1) * self.dout]);
                    }
                }
            }
        }
        if let Some(b) = self.b {
            let gb = b.of_mut(g);
            for r in 0..dy.rows() {
                axpy(1.0, dy.row(r), gb);
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.w.len + self.b.map_or(0, |b| b.len)
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Slot,
    pub bias: Slot,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: pb.add(format!("{name}.gain"), &[dim], Init::Ones),
            bias: pb.add(format!("{name}.bias"), &[dim], Init::Zeros),
            dim,
        }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, LayerNormCache) {
        let (gain, bias) = (self.gain.of(p), self.bias.of(p));
        let n = self.dim as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut rstd = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let mean = xr.iter().sum::<f64>() / n;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            let (hr, yr) = (xhat.row_mut(r), y.row_mut(r));
            for j in 0..self.dim {
                hr[j] = (xr[j] - mean) * s;
                yr[j] = hr[j] * gain[j] + bias[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &LayerNormCache, dy: &Tensor) -> Tensor {
        let gain = self.gain.of(p);
        let n = self.dim as f64;
        let mut dx = Tensor::zeros(dy.shape());
        let mut dxhat = vec![0.0; self.dim];
        for r in 0..dy.rows() {
            let (dyr, hr) = (dy.row(r), cache.xhat.row(r));
            {
                let gg = self.gain.of_mut(g);
                for j in 0..self.dim {
                    gg[j] += dyr[j] * hr[j];
                }
            }
            axpy(1.0, dyr, self.bias.of_mut(g));
            for j in 0..self.dim {
                dxhat[j] = dyr[j] * gain[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / n;
            let mean_dh = dot(&dxhat, hr) / n;
            let s = cache.rstd[r];
            for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                *d = s * (dxhat[j] - mean_d - hr[j] * mean_dh);
            }
        }
        dx
    }
}

/// Lookup table `[vocab x dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: Slot,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(pb: &mut ParamBuilder, name: &str, vocab: usize, dim: usize) -> Self {
        Embedding { table: pb.add(format!("{name}.table"), &[vocab, dim], Init::Normal(INIT_STD)), vocab, dim }
    }

    pub fn row<'a>(&self, p: &'a [f64], id: usize) -> &'a [f64] {
        assert!(id < self.vocab, "embedding index {id} outside vocabulary {}", self.vocab);
        &self.table.of(p)[id * self.dim..(id + 1) * self.dim]
    }

    pub fn backward_row(&self, g: &mut [f64], id: usize, dy: &[f64]) {
        axpy(1.0, dy, &mut self.table.of_mut(g)[id * self.dim..(id + 1) * self.dim]);
    }
}

/// Two-layer GELU feed-forward network `d -> hidden -> d`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward { fc1: Linear::new(pb, &format!("{name}.fc1"), dim, hidden), fc2: Linear::new(pb, &format!("{name}.fc2"), hidden, dim) }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, FeedForwardCache) {
        let pre = self.fc1.forward(p, x);
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let y = self.fc2.forward(p, &act);
        (y, FeedForwardCache { x: x.clone(), pre, act })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &FeedForwardCache, dy: &Tensor) -> Tensor {
        let mut dact = self.fc2.backward(p, g, &cache.act, dy);
        for (d, &z) in dact.data_mut().iter_mut().zip(cache.pre.data()) {
            *d *= gelu_grad(z);
        }
        self.fc1.backward(p, g, &cache.x, &dact)
    }

    pub fn n_params(&self) -> usize {
        self.fc1.n_params() + self.fc2.n_params()
    }
}
