use super::layers::Linear;
use super::ops::{axpy, dot};
use super::params::ParamBuilder;
use super::Tensor;

/// Multi-head causal self-attention with a fused query/key/value projection.
#[derive(Clone, Debug)]
pub struct CausalSelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub n_head: usize,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    x: Tensor,
    qkv: Tensor,
    /// Per head, row-major `[T x T]` attention weights (zero above the diagonal).
    att: Vec<Vec<f64>>,
    merged: Tensor,
}

impl CausalSelfAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, n_head: usize) -> Self {
        assert!(n_head > 0 && dim % n_head == 0, "dim {dim} not divisible by {n_head} heads");
        CausalSelfAttention {
            qkv: Linear::new(pb, &format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(pb, &format!("{name}.proj"), dim, dim),
            n_head,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.n_head
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, AttentionCache) {
        let t_len = x.rows();
        let (d, hd) = (self.dim, self.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = self.qkv.forward(p, x);
        let mut merged = Tensor::zeros(&[t_len, d]);
        let mut att = Vec::with_capacity(self.n_head);
        for h in 0..self.n_head {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            let mut a = vec![0.0; t_len * t_len];
            for i in 0..t_len {
                let q = &qkv.row(i)[qo..qo + hd];
                let row = &mut a[i * t_len..i * t_len + i + 1];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(q, &qkv.row(j)[ko..ko + hd]) * scale;
                    max = max.max(*s);
                }
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let out = &mut merged.row_mut(i)[qo..qo + hd];
                for (j, s) in row.iter_mut().enumerate() {
                    *s /= sum;
                    axpy(*s, &qkv.row(j)[vo..vo + hd], out);
                }
            }
            att.push(a);
        }
        let y = self.proj.forward(p, &merged);
        (y, AttentionCache { x: x.clone(), qkv, att, merged })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &AttentionCache, dy: &Tensor) -> Tensor {
        let t_len = dy.rows();
        let (d, hd) = (self.dim, self.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let dmerged = self.proj.backward(p, g, &cache.merged, dy);
        let qkv = &cache.qkv;
        let mut dqkv = Tensor::zeros(&[t_len, 3 * d]);
        let mut ds = vec![0.0; t_len];
        for h in 0..self.n_head {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            let a = &cache.att[h];
            for i in 0..t_len {
                let dout = &dmerged.row(i)[qo..qo + hd];
                let arow = &a[i * t_len..i * t_len + i + 1];
                // dL/d(att[i, j]) then the softmax Jacobian.
                let mut weighted = 0.0;
                for j in 0..=i {
                    ds[j] = dot(dout, &qkv.row(j)[vo..vo + hd]);
                    weighted += arow[j] * ds[j];
                }
                for j in 0..=i {
                    axpy(arow[j], dout, &mut dqkv.row_mut(j)[vo..vo + hd]);
                    let dscore = arow[j] * (ds[j] - weighted) * scale;
                    if dscore != 0.0 {
                        let (kj, qi) = (&qkv.row(j)[ko..ko + hd], &qkv.row(i)[qo..qo + hd]);
                        axpy(dscore, kj, &mut dqkv.row_mut(i)[qo..qo + hd]);
                        axpy(dscore, qi, &mut dqkv.row_mut(j)[ko..ko + hd]);
                    }
                }
            }
        }
        self.qkv.backward(p, g, &cache.x, &dqkv)
    }

    pub fn n_params(&self) -> usize {
        self.qkv.n_params() + self.proj.n_params()
    }
}
