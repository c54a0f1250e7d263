//! Fully connected tanh network trained by full-batch gradient descent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prob::log_softmax_into;

#[derive(Debug, Clone)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out x n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn glorot(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        Dense {
            n_in,
            n_out,
            w: (0..n_in * n_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            b: vec![0.0; n_out],
        }
    }

    /// `x` is `n x n_in`; returns `n x n_out`.
    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.n_out];
        for (xi, oi) in x
            .chunks_exact(self.n_in)
            .zip(out.chunks_exact_mut(self.n_out))
        {
            for (o, (wo, bo)) in oi
                .iter_mut()
                .zip(self.w.chunks_exact(self.n_in).zip(&self.b))
            {
                *o = bo + wo.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        debug_assert_eq!(out.len(), n * self.n_out);
        out
    }
}

/// A multilayer perceptron with tanh hidden units and linear logits.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(
        n_in: usize,
        hidden: usize,
        depth: usize,
        n_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(n_out);
        Mlp {
            layers: sizes
                .windows(2)
                .map(|s| Dense::glorot(s[0], s[1], rng))
                .collect(),
        }
    }

    fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    fn n_out(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    /// Activations of every layer, input first, logits last.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len() / self.n_in();
        let mut acts = vec![x.to_vec()];
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(acts.last().expect("input present"), n);
            if l + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(h);
        }
        acts
    }

    /// Logits for `x` (row-major, `n x n_in`).
    pub fn logits(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.activations(x)
            .pop()
            .expect("logits present")
            .chunks_exact(self.n_out())
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// One gradient step on mean cross-entropy; returns the loss before the step.
    pub fn step(&mut self, x: &[f64], labels: &[usize], lr: f64) -> f64 {
        let n = labels.len();
        let k = self.n_out();
        let acts = self.activations(x);
        let logits = acts.last().expect("logits present");
        let mut loss = 0.0;
        let mut delta = vec![0.0; n * k];
        let mut logp = vec![0.0; k];
        for ((z, d), &y) in logits
            .chunks_exact(k)
            .zip(delta.chunks_exact_mut(k))
            .zip(labels)
        {
            log_softmax_into(z, &mut logp);
            loss -= logp[y];
            for (dc, lp) in d.iter_mut().zip(&logp) {
                *dc = lp.exp() / n as f64;
            }
            d[y] -= 1.0 / n as f64;
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let mut gw = vec![0.0; n_out * n_in];
            let mut gb = vec![0.0; n_out];
            for (di, ai) in delta.chunks_exact(n_out).zip(input.chunks_exact(n_in)) {
                for ((gwo, gbo), d) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(di) {
                    *gbo += d;
                    for (g, a) in gwo.iter_mut().zip(ai) {
                        *g += d * a;
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n * n_in];
                for ((pi, di), ai) in prev
                    .chunks_exact_mut(n_in)
                    .zip(delta.chunks_exact(n_out))
                    .zip(input.chunks_exact(n_in))
                {
                    for (d, wo) in di.iter().zip(layer.w.chunks_exact(n_in)) {
                        for (p, w) in pi.iter_mut().zip(wo) {
                            *p += d * w;
                        }
                    }
                    for (p, a) in pi.iter_mut().zip(ai) {
                        *p *= 1.0 - a * a;
                    }
                }
                delta = prev;
            }
            let layer = &mut self.layers[l];
            layer.w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g);
            layer.b.iter_mut().zip(&gb).for_each(|(b, g)| *b -= lr * g);
        }
        loss / n as f64
    }

    /// Runs `epochs` full-batch steps.
    pub fn train(&mut self, x: &[f64], labels: &[usize], epochs: usize, lr: f64) -> Result<f64> {
        let mut last = f64::NAN;
        for epoch in 0..epochs {
            last = self.step(x, labels, lr);
            if !last.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {last} at epoch {epoch}"
                )));
            }
        }
        Ok(last)
    }
}
