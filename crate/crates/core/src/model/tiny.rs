//! The in-repo test backbone: two 3x3 convolution blocks and global average
//! pooling, producing a 16-dimensional feature vector from 32x32 RGB inputs.
//! Small enough to train on CPU in seconds, with hand-written backward passes
//! so gradient flow is fully deterministic.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ParamSlot, ParamView};
use crate::rng::{derive_seed, seeded_rng};

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
#[derive(Clone, Debug)]
pub(crate) struct Conv3x3 {
    pub w: Array4<f64>, // (out_c, in_c, 3, 3)
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
}

impl Conv3x3 {
    fn seeded(out_c: usize, in_c: usize, rng: &mut ChaCha8Rng) -> Conv3x3 {
        let limit = (6.0 / (in_c as f64 * 9.0)).sqrt();
        let w = Array4::from_shape_fn((out_c, in_c, 3, 3), |_| {
            let u: f64 = rng.random();
            limit * (2.0 * u - 1.0)
        });
        Conv3x3 {
            w,
            b: Array1::zeros(out_c),
            gw: Array4::zeros((out_c, in_c, 3, 3)),
            gb: Array1::zeros(out_c),
        }
    }

    fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, in_c, h, w) = x.dim();
        let out_c = self.w.dim().0;
        let mut y = Array4::zeros((n, out_c, h, w));
        for bi in 0..n {
            for o in 0..out_c {
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = self.b[o];
                        for ic in 0..in_c {
                            for ky in 0..3usize {
                                let sy = i as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let sx = j as isize + kx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += self.w[(o, ic, ky, kx)]
                                        * x[(bi, ic, sy as usize, sx as usize)];
                                }
                            }
                        }
                        y[(bi, o, i, j)] = acc;
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    fn backward(&mut self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        let (n, in_c, h, w) = x.dim();
        let out_c = self.w.dim().0;
        let mut dx = Array4::zeros((n, in_c, h, w));
        for bi in 0..n {
            for o in 0..out_c {
                for i in 0..h {
                    for j in 0..w {
                        let d = dy[(bi, o, i, j)];
                        if d == 0.0 {
                            continue;
                        }
                        self.gb[o] += d;
                        for ic in 0..in_c {
                            for ky in 0..3usize {
                                let sy = i as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3usize {
                                    let sx = j as isize + kx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    let (sy, sx) = (sy as usize, sx as usize);
                                    self.gw[(o, ic, ky, kx)] += d * x[(bi, ic, sy, sx)];
                                    dx[(bi, ic, sy, sx)] += d * self.w[(o, ic, ky, kx)];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn zero_grads(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }
}

fn relu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

/// dx = dy where the pre-activation was positive.
fn relu_backward(pre: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// 2x2 max pooling with stride 2. Ties pick the first cell in scan order.
fn max_pool2(x: &Array4<f64>) -> (Array4<f64>, Array4<usize>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, oh, ow));
    let mut argmax = Array4::zeros((n, c, oh, ow));
    for bi in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_k = 0usize;
                    for k in 0..4usize {
                        let v = x[(bi, ch, 2 * i + k / 2, 2 * j + k % 2)];
                        if v > best {
                            best = v;
                            best_k = k;
                        }
                    }
                    y[(bi, ch, i, j)] = best;
                    argmax[(bi, ch, i, j)] = best_k;
                }
            }
        }
    }
    (y, argmax)
}

fn max_pool2_backward(
    dy: &Array4<f64>,
    argmax: &Array4<usize>,
    input_shape: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (n, c, oh, ow) = dy.dim();
    let mut dx = Array4::zeros(input_shape);
    for bi in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let k = argmax[(bi, ch, i, j)];
                    dx[(bi, ch, 2 * i + k / 2, 2 * j + k % 2)] += dy[(bi, ch, i, j)];
                }
            }
        }
    }
    dx
}

fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut y = Array2::zeros((n, c));
    for bi in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += x[(bi, ch, i, j)];
                }
            }
            y[(bi, ch)] = acc * scale;
        }
    }
    y
}

fn global_avg_pool_backward(dy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = dy.dim();
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(bi, ch, _, _)| dy[(bi, ch)] * scale)
}

/// Intermediate activations needed by [`TinyConvNet::backward`].
pub(crate) struct TinyCache {
    input: Array4<f64>,
    conv1_pre: Array4<f64>,
    pooled: Array4<f64>,
    pool_argmax: Array4<usize>,
    conv2_pre: Array4<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct TinyConvNet {
    conv1: Conv3x3,
    conv2: Conv3x3,
}

impl TinyConvNet {
    pub const INPUT_SIDE: usize = 32;
    pub const FEATURE_DIM: usize = 16;
    const MID_CHANNELS: usize = 8;

    pub fn seeded(seed: u64) -> TinyConvNet {
        let mut rng1 = seeded_rng(derive_seed(seed, "conv1"));
        let mut rng2 = seeded_rng(derive_seed(seed, "conv2"));
        TinyConvNet {
            conv1: Conv3x3::seeded(Self::MID_CHANNELS, 3, &mut rng1),
            conv2: Conv3x3::seeded(Self::FEATURE_DIM, Self::MID_CHANNELS, &mut rng2),
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array2<f64>, TinyCache) {
        let conv1_pre = self.conv1.forward(x);
        let act1 = relu(&conv1_pre);
        let (pooled, pool_argmax) = max_pool2(&act1);
        let conv2_pre = self.conv2.forward(&pooled);
        let act2 = relu(&conv2_pre);
        let (_, _, h2, w2) = act2.dim();
        let features = global_avg_pool(&act2);
        let cache = TinyCache {
            input: x.clone(),
            conv1_pre,
            pooled,
            pool_argmax,
            conv2_pre,
        };
        debug_assert_eq!((h2, w2), (Self::INPUT_SIDE / 2, Self::INPUT_SIDE / 2));
        (features, cache)
    }

    pub fn backward(&mut self, cache: &TinyCache, dfeatures: &Array2<f64>) {
        let (_, _, h2, w2) = cache.conv2_pre.dim();
        let dact2 = global_avg_pool_backward(dfeatures, h2, w2);
        let dconv2 = relu_backward(&cache.conv2_pre, &dact2);
        let dpooled = self.conv2.backward(&cache.pooled, &dconv2);
        let dact1 = max_pool2_backward(&dpooled, &cache.pool_argmax, cache.conv1_pre.dim());
        let dconv1 = relu_backward(&cache.conv1_pre, &dact1);
        let _ = self.conv1.backward(&cache.input, &dconv1);
    }

    pub fn zero_grads(&mut self) {
        self.conv1.zero_grads();
        self.conv2.zero_grads();
    }

    pub fn param_views(&self) -> Vec<ParamView<'_>> {
        vec![
            ParamView::new("backbone.conv1.w", self.conv1.w.as_slice().unwrap()),
            ParamView::new("backbone.conv1.b", self.conv1.b.as_slice().unwrap()),
            ParamView::new("backbone.conv2.w", self.conv2.w.as_slice().unwrap()),
            ParamView::new("backbone.conv2.b", self.conv2.b.as_slice().unwrap()),
        ]
    }

    pub fn grad_views(&self) -> Vec<ParamView<'_>> {
        vec![
            ParamView::new("backbone.conv1.w", self.conv1.gw.as_slice().unwrap()),
            ParamView::new("backbone.conv1.b", self.conv1.gb.as_slice().unwrap()),
            ParamView::new("backbone.conv2.w", self.conv2.gw.as_slice().unwrap()),
            ParamView::new("backbone.conv2.b", self.conv2.gb.as_slice().unwrap()),
        ]
    }

    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        let Conv3x3 {
            w: w1,
            b: b1,
            gw: gw1,
            gb: gb1,
        } = &mut self.conv1;
        let Conv3x3 {
            w: w2,
            b: b2,
            gw: gw2,
            gb: gb2,
        } = &mut self.conv2;
        vec![
            ParamSlot::new("backbone.conv1.w", w1.as_slice_mut().unwrap(), gw1.as_slice().unwrap()),
            ParamSlot::new("backbone.conv1.b", b1.as_slice_mut().unwrap(), gb1.as_slice().unwrap()),
            ParamSlot::new("backbone.conv2.w", w2.as_slice_mut().unwrap(), gw2.as_slice().unwrap()),
            ParamSlot::new("backbone.conv2.b", b2.as_slice_mut().unwrap(), gb2.as_slice().unwrap()),
        ]
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("backbone.conv1.w".into(), self.conv1.w.shape().to_vec()),
            ("backbone.conv1.b".into(), self.conv1.b.shape().to_vec()),
            ("backbone.conv2.w".into(), self.conv2.w.shape().to_vec()),
            ("backbone.conv2.b".into(), self.conv2.b.shape().to_vec()),
        ]
    }

    pub fn write_param(&mut self, name: &str, data: &[f64]) -> bool {
        let target: Option<&mut [f64]> = match name {
            "backbone.conv1.w" => self.conv1.w.as_slice_mut(),
            "backbone.conv1.b" => self.conv1.b.as_slice_mut(),
            "backbone.conv2.w" => self.conv2.w.as_slice_mut(),
            "backbone.conv2.b" => self.conv2.b.as_slice_mut(),
            _ => return false,
        };
        match target {
            Some(slice) if slice.len() == data.len() => {
                slice.copy_from_slice(data);
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_construction_is_deterministic() {
        let a = TinyConvNet::seeded(11);
        let b = TinyConvNet::seeded(11);
        assert_eq!(a.conv1.w, b.conv1.w);
        assert_eq!(a.conv2.w, b.conv2.w);
        let c = TinyConvNet::seeded(12);
        assert_ne!(a.conv1.w, c.conv1.w);
    }

    #[test]
    fn forward_produces_feature_vectors() {
        let net = TinyConvNet::seeded(5);
        let x = Array4::from_shape_fn((2, 3, 32, 32), |(b, c, i, j)| {
            ((b + c + i + j) % 7) as f64 / 7.0
        });
        let (features, _) = net.forward(&x);
        assert_eq!(features.dim(), (2, TinyConvNet::FEATURE_DIM));
        assert!(features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        // Check a handful of conv1/conv2 weights through the whole backbone
        // with a quadratic readout loss L = 0.5 * sum(features^2).
        let mut net = TinyConvNet::seeded(3);
        let x = Array4::from_shape_fn((1, 3, 32, 32), |(_, c, i, j)| {
            0.1 + ((c * 31 + i * 7 + j) % 11) as f64 / 12.0
        });

        let loss = |net: &TinyConvNet| -> f64 {
            let (f, _) = net.forward(&x);
            0.5 * f.iter().map(|v| v * v).sum::<f64>()
        };

        net.zero_grads();
        let (features, cache) = net.forward(&x);
        net.backward(&cache, &features); // dL/df = f for the quadratic loss

        let step = 1e-6;
        for (flat_index, expected) in [(0usize, net.conv1.gw.as_slice().unwrap()[0]), (
            40usize,
            net.conv1.gw.as_slice().unwrap()[40],
        )] {
            let mut plus = net.clone();
            plus.conv1.w.as_slice_mut().unwrap()[flat_index] += step;
            let mut minus = net.clone();
            minus.conv1.w.as_slice_mut().unwrap()[flat_index] -= step;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let denom = expected.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((expected - fd) / denom).abs() < 1e-3,
                "conv1.w[{flat_index}]: analytic {expected} vs fd {fd}"
            );
        }

        let gb = net.conv2.gb[3];
        let mut plus = net.clone();
        plus.conv2.b[3] += step;
        let mut minus = net.clone();
        minus.conv2.b[3] -= step;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
        let denom = gb.abs().max(fd.abs()).max(1e-8);
        assert!(((gb - fd) / denom).abs() < 1e-3, "conv2.b[3]: {gb} vs {fd}");
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut x = Array4::zeros((1, 1, 4, 4));
        x[(0, 0, 1, 1)] = 5.0;
        x[(0, 0, 2, 3)] = 7.0;
        let (y, argmax) = max_pool2(&x);
        assert_eq!(y[(0, 0, 0, 0)], 5.0);
        assert_eq!(y[(0, 0, 1, 1)], 7.0);
        let dy = Array4::from_elem((1, 1, 2, 2), 1.0);
        let dx = max_pool2_backward(&dy, &argmax, (1, 1, 4, 4));
        assert_eq!(dx[(0, 0, 1, 1)], 1.0);
        assert_eq!(dx[(0, 0, 2, 3)], 1.0);
        assert_eq!(dx.sum(), 4.0);
    }
}
