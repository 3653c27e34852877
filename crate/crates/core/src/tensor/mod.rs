//! Dense N-D arrays with hand-written forward/backward passes for every
//! layer the network uses, Adam, and a finite-difference gradient checker.
//!
//! Double precision throughout; backward passes are verified against
//! central differences rather than derived by a general autodiff tape.

mod adam;
mod gradcheck;

pub use adam::{adam_step, AdamConfig, Parameter};
pub use gradcheck::{grad_check, FD_STEP};

use crate::error::{Error, Result};
use crate::imgio::MaskImage;

/// Row-major dense array of `f64` with explicit shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?} (expected {expected})",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Adds `scale * other` elementwise.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn iter_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn expect_3d(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::Shape(format!("{what} must be rank 3, got {s:?}"))),
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `input` is `[C_in, H, W]`, `weights` `[C_out, C_in, k, k]`, `bias`
/// `[C_out]`; output is `[C_out, H + 2*pad - k + 1, W + 2*pad - k + 1]`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, pad: usize) -> Result<Tensor> {
    let (c_in, h, w) = expect_3d(input, "conv input")?;
    let (c_out, wc_in, k) = match weights.shape() {
        [co, ci, kh, kw] if kh == kw => (*co, *ci, *kh),
        s => return Err(Error::Shape(format!("conv weights must be [C,C,k,k], got {s:?}"))),
    };
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv input has {c_in} channels but weights expect {wc_in}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::Shape("conv bias must be [C_out]".into()));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::Shape(format!(
            "kernel {k} too large for padded input {h}x{w} (pad {pad})"
        )));
    }
    let oh = h + 2 * pad - k + 1;
    let ow = w + 2 * pad - k + 1;
    let mut out = Tensor::zeros(&[c_out, oh, ow]);

    let inp = input.data();
    let wt = weights.data();
    let o = out.data_mut();
    for co in 0..c_out {
        let b = bias.data()[co];
        for v in o[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
            *v = b;
        }
        for ci in 0..c_in {
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(pad, ky, h, oh);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(pad, kx, w, ow);
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    let wv = wt[((co * c_in + ci) * k + ky) * k + kx];
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - pad;
                        let in_row = (ci * h + iy) * w;
                        let out_row = (co * oh + oy) * ow;
                        for ox in ox_lo..ox_hi {
                            o[out_row + ox] += wv * inp[in_row + ox + kx - pad];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

// Output coordinates for which `o + k - pad` indexes inside [0, extent).
fn valid_range(pad: usize, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (extent + pad - k).min(out_extent);
    (lo, hi)
}

/// Analytic gradients of [`conv2d`] with respect to input, weights, and bias.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, h, w) = expect_3d(input, "conv input")?;
    let (c_out, _, k) = match weights.shape() {
        [co, ci, kh, kw] if *ci == c_in && kh == kw => (*co, *ci, *kh),
        s => return Err(Error::Shape(format!("conv weights inconsistent: {s:?}"))),
    };
    let (g_cout, oh, ow) = expect_3d(grad_out, "conv grad_out")?;
    if g_cout != c_out || oh != h + 2 * pad - k + 1 || ow != w + 2 * pad - k + 1 {
        return Err(Error::Shape("grad_out does not match conv output shape".into()));
    }

    let mut grad_input = Tensor::zeros(&[c_in, h, w]);
    let mut grad_weights = Tensor::zeros(weights.shape());
    let mut grad_bias = Tensor::zeros(&[c_out]);

    let g = grad_out.data();
    let inp = input.data();
    let wt = weights.data();
    for co in 0..c_out {
        grad_bias.data_mut()[co] = g[co * oh * ow..(co + 1) * oh * ow].iter().sum();
        for ci in 0..c_in {
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(pad, ky, h, oh);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(pad, kx, w, ow);
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    let widx = ((co * c_in + ci) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let mut wsum = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - pad;
                        let in_row = (ci * h + iy) * w;
                        let out_row = (co * oh + oy) * ow;
                        let gi = grad_input.data_mut();
                        for ox in ox_lo..ox_hi {
                            let gv = g[out_row + ox];
                            wsum += gv * inp[in_row + ox + kx - pad];
                            gi[in_row + ox + kx - pad] += gv * wv;
                        }
                    }
                    grad_weights.data_mut()[widx] = wsum;
                }
            }
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}

/// 2x2 stride-2 max pooling; returns the pooled tensor and, per output
/// element, the flat input index of its maximum (first occurrence wins
/// ties, scanning the window row-major).
pub fn maxpool2x(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = expect_3d(input, "pool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("pooling needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];
    let inp = input.data();
    let o = out.data_mut();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (ci * h + 2 * oy) * w + 2 * ox;
                let mut best = inp[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ci * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if inp[idx] > best {
                        best = inp[idx];
                        best_idx = idx;
                    }
                }
                let oidx = (ci * oh + oy) * ow + ox;
                o[oidx] = best;
                argmax[oidx] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes pooled gradients back to the argmax positions.
pub fn maxpool2x_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        gi[idx] += g;
    }
    grad_in
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = expect_3d(input, "upsample input")?;
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    let inp = input.data();
    let o = out.data_mut();
    for ci in 0..c {
        for y in 0..2 * h {
            let in_row = (ci * h + y / 2) * w;
            let out_row = (ci * 2 * h + y) * 2 * w;
            for x in 0..2 * w {
                o[out_row + x] = inp[in_row + x / 2];
            }
        }
    }
    Ok(out)
}

/// Sums each 2x2 block of child gradients back onto the parent cell.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, h2, w2) = expect_3d(grad_out, "upsample grad")?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::Shape("upsample gradient extents must be even".into()));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad_in = Tensor::zeros(&[c, h, w]);
    let g = grad_out.data();
    let gi = grad_in.data_mut();
    for ci in 0..c {
        for y in 0..h2 {
            let out_row = (ci * h2 + y) * w2;
            let in_row = (ci * h + y / 2) * w;
            for x in 0..w2 {
                gi[in_row + x / 2] += g[out_row + x];
            }
        }
    }
    Ok(grad_in)
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor {
        shape: input.shape.clone(),
        data,
    }
}

/// Backward of relu, masked on the forward *output* (positive iff the
/// pre-activation was positive; the derivative at 0 is 0).
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Tensor {
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor {
        shape: grad_out.shape.clone(),
        data,
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .map(|&v| 1.0 / (1.0 + (-v).exp()))
        .collect();
    Tensor {
        shape: input.shape.clone(),
        data,
    }
}

/// Backward of sigmoid given its forward output.
pub fn sigmoid_backward(grad_out: &Tensor, output: &Tensor) -> Tensor {
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &s)| g * s * (1.0 - s))
        .collect();
    Tensor {
        shape: grad_out.shape.clone(),
        data,
    }
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = expect_3d(a, "concat lhs")?;
    let (cb, hb, wb) = expect_3d(b, "concat rhs")?;
    if ha != hb || wa != wb {
        return Err(Error::Shape(format!(
            "concat spatial mismatch: {ha}x{wa} vs {hb}x{wb}"
        )));
    }
    let mut data = Vec::with_capacity((ca + cb) * ha * wa);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor {
        shape: vec![ca + cb, ha, wa],
        data,
    })
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(t: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = expect_3d(t, "split input")?;
    if first > c {
        return Err(Error::Shape(format!("cannot split {first} of {c} channels")));
    }
    let cut = first * h * w;
    Ok((
        Tensor {
            shape: vec![first, h, w],
            data: t.data()[..cut].to_vec(),
        },
        Tensor {
            shape: vec![c - first, h, w],
            data: t.data()[cut..].to_vec(),
        },
    ))
}

/// Probability clamp for the cross-entropy loss.
pub const CE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy over pixels plus the gradient with respect
/// to the pre-sigmoid logits: `(p - y) / (H*W)`.
pub fn pixel_cross_entropy(prob: &Tensor, target: &MaskImage) -> Result<(f64, Tensor)> {
    let (c, h, w) = expect_3d(prob, "probability map")?;
    if c != 1 || h != target.height() || w != target.width() {
        return Err(Error::Shape(format!(
            "probability map {c}x{h}x{w} does not match mask {}x{}",
            target.height(),
            target.width()
        )));
    }
    let n = (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[1, h, w]);
    let g = grad.data_mut();
    for (i, (&p, &y)) in prob.data().iter().zip(target.pixels()).enumerate() {
        let p = p.clamp(CE_EPS, 1.0 - CE_EPS);
        let y = y as f64;
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        g[i] = (p - y) / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let data = (0..shape.iter().product())
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    // Naive six-nested-loop convolution, independent of the fast path.
    fn conv_oracle(input: &Tensor, weights: &Tensor, bias: &Tensor, pad: i64) -> Tensor {
        let (ci_n, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (co_n, k) = (weights.shape()[0], weights.shape()[2]);
        let oh = (h as i64 + 2 * pad - k as i64 + 1) as usize;
        let ow = (w as i64 + 2 * pad - k as i64 + 1) as usize;
        let mut out = Tensor::zeros(&[co_n, oh, ow]);
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..ci_n {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as i64 + ky as i64 - pad;
                                let ix = ox as i64 + kx as i64 - pad;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                acc += input.data()[(ci * h + iy as usize) * w + ix as usize]
                                    * weights.data()[((co * ci_n + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.data_mut()[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_1x1_identity() {
        let input = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d(&input, &w, &b, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_box_filter_preserves_constant_interior() {
        let input = Tensor::from_vec(&[1, 5, 5], vec![0.7; 25]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d(&input, &w, &b, 1).unwrap();
        assert_eq!(out.shape(), &[1, 5, 5]);
        // Interior pixels see the full window.
        for y in 1..4 {
            for x in 1..4 {
                assert!((out.data()[y * 5 + x] - 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (ci, co, h, w, k, pad) in
            [(2, 3, 5, 5, 3, 1), (1, 1, 4, 6, 3, 1), (3, 2, 5, 4, 1, 0), (2, 2, 8, 8, 3, 1)]
        {
            let input = rand_tensor(&mut rng, &[ci, h, w]);
            let weights = rand_tensor(&mut rng, &[co, ci, k, k]);
            let bias = rand_tensor(&mut rng, &[co]);
            let fast = conv2d(&input, &weights, &bias, pad).unwrap();
            let slow = conv_oracle(&input, &weights, &bias, pad as i64);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d(&input, &w, &b, 1).is_err());
    }

    #[test]
    fn conv_backward_zero_grad_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = rand_tensor(&mut rng, &[2, 4, 4]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let g = Tensor::zeros(&[3, 4, 4]);
        let (gi, gw, gb) = conv2d_backward(&g, &input, &w, 1).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_bias_is_grad_sum_for_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = rand_tensor(&mut rng, &[1, 3, 3]);
        let w = rand_tensor(&mut rng, &[2, 1, 1, 1]);
        let g = rand_tensor(&mut rng, &[2, 3, 3]);
        let (_, _, gb) = conv2d_backward(&g, &input, &w, 0).unwrap();
        for co in 0..2 {
            let expected: f64 = g.data()[co * 9..(co + 1) * 9].iter().sum();
            assert!((gb.data()[co] - expected).abs() < 1e-12);
        }
    }

    // Central-difference check for one scalar-valued function of the conv.
    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = rand_tensor(&mut rng, &[2, 4, 4]);
        let weights = rand_tensor(&mut rng, &[2, 2, 3, 3]);
        let bias = rand_tensor(&mut rng, &[2]);
        // Loss = weighted sum of outputs, with fixed random coefficients.
        let coeff = rand_tensor(&mut rng, &[2, 4, 4]);
        let loss = |inp: &Tensor, wt: &Tensor, b: &Tensor| -> f64 {
            conv2d(inp, wt, b, 1)
                .unwrap()
                .data()
                .iter()
                .zip(coeff.data())
                .map(|(a, c)| a * c)
                .sum()
        };
        let (gi, gw, gb) = conv2d_backward(&coeff, &input, &weights, 1).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);

        for idx in [0usize, 7, 20] {
            let mut ip = input.clone();
            ip.data_mut()[idx] += h;
            let mut im = input.clone();
            im.data_mut()[idx] -= h;
            let n = (loss(&ip, &weights, &bias) - loss(&im, &weights, &bias)) / (2.0 * h);
            assert!(rel(gi.data()[idx], n) < 1e-6);
        }
        for idx in [0usize, 17, 35] {
            let mut wp = weights.clone();
            wp.data_mut()[idx] += h;
            let mut wm = weights.clone();
            wm.data_mut()[idx] -= h;
            let n = (loss(&input, &wp, &bias) - loss(&input, &wm, &bias)) / (2.0 * h);
            assert!(rel(gw.data()[idx], n) < 1e-6);
        }
        for idx in [0usize, 1] {
            let mut bp = bias.clone();
            bp.data_mut()[idx] += h;
            let mut bm = bias.clone();
            bm.data_mut()[idx] -= h;
            let n = (loss(&input, &weights, &bp) - loss(&input, &weights, &bm)) / (2.0 * h);
            assert!(rel(gb.data()[idx], n) < 1e-6);
        }
    }

    #[test]
    fn maxpool_basic_and_tie_rule() {
        let t = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = maxpool2x(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(idx, vec![3]);

        let t = Tensor::from_vec(&[1, 2, 2], vec![0.5; 4]).unwrap();
        let (out, idx) = maxpool2x(&t).unwrap();
        assert_eq!(out.data(), &[0.5]);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = rand_tensor(&mut rng, &[1, 4, 4]);
        let (out, _) = maxpool2x(&t).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(t.data()[(2 * oy + dy) * 4 + 2 * ox + dx]);
                    }
                }
                assert_eq!(out.data()[oy * 2 + ox], best);
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        assert!(maxpool2x(&Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let t = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, idx) = maxpool2x(&t).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![2.5]).unwrap();
        let gi = maxpool2x_backward(&g, &idx, &[1, 2, 2]);
        assert_eq!(gi.data(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn upsample_duplicates_and_backward_sums() {
        let t = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let up = upsample2x(&t).unwrap();
        assert_eq!(up.data(), &[1.0; 4]);

        let g = Tensor::from_vec(&[1, 2, 2], vec![1.0; 4]).unwrap();
        let gi = upsample2x_backward(&g).unwrap();
        assert_eq!(gi.data(), &[4.0]);
    }

    #[test]
    fn pool_of_upsample_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = rand_tensor(&mut rng, &[3, 4, 5]);
        let (back, _) = maxpool2x(&upsample2x(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let t = Tensor::from_vec(&[1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let s = sigmoid(&Tensor::from_vec(&[1, 1, 1], vec![0.0]).unwrap());
        assert_eq!(s.data(), &[0.5]);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = rand_tensor(&mut rng, &[1, 3, 3]);
        let coeff = rand_tensor(&mut rng, &[1, 3, 3]);
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);

        let y = sigmoid(&t);
        let g = sigmoid_backward(&coeff, &y);
        for idx in 0..t.len() {
            let mut tp = t.clone();
            tp.data_mut()[idx] += h;
            let mut tm = t.clone();
            tm.data_mut()[idx] -= h;
            let f = |x: &Tensor| -> f64 {
                sigmoid(x).data().iter().zip(coeff.data()).map(|(a, c)| a * c).sum()
            };
            assert!(rel(g.data()[idx], (f(&tp) - f(&tm)) / (2.0 * h)) < 1e-6);
        }

        let y = relu(&t);
        let g = relu_backward(&coeff, &y);
        for idx in 0..t.len() {
            if t.data()[idx].abs() < 1e-4 {
                continue; // kink
            }
            let mut tp = t.clone();
            tp.data_mut()[idx] += h;
            let mut tm = t.clone();
            tm.data_mut()[idx] -= h;
            let f = |x: &Tensor| -> f64 {
                relu(x).data().iter().zip(coeff.data()).map(|(a, c)| a * c).sum()
            };
            assert!(rel(g.data()[idx], (f(&tp) - f(&tm)) / (2.0 * h)) < 1e-6);
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[2, 3, 3]);
        let b = rand_tensor(&mut rng, &[1, 3, 3]);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[3, 3, 3]);
        let (a2, b2) = split_channels(&cat, 2).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn cross_entropy_matched_prediction_is_near_zero() {
        let mask = MaskImage::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        let prob = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (loss, _) = pixel_cross_entropy(&prob, &mask).unwrap();
        assert!(loss <= -(1.0 - CE_EPS).ln() + 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_half_is_log_two() {
        let mask = MaskImage::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let prob = Tensor::from_vec(&[1, 2, 2], vec![0.5; 4]).unwrap();
        let (loss, _) = pixel_cross_entropy(&prob, &mask).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let px: Vec<u8> = (0..16).map(|_| (rng.random::<f64>() < 0.3) as u8).collect();
        let mask = MaskImage::new(4, 4, px).unwrap();
        let probs: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let prob = Tensor::from_vec(&[1, 4, 4], probs.clone()).unwrap();
        let (loss, grad) = pixel_cross_entropy(&prob, &mask).unwrap();

        // Independent scalar-loop computation.
        let mut expected = 0.0;
        for (p, &y) in probs.iter().zip(mask.pixels()) {
            let p = p.clamp(CE_EPS, 1.0 - CE_EPS);
            let y = y as f64;
            expected -= (y * p.ln() + (1.0 - y) * (1.0 - p).ln()) / 16.0;
        }
        assert!((loss - expected).abs() < 1e-12);
        for (i, (&p, &y)) in probs.iter().zip(mask.pixels()).enumerate() {
            assert!((grad.data()[i] - (p - y as f64) / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_rejects_shape_mismatch() {
        let mask = MaskImage::new(2, 2, vec![0; 4]).unwrap();
        let prob = Tensor::zeros(&[1, 3, 3]);
        assert!(pixel_cross_entropy(&prob, &mask).is_err());
    }
}
