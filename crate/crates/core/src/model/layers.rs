//! Dense kernels over HWC feature maps. All maps are row-major
//! `[height][width][channels]` slices of `f64`.

/// Shape of one feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl MapShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// Number of values in the map.
    pub fn size(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Stride-1 convolution with zero "same" padding. `weight` is laid out
/// `[k][k][cin][cout]`.
pub fn conv2d_same(
    input: &[f64],
    shape: MapShape,
    weight: &[f64],
    bias: &[f64],
    k: usize,
    cout: usize,
) -> Vec<f64> {
    let MapShape { height: h, width: w, channels: cin } = shape;
    debug_assert_eq!(input.len(), shape.size());
    debug_assert_eq!(weight.len(), k * k * cin * cout);
    let pad = k / 2;
    let mut out = vec![0.0; h * w * cout];
    for oy in 0..h {
        for ox in 0..w {
            let out_px = &mut out[(oy * w + ox) * cout..][..cout];
            out_px.copy_from_slice(bias);
            for ky in 0..k {
                let Some(iy) = (oy + ky).checked_sub(pad).filter(|&y| y < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox + kx).checked_sub(pad).filter(|&x| x < w) else {
                        continue;
                    };
                    let in_px = &input[(iy * w + ix) * cin..][..cin];
                    let w_base = (ky * k + kx) * cin * cout;
                    for (ci, &x) in in_px.iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        let w_row = &weight[w_base + ci * cout..][..cout];
                        for (o, &wv) in out_px.iter_mut().zip(w_row) {
                            *o += x * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv2d_same`]. Accumulates into `grad_weight` and
/// `grad_bias`; returns the input gradient when `need_input_grad`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_same_backward(
    input: &[f64],
    shape: MapShape,
    weight: &[f64],
    k: usize,
    cout: usize,
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let MapShape { height: h, width: w, channels: cin } = shape;
    let pad = k / 2;
    let mut grad_in = need_input_grad.then(|| vec![0.0; shape.size()]);
    for oy in 0..h {
        for ox in 0..w {
            let g = &grad_out[(oy * w + ox) * cout..][..cout];
            for (b, &gv) in grad_bias.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..k {
                let Some(iy) = (oy + ky).checked_sub(pad).filter(|&y| y < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox + kx).checked_sub(pad).filter(|&x| x < w) else {
                        continue;
                    };
                    let px = (iy * w + ix) * cin;
                    let w_base = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let off = w_base + ci * cout;
                        let x = input[px + ci];
                        if x != 0.0 {
                            let gw = &mut grad_weight[off..off + cout];
                            for (gwv, &gv) in gw.iter_mut().zip(g) {
                                *gwv += x * gv;
                            }
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            let w_row = &weight[off..off + cout];
                            gi[px + ci] += w_row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
        }
    }
    grad_in
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Multiplies `grad` in place by the rectifier derivative at `pre`.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 average pooling with stride 2. Height and width must be even.
pub fn avg_pool2(input: &[f64], shape: MapShape) -> Vec<f64> {
    let MapShape { height: h, width: w, channels: c } = shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let src = &input[((2 * oy + dy) * w + 2 * ox + dx) * c..][..c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d *= 0.25;
            }
        }
    }
    out
}

/// Gradient of [`avg_pool2`] with respect to its input (`shape` is the input shape).
pub fn avg_pool2_backward(grad_out: &[f64], shape: MapShape) -> Vec<f64> {
    let MapShape { height: h, width: w, channels: c } = shape;
    let ow = w / 2;
    let mut grad_in = vec![0.0; shape.size()];
    for y in 0..h {
        for x in 0..w {
            let g = &grad_out[((y / 2) * ow + x / 2) * c..][..c];
            let dst = &mut grad_in[(y * w + x) * c..][..c];
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d = 0.25 * gv;
            }
        }
    }
    grad_in
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(input: &[f64], shape: MapShape, factor: usize) -> Vec<f64> {
    let MapShape { height: h, width: w, channels: c } = shape;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            out[(y * ow + x) * c..][..c]
                .copy_from_slice(&input[((y / factor) * w + x / factor) * c..][..c]);
        }
    }
    out
}

/// Gradient of [`upsample_nearest`]; `shape` is the (small) input shape.
pub fn upsample_nearest_backward(grad_out: &[f64], shape: MapShape, factor: usize) -> Vec<f64> {
    let MapShape { height: h, width: w, channels: c } = shape;
    let (oh, ow) = (h * factor, w * factor);
    let mut grad_in = vec![0.0; shape.size()];
    for y in 0..oh {
        for x in 0..ow {
            let g = &grad_out[(y * ow + x) * c..][..c];
            let dst = &mut grad_in[((y / factor) * w + x / factor) * c..][..c];
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d += gv;
            }
        }
    }
    grad_in
}

/// Per-channel mean over all spatial positions.
pub fn global_avg_pool(input: &[f64], shape: MapShape) -> Vec<f64> {
    let c = shape.channels;
    let mut out = vec![0.0; c];
    for px in input.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = shape.pixels() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

pub fn global_avg_pool_backward(grad_out: &[f64], shape: MapShape) -> Vec<f64> {
    let n = shape.pixels() as f64;
    let scaled: Vec<f64> = grad_out.iter().map(|g| g / n).collect();
    let mut grad_in = Vec::with_capacity(shape.size());
    for _ in 0..shape.pixels() {
        grad_in.extend_from_slice(&scaled);
    }
    grad_in
}

/// `x · W + b` with `W` laid out `[in][out]`.
pub fn dense(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_out = bias.len();
    let mut out = bias.to_vec();
    for (i, &xv) in x.iter().enumerate() {
        let row = &weight[i * n_out..][..n_out];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
    out
}

/// Accumulates dense-layer parameter gradients and returns the input gradient.
pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let n_out = grad_out.len();
    for (b, &g) in grad_bias.iter_mut().zip(grad_out) {
        *b += g;
    }
    x.iter()
        .enumerate()
        .map(|(i, &xv)| {
            let gw = &mut grad_weight[i * n_out..][..n_out];
            for (gwv, &g) in gw.iter_mut().zip(grad_out) {
                *gwv += xv * g;
            }
            weight[i * n_out..][..n_out]
                .iter()
                .zip(grad_out)
                .map(|(w, g)| w * g)
                .sum()
        })
        .collect()
}
