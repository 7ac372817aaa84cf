//! Dense f32 tensors and the raw numeric kernels (SAME-padded convolution,
//! nearest upsampling, 2×2 pooling) that the autodiff layer builds on.
//!
//! Images are stored NCHW. All kernels are stride 1 with odd kernel sizes.

use std::sync::{Arc, OnceLock};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable that forces fixed-order reductions.
pub const DETERMINISTIC_ENV: &str = "PUZZLEGAN_DETERMINISTIC";

static DETERMINISTIC: OnceLock<bool> = OnceLock::new();

/// Whether reductions across the batch run in a fixed order.
///
/// Always true without the `parallel` feature. With it, the batch-level
/// weight-gradient reduction is a rayon tree reduction unless
/// `PUZZLEGAN_DETERMINISTIC=1` is set, in which case per-sample partials are
/// summed in sample order.
pub fn deterministic_mode() -> bool {
    if !cfg!(feature = "parallel") {
        return true;
    }
    *DETERMINISTIC.get_or_init(|| {
        std::env::var(DETERMINISTIC_ENV)
            .map(|v| v == "1" || v.eq_ignore_ascii_case("true"))
            .unwrap_or(false)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} elements",
            data.len()
        );
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::new(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn scalar(value: f32) -> Self {
        Self::new(vec![1], vec![value])
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f32> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.len());
        Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch in elementwise op");
        Self::new(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// First-axis slice `[start, end)`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self::new(shape, self.data[start * stride..end * stride].to_vec())
    }

    /// Concatenate along the first axis.
    pub fn stack(parts: &[Tensor]) -> Self {
        assert!(!parts.is_empty());
        let tail = &parts[0].shape[1..];
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], tail, "stack: trailing shape mismatch");
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(tail);
        Self::new(shape, data)
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers, where `op`
/// optionally transposes. `a` is m×k after op, `b` is k×n after op.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the m×k, k×n and m×n extents described by the strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize, cols: &mut [f32]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - p as isize;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, d) in dst.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - p as isize;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f32], c: usize, h: usize, w: usize, k: usize, out: &mut [f32]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - p as isize;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

fn for_each_sample<F>(out: &mut [f32], per_sample: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(per_sample).enumerate().for_each(|(n, o)| f(n, o));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(per_sample).enumerate().for_each(|(n, o)| f(n, o));
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected an NCHW tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

fn weight_dims(w: &Tensor) -> (usize, usize, usize) {
    let s = w.shape();
    assert!(
        s.len() == 4 && s[2] == s[3] && s[2] % 2 == 1,
        "conv weight must be [out, in, k, k] with odd k, got {s:?}"
    );
    (s[0], s[1], s[2])
}

/// SAME-padded stride-1 cross-correlation. `x`: [N, Cin, H, W],
/// `w`: [Cout, Cin, k, k] → [N, Cout, H, W].
pub fn conv2d(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, cin, h, wd) = dims4(x);
    let (cout, wcin, k) = weight_dims(w);
    assert_eq!(cin, wcin, "conv2d: input has {cin} channels, weight expects {wcin}");
    let hw = h * wd;
    let ckk = cin * k * k;
    let mut out = vec![0.0f32; n * cout * hw];
    let xs = x.data();
    let ws = w.data();
    for_each_sample(&mut out, cout * hw, |i, o| {
        let xi = &xs[i * cin * hw..(i + 1) * cin * hw];
        if k == 1 {
            gemm(cout, ckk, hw, 1.0, ws, false, xi, false, 0.0, o);
        } else {
            let mut cols = vec![0.0f32; ckk * hw];
            im2col(xi, cin, h, wd, k, &mut cols);
            gemm(cout, ckk, hw, 1.0, ws, false, &cols, false, 0.0, o);
        }
    });
    Tensor::new(vec![n, cout, h, wd], out)
}

/// Gradient of `<g, conv2d(x, w)>` with respect to `x`.
pub fn conv2d_input_grad(g: &Tensor, w: &Tensor) -> Tensor {
    let (n, cout, h, wd) = dims4(g);
    let (wcout, cin, k) = weight_dims(w);
    assert_eq!(cout, wcout);
    let hw = h * wd;
    let ckk = cin * k * k;
    let mut out = vec![0.0f32; n * cin * hw];
    let gs = g.data();
    let ws = w.data();
    for_each_sample(&mut out, cin * hw, |i, o| {
        let gi = &gs[i * cout * hw..(i + 1) * cout * hw];
        if k == 1 {
            gemm(ckk, cout, hw, 1.0, ws, true, gi, false, 0.0, o);
        } else {
            let mut cols = vec![0.0f32; ckk * hw];
            gemm(ckk, cout, hw, 1.0, ws, true, gi, false, 0.0, &mut cols);
            col2im_add(&cols, cin, h, wd, k, o);
        }
    });
    Tensor::new(vec![n, cin, h, wd], out)
}

/// Gradient of `<g, conv2d(x, w)>` with respect to `w` (kernel size `k`).
pub fn conv2d_weight_grad(x: &Tensor, g: &Tensor, k: usize) -> Tensor {
    let (n, cin, h, wd) = dims4(x);
    let (gn, cout, gh, gw) = dims4(g);
    assert_eq!((n, h, wd), (gn, gh, gw));
    let hw = h * wd;
    let ckk = cin * k * k;
    let xs = x.data();
    let gs = g.data();
    let partial = |i: usize, acc: &mut [f32]| {
        let xi = &xs[i * cin * hw..(i + 1) * cin * hw];
        let gi = &gs[i * cout * hw..(i + 1) * cout * hw];
        if k == 1 {
            gemm(cout, hw, ckk, 1.0, gi, false, xi, true, 1.0, acc);
        } else {
            let mut cols = vec![0.0f32; ckk * hw];
            im2col(xi, cin, h, wd, k, &mut cols);
            gemm(cout, hw, ckk, 1.0, gi, false, &cols, true, 1.0, acc);
        }
    };
    let size = cout * ckk;
    let out = if deterministic_mode() {
        let mut acc = vec![0.0f32; size];
        for i in 0..n {
            partial(i, &mut acc);
        }
        acc
    } else {
        #[cfg(feature = "parallel")]
        {
            (0..n)
                .into_par_iter()
                .fold(
                    || vec![0.0f32; size],
                    |mut acc, i| {
                        partial(i, &mut acc);
                        acc
                    },
                )
                .reduce(
                    || vec![0.0f32; size],
                    |mut a, b| {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        a
                    },
                )
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    };
    Tensor::new(vec![cout, cin, k, k], out)
}

/// Nearest-neighbour ×2 upsampling of an NCHW tensor.
pub fn upsample2x(x: &Tensor) -> Tensor {
    let (n, c, h, w) = dims4(x);
    let (h2, w2) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![0.0f32; n * c * h2 * w2];
    for (p, plane) in out.chunks_mut(h2 * w2).enumerate() {
        let s = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for xo in 0..w2 {
                plane[y * w2 + xo] = s[(y / 2) * w + xo / 2];
            }
        }
    }
    Tensor::new(vec![n, c, h2, w2], out)
}

/// Sum over non-overlapping 2×2 windows (the adjoint of [`upsample2x`]).
pub fn sum_pool2x2(x: &Tensor) -> Tensor {
    let (n, c, h, w) = dims4(x);
    assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2x2 needs even spatial dims");
    let (h2, w2) = (h / 2, w / 2);
    let src = x.data();
    let mut out = vec![0.0f32; n * c * h2 * w2];
    for (p, plane) in out.chunks_mut(h2 * w2).enumerate() {
        let s = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for xo in 0..w2 {
                let a = s[2 * y * w + 2 * xo];
                let b = s[2 * y * w + 2 * xo + 1];
                let c2 = s[(2 * y + 1) * w + 2 * xo];
                let d = s[(2 * y + 1) * w + 2 * xo + 1];
                plane[y * w2 + xo] = (a + b) + (c2 + d);
            }
        }
    }
    Tensor::new(vec![n, c, h2, w2], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor) -> Tensor {
        let (n, cin, h, wd) = dims4(x);
        let (cout, _, k) = weight_dims(w);
        let p = (k / 2) as isize;
        let mut out = vec![0.0f32; n * cout * h * wd];
        for b in 0..n {
            for o in 0..cout {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut s = 0.0;
                        for i in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = xx as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    s += w.data()[((o * cin + i) * k + ky) * k + kx]
                                        * x.data()[((b * cin + i) * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                        out[((b * cout + o) * h + y) * wd + xx] = s;
                    }
                }
            }
        }
        Tensor::new(vec![n, cout, h, wd], out)
    }

    fn ramp(shape: &[usize], scale: f32) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..len).map(|i| ((i * 37 % 101) as f32 - 50.0) * scale).collect(),
        )
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn conv_matches_naive() {
        for k in [1, 3, 5] {
            let x = ramp(&[2, 3, 5, 6], 0.01);
            let w = ramp(&[4, 3, k, k], 0.02);
            let fast = conv2d(&x, &w);
            let slow = naive_conv(&x, &w);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-4, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_grads_are_adjoint() {
        // <g, conv(x, w)> == <input_grad(g, w), x> == <weight_grad(x, g), w>
        let x = ramp(&[2, 3, 4, 5], 0.01);
        let w = ramp(&[2, 3, 3, 3], 0.03);
        let g = ramp(&[2, 2, 4, 5], 0.02);
        let y = conv2d(&x, &w);
        let lhs = dot(&g, &y);
        let via_x = dot(&conv2d_input_grad(&g, &w), &x);
        let via_w = dot(&conv2d_weight_grad(&x, &g, 3), &w);
        assert!((lhs - via_x).abs() < 1e-4 * lhs.abs().max(1.0));
        assert!((lhs - via_w).abs() < 1e-4 * lhs.abs().max(1.0));
    }

    #[test]
    fn pool_is_adjoint_of_upsample() {
        let x = ramp(&[1, 2, 3, 3], 0.1);
        let g = ramp(&[1, 2, 6, 6], 0.05);
        let lhs = dot(&g, &upsample2x(&x));
        let rhs = dot(&sum_pool2x2(&g), &x);
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn conv_preserves_spatial_dims() {
        let x = Tensor::zeros(&[1, 2, 7, 9]);
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        assert_eq!(conv2d(&x, &w).shape(), &[1, 3, 7, 9]);
    }
}
