//! Dense kernels with explicit backward passes.
//!
//! Activations are channel-last: `act[site * channels + c]`, sites ordered
//! x-fastest like [`crate::Volume`].

use crate::real::Real;
use crate::volume::Shape3;

const K: usize = 3;
const TAPS: usize = K * K * K;

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Geometry of one stride-2, pad-1, 3x3x3 convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub in_shape: Shape3,
    pub out_shape: Shape3,
    pub cin: usize,
    pub cout: usize,
}

impl ConvShape {
    pub fn new(in_shape: Shape3, cin: usize, cout: usize) -> Self {
        Self {
            in_shape,
            out_shape: in_shape.map(|d| d.div_ceil(2)),
            cin,
            cout,
        }
    }

    pub fn patch_len(&self) -> usize {
        TAPS * self.cin
    }

    pub fn out_sites(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn in_sites(&self) -> usize {
        self.in_shape.iter().product()
    }

    /// Calls `f(col_offset, input_site)` for every in-bounds tap of output site `o`.
    #[inline]
    fn for_each_tap(&self, o: Shape3, mut f: impl FnMut(usize, usize)) {
        let [sx, sy, sz] = self.in_shape;
        for kz in 0..K {
            let iz = (2 * o[2] + kz) as isize - 1;
            if iz < 0 || iz >= sz as isize {
                continue;
            }
            for ky in 0..K {
                let iy = (2 * o[1] + ky) as isize - 1;
                if iy < 0 || iy >= sy as isize {
                    continue;
                }
                for kx in 0..K {
                    let ix = (2 * o[0] + kx) as isize - 1;
                    if ix < 0 || ix >= sx as isize {
                        continue;
                    }
                    let tap = (kz * K + ky) * K + kx;
                    let site = ix as usize + sx * (iy as usize + sy * iz as usize);
                    f(tap * self.cin, site);
                }
            }
        }
    }

    fn out_coords(&self) -> impl Iterator<Item = Shape3> {
        let [ox, oy, oz] = self.out_shape;
        (0..oz).flat_map(move |z| (0..oy).flat_map(move |y| (0..ox).map(move |x| [x, y, z])))
    }

    /// Unfolds the input into a `(out_sites, patch_len)` matrix; padding taps are zero.
    pub fn im2col<T: Real>(&self, input: &[T]) -> Vec<T> {
        let plen = self.patch_len();
        let mut cols = vec![T::zero(); self.out_sites() * plen];
        for (s, o) in self.out_coords().enumerate() {
            let row = &mut cols[s * plen..(s + 1) * plen];
            self.for_each_tap(o, |off, site| {
                row[off..off + self.cin]
                    .copy_from_slice(&input[site * self.cin..(site + 1) * self.cin]);
            });
        }
        cols
    }

    /// Adds the folded-back patch gradients onto `grad_input`.
    pub fn col2im<T: Real>(&self, dcols: &[T], grad_input: &mut [T]) {
        let plen = self.patch_len();
        for (s, o) in self.out_coords().enumerate() {
            let row = &dcols[s * plen..(s + 1) * plen];
            self.for_each_tap(o, |off, site| {
                let dst = &mut grad_input[site * self.cin..(site + 1) * self.cin];
                for (d, &g) in dst.iter_mut().zip(&row[off..off + self.cin]) {
                    *d += g;
                }
            });
        }
    }
}

/// `out[s][co] = relu(bias[co] + cols[s] . weight[co])`.
pub fn conv_relu_forward<T: Real>(
    shape: &ConvShape,
    cols: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let plen = shape.patch_len();
    let mut out = Vec::with_capacity(shape.out_sites() * shape.cout);
    for row in cols.chunks_exact(plen) {
        for (co, w) in weight.chunks_exact(plen).enumerate() {
            out.push((bias[co] + dot(row, w)).max(T::zero()));
        }
    }
    out
}

/// Backward of [`conv_relu_forward`]. `grad_out` is w.r.t. the post-ReLU
/// output; returns the patch gradients when `want_dcols` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_relu_backward<T: Real>(
    shape: &ConvShape,
    cols: &[T],
    weight: &[T],
    out: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    want_dcols: bool,
) -> Option<Vec<T>> {
    let plen = shape.patch_len();
    let cout = shape.cout;
    let mut dcols = want_dcols.then(|| vec![T::zero(); cols.len()]);
    for s in 0..shape.out_sites() {
        let row = &cols[s * plen..(s + 1) * plen];
        for co in 0..cout {
            let i = s * cout + co;
            if out[i] <= T::zero() {
                continue;
            }
            let g = grad_out[i];
            if g == T::zero() {
                continue;
            }
            grad_bias[co] += g;
            let gw = &mut grad_weight[co * plen..(co + 1) * plen];
            for (w, &x) in gw.iter_mut().zip(row) {
                *w += g * x;
            }
            if let Some(d) = dcols.as_mut() {
                let drow = &mut d[s * plen..(s + 1) * plen];
                for (dx, &w) in drow.iter_mut().zip(&weight[co * plen..(co + 1) * plen]) {
                    *dx += g * w;
                }
            }
        }
    }
    dcols
}

/// Per-channel spatial mean of a channel-last map.
pub fn mean_pool<T: Real>(map: &[T], channels: usize) -> Vec<T> {
    let sites = map.len() / channels;
    let mut acc = vec![T::zero(); channels];
    for site in map.chunks_exact(channels) {
        for (a, &v) in acc.iter_mut().zip(site) {
            *a += v;
        }
    }
    let inv = T::one() / T::of(sites as f64);
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// `weight` is `(out, in)` row-major.
pub fn linear_forward<T: Real>(x: &[T], weight: &[T], bias: Option<&[T]>, out_dim: usize) -> Vec<T> {
    weight
        .chunks_exact(x.len())
        .take(out_dim)
        .enumerate()
        .map(|(o, w)| dot(w, x) + bias.map_or(T::zero(), |b| b[o]))
        .collect()
}

/// Accumulates parameter gradients and returns `dL/dx`.
pub fn linear_backward<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: Option<&mut [T]>,
) -> Vec<T> {
    let n_in = x.len();
    let mut dx = vec![T::zero(); n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        let w = &weight[o * n_in..(o + 1) * n_in];
        let gw = &mut grad_weight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            gw[i] += g * x[i];
            dx[i] += g * w[i];
        }
    }
    if let Some(gb) = grad_bias {
        for (b, &g) in gb.iter_mut().zip(grad_out) {
            *b += g;
        }
    }
    dx
}
