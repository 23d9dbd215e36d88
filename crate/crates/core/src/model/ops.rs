//! Forward and backward kernels for the three layer kinds.
//!
//! Feature maps are stored channel-major (`[channel][row][col]`). Convolution
//! and transpose convolution share one index relation between a "small" plane
//! indexed by `o` and a "big" plane indexed by `o * stride + k - pad`:
//!
//! - convolution forward gathers big (input) into small (output),
//! - transpose convolution forward scatters small (input) into big (output),
//!
//! and each backward pass uses the opposite primitive plus a correlation for
//! the weight gradient.

use num_traits::Float;

use super::arch::ConvGeometry;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for j in 0..8 {
            acc[j] = acc[j] + ca[j] * cb[j];
        }
    }
    let mut tail = T::zero();
    for j in (n - n % 8)..n {
        tail = tail + a[j] * b[j];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `dst += alpha * src`
#[inline]
pub(crate) fn axpy<T: Float>(dst: &mut [T], alpha: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * s;
    }
}

/// Indices `o` in `[0, small)` whose partner `o * stride + k - pad` lies in `[0, big)`.
#[inline]
fn valid_range(small: usize, big: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let last = big as isize - 1 + pad as isize - k as isize;
    let hi = if last < 0 { 0 } else { last as usize / stride + 1 };
    (lo, hi.min(small).max(lo))
}

#[derive(Clone, Copy)]
struct PlaneMap {
    small: (usize, usize),
    big: (usize, usize),
    stride: usize,
    pad: usize,
}

impl PlaneMap {
    /// Calls `f(small_offset, big_offset, len)` once per row segment of valid
    /// positions for the tap `(ky, kx)`; with stride 1 each segment is
    /// contiguous in both planes.
    #[inline]
    fn for_rows(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (rlo, rhi) = valid_range(self.small.0, self.big.0, ky, self.stride, self.pad);
        let (clo, chi) = valid_range(self.small.1, self.big.1, kx, self.stride, self.pad);
        if clo >= chi {
            return;
        }
        for row in rlo..rhi {
            let big_row = row * self.stride + ky - self.pad;
            let small_off = row * self.small.1 + clo;
            let big_off = big_row * self.big.1 + clo * self.stride + kx - self.pad;
            f(small_off, big_off, chi - clo);
        }
    }

    #[inline]
    fn gather<T: Float>(&self, small: &mut [T], big: &[T], w: T, ky: usize, kx: usize) {
        let stride = self.stride;
        self.for_rows(ky, kx, |s, b, len| {
            if stride == 1 {
                axpy(&mut small[s..s + len], w, &big[b..b + len]);
            } else {
                for i in 0..len {
                    small[s + i] = small[s + i] + w * big[b + i * stride];
                }
            }
        });
    }

    #[inline]
    fn scatter<T: Float>(&self, big: &mut [T], small: &[T], w: T, ky: usize, kx: usize) {
        let stride = self.stride;
        self.for_rows(ky, kx, |s, b, len| {
            if stride == 1 {
                axpy(&mut big[b..b + len], w, &small[s..s + len]);
            } else {
                for i in 0..len {
                    big[b + i * stride] = big[b + i * stride] + w * small[s + i];
                }
            }
        });
    }

    #[inline]
    fn correlate<T: Float>(&self, small: &[T], big: &[T], ky: usize, kx: usize) -> T {
        let stride = self.stride;
        let mut total = T::zero();
        self.for_rows(ky, kx, |s, b, len| {
            if stride == 1 {
                total = total + dot(&small[s..s + len], &big[b..b + len]);
            } else {
                for i in 0..len {
                    total = total + small[s + i] * big[b + i * stride];
                }
            }
        });
        total
    }
}

fn plane_len(size: (usize, usize)) -> usize {
    size.0 * size.1
}

/// Zero-padded strided convolution; weight layout `[out][in][ky][kx]`.
pub(crate) fn conv_forward<T: Float>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let map = PlaneMap { small: g.out_size, big: g.in_size, stride: g.stride, pad: g.pad };
    let (ip, op, k) = (plane_len(g.in_size), plane_len(g.out_size), g.kernel);
    for oc in 0..g.out_channels {
        let out_plane = &mut out[oc * op..(oc + 1) * op];
        out_plane.fill(bias[oc]);
        for ic in 0..g.in_channels {
            let in_plane = &input[ic * ip..(ic + 1) * ip];
            let taps = &weight[(oc * g.in_channels + ic) * k * k..][..k * k];
            for ky in 0..k {
                for kx in 0..k {
                    map.gather(out_plane, in_plane, taps[ky * k + kx], ky, kx);
                }
            }
        }
    }
}

pub(crate) fn conv_backward<T: Float>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_in: Option<&mut [T]>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    let map = PlaneMap { small: g.out_size, big: g.in_size, stride: g.stride, pad: g.pad };
    let (ip, op, k) = (plane_len(g.in_size), plane_len(g.out_size), g.kernel);
    for oc in 0..g.out_channels {
        let go = &grad_out[oc * op..(oc + 1) * op];
        grad_bias[oc] = grad_bias[oc] + go.iter().fold(T::zero(), |a, &v| a + v);
        for ic in 0..g.in_channels {
            let in_plane = &input[ic * ip..(ic + 1) * ip];
            let gw = &mut grad_weight[(oc * g.in_channels + ic) * k * k..][..k * k];
            for ky in 0..k {
                for kx in 0..k {
                    gw[ky * k + kx] = gw[ky * k + kx] + map.correlate(go, in_plane, ky, kx);
                }
            }
        }
    }
    if let Some(grad_in) = grad_in {
        for ic in 0..g.in_channels {
            let gi = &mut grad_in[ic * ip..(ic + 1) * ip];
            for oc in 0..g.out_channels {
                let go = &grad_out[oc * op..(oc + 1) * op];
                let taps = &weight[(oc * g.in_channels + ic) * k * k..][..k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        map.scatter(gi, go, taps[ky * k + kx], ky, kx);
                    }
                }
            }
        }
    }
}

/// Transpose convolution; weight layout `[in][out][ky][kx]`. Output positions
/// that receive no tap (output padding) hold only the bias.
pub(crate) fn tconv_forward<T: Float>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let map = PlaneMap { small: g.in_size, big: g.out_size, stride: g.stride, pad: g.pad };
    let (ip, op, k) = (plane_len(g.in_size), plane_len(g.out_size), g.kernel);
    for oc in 0..g.out_channels {
        let out_plane = &mut out[oc * op..(oc + 1) * op];
        out_plane.fill(bias[oc]);
        for ic in 0..g.in_channels {
            let in_plane = &input[ic * ip..(ic + 1) * ip];
            let taps = &weight[(ic * g.out_channels + oc) * k * k..][..k * k];
            for ky in 0..k {
                for kx in 0..k {
                    map.scatter(out_plane, in_plane, taps[ky * k + kx], ky, kx);
                }
            }
        }
    }
}

pub(crate) fn tconv_backward<T: Float>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_in: Option<&mut [T]>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    let map = PlaneMap { small: g.in_size, big: g.out_size, stride: g.stride, pad: g.pad };
    let (ip, op, k) = (plane_len(g.in_size), plane_len(g.out_size), g.kernel);
    for oc in 0..g.out_channels {
        let go = &grad_out[oc * op..(oc + 1) * op];
        grad_bias[oc] = grad_bias[oc] + go.iter().fold(T::zero(), |a, &v| a + v);
    }
    for ic in 0..g.in_channels {
        let in_plane = &input[ic * ip..(ic + 1) * ip];
        for oc in 0..g.out_channels {
            let go = &grad_out[oc * op..(oc + 1) * op];
            let gw = &mut grad_weight[(ic * g.out_channels + oc) * k * k..][..k * k];
            for ky in 0..k {
                for kx in 0..k {
                    gw[ky * k + kx] = gw[ky * k + kx] + map.correlate(in_plane, go, ky, kx);
                }
            }
        }
    }
    if let Some(grad_in) = grad_in {
        for ic in 0..g.in_channels {
            let gi = &mut grad_in[ic * ip..(ic + 1) * ip];
            for oc in 0..g.out_channels {
                let go = &grad_out[oc * op..(oc + 1) * op];
                let taps = &weight[(ic * g.out_channels + oc) * k * k..][..k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        map.gather(gi, go, taps[ky * k + kx], ky, kx);
                    }
                }
            }
        }
    }
}

/// `out = W x + b` with `W` stored `[outputs][inputs]`.
pub(crate) fn dense_forward<T: Float>(inputs: usize, input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    for (o, y) in out.iter_mut().enumerate() {
        *y = bias[o] + dot(&weight[o * inputs..(o + 1) * inputs], input);
    }
}

pub(crate) fn dense_backward<T: Float>(
    inputs: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_in: Option<&mut [T]>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    for (o, &gy) in grad_out.iter().enumerate() {
        if gy == T::zero() {
            continue;
        }
        grad_bias[o] = grad_bias[o] + gy;
        axpy(&mut grad_weight[o * inputs..(o + 1) * inputs], gy, input);
        if let Some(gi) = grad_in.as_deref_mut() {
            axpy(gi, gy, &weight[o * inputs..(o + 1) * inputs]);
        }
    }
}
