//! Raw dense kernels over row-major slices. Loop orders keep the innermost
//! index contiguous so the autovectorizer can do its job.

use crate::scalar::Scalar;

/// C[m,n] = A[m,k] * B[k,n]
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] * B[n,k]^T  (rows of both operands are contiguous)
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// C[m,n] = A[k,m]^T * B[k,n]
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a_row[i];
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
    c
}

/// Eight-lane unrolled dot product; vectorizes despite being a reduction.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let av = &a[i * 8..i * 8 + 8];
        let bv = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] += av[l] * bv[l];
        }
    }
    let mut acc = T::zero();
    for l in lanes {
        acc += l;
    }
    for i in chunks * 8..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Spatial dims of a cross-correlation output.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Valid output range along one axis for a fixed kernel offset `koff`:
/// all `o` with `0 <= o*stride + koff - padding < input`.
fn valid_range(out: usize, input: usize, stride: usize, padding: usize, koff: usize) -> (usize, usize) {
    let lo = if padding > koff {
        (padding - koff + stride - 1) / stride
    } else {
        0
    };
    // o*stride + koff - padding <= input - 1
    let hi_incl = (input - 1 + padding).saturating_sub(koff) / stride;
    let hi = (hi_incl + 1).min(out);
    (lo.min(hi), hi)
}

/// Unfolds one `[C,H,W]` image into `[C*kh*kw, OH*OW]` rows, one row per
/// kernel offset, zero-filled where the window hangs over the padding.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    image: &[T],
    patches: &mut [T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    for p in patches.iter_mut() {
        *p = T::zero();
    }
    for ci in 0..c_in {
        let plane = &image[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            let (oh_lo, oh_hi) = valid_range(oh, h, stride, padding, ki);
            for kj in 0..kw {
                let f = (ci * kh + ki) * kw + kj;
                let row = &mut patches[f * oh * ow..(f + 1) * oh * ow];
                let (ow_lo, ow_hi) = valid_range(ow, w, stride, padding, kj);
                for o_i in oh_lo..oh_hi {
                    let ih = o_i * stride + ki - padding;
                    let src = &plane[ih * w..(ih + 1) * w];
                    if stride == 1 {
                        let base = ow_lo + kj - padding;
                        row[o_i * ow + ow_lo..o_i * ow + ow_hi]
                            .copy_from_slice(&src[base..base + (ow_hi - ow_lo)]);
                    } else {
                        for o_j in ow_lo..ow_hi {
                            row[o_i * ow + o_j] = src[o_j * stride + kj - padding];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds unfolded gradient rows back onto the `[C,H,W]` input grid.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    patches: &[T],
    image: &mut [T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    for ci in 0..c_in {
        let plane = &mut image[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            let (oh_lo, oh_hi) = valid_range(oh, h, stride, padding, ki);
            for kj in 0..kw {
                let f = (ci * kh + ki) * kw + kj;
                let row = &patches[f * oh * ow..(f + 1) * oh * ow];
                let (ow_lo, ow_hi) = valid_range(ow, w, stride, padding, kj);
                for o_i in oh_lo..oh_hi {
                    let ih = o_i * stride + ki - padding;
                    let dst = &mut plane[ih * w..(ih + 1) * w];
                    if stride == 1 {
                        let base = ow_lo + kj - padding;
                        for (d, &g) in dst[base..base + (ow_hi - ow_lo)]
                            .iter_mut()
                            .zip(&row[o_i * ow + ow_lo..o_i * ow + ow_hi])
                        {
                            *d += g;
                        }
                    } else {
                        for o_j in ow_lo..ow_hi {
                            dst[o_j * stride + kj - padding] += row[o_i * ow + o_j];
                        }
                    }
                }
            }
        }
    }
}

/// out[b,co,oh,ow] = sum_{ci,kh,kw} in[b,ci,oh*s-p+kh,ow*s-p+kw] * k[co,ci,kh,kw]
///
/// Runs as one `[Co,F] x [F,OH*OW]` matmul per image over the unfolded input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let f = c_in * kh * kw;
    let ohw = oh * ow;
    let mut out = vec![T::zero(); batch * c_out * ohw];
    let mut patches = vec![T::zero(); f * ohw];
    for b in 0..batch {
        im2col(&input[b * c_in * h * w..(b + 1) * c_in * h * w], &mut patches, c_in, h, w, kh, kw, stride, padding);
        let out_image = &mut out[b * c_out * ohw..(b + 1) * c_out * ohw];
        // four output rows per patch-row pass cuts the patch traffic 4x
        let mut co = 0usize;
        while co + 4 <= c_out {
            let (o01, o23) = out_image[co * ohw..(co + 4) * ohw].split_at_mut(2 * ohw);
            let (o0, o1) = o01.split_at_mut(ohw);
            let (o2, o3) = o23.split_at_mut(ohw);
            for p in 0..f {
                let kv0 = kernel[co * f + p];
                let kv1 = kernel[(co + 1) * f + p];
                let kv2 = kernel[(co + 2) * f + p];
                let kv3 = kernel[(co + 3) * f + p];
                let p_row = &patches[p * ohw..(p + 1) * ohw];
                for (j, &pv) in p_row.iter().enumerate() {
                    o0[j] += kv0 * pv;
                    o1[j] += kv1 * pv;
                    o2[j] += kv2 * pv;
                    o3[j] += kv3 * pv;
                }
            }
            co += 4;
        }
        while co < c_out {
            let k_row = &kernel[co * f..(co + 1) * f];
            let o_row = &mut out_image[co * ohw..(co + 1) * ohw];
            for (p, &kv) in k_row.iter().enumerate() {
                let p_row = &patches[p * ohw..(p + 1) * ohw];
                for (ov, &pv) in o_row.iter_mut().zip(p_row) {
                    *ov += kv * pv;
                }
            }
            co += 1;
        }
    }
    out
}

/// d_in[b,ci,ih,iw] += k[co,ci,kh,kw] * d_out[b,co,oh,ow]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input<T: Scalar>(
    d_out: &[T],
    kernel: &[T],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let f = c_in * kh * kw;
    let ohw = oh * ow;
    let mut d_in = vec![T::zero(); batch * c_in * h * w];
    let mut d_patches = vec![T::zero(); f * ohw];
    for b in 0..batch {
        // d_patches[F, OHW] = kernel^T [F, Co] * d_out_image [Co, OHW]
        for v in d_patches.iter_mut() {
            *v = T::zero();
        }
        let g_image = &d_out[b * c_out * ohw..(b + 1) * c_out * ohw];
        for co in 0..c_out {
            let k_row = &kernel[co * f..(co + 1) * f];
            let g_row = &g_image[co * ohw..(co + 1) * ohw];
            for (p, &kv) in k_row.iter().enumerate() {
                if kv == T::zero() {
                    continue;
                }
                let d_row = &mut d_patches[p * ohw..(p + 1) * ohw];
                for (dv, &gv) in d_row.iter_mut().zip(g_row) {
                    *dv += kv * gv;
                }
            }
        }
        col2im_add(
            &d_patches,
            &mut d_in[b * c_in * h * w..(b + 1) * c_in * h * w],
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
        );
    }
    d_in
}

/// d_k[co,ci,kh,kw] = sum_{b,oh,ow} in[b,ci,oh*s-p+kh,ow*s-p+kw] * d_out[b,co,oh,ow]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel<T: Scalar>(
    input: &[T],
    d_out: &[T],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let f = c_in * kh * kw;
    let ohw = oh * ow;
    let mut d_k = vec![T::zero(); c_out * f];
    let mut patches = vec![T::zero(); f * ohw];
    for b in 0..batch {
        im2col(&input[b * c_in * h * w..(b + 1) * c_in * h * w], &mut patches, c_in, h, w, kh, kw, stride, padding);
        let g_image = &d_out[b * c_out * ohw..(b + 1) * c_out * ohw];
        for co in 0..c_out {
            let g_row = &g_image[co * ohw..(co + 1) * ohw];
            let dk_row = &mut d_k[co * f..(co + 1) * f];
            for (p, dk) in dk_row.iter_mut().enumerate() {
                *dk += dot(g_row, &patches[p * ohw..(p + 1) * ohw]);
            }
        }
    }
    d_k
}

/// Numerically stable logistic function, clamped into the open interval (0,1)
/// so extreme logits never collapse to exactly 0 or 1.
pub fn stable_sigmoid<T: Scalar>(z: T) -> T {
    let one = T::one();
    let s = if z >= T::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() * T::from_f64(0.5);
    s.max(T::min_positive_value()).min(hi)
}
