//! Low-level computational kernels shared by the layer implementations.
//!
//! Convolutions are lowered to im2col + matmul; transpose convolutions reuse
//! the same machinery mirrored (matmul + col2im on the output image). All
//! reductions run in a fixed order, so results are bitwise identical no
//! matter how many threads rayon uses: parallelism is only ever over
//! independent output rows.

use rayon::prelude::*;

use crate::tensor::Scalar;

/// Below this many multiply-adds a parallel matmul is not worth the overhead.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;

/// Sentinel argmax index for max-pool cells where the zero pad won.
pub(crate) const POOL_PAD_ARGMAX: usize = usize::MAX;

/// C(m,n) = A(m,k) * B(k,n).
pub(crate) fn matmul<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![E::zero(); m * n];
    let row = |(c_row, a_row): (&mut [E], &[E])| {
        for (l, &av) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m > 1 && m * k * n >= PAR_FLOP_THRESHOLD {
        c.par_chunks_mut(n).zip(a.par_chunks(k)).for_each(row);
    } else {
        c.chunks_mut(n).zip(a.chunks(k)).for_each(row);
    }
    c
}

/// C(k,n) = A(p,k)^T * B(p,n). Accumulates row-by-row of A/B; C is small and
/// stays cache-resident, so this is kept sequential.
pub(crate) fn matmul_at<E: Scalar>(a: &[E], b: &[E], p: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), p * k);
    debug_assert_eq!(b.len(), p * n);
    let mut c = vec![E::zero(); k * n];
    for (a_row, b_row) in a.chunks(k).zip(b.chunks(n)) {
        for (l, &av) in a_row.iter().enumerate() {
            if av != E::zero() {
                let c_row = &mut c[l * n..(l + 1) * n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }
    c
}

/// C(m,k) = A(m,n) * B(k,n)^T. Inner products over contiguous rows.
pub(crate) fn matmul_bt<E: Scalar>(a: &[E], b: &[E], m: usize, n: usize, k: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![E::zero(); m * k];
    let row = |(c_row, a_row): (&mut [E], &[E])| {
        for (cv, b_row) in c_row.iter_mut().zip(b.chunks(n)) {
            let mut acc = E::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            *cv = acc;
        }
    };
    if m > 1 && m * n * k >= PAR_FLOP_THRESHOLD {
        c.par_chunks_mut(k).zip(a.par_chunks(n)).for_each(row);
    } else {
        c.chunks_mut(k).zip(a.chunks(n)).for_each(row);
    }
    c
}

/// Gather/scatter geometry for one 2D convolution-like operation. `out_h` /
/// `out_w` are trusted as given; gathers outside the input are zero-filled.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geom2d {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geom2d {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.channels
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub(crate) fn im2col2d<E: Scalar>(input: &[E], g: &Geom2d) -> Vec<E> {
    debug_assert_eq!(input.len(), g.in_h * g.in_w * g.channels);
    let k_len = g.patch_len();
    let mut col = vec![E::zero(); g.positions() * k_len];
    let c = g.channels;
    for oi in 0..g.out_h {
        let r0 = (oi * g.sh) as isize - g.pad_h as isize;
        for oj in 0..g.out_w {
            let c0 = (oj * g.sw) as isize - g.pad_w as isize;
            let dst_base = (oi * g.out_w + oj) * k_len;
            for u in 0..g.kh {
                let r = r0 + u as isize;
                if r < 0 || r >= g.in_h as isize {
                    continue;
                }
                for v in 0..g.kw {
                    let cc = c0 + v as isize;
                    if cc < 0 || cc >= g.in_w as isize {
                        continue;
                    }
                    let src = ((r as usize) * g.in_w + cc as usize) * c;
                    let dst = dst_base + (u * g.kw + v) * c;
                    col[dst..dst + c].copy_from_slice(&input[src..src + c]);
                }
            }
        }
    }
    col
}

/// Inverse of [`im2col2d`]: accumulate patch columns back into an image.
pub(crate) fn col2im2d<E: Scalar>(col: &[E], g: &Geom2d) -> Vec<E> {
    let k_len = g.patch_len();
    debug_assert_eq!(col.len(), g.positions() * k_len);
    let mut img = vec![E::zero(); g.in_h * g.in_w * g.channels];
    let c = g.channels;
    for oi in 0..g.out_h {
        let r0 = (oi * g.sh) as isize - g.pad_h as isize;
        for oj in 0..g.out_w {
            let c0 = (oj * g.sw) as isize - g.pad_w as isize;
            let src_base = (oi * g.out_w + oj) * k_len;
            for u in 0..g.kh {
                let r = r0 + u as isize;
                if r < 0 || r >= g.in_h as isize {
                    continue;
                }
                for v in 0..g.kw {
                    let cc = c0 + v as isize;
                    if cc < 0 || cc >= g.in_w as isize {
                        continue;
                    }
                    let dst = ((r as usize) * g.in_w + cc as usize) * c;
                    let src = src_base + (u * g.kw + v) * c;
                    for (iv, &sv) in img[dst..dst + c].iter_mut().zip(&col[src..src + c]) {
                        *iv = *iv + sv;
                    }
                }
            }
        }
    }
    img
}

/// 3D analogue of [`Geom2d`]; axes are (row, col, depth) with channels last.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geom3d {
    pub in_h: usize,
    pub in_w: usize,
    pub in_d: usize,
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub kd: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub pad_d: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_d: usize,
}

impl Geom3d {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.kd * self.channels
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w * self.out_d
    }
}

pub(crate) fn im2col3d<E: Scalar>(input: &[E], g: &Geom3d) -> Vec<E> {
    debug_assert_eq!(input.len(), g.in_h * g.in_w * g.in_d * g.channels);
    let k_len = g.patch_len();
    let mut col = vec![E::zero(); g.positions() * k_len];
    let c = g.channels;
    for oi in 0..g.out_h {
        let r0 = oi as isize - g.pad_h as isize;
        for oj in 0..g.out_w {
            let c0 = oj as isize - g.pad_w as isize;
            for od in 0..g.out_d {
                let d0 = od as isize - g.pad_d as isize;
                let dst_base = ((oi * g.out_w + oj) * g.out_d + od) * k_len;
                for u in 0..g.kh {
                    let r = r0 + u as isize;
                    if r < 0 || r >= g.in_h as isize {
                        continue;
                    }
                    for v in 0..g.kw {
                        let cc = c0 + v as isize;
                        if cc < 0 || cc >= g.in_w as isize {
                            continue;
                        }
                        for t in 0..g.kd {
                            let d = d0 + t as isize;
                            if d < 0 || d >= g.in_d as isize {
                                continue;
                            }
                            let src =
                                (((r as usize) * g.in_w + cc as usize) * g.in_d + d as usize) * c;
                            let dst = dst_base + ((u * g.kw + v) * g.kd + t) * c;
                            col[dst..dst + c].copy_from_slice(&input[src..src + c]);
                        }
                    }
                }
            }
        }
    }
    col
}

pub(crate) fn col2im3d<E: Scalar>(col: &[E], g: &Geom3d) -> Vec<E> {
    let k_len = g.patch_len();
    debug_assert_eq!(col.len(), g.positions() * k_len);
    let mut img = vec![E::zero(); g.in_h * g.in_w * g.in_d * g.channels];
    let c = g.channels;
    for oi in 0..g.out_h {
        let r0 = oi as isize - g.pad_h as isize;
        for oj in 0..g.out_w {
            let c0 = oj as isize - g.pad_w as isize;
            for od in 0..g.out_d {
                let d0 = od as isize - g.pad_d as isize;
                let src_base = ((oi * g.out_w + oj) * g.out_d + od) * k_len;
                for u in 0..g.kh {
                    let r = r0 + u as isize;
                    if r < 0 || r >= g.in_h as isize {
                        continue;
                    }
                    for v in 0..g.kw {
                        let cc = c0 + v as isize;
                        if cc < 0 || cc >= g.in_w as isize {
                            continue;
                        }
                        for t in 0..g.kd {
                            let d = d0 + t as isize;
                            if d < 0 || d >= g.in_d as isize {
                                continue;
                            }
                            let dst =
                                (((r as usize) * g.in_w + cc as usize) * g.in_d + d as usize) * c;
                            let src = src_base + ((u * g.kw + v) * g.kd + t) * c;
                            for (iv, &sv) in img[dst..dst + c].iter_mut().zip(&col[src..src + c]) {
                                *iv = *iv + sv;
                            }
                        }
                    }
                }
            }
        }
    }
    img
}

/// Adds `bias[f]` to every position of a (positions, filters) row-major block.
pub(crate) fn add_bias<E: Scalar>(data: &mut [E], bias: &[E]) {
    for row in data.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

/// Per-filter sums of a (positions, filters) block: the bias gradient.
pub(crate) fn bias_grad<E: Scalar>(data: &[E], filters: usize) -> Vec<E> {
    let mut acc = vec![E::zero(); filters];
    for row in data.chunks(filters) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    acc
}

/// Non-overlapping 2D max pooling over (h, w, c) with pool-sized strides.
/// In ceil mode partial border windows are zero-padded, so an implicit 0
/// competes in the max; `POOL_PAD_ARGMAX` marks cells where it won.
pub(crate) fn maxpool2d<E: Scalar>(
    input: &[E],
    in_h: usize,
    in_w: usize,
    channels: usize,
    ph: usize,
    pw: usize,
    out_h: usize,
    out_w: usize,
    ceil: bool,
) -> (Vec<E>, Vec<usize>) {
    let mut out = vec![E::zero(); out_h * out_w * channels];
    let mut argmax = vec![POOL_PAD_ARGMAX; out_h * out_w * channels];
    for oi in 0..out_h {
        let r0 = oi * ph;
        let r1 = (r0 + ph).min(in_h);
        for oj in 0..out_w {
            let c0 = oj * pw;
            let c1 = (c0 + pw).min(in_w);
            let partial = (r1 - r0) < ph || (c1 - c0) < pw;
            for ch in 0..channels {
                let mut best = if ceil && partial {
                    E::zero()
                } else {
                    E::neg_infinity()
                };
                let mut best_idx = POOL_PAD_ARGMAX;
                let mut seeded = ceil && partial;
                for r in r0..r1 {
                    for cc in c0..c1 {
                        let idx = (r * in_w + cc) * channels + ch;
                        let v = input[idx];
                        if v > best || !seeded {
                            best = v;
                            best_idx = idx;
                            seeded = true;
                        }
                    }
                }
                let dst = (oi * out_w + oj) * channels + ch;
                out[dst] = best;
                argmax[dst] = best_idx;
            }
        }
    }
    (out, argmax)
}

/// 3D max pooling over (h, w, d, c); same conventions as [`maxpool2d`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool3d<E: Scalar>(
    input: &[E],
    in_dims: (usize, usize, usize),
    channels: usize,
    pool: (usize, usize, usize),
    out_dims: (usize, usize, usize),
    ceil: bool,
) -> (Vec<E>, Vec<usize>) {
    let (in_h, in_w, in_d) = in_dims;
    let (ph, pw, pd) = pool;
    let (out_h, out_w, out_d) = out_dims;
    let mut out = vec![E::zero(); out_h * out_w * out_d * channels];
    let mut argmax = vec![POOL_PAD_ARGMAX; out.len()];
    for oi in 0..out_h {
        let r0 = oi * ph;
        let r1 = (r0 + ph).min(in_h);
        for oj in 0..out_w {
            let c0 = oj * pw;
            let c1 = (c0 + pw).min(in_w);
            for od in 0..out_d {
                let d0 = od * pd;
                let d1 = (d0 + pd).min(in_d);
                let partial = (r1 - r0) < ph || (c1 - c0) < pw || (d1 - d0) < pd;
                for ch in 0..channels {
                    let mut best = if ceil && partial {
                        E::zero()
                    } else {
                        E::neg_infinity()
                    };
                    let mut best_idx = POOL_PAD_ARGMAX;
                    let mut seeded = ceil && partial;
                    for r in r0..r1 {
                        for cc in c0..c1 {
                            for d in d0..d1 {
                                let idx = ((r * in_w + cc) * in_d + d) * channels + ch;
                                let v = input[idx];
                                if v > best || !seeded {
                                    best = v;
                                    best_idx = idx;
                                    seeded = true;
                                }
                            }
                        }
                    }
                    let dst = ((oi * out_w + oj) * out_d + od) * channels + ch;
                    out[dst] = best;
                    argmax[dst] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward<E: Scalar>(
    grad_out: &[E],
    argmax: &[usize],
    input_len: usize,
) -> Vec<E> {
    let mut grad_in = vec![E::zero(); input_len];
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        if idx != POOL_PAD_ARGMAX {
            grad_in[idx] = grad_in[idx] + g;
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![5.0f64, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        let p = 5;
        let k = 3;
        let n = 4;
        let a: Vec<f64> = (0..p * k).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let b: Vec<f64> = (0..p * n).map(|i| (i as f64) * 0.11 + 0.5).collect();
        // A^T B  via explicit transpose + plain matmul.
        let mut at = vec![0.0; k * p];
        for i in 0..p {
            for j in 0..k {
                at[j * p + i] = a[i * k + j];
            }
        }
        assert_eq!(matmul_at(&a, &b, p, k, n), matmul(&at, &b, k, p, n));

        let c: Vec<f64> = (0..n * k).map(|i| (i as f64) * 0.21 - 0.4).collect();
        // A B^T via explicit transpose.
        let mut ct = vec![0.0; k * n];
        for i in 0..k {
            for j in 0..n {
                ct[j * k + i] = c[i * n + j];
            }
        }
        assert_eq!(matmul_bt(&b, &c, p, n, k), matmul(&b, &ct, p, n, k));
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y: the pair is used
        // as forward/backward of the same linear map.
        let g = Geom2d {
            in_h: 5,
            in_w: 6,
            channels: 2,
            kh: 3,
            kw: 3,
            sh: 2,
            sw: 2,
            pad_h: 1,
            pad_w: 1,
            out_h: 3,
            out_w: 3,
            };
        let x: Vec<f64> = (0..g.in_h * g.in_w * g.channels)
            .map(|i| (i as f64).sin())
            .collect();
        let y: Vec<f64> = (0..g.positions() * g.patch_len())
            .map(|i| (i as f64).cos())
            .collect();
        let cx = im2col2d(&x, &g);
        let iy = col2im2d(&y, &g);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&iy).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_floor_2x2() {
        // [[1,2],[3,4]] -> 4
        let input = vec![1.0f32, 2.0, 3.0, 4.0];
        let (out, argmax) = maxpool2d(&input, 2, 2, 1, 2, 2, 1, 1, false);
        assert_eq!(out, vec![4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn maxpool_ceil_pads_with_zero() {
        // 1x3 input pooled by 2 in ceil mode: windows [a,b], [c,pad0].
        let input = vec![-1.0f32, -2.0, -3.0];
        let (out, argmax) = maxpool2d(&input, 1, 3, 1, 1, 2, 1, 2, true);
        assert_eq!(out[0], -1.0);
        assert_eq!(out[1], 0.0); // pad zero beats -3
        assert_eq!(argmax[1], POOL_PAD_ARGMAX);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let input = vec![1.0f32, 2.0, 3.0, 4.0];
        let (_, argmax) = maxpool2d(&input, 2, 2, 1, 2, 2, 1, 1, false);
        let grad = maxpool_backward(&[2.5f32], &argmax, 4);
        assert_eq!(grad, vec![0.0, 0.0, 0.0, 2.5]);
    }
}
