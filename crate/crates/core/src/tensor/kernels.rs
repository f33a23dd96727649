//! Raw numeric kernels shared by the autodiff ops, the PCN, and the
//! baselines.
//!
//! Every kernel has a sequential implementation; the `*_par` entry points
//! partition work over independent output regions so the parallel and
//! sequential paths produce bit-identical results. Callers inside the
//! crate go through the dispatching wrappers, which pick the parallel
//! path when the `parallel` feature is enabled and the problem is big
//! enough to be worth it.

use crate::parallel::for_each_chunk_mut;

/// Work threshold (in multiply-adds) below which dispatch stays serial.
const PAR_THRESHOLD: usize = 64 * 1024;

// ---------------------------------------------------------------------------
// matmul family: C[i,j] (+)= sum_k A.. B..
// ---------------------------------------------------------------------------

/// C = A(m,k) * B(k,n), sequential, overwriting `out`.
pub fn matmul_nn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += aip * bv;
            }
        }
    }
}

/// C = A(m,k) * B(k,n), parallel over rows of C.
pub fn matmul_nn_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    for_each_chunk_mut(out, n, |i, crow| {
        crow.fill(0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += aip * bv;
            }
        }
    });
}

pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    if cfg!(feature = "parallel") && m * k * n >= PAR_THRESHOLD && m > 1 {
        matmul_nn_par(a, b, m, k, n, out);
    } else {
        matmul_nn_seq(a, b, m, k, n, out);
    }
}

/// C += A(m,k) * B(n,k)^T, i.e. C[i,j] += dot(A[i,:], B[j,:]).
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let body = |i: usize, crow: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, c) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *c += s;
        }
    };
    if cfg!(feature = "parallel") && m * k * n >= PAR_THRESHOLD && m > 1 {
        for_each_chunk_mut(out, n, body);
    } else {
        for (i, crow) in out.chunks_mut(n).enumerate() {
            body(i, crow);
        }
    }
}

/// C += A(k,m)^T * B(k,n), i.e. C[i,j] += sum_p A[p,i] * B[p,j].
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let body = |i: usize, crow: &mut [f64]| {
        for p in 0..k {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += api * bv;
            }
        }
    };
    if cfg!(feature = "parallel") && m * k * n >= PAR_THRESHOLD && m > 1 {
        for_each_chunk_mut(out, n, body);
    } else {
        for (i, crow) in out.chunks_mut(n).enumerate() {
            body(i, crow);
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d: input (B,Cin,H,W), kernel (Cout,Cin,kh,kw) -> (B,Cout,Ho,Wo)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvDims {
    pub fn out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = extent + 2 * padding;
        if padded < k {
            return None;
        }
        Some((padded - k) / stride + 1)
    }
}

pub fn conv2d_forward(input: &[f64], kernel: &[f64], bias: Option<&[f64]>, d: ConvDims, out: &mut [f64]) {
    let per_sample_out = d.c_out * d.h_out * d.w_out;
    let per_sample_in = d.c_in * d.h * d.w;
    debug_assert_eq!(out.len(), d.batch * per_sample_out);
    let work = d.batch * per_sample_out * d.c_in * d.kh * d.kw;
    let body = |b: usize, sample_out: &mut [f64]| {
        let x = &input[b * per_sample_in..(b + 1) * per_sample_in];
        for co in 0..d.c_out {
            let base_bias = bias.map_or(0.0, |bv| bv[co]);
            for ho in 0..d.h_out {
                for wo in 0..d.w_out {
                    let mut acc = base_bias;
                    for ci in 0..d.c_in {
                        for ki in 0..d.kh {
                            let hi = (ho * d.stride + ki) as isize - d.padding as isize;
                            if hi < 0 || hi >= d.h as isize {
                                continue;
                            }
                            let xrow = &x[ci * d.h * d.w + hi as usize * d.w..];
                            let krow = &kernel[((co * d.c_in + ci) * d.kh + ki) * d.kw..];
                            for kj in 0..d.kw {
                                let wi = (wo * d.stride + kj) as isize - d.padding as isize;
                                if wi < 0 || wi >= d.w as isize {
                                    continue;
                                }
                                acc += xrow[wi as usize] * krow[kj];
                            }
                        }
                    }
                    sample_out[(co * d.h_out + ho) * d.w_out + wo] = acc;
                }
            }
        }
    };
    if cfg!(feature = "parallel") && work >= PAR_THRESHOLD && d.batch > 1 {
        for_each_chunk_mut(out, per_sample_out, body);
    } else {
        for (b, chunk) in out.chunks_mut(per_sample_out).enumerate() {
            body(b, chunk);
        }
    }
}

/// Gradient w.r.t. the conv input; accumulates into `d_input`.
pub fn conv2d_backward_input(grad_out: &[f64], kernel: &[f64], d: ConvDims, d_input: &mut [f64]) {
    let per_sample_in = d.c_in * d.h * d.w;
    let per_sample_out = d.c_out * d.h_out * d.w_out;
    let body = |b: usize, dx: &mut [f64]| {
        let g = &grad_out[b * per_sample_out..(b + 1) * per_sample_out];
        for co in 0..d.c_out {
            for ho in 0..d.h_out {
                for wo in 0..d.w_out {
                    let gv = g[(co * d.h_out + ho) * d.w_out + wo];
                    if gv == 0.0 {
                        continue;
                    }
                    for ci in 0..d.c_in {
                        for ki in 0..d.kh {
                            let hi = (ho * d.stride + ki) as isize - d.padding as isize;
                            if hi < 0 || hi >= d.h as isize {
                                continue;
                            }
                            let krow = &kernel[((co * d.c_in + ci) * d.kh + ki) * d.kw..];
                            let xrow = &mut dx[ci * d.h * d.w + hi as usize * d.w..];
                            for kj in 0..d.kw {
                                let wi = (wo * d.stride + kj) as isize - d.padding as isize;
                                if wi < 0 || wi >= d.w as isize {
                                    continue;
                                }
                                xrow[wi as usize] += gv * krow[kj];
                            }
                        }
                    }
                }
            }
        }
    };
    if cfg!(feature = "parallel") && grad_out.len() * d.c_in * d.kh * d.kw >= PAR_THRESHOLD && d.batch > 1 {
        for_each_chunk_mut(d_input, per_sample_in, body);
    } else {
        for (b, chunk) in d_input.chunks_mut(per_sample_in).enumerate() {
            body(b, chunk);
        }
    }
}

/// Gradient w.r.t. the conv kernel (and bias); accumulates.
pub fn conv2d_backward_kernel(
    input: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    d_kernel: &mut [f64],
    mut d_bias: Option<&mut [f64]>,
) {
    let per_sample_in = d.c_in * d.h * d.w;
    let per_sample_out = d.c_out * d.h_out * d.w_out;
    let per_co = d.c_in * d.kh * d.kw;
    // Parallel over output channels: each co owns a disjoint slice of d_kernel.
    let body = |co: usize, dk: &mut [f64]| {
        for b in 0..d.batch {
            let x = &input[b * per_sample_in..(b + 1) * per_sample_in];
            let g = &grad_out[b * per_sample_out + co * d.h_out * d.w_out..];
            for ho in 0..d.h_out {
                for wo in 0..d.w_out {
                    let gv = g[ho * d.w_out + wo];
                    if gv == 0.0 {
                        continue;
                    }
                    for ci in 0..d.c_in {
                        for ki in 0..d.kh {
                            let hi = (ho * d.stride + ki) as isize - d.padding as isize;
                            if hi < 0 || hi >= d.h as isize {
                                continue;
                            }
                            let xrow = &x[ci * d.h * d.w + hi as usize * d.w..];
                            let dkrow = &mut dk[(ci * d.kh + ki) * d.kw..];
                            for kj in 0..d.kw {
                                let wi = (wo * d.stride + kj) as isize - d.padding as isize;
                                if wi < 0 || wi >= d.w as isize {
                                    continue;
                                }
                                dkrow[kj] += gv * xrow[wi as usize];
                            }
                        }
                    }
                }
            }
        }
    };
    if cfg!(feature = "parallel") && grad_out.len() * per_co >= PAR_THRESHOLD && d.c_out > 1 {
        for_each_chunk_mut(d_kernel, per_co, body);
    } else {
        for (co, chunk) in d_kernel.chunks_mut(per_co).enumerate() {
            body(co, chunk);
        }
    }
    if let Some(db) = d_bias.as_deref_mut() {
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let g = &grad_out[b * per_sample_out + co * d.h_out * d.w_out..][..d.h_out * d.w_out];
                db[co] += g.iter().sum::<f64>();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv_transpose2d: input (B,Cin,H,W), kernel (Cin,Cout,kh,kw) -> (B,Cout,Ho,Wo)
// Ho = (H-1)*stride - 2*padding + kh + output_padding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvTDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvTDims {
    pub fn out_extent(extent: usize, k: usize, stride: usize, padding: usize, output_padding: usize) -> Option<usize> {
        let grown = (extent - 1) * stride + k + output_padding;
        if grown < 2 * padding {
            return None;
        }
        Some(grown - 2 * padding)
    }
}

pub fn conv_transpose2d_forward(
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    d: ConvTDims,
    out: &mut [f64],
) {
    let per_sample_in = d.c_in * d.h * d.w;
    let per_sample_out = d.c_out * d.h_out * d.w_out;
    let body = |b: usize, sample_out: &mut [f64]| {
        if let Some(bv) = bias {
            for co in 0..d.c_out {
                sample_out[co * d.h_out * d.w_out..(co + 1) * d.h_out * d.w_out].fill(bv[co]);
            }
        } else {
            sample_out.fill(0.0);
        }
        let x = &input[b * per_sample_in..(b + 1) * per_sample_in];
        for ci in 0..d.c_in {
            for h in 0..d.h {
                for w in 0..d.w {
                    let xv = x[(ci * d.h + h) * d.w + w];
                    if xv == 0.0 {
                        continue;
                    }
                    for co in 0..d.c_out {
                        let krow_base = ((ci * d.c_out + co) * d.kh) * d.kw;
                        for ki in 0..d.kh {
                            let oh = (h * d.stride + ki) as isize - d.padding as isize;
                            if oh < 0 || oh >= d.h_out as isize {
                                continue;
                            }
                            let orow = &mut sample_out[(co * d.h_out + oh as usize) * d.w_out..];
                            let krow = &kernel[krow_base + ki * d.kw..];
                            for kj in 0..d.kw {
                                let ow = (w * d.stride + kj) as isize - d.padding as isize;
                                if ow < 0 || ow >= d.w_out as isize {
                                    continue;
                                }
                                orow[ow as usize] += xv * krow[kj];
                            }
                        }
                    }
                }
            }
        }
    };
    if cfg!(feature = "parallel") && input.len() * d.c_out * d.kh * d.kw >= PAR_THRESHOLD && d.batch > 1 {
        for_each_chunk_mut(out, per_sample_out, body);
    } else {
        for (b, chunk) in out.chunks_mut(per_sample_out).enumerate() {
            body(b, chunk);
        }
    }
}

pub fn conv_transpose2d_backward_input(grad_out: &[f64], kernel: &[f64], d: ConvTDims, d_input: &mut [f64]) {
    let per_sample_in = d.c_in * d.h * d.w;
    let per_sample_out = d.c_out * d.h_out * d.w_out;
    let body = |b: usize, dx: &mut [f64]| {
        let g = &grad_out[b * per_sample_out..(b + 1) * per_sample_out];
        for ci in 0..d.c_in {
            for h in 0..d.h {
                for w in 0..d.w {
                    let mut acc = 0.0;
                    for co in 0..d.c_out {
                        let krow_base = ((ci * d.c_out + co) * d.kh) * d.kw;
                        for ki in 0..d.kh {
                            let oh = (h * d.stride + ki) as isize - d.padding as isize;
                            if oh < 0 || oh >= d.h_out as isize {
                                continue;
                            }
                            let grow = &g[(co * d.h_out + oh as usize) * d.w_out..];
                            let krow = &kernel[krow_base + ki * d.kw..];
                            for kj in 0..d.kw {
                                let ow = (w * d.stride + kj) as isize - d.padding as isize;
                                if ow < 0 || ow >= d.w_out as isize {
                                    continue;
                                }
                                acc += grow[ow as usize] * krow[kj];
                            }
                        }
                    }
                    dx[(ci * d.h + h) * d.w + w] += acc;
                }
            }
        }
    };
    if cfg!(feature = "parallel") && grad_out.len() * d.c_in >= PAR_THRESHOLD && d.batch > 1 {
        for_each_chunk_mut(d_input, per_sample_in, body);
    } else {
        for (b, chunk) in d_input.chunks_mut(per_sample_in).enumerate() {
            body(b, chunk);
        }
    }
}

pub fn conv_transpose2d_backward_kernel(
    input: &[f64],
    grad_out: &[f64],
    d: ConvTDims,
    d_kernel: &mut [f64],
    mut d_bias: Option<&mut [f64]>,
) {
    let per_sample_in = d.c_in * d.h * d.w;
    let per_sample_out = d.c_out * d.h_out * d.w_out;
    let per_ci = d.c_out * d.kh * d.kw;
    let body = |ci: usize, dk: &mut [f64]| {
        for b in 0..d.batch {
            let x = &input[b * per_sample_in + ci * d.h * d.w..][..d.h * d.w];
            let g = &grad_out[b * per_sample_out..(b + 1) * per_sample_out];
            for h in 0..d.h {
                for w in 0..d.w {
                    let xv = x[h * d.w + w];
                    if xv == 0.0 {
                        continue;
                    }
                    for co in 0..d.c_out {
                        for ki in 0..d.kh {
                            let oh = (h * d.stride + ki) as isize - d.padding as isize;
                            if oh < 0 || oh >= d.h_out as isize {
                                continue;
                            }
                            let grow = &g[(co * d.h_out + oh as usize) * d.w_out..];
                            let dkrow = &mut dk[(co * d.kh + ki) * d.kw..];
                            for kj in 0..d.kw {
                                let ow = (w * d.stride + kj) as isize - d.padding as isize;
                                if ow < 0 || ow >= d.w_out as isize {
                                    continue;
                                }
                                dkrow[kj] += xv * grow[ow as usize];
                            }
                        }
                    }
                }
            }
        }
    };
    if cfg!(feature = "parallel") && grad_out.len() * per_ci >= PAR_THRESHOLD && d.c_in > 1 {
        for_each_chunk_mut(d_kernel, per_ci, body);
    } else {
        for (ci, chunk) in d_kernel.chunks_mut(per_ci).enumerate() {
            body(ci, chunk);
        }
    }
    if let Some(db) = d_bias.as_deref_mut() {
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let g = &grad_out[b * per_sample_out + co * d.h_out * d.w_out..][..d.h_out * d.w_out];
                db[co] += g.iter().sum::<f64>();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, rng_from_seed};

    #[test]
    fn matmul_nn_identity() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let mut out = vec![0.0; 9];
        matmul_nn_seq(&eye, &a, 3, 3, 3, &mut out);
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_variants_agree_with_reference() {
        let mut rng = rng_from_seed(11);
        let (m, k, n) = (7, 5, 4);
        let mut a = vec![0.0; m * k];
        let mut b = vec![0.0; k * n];
        fill_normal(&mut rng, 1.0, &mut a);
        fill_normal(&mut rng, 1.0, &mut b);

        let mut c = vec![0.0; m * n];
        matmul_nn_seq(&a, &b, m, k, n, &mut c);

        // nt: A (m,k) * B'(n,k)^T where B' is b transposed.
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c_nt = vec![0.0; m * n];
        matmul_nt_acc(&a, &bt, m, k, n, &mut c_nt);
        for (x, y) in c.iter().zip(&c_nt) {
            assert!((x - y).abs() < 1e-12);
        }

        // tn: A'(k,m)^T * B.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c_tn = vec![0.0; m * n];
        matmul_tn_acc(&at, &b, m, k, n, &mut c_tn);
        for (x, y) in c.iter().zip(&c_tn) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_matmul_is_bit_identical() {
        let mut rng = rng_from_seed(5);
        let (m, k, n) = (130, 70, 90);
        let mut a = vec![0.0; m * k];
        let mut b = vec![0.0; k * n];
        fill_normal(&mut rng, 1.0, &mut a);
        fill_normal(&mut rng, 1.0, &mut b);
        let mut c_seq = vec![0.0; m * n];
        let mut c_par = vec![0.0; m * n];
        matmul_nn_seq(&a, &b, m, k, n, &mut c_seq);
        matmul_nn_par(&a, &b, m, k, n, &mut c_par);
        assert_eq!(
            c_seq.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c_par.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    /// Six-nested-loop reference convolution.
    fn conv_reference(input: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
        let mut out = vec![0.0; d.batch * d.c_out * d.h_out * d.w_out];
        for b in 0..d.batch {
            for co in 0..d.c_out {
                for ho in 0..d.h_out {
                    for wo in 0..d.w_out {
                        let mut acc = 0.0;
                        for ci in 0..d.c_in {
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let hi = (ho * d.stride + ki) as isize - d.padding as isize;
                                    let wi = (wo * d.stride + kj) as isize - d.padding as isize;
                                    if hi < 0 || wi < 0 || hi >= d.h as isize || wi >= d.w as isize {
                                        continue;
                                    }
                                    acc += input[((b * d.c_in + ci) * d.h + hi as usize) * d.w + wi as usize]
                                        * kernel[((co * d.c_in + ci) * d.kh + ki) * d.kw + kj];
                                }
                            }
                        }
                        out[((b * d.c_out + co) * d.h_out + ho) * d.w_out + wo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_nested_sum_oracle() {
        let mut rng = rng_from_seed(21);
        let d = ConvDims {
            batch: 1,
            c_in: 1,
            h: 5,
            w: 5,
            c_out: 2,
            kh: 3,
            kw: 3,
            stride: 1,
            padding: 0,
            h_out: 3,
            w_out: 3,
        };
        let mut input = vec![0.0; 25];
        let mut kernel = vec![0.0; 2 * 9];
        fill_normal(&mut rng, 1.0, &mut input);
        fill_normal(&mut rng, 1.0, &mut kernel);
        let mut out = vec![0.0; 2 * 9];
        conv2d_forward(&input, &kernel, None, d, &mut out);
        let want = conv_reference(&input, &kernel, d);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_padding_matches_oracle() {
        let mut rng = rng_from_seed(33);
        let d = ConvDims {
            batch: 2,
            c_in: 3,
            h: 6,
            w: 6,
            c_out: 4,
            kh: 3,
            kw: 3,
            stride: 2,
            padding: 1,
            h_out: 3,
            w_out: 3,
        };
        let mut input = vec![0.0; 2 * 3 * 36];
        let mut kernel = vec![0.0; 4 * 3 * 9];
        fill_normal(&mut rng, 1.0, &mut input);
        fill_normal(&mut rng, 1.0, &mut kernel);
        let mut out = vec![0.0; 2 * 4 * 9];
        conv2d_forward(&input, &kernel, None, d, &mut out);
        let want = conv_reference(&input, &kernel, d);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_output_extent() {
        assert_eq!(ConvTDims::out_extent(4, 2, 2, 0, 0), Some(8));
        assert_eq!(ConvTDims::out_extent(8, 2, 2, 1, 0), Some(14));
        assert_eq!(ConvTDims::out_extent(14, 2, 2, 0, 0), Some(28));
    }
}
