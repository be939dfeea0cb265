//! Convolution and pooling kernels shared by the gradient graph and the
//! plain (no-grad) inference path. All loops accumulate sequentially so
//! results are bit-stable across runs.

use crate::tensor::Tensor;

pub fn conv1d_out_len(l: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> usize {
    let span = (k - 1) * dilation + 1;
    let padded = l + 2 * pad;
    if padded < span {
        0
    } else {
        (padded - span) / stride + 1
    }
}

/// x: [Ci, L], w: [Co, Ci, K], b: [Co] -> [Co, Lout]
pub fn conv1d_fwd(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, dilation: usize, pad: usize) -> Tensor {
    let (ci, l) = (x.dim(0), x.dim(1));
    let (co, wci, k) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(ci, wci, "conv1d channel mismatch");
    assert_eq!(b.numel(), co, "conv1d bias mismatch");
    let lout = conv1d_out_len(l, k, stride, dilation, pad);
    let mut out = Tensor::zeros(&[co, lout]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    for oc in 0..co {
        let orow = &mut out.data_mut()[oc * lout..(oc + 1) * lout];
        orow.fill(bd[oc]);
        for icc in 0..ci {
            let xrow = &xd[icc * l..(icc + 1) * l];
            let wrow = &wd[(oc * ci + icc) * k..(oc * ci + icc + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let off = (kk * dilation) as i64 - pad as i64;
                // valid lo range: 0 <= lo*stride + off < l
                let lo_min = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(stride) };
                let lo_max_excl = {
                    let hi = l as i64 - off; // lo*stride < hi
                    if hi <= 0 {
                        0
                    } else {
                        (((hi - 1) as usize) / stride + 1).min(lout)
                    }
                };
                if lo_min >= lo_max_excl {
                    continue;
                }
                if stride == 1 {
                    let xs = (lo_min as i64 + off) as usize;
                    let n = lo_max_excl - lo_min;
                    let xseg = &xrow[xs..xs + n];
                    let oseg = &mut orow[lo_min..lo_min + n];
                    for (o, &xv) in oseg.iter_mut().zip(xseg.iter()) {
                        *o += wv * xv;
                    }
                } else {
                    for (lo, o) in orow.iter_mut().enumerate().take(lo_max_excl).skip(lo_min) {
                        let xi = (lo * stride) as i64 + off;
                        *o += wv * xrow[xi as usize];
                    }
                }
            }
        }
    }
    out
}

/// Gradient of conv1d w.r.t. its input.
pub fn conv1d_bwd_x(
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    dilation: usize,
    pad: usize,
    l_in: usize,
) -> Tensor {
    let (co, ci, k) = (w.dim(0), w.dim(1), w.dim(2));
    let lout = grad_out.dim(1);
    let mut gx = Tensor::zeros(&[ci, l_in]);
    let wd = w.data();
    let gd = grad_out.data();
    for oc in 0..co {
        let grow = &gd[oc * lout..(oc + 1) * lout];
        for icc in 0..ci {
            let wrow = &wd[(oc * ci + icc) * k..(oc * ci + icc + 1) * k];
            let gxrow = &mut gx.data_mut()[icc * l_in..(icc + 1) * l_in];
            for (kk, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let off = (kk * dilation) as i64 - pad as i64;
                for (lo, &gv) in grow.iter().enumerate() {
                    let xi = (lo * stride) as i64 + off;
                    if xi >= 0 && (xi as usize) < l_in {
                        gxrow[xi as usize] += wv * gv;
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of conv1d w.r.t. its weights.
pub fn conv1d_bwd_w(
    x: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    dilation: usize,
    pad: usize,
    co: usize,
    k: usize,
) -> Tensor {
    let (ci, l) = (x.dim(0), x.dim(1));
    let lout = grad_out.dim(1);
    let mut gw = Tensor::zeros(&[co, ci, k]);
    let xd = x.data();
    let gd = grad_out.data();
    for oc in 0..co {
        let grow = &gd[oc * lout..(oc + 1) * lout];
        for icc in 0..ci {
            let xrow = &xd[icc * l..(icc + 1) * l];
            let gwrow = &mut gw.data_mut()[(oc * ci + icc) * k..(oc * ci + icc + 1) * k];
            for (kk, gwv) in gwrow.iter_mut().enumerate() {
                let off = (kk * dilation) as i64 - pad as i64;
                let mut acc = 0.0;
                for (lo, &gv) in grow.iter().enumerate() {
                    let xi = (lo * stride) as i64 + off;
                    if xi >= 0 && (xi as usize) < l {
                        acc += gv * xrow[xi as usize];
                    }
                }
                *gwv += acc;
            }
        }
    }
    gw
}

/// Gradient of conv1d w.r.t. its bias: sum over output positions.
pub fn conv1d_bwd_b(grad_out: &Tensor) -> Tensor {
    let (co, lout) = (grad_out.dim(0), grad_out.dim(1));
    let mut gb = Tensor::zeros(&[co]);
    for oc in 0..co {
        let mut acc = 0.0;
        for &g in &grad_out.data()[oc * lout..(oc + 1) * lout] {
            acc += g;
        }
        gb.data_mut()[oc] = acc;
    }
    gb
}

/// Insert stride-1 zeros between samples: [C, L] -> [C, (L-1)*s + 1].
pub fn zero_stuff(x: &Tensor, s: usize) -> Tensor {
    let (c, l) = (x.dim(0), x.dim(1));
    let lo = (l - 1) * s + 1;
    let mut out = Tensor::zeros(&[c, lo]);
    for ch in 0..c {
        for i in 0..l {
            let v = x.data()[ch * l + i];
            out.data_mut()[ch * lo + i * s] = v;
        }
    }
    out
}

/// Adjoint of `zero_stuff`: pick every s-th gradient sample.
pub fn zero_stuff_bwd(grad_out: &Tensor, s: usize, l_in: usize) -> Tensor {
    let c = grad_out.dim(0);
    let lo = grad_out.dim(1);
    let mut gx = Tensor::zeros(&[c, l_in]);
    for ch in 0..c {
        for i in 0..l_in {
            gx.data_mut()[ch * l_in + i] = grad_out.data()[ch * lo + i * s];
        }
    }
    gx
}

/// AvgPool1d with zero padding counted in the mean (divisor is always k).
pub fn avg_pool1d_fwd(x: &Tensor, k: usize, stride: usize, pad: usize) -> Tensor {
    let (c, l) = (x.dim(0), x.dim(1));
    let lout = conv1d_out_len(l, k, stride, 1, pad);
    let mut out = Tensor::zeros(&[c, lout]);
    let inv = 1.0 / k as f64;
    for ch in 0..c {
        let xrow = &x.data()[ch * l..(ch + 1) * l];
        for lo in 0..lout {
            let mut acc = 0.0;
            for j in 0..k {
                let xi = (lo * stride + j) as i64 - pad as i64;
                if xi >= 0 && (xi as usize) < l {
                    acc += xrow[xi as usize];
                }
            }
            out.data_mut()[ch * lout + lo] = acc * inv;
        }
    }
    out
}

pub fn avg_pool1d_bwd(grad_out: &Tensor, k: usize, stride: usize, pad: usize, l_in: usize) -> Tensor {
    let c = grad_out.dim(0);
    let lout = grad_out.dim(1);
    let mut gx = Tensor::zeros(&[c, l_in]);
    let inv = 1.0 / k as f64;
    for ch in 0..c {
        let grow = &grad_out.data()[ch * lout..(ch + 1) * lout];
        let gxrow = &mut gx.data_mut()[ch * l_in..(ch + 1) * l_in];
        for (lo, &g) in grow.iter().enumerate() {
            let gv = g * inv;
            for j in 0..k {
                let xi = (lo * stride + j) as i64 - pad as i64;
                if xi >= 0 && (xi as usize) < l_in {
                    gxrow[xi as usize] += gv;
                }
            }
        }
    }
    gx
}

fn extract_row3(x: &Tensor, row: usize) -> Tensor {
    let (c, p, m) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Tensor::zeros(&[c, m]);
    for ch in 0..c {
        let src = &x.data()[(ch * p + row) * m..(ch * p + row + 1) * m];
        out.data_mut()[ch * m..(ch + 1) * m].copy_from_slice(src);
    }
    out
}

/// 2-D convolution with a (1, K) kernel over [Ci, P, M]: each of the P rows
/// is convolved independently along M with shared weights. This is the
/// period-discriminator layout where the period axis is never mixed.
pub fn conv2d_rows_fwd(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (_, p, m) = (x.dim(0), x.dim(1), x.dim(2));
    let (co, _, k) = (w.dim(0), w.dim(1), w.dim(2));
    let mout = conv1d_out_len(m, k, stride, 1, pad);
    let mut out = Tensor::zeros(&[co, p, mout]);
    for row in 0..p {
        let xr = extract_row3(x, row);
        let or = conv1d_fwd(&xr, w, b, stride, 1, pad);
        for oc in 0..co {
            let dst = &mut out.data_mut()[(oc * p + row) * mout..(oc * p + row + 1) * mout];
            dst.copy_from_slice(&or.data()[oc * mout..(oc + 1) * mout]);
        }
    }
    out
}

pub fn conv2d_rows_bwd_x(w: &Tensor, grad_out: &Tensor, stride: usize, pad: usize, m_in: usize) -> Tensor {
    let (co, ci, _k) = (w.dim(0), w.dim(1), w.dim(2));
    let (p, mout) = (grad_out.dim(1), grad_out.dim(2));
    let mut gx = Tensor::zeros(&[ci, p, m_in]);
    for row in 0..p {
        let mut gr = Tensor::zeros(&[co, mout]);
        for oc in 0..co {
            let src = &grad_out.data()[(oc * p + row) * mout..(oc * p + row + 1) * mout];
            gr.data_mut()[oc * mout..(oc + 1) * mout].copy_from_slice(src);
        }
        let gxr = conv1d_bwd_x(w, &gr, stride, 1, pad, m_in);
        for ch in 0..ci {
            let dst = &mut gx.data_mut()[(ch * p + row) * m_in..(ch * p + row + 1) * m_in];
            dst.copy_from_slice(&gxr.data()[ch * m_in..(ch + 1) * m_in]);
        }
    }
    gx
}

pub fn conv2d_rows_bwd_w(x: &Tensor, grad_out: &Tensor, stride: usize, pad: usize, co: usize, k: usize) -> Tensor {
    let (ci, p, _m) = (x.dim(0), x.dim(1), x.dim(2));
    let mout = grad_out.dim(2);
    let mut gw = Tensor::zeros(&[co, ci, k]);
    for row in 0..p {
        let xr = extract_row3(x, row);
        let mut gr = Tensor::zeros(&[co, mout]);
        for oc in 0..co {
            let src = &grad_out.data()[(oc * p + row) * mout..(oc * p + row + 1) * mout];
            gr.data_mut()[oc * mout..(oc + 1) * mout].copy_from_slice(src);
        }
        gw.add_assign(&conv1d_bwd_w(&xr, &gr, stride, 1, pad, co, k));
    }
    gw
}

pub fn conv2d_rows_bwd_b(grad_out: &Tensor) -> Tensor {
    let (co, p, mout) = (grad_out.dim(0), grad_out.dim(1), grad_out.dim(2));
    let mut gb = Tensor::zeros(&[co]);
    for oc in 0..co {
        let mut acc = 0.0;
        for &g in &grad_out.data()[oc * p * mout..(oc + 1) * p * mout] {
            acc += g;
        }
        gb.data_mut()[oc] = acc;
    }
    gb
}

/// w: [R, C], x: [C] -> [R]
pub fn matvec(w: &Tensor, x: &Tensor) -> Tensor {
    let (r, c) = (w.dim(0), w.dim(1));
    assert_eq!(x.numel(), c, "matvec dim mismatch");
    let mut out = Tensor::zeros(&[r]);
    for i in 0..r {
        let wrow = &w.data()[i * c..(i + 1) * c];
        let mut acc = 0.0;
        for (wv, xv) in wrow.iter().zip(x.data().iter()) {
            acc += wv * xv;
        }
        out.data_mut()[i] = acc;
    }
    out
}

pub fn transpose2(x: &Tensor) -> Tensor {
    let (r, c) = (x.dim(0), x.dim(1));
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[j * r + i] = x.data()[i * c + j];
        }
    }
    out
}

/// Reflect-pad the tail of each channel row (no edge duplication).
/// Requires n < L.
pub fn pad_reflect_end(x: &Tensor, n: usize) -> Tensor {
    let (c, l) = (x.dim(0), x.dim(1));
    assert!(n < l, "reflect pad {} too large for length {}", n, l);
    let mut out = Tensor::zeros(&[c, l + n]);
    for ch in 0..c {
        let xrow = &x.data()[ch * l..(ch + 1) * l];
        let orow = &mut out.data_mut()[ch * (l + n)..(ch + 1) * (l + n)];
        orow[..l].copy_from_slice(xrow);
        for j in 0..n {
            orow[l + j] = xrow[l - 2 - j];
        }
    }
    out
}

pub fn pad_reflect_end_bwd(grad_out: &Tensor, n: usize, l_in: usize) -> Tensor {
    let c = grad_out.dim(0);
    let lp = grad_out.dim(1);
    debug_assert_eq!(lp, l_in + n);
    let mut gx = Tensor::zeros(&[c, l_in]);
    for ch in 0..c {
        let grow = &grad_out.data()[ch * lp..(ch + 1) * lp];
        let gxrow = &mut gx.data_mut()[ch * l_in..(ch + 1) * l_in];
        for (i, g) in grow[..l_in].iter().enumerate() {
            gxrow[i] += g;
        }
        for j in 0..n {
            gxrow[l_in - 2 - j] += grow[l_in + j];
        }
    }
    gx
}
