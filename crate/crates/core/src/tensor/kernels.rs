//! Dense loops behind the convolution and matrix primitives.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub lin: usize,
    pub lout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Output positions `o` with `0 <= o*stride + tap - pad < lin`, clipped to `lout`.
fn tap_range(d: &ConvDims, tap: usize) -> (usize, usize) {
    let lo = if d.pad > tap {
        (d.pad - tap).div_ceil(d.stride)
    } else {
        0
    };
    let hi = if d.lin + d.pad > tap {
        ((d.lin - 1 + d.pad - tap) / d.stride + 1).min(d.lout)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// `[cin*k, n*lout]` patch matrix; column `n*lout + o` holds the receptive field of output `o`.
fn im2col(x: &[f64], d: &ConvDims) -> Array2<f64> {
    let cols = d.n * d.lout;
    let mut col = Array2::<f64>::zeros((d.cin * d.k, cols));
    let ranges: Vec<_> = (0..d.k).map(|t| tap_range(d, t)).collect();
    let cs = col.as_slice_mut().expect("standard layout");
    for ci in 0..d.cin {
        for (tap, &(lo, hi)) in ranges.iter().enumerate() {
            let row = &mut cs[(ci * d.k + tap) * cols..][..cols];
            for n in 0..d.n {
                let xrow = &x[(n * d.cin + ci) * d.lin..][..d.lin];
                let dst = &mut row[n * d.lout..][..d.lout];
                for o in lo..hi {
                    dst[o] = xrow[o * d.stride + tap - d.pad];
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto `[n, cin, lin]`.
fn col2im(col: &Array2<f64>, d: &ConvDims) -> Vec<f64> {
    let cols = d.n * d.lout;
    let mut x = vec![0.0; d.n * d.cin * d.lin];
    let ranges: Vec<_> = (0..d.k).map(|t| tap_range(d, t)).collect();
    let cs = col.as_slice().expect("standard layout");
    for ci in 0..d.cin {
        for (tap, &(lo, hi)) in ranges.iter().enumerate() {
            let row = &cs[(ci * d.k + tap) * cols..][..cols];
            for n in 0..d.n {
                let xrow = &mut x[(n * d.cin + ci) * d.lin..][..d.lin];
                let src = &row[n * d.lout..][..d.lout];
                for o in lo..hi {
                    xrow[o * d.stride + tap - d.pad] += src[o];
                }
            }
        }
    }
    x
}

/// `[n, c, l]` → `[c, n*l]`.
fn channels_first(x: &[f64], n: usize, c: usize, l: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((c, n * l));
    let os = out.as_slice_mut().expect("standard layout");
    for b in 0..n {
        for ch in 0..c {
            os[ch * n * l + b * l..][..l].copy_from_slice(&x[(b * c + ch) * l..][..l]);
        }
    }
    out
}

/// `[c, n*l]` → `[n, c, l]`.
fn batch_first(m: &Array2<f64>, n: usize, c: usize, l: usize) -> Vec<f64> {
    let ms = m.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * c * l];
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * l..][..l].copy_from_slice(&ms[ch * n * l + b * l..][..l]);
        }
    }
    out
}

fn view2(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape")
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let col = im2col(x, d);
    let wm = view2(w, d.cout, d.cin * d.k);
    let mut y = wm.dot(&col);
    if let Some(b) = b {
        for (mut row, &bv) in y.rows_mut().into_iter().zip(b) {
            row += bv;
        }
    }
    batch_first(&y, d.n, d.cout, d.lout)
}

/// Returns `(dx, dw, db)` for [`conv1d_forward`].
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let col = im2col(x, d);
    let gm = channels_first(g, d.n, d.cout, d.lout);
    let db = gm.sum_axis(Axis(1)).to_vec();
    let dw = gm.dot(&col.t());
    let wm = view2(w, d.cout, d.cin * d.k);
    let dcol = wm.t().dot(&gm);
    let dx = col2im(&dcol.as_standard_layout().to_owned(), d);
    (dx, dw.into_raw_vec_and_offset().0, db)
}

/// Patch layout of a transposed convolution: the forward conv it is the adjoint of.
fn transposed_dims(d: &ConvDims) -> ConvDims {
    ConvDims {
        n: d.n,
        cin: d.cout,
        cout: d.cin,
        lin: d.lout,
        lout: d.lin,
        k: d.k,
        stride: d.stride,
        pad: d.pad,
    }
}

/// Transposed convolution; `d.lout` is the (possibly cropped) output length.
/// Weight layout is `[cin, cout, k]`.
pub(crate) fn conv_transpose1d_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let td = transposed_dims(d);
    let xm = channels_first(x, d.n, d.cin, d.lin);
    let wm = view2(w, d.cin, d.cout * d.k);
    let col = wm.t().dot(&xm).as_standard_layout().to_owned();
    let mut y = col2im(&col, &td);
    if let Some(b) = b {
        for n in 0..d.n {
            for co in 0..d.cout {
                y[(n * d.cout + co) * d.lout..][..d.lout].iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    y
}

pub(crate) fn conv_transpose1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let td = transposed_dims(d);
    let gcol = im2col(g, &td);
    let xm = channels_first(x, d.n, d.cin, d.lin);
    let wm = view2(w, d.cin, d.cout * d.k);
    let dx = batch_first(&wm.dot(&gcol), d.n, d.cin, d.lin);
    let dw = xm.dot(&gcol.t()).as_standard_layout().to_owned();
    let mut db = vec![0.0; d.cout];
    for n in 0..d.n {
        for co in 0..d.cout {
            db[co] += g[(n * d.cout + co) * d.lout..][..d.lout].iter().sum::<f64>();
        }
    }
    (dx, dw.into_raw_vec_and_offset().0, db)
}

/// `y[r, :] = w · x[r, :] + b` for `rows` rows of width `nin`.
pub(crate) fn linear_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, rows: usize, nin: usize, nout: usize) -> Vec<f64> {
    let mut y = view2(x, rows, nin).dot(&view2(w, nout, nin).t());
    if let Some(b) = b {
        for mut row in y.rows_mut() {
            row += &ArrayView1::from(b);
        }
    }
    y.into_raw_vec_and_offset().0
}

pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    rows: usize,
    nin: usize,
    nout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let gm = view2(g, rows, nout);
    let dx = gm.dot(&view2(w, nout, nin));
    let dw = gm.t().dot(&view2(x, rows, nin)).as_standard_layout().to_owned();
    let db = gm.sum_axis(Axis(0)).to_vec();
    (dx.into_raw_vec_and_offset().0, dw.into_raw_vec_and_offset().0, db)
}

/// Batched `[p, m, k] x [p, k, n] -> [p, m, n]`.
pub(crate) fn bmm_forward(a: &[f64], b: &[f64], p: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; p * m * n];
    for q in 0..p {
        let aq = &a[q * m * k..][..m * k];
        let bq = &b[q * k * n..][..k * n];
        let yq = &mut y[q * m * n..][..m * n];
        for i in 0..m {
            for t in 0..k {
                let av = aq[i * k + t];
                let brow = &bq[t * n..][..n];
                let yrow = &mut yq[i * n..][..n];
                for j in 0..n {
                    yrow[j] += av * brow[j];
                }
            }
        }
    }
    y
}

pub(crate) fn bmm_backward(
    a: &[f64],
    b: &[f64],
    g: &[f64],
    p: usize,
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    for q in 0..p {
        let aq = &a[q * m * k..][..m * k];
        let bq = &b[q * k * n..][..k * n];
        let gq = &g[q * m * n..][..m * n];
        let daq = &mut da[q * m * k..][..m * k];
        let dbq = &mut db[q * k * n..][..k * n];
        for i in 0..m {
            let grow = &gq[i * n..][..n];
            for t in 0..k {
                let brow = &bq[t * n..][..n];
                daq[i * k + t] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                let av = aq[i * k + t];
                let dbrow = &mut dbq[t * n..][..n];
                for j in 0..n {
                    dbrow[j] += av * grow[j];
                }
            }
        }
    }
    (da, db)
}
