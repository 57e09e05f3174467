//! Raw slice kernels behind the graph operations.
//!
//! Convolution is lowered to an im2col matrix and a GEMM. Every kernel is
//! single-threaded and deterministic for a given input.

/// `C = A · B + beta·C` on row/column-strided matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one conv1d call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvDims {
    pub fn t_out(&self) -> usize {
        (self.t_in + 2 * self.padding + 1).saturating_sub(self.kernel)
    }

    fn rows(&self) -> usize {
        self.c_in * self.kernel
    }
}

/// Unfold `x[c_in × t_in]` into `cols[(c_in·K) × t_out]` with zero padding.
pub fn im2col(x: &[f64], d: ConvDims) -> Vec<f64> {
    let t_out = d.t_out();
    let mut cols = vec![0.0; d.rows() * t_out];
    for i in 0..d.c_in {
        let xi = &x[i * d.t_in..(i + 1) * d.t_in];
        for k in 0..d.kernel {
            let row = &mut cols[(i * d.kernel + k) * t_out..][..t_out];
            // out position t reads x[t + k - padding]
            let lo = d.padding.saturating_sub(k);
            let hi = (d.t_in + d.padding).saturating_sub(k).min(t_out);
            if lo < hi {
                let src = lo + k - d.padding;
                row[lo..hi].copy_from_slice(&xi[src..src + (hi - lo)]);
            }
        }
    }
    cols
}

/// Fold gradient columns back onto the unpadded input, summing overlaps.
pub fn col2im(cols: &[f64], d: ConvDims) -> Vec<f64> {
    let t_out = d.t_out();
    let mut dx = vec![0.0; d.c_in * d.t_in];
    for i in 0..d.c_in {
        let dxi = &mut dx[i * d.t_in..(i + 1) * d.t_in];
        for k in 0..d.kernel {
            let row = &cols[(i * d.kernel + k) * t_out..][..t_out];
            let lo = d.padding.saturating_sub(k);
            let hi = (d.t_in + d.padding).saturating_sub(k).min(t_out);
            if lo < hi {
                let dst = lo + k - d.padding;
                dxi[dst..dst + (hi - lo)]
                    .iter_mut()
                    .zip(&row[lo..hi])
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
    dx
}

/// Returns `(out[c_out × t_out], cols)`; `cols` is kept for the backward pass.
pub fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let t_out = d.t_out();
    let cols = im2col(x, d);
    let mut out = Vec::with_capacity(d.c_out * t_out);
    for &bias in b {
        out.extend(std::iter::repeat_n(bias, t_out));
    }
    gemm(
        d.c_out,
        d.rows(),
        t_out,
        w,
        (d.rows(), 1),
        &cols,
        (t_out, 1),
        1.0,
        &mut out,
    );
    (out, cols)
}

/// Gradients of conv1d with respect to `(w, b)`.
pub fn conv1d_backward_params(gout: &[f64], cols: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let t_out = d.t_out();
    let mut dw = vec![0.0; d.c_out * d.rows()];
    // dW = gout · colsᵀ
    gemm(
        d.c_out,
        t_out,
        d.rows(),
        gout,
        (t_out, 1),
        cols,
        (1, t_out),
        0.0,
        &mut dw,
    );
    let db = gout.chunks_exact(t_out).map(|row| row.iter().sum()).collect();
    (dw, db)
}

/// Gradient of conv1d with respect to its input.
pub fn conv1d_backward_input(gout: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let t_out = d.t_out();
    let mut dcols = vec![0.0; d.rows() * t_out];
    // dcols = Wᵀ · gout
    gemm(
        d.rows(),
        d.c_out,
        t_out,
        w,
        (1, d.rows()),
        gout,
        (t_out, 1),
        0.0,
        &mut dcols,
    );
    col2im(&dcols, d)
}

/// Non-overlapping max pooling over rows of `x[c × t]`. Returns the pooled
/// values and the flat argmax index of each window (first maximum wins).
pub fn maxpool1d(x: &[f64], c: usize, t: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let t_out = t / k;
    let mut out = Vec::with_capacity(c * t_out);
    let mut arg = Vec::with_capacity(c * t_out);
    for ch in 0..c {
        let row = &x[ch * t..(ch + 1) * t];
        for j in 0..t_out {
            let start = j * k;
            let mut best = start;
            for idx in start + 1..start + k {
                if row[idx] > row[best] {
                    best = idx;
                }
            }
            out.push(row[best]);
            arg.push(ch * t + best);
        }
    }
    (out, arg)
}

/// `y = W x + b` for `W[m × n]`.
pub fn matvec(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    w.chunks_exact(n)
        .zip(b)
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}
