//! Raw kernels on row-major slices. Shapes are validated by the caller.

/// `c = alpha·op(a)·op(b) + beta·c` for row-major operands.
///
/// `a` is `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`),
/// `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (borrow rules).
    unsafe {
        matrixmultiply::dgemm(
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }
    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (OH·OW)` matrix.
pub fn im2col(g: &ConvGeom, image: &[f64], cols: &mut [f64]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let plane = g.height * g.width;
    let mut row = 0;
    for c in 0..g.channels {
        let src = &image[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let sy = g.source(y, ki, g.height);
                    for x in 0..ow {
                        dst[y * ow + x] = match (sy, g.source(x, kj, g.width)) {
                            (Some(sy), Some(sx)) => src[sy * g.width + sx],
                            _ => 0.0,
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `image`.
pub fn col2im(g: &ConvGeom, cols: &[f64], image: &mut [f64]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let plane = g.height * g.width;
    let mut row = 0;
    for c in 0..g.channels {
        let dst = &mut image[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let Some(sy) = g.source(y, ki, g.height) else { continue };
                    for x in 0..ow {
                        if let Some(sx) = g.source(x, kj, g.width) {
                            dst[sy * g.width + sx] += src[y * ow + x];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Non-overlapping max pooling of one `C×H×W` block. Records the flat input
/// index of each window's first maximum in scan order.
pub fn maxpool(
    channels: usize,
    height: usize,
    width: usize,
    size: usize,
    input: &[f64],
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let (oh, ow) = (height / size, width / size);
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = c * height * width + (y * size + dy) * width + x * size + dx;
                        if best_idx == usize::MAX || input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = c * oh * ow + y * ow + x;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

/// Row-wise softmax of a `rows × cols` matrix, computed with the max shift.
pub fn softmax_rows(cols: usize, logits: &[f64], out: &mut [f64]) {
    for (src, dst) in logits.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
}

/// `ln Σ exp(row)` for each row.
pub fn log_sum_exp_rows(cols: usize, logits: &[f64]) -> Vec<f64> {
    logits
        .chunks_exact(cols)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, 1.0, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, 1.0, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { channels: 2, height: 5, width: 4, kernel: 3, stride: 2, padding: 1 };
        let n_img = 2 * 5 * 4;
        let n_col = g.col_rows() * g.col_cols();
        let x: Vec<f64> = (0..n_img).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..n_col).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; n_col];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; n_img];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_prefers_first_maximum() {
        let input = [1.0; 16];
        let mut out = [0.0; 4];
        let mut arg = [0; 4];
        maxpool(1, 4, 4, 2, &input, &mut out, &mut arg);
        assert_eq!(out, [1.0; 4]);
        assert_eq!(arg, [0, 2, 8, 10]);
    }
}
