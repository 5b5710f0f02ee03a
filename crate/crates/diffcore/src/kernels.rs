//! Plain row-major matrix kernels shared by the forward and backward passes.

/// `out += a[n,k] * b[k,m]`
pub(crate) fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a[n,k]^T * b[n,m]`, producing `[k,m]`.
pub(crate) fn mm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let b_row = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a[n,m] * b[k,m]^T`, producing `[n,k]`.
pub(crate) fn mm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let b_row = &b[p * m..(p + 1) * m];
            out[i * k + p] += dot(a_row, b_row);
        }
    }
}

/// Four interleaved partial sums, so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Unfolds one `[c,h,w]` image into `[c*9, h*w]` columns for a 3x3 kernel
/// with zero padding 1.
pub(crate) fn im2col3(img: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    col.fill(0.0);
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x0, x1) = kernel_x_range(kx, w);
                    for x in x0..x1 {
                        row[y * w + x] = plane[sy * w + x + kx - 1];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatters column gradients back into an image.
pub(crate) fn col2im3_acc(col: &[f64], c: usize, h: usize, w: usize, img: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x0, x1) = kernel_x_range(kx, w);
                    for x in x0..x1 {
                        plane[sy * w + x + kx - 1] += row[y * w + x];
                    }
                }
            }
        }
    }
}

/// Output columns `x` for which `x + kx - 1` is a valid source column.
#[inline]
fn kernel_x_range(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w - 1),
    }
}
