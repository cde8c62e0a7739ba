//! Raw array kernels shared by eager evaluation and the tape.
//!
//! Every linear stencil has a matching `*_adjoint` that applies the
//! transposed operator and accumulates into its output buffer.

fn wrap_prev(n: usize) -> Vec<usize> {
    (0..n).map(|k| (k + n - 1) % n).collect()
}

fn wrap_next(n: usize) -> Vec<usize> {
    (0..n).map(|k| (k + 1) % n).collect()
}

/// `out(c, j, i) = a(c, j - sy, i - sx)` with periodic wrap.
pub fn shift(a: &[f64], out: &mut [f64], c: usize, h: usize, w: usize, sx: isize, sy: isize) {
    let sx = sx.rem_euclid(w as isize) as usize;
    let sy = sy.rem_euclid(h as isize) as usize;
    for ch in 0..c {
        for j in 0..h {
            let src_j = (j + h - sy) % h;
            let src = &a[(ch * h + src_j) * w..(ch * h + src_j + 1) * w];
            let dst = &mut out[(ch * h + j) * w..(ch * h + j + 1) * w];
            // dst[i] = src[i - sx]
            dst[sx..].copy_from_slice(&src[..w - sx]);
            dst[..sx].copy_from_slice(&src[w - sx..]);
        }
    }
}

/// Accumulating variant of [`shift`] used for adjoints.
pub fn shift_add(a: &[f64], out: &mut [f64], c: usize, h: usize, w: usize, sx: isize, sy: isize) {
    let sx = sx.rem_euclid(w as isize) as usize;
    let sy = sy.rem_euclid(h as isize) as usize;
    for ch in 0..c {
        for j in 0..h {
            let src_j = (j + h - sy) % h;
            let row = (ch * h + src_j) * w;
            let orow = (ch * h + j) * w;
            for i in 0..w {
                out[orow + i] += a[row + (i + w - sx) % w];
            }
        }
    }
}

pub fn divergence(u: &[f64], out: &mut [f64], h: usize, w: usize, dx: f64, dy: f64) {
    let (ux, uy) = u.split_at(h * w);
    let ip = wrap_next(w);
    let jp = wrap_next(h);
    for j in 0..h {
        for i in 0..w {
            out[j * w + i] = (ux[j * w + ip[i]] - ux[j * w + i]) / dx + (uy[jp[j] * w + i] - uy[j * w + i]) / dy;
        }
    }
}

pub fn divergence_adjoint(g: &[f64], out: &mut [f64], h: usize, w: usize, dx: f64, dy: f64) {
    let (ox, oy) = out.split_at_mut(h * w);
    let im = wrap_prev(w);
    let jm = wrap_prev(h);
    for j in 0..h {
        for i in 0..w {
            let gij = g[j * w + i];
            ox[j * w + i] += (g[j * w + im[i]] - gij) / dx;
            oy[j * w + i] += (g[jm[j] * w + i] - gij) / dy;
        }
    }
}

/// Centered scalar to face gradient; the negative adjoint of [`divergence`].
pub fn gradient(p: &[f64], out: &mut [f64], h: usize, w: usize, dx: f64, dy: f64) {
    let (ox, oy) = out.split_at_mut(h * w);
    let im = wrap_prev(w);
    let jm = wrap_prev(h);
    for j in 0..h {
        for i in 0..w {
            let pij = p[j * w + i];
            ox[j * w + i] = (pij - p[j * w + im[i]]) / dx;
            oy[j * w + i] = (pij - p[jm[j] * w + i]) / dy;
        }
    }
}

pub fn gradient_adjoint(g: &[f64], out: &mut [f64], h: usize, w: usize, dx: f64, dy: f64) {
    let (gx, gy) = g.split_at(h * w);
    let ip = wrap_next(w);
    let jp = wrap_next(h);
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            out[k] += (gx[k] - gx[j * w + ip[i]]) / dx + (gy[k] - gy[jp[j] * w + i]) / dy;
        }
    }
}

pub fn vorticity(u: &[f64], out: &mut [f64], h: usize, w: usize, dx: f64, dy: f64) {
    let (ux, uy) = u.split_at(h * w);
    let im = wrap_prev(w);
    let jm = wrap_prev(h);
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            out[k] = (uy[k] - uy[j * w + im[i]]) / dx - (ux[k] - ux[jm[j] * w + i]) / dy;
        }
    }
}

pub fn vorticity_adjoint(g: &[f64], out: &mut [f64], h: usize, w: usize, dx: f64, dy: f64) {
    let (ox, oy) = out.split_at_mut(h * w);
    let ip = wrap_next(w);
    let jp = wrap_next(h);
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            oy[k] += (g[k] - g[j * w + ip[i]]) / dx;
            ox[k] -= (g[k] - g[jp[j] * w + i]) / dy;
        }
    }
}

/// Faces to centers: `c_x(i) = (u_x(i) + u_x(i+1)) / 2`, likewise in `y`.
pub fn face_to_center(u: &[f64], out: &mut [f64], h: usize, w: usize) {
    let (ux, uy) = u.split_at(h * w);
    let (cx, cy) = out.split_at_mut(h * w);
    let ip = wrap_next(w);
    let jp = wrap_next(h);
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            cx[k] = 0.5 * (ux[k] + ux[j * w + ip[i]]);
            cy[k] = 0.5 * (uy[k] + uy[jp[j] * w + i]);
        }
    }
}

/// Centers to faces: `u_x(i) = (c_x(i-1) + c_x(i)) / 2`, likewise in `y`.
/// Each direction is the transpose of the other.
pub fn center_to_face(c: &[f64], out: &mut [f64], h: usize, w: usize) {
    let (cx, cy) = c.split_at(h * w);
    let (ux, uy) = out.split_at_mut(h * w);
    let im = wrap_prev(w);
    let jm = wrap_prev(h);
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            ux[k] = 0.5 * (cx[j * w + im[i]] + cx[k]);
            uy[k] = 0.5 * (cy[jm[j] * w + i] + cy[k]);
        }
    }
}

pub fn face_to_center_adjoint(g: &[f64], out: &mut [f64], h: usize, w: usize) {
    let mut tmp = vec![0.0; 2 * h * w];
    center_to_face(g, &mut tmp, h, w);
    add_into(out, &tmp);
}

pub fn center_to_face_adjoint(g: &[f64], out: &mut [f64], h: usize, w: usize) {
    let mut tmp = vec![0.0; 2 * h * w];
    face_to_center(g, &mut tmp, h, w);
    add_into(out, &tmp);
}

pub fn add_into(out: &mut [f64], a: &[f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o += x;
    }
}

/// Gathers periodic `k x k` neighbourhoods into a `[C*k*k, H*W]` matrix.
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let plane = h * w;
    let mut col = vec![0.0; c * k * k * plane];
    for ch in 0..c {
        let src = &x[ch * plane..(ch + 1) * plane];
        for dy in 0..k {
            for dx in 0..k {
                let row = (ch * k + dy) * k + dx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                // dst(j, i) = src(j + dy - r, i + dx - r), i.e. a roll by (r - dx, r - dy)
                let sx = (r - dx as isize).rem_euclid(w as isize) as usize;
                let sy = (r - dy as isize).rem_euclid(h as isize) as usize;
                for j in 0..h {
                    let sj = (j + h - sy) % h;
                    let s = &src[sj * w..(sj + 1) * w];
                    let d = &mut dst[j * w..(j + 1) * w];
                    d[sx..].copy_from_slice(&s[..w - sx]);
                    d[..sx].copy_from_slice(&s[w - sx..]);
                }
            }
        }
    }
    col
}

/// Scatter-adds a `[C*k*k, H*W]` column matrix back onto `[C, H, W]`.
pub fn col2im_add(col: &[f64], out: &mut [f64], c: usize, h: usize, w: usize, k: usize) {
    let r = (k / 2) as isize;
    let plane = h * w;
    for ch in 0..c {
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for dy in 0..k {
            for dx in 0..k {
                let row = (ch * k + dy) * k + dx;
                let src = &col[row * plane..(row + 1) * plane];
                let ox = (dx as isize - r).rem_euclid(w as isize) as usize;
                let oy = (dy as isize - r).rem_euclid(h as isize) as usize;
                for j in 0..h {
                    let tj = (j + oy) % h;
                    let s = &src[j * w..(j + 1) * w];
                    let d = &mut dst[tj * w..(tj + 1) * w];
                    let split = w - ox;
                    for (dv, sv) in d[ox..].iter_mut().zip(&s[..split]) {
                        *dv += sv;
                    }
                    for (dv, sv) in d[..ox].iter_mut().zip(&s[split..]) {
                        *dv += sv;
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices.
/// `a` is `m x k`, `b` is `k x n` after the optional transposes.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds checked above; strides describe dense row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// Periodic cross-correlation `[Cin, H, W] -> [Cout, H, W]` with bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let plane = h * w;
    for (o, b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(*b);
    }
    if k == 1 {
        gemm(cout, cin, plane, weight, false, x, false, 1.0, out);
    } else {
        let col = im2col(x, cin, h, w, k);
        gemm(cout, cin * k * k, plane, weight, false, &col, false, 1.0, out);
    }
}

/// Accumulates input, weight and bias adjoints of [`conv2d`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_adjoint(
    x: &[f64],
    weight: &[f64],
    gout: &[f64],
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) {
    let plane = h * w;
    let kk = cin * k * k;
    if let Some(gb) = gb {
        for (o, b) in gb.iter_mut().enumerate() {
            *b += gout[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
    }
    if let Some(gw) = gw {
        if k == 1 {
            gemm(cout, plane, kk, gout, false, x, true, 1.0, gw);
        } else {
            let col = im2col(x, cin, h, w, k);
            gemm(cout, plane, kk, gout, false, &col, true, 1.0, gw);
        }
    }
    if let Some(gx) = gx {
        if k == 1 {
            gemm(kk, cout, plane, weight, true, gout, false, 1.0, gx);
        } else {
            let mut gcol = vec![0.0; kk * plane];
            gemm(kk, cout, plane, weight, true, gout, false, 0.0, &mut gcol);
            col2im_add(&gcol, gx, cin, h, w, k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    // <A x, y> == <x, A^T y> for each linear stencil.
    #[test]
    fn stencil_adjoints_are_transposes() {
        let (h, w, dx, dy) = (5, 7, 0.3, 0.7);
        let n = h * w;
        let u = pseudo(2 * n, 1);
        let s = pseudo(n, 2);
        let v = pseudo(2 * n, 3);

        let mut au = vec![0.0; n];
        divergence(&u, &mut au, h, w, dx, dy);
        let mut ats = vec![0.0; 2 * n];
        divergence_adjoint(&s, &mut ats, h, w, dx, dy);
        assert!((dot(&au, &s) - dot(&u, &ats)).abs() < 1e-12);

        let mut gp = vec![0.0; 2 * n];
        gradient(&s, &mut gp, h, w, dx, dy);
        let mut gtv = vec![0.0; n];
        gradient_adjoint(&v, &mut gtv, h, w, dx, dy);
        assert!((dot(&gp, &v) - dot(&s, &gtv)).abs() < 1e-12);
        // gradient = -divergence^T
        let mut neg_div_t = vec![0.0; 2 * n];
        divergence_adjoint(&s, &mut neg_div_t, h, w, dx, dy);
        for (a, b) in neg_div_t.iter().zip(&gp) {
            assert!((a + b).abs() < 1e-12);
        }

        let mut wu = vec![0.0; n];
        vorticity(&u, &mut wu, h, w, dx, dy);
        let mut wts = vec![0.0; 2 * n];
        vorticity_adjoint(&s, &mut wts, h, w, dx, dy);
        assert!((dot(&wu, &s) - dot(&u, &wts)).abs() < 1e-12);

        let mut fc = vec![0.0; 2 * n];
        face_to_center(&u, &mut fc, h, w);
        let mut fct = vec![0.0; 2 * n];
        face_to_center_adjoint(&v, &mut fct, h, w);
        assert!((dot(&fc, &v) - dot(&u, &fct)).abs() < 1e-12);

        let mut cf = vec![0.0; 2 * n];
        center_to_face(&u, &mut cf, h, w);
        let mut cft = vec![0.0; 2 * n];
        center_to_face_adjoint(&v, &mut cft, h, w);
        assert!((dot(&cf, &v) - dot(&u, &cft)).abs() < 1e-12);
    }

    #[test]
    fn shift_adjoint_is_reverse_shift() {
        let (c, h, w) = (2, 4, 6);
        let a = pseudo(c * h * w, 4);
        let g = pseudo(c * h * w, 5);
        let mut sa = vec![0.0; a.len()];
        shift(&a, &mut sa, c, h, w, 2, -1);
        let mut st = vec![0.0; a.len()];
        shift_add(&g, &mut st, c, h, w, -2, 1);
        assert!((dot(&sa, &g) - dot(&a, &st)).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (cin, cout, h, w, k) = (3, 2, 5, 6, 3);
        let x = pseudo(cin * h * w, 6);
        let wt = pseudo(cout * cin * k * k, 7);
        let b = pseudo(cout, 8);
        let mut out = vec![0.0; cout * h * w];
        conv2d(&x, &wt, &b, &mut out, cin, cout, h, w, k);
        for o in 0..cout {
            for j in 0..h {
                for i in 0..w {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let jj = (j + h + dy - 1) % h;
                                let ii = (i + w + dx - 1) % w;
                                acc += wt[((o * cin + c) * 3 + dy) * 3 + dx] * x[(c * h + jj) * w + ii];
                            }
                        }
                    }
                    assert!((acc - out[(o * h + j) * w + i]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn conv_adjoint_matches_inner_products() {
        let (cin, cout, h, w) = (3, 4, 5, 4);
        for k in [1, 3] {
            let x = pseudo(cin * h * w, 9);
            let wt = pseudo(cout * cin * k * k, 10);
            let zero_b = vec![0.0; cout];
            let g = pseudo(cout * h * w, 11);
            let mut y = vec![0.0; cout * h * w];
            conv2d(&x, &wt, &zero_b, &mut y, cin, cout, h, w, k);
            let mut gx = vec![0.0; x.len()];
            let mut gw = vec![0.0; wt.len()];
            conv2d_adjoint(&x, &wt, &g, Some(&mut gx), Some(&mut gw), None, cin, cout, h, w, k);
            // bilinear: <y, g> = <x, gx> = <wt, gw>
            let yg = dot(&y, &g);
            assert!((yg - dot(&x, &gx)).abs() < 1e-12);
            assert!((yg - dot(&wt, &gw)).abs() < 1e-12);
        }
    }
}
