//! Thin LAPACK wrappers for the dense kernels (Hermitian eigendecomposition,
//! singular values). Everything else (matmul, kron) stays in ndarray.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::{Error, Result};

/// Hermitian eigendecomposition, eigenvalues ascending, `a = V diag(w) V^H`.
///
/// Uses divide-and-conquer (`zheevd`) and falls back to QR iteration
/// (`zheev`) on the rare convergence failure.
pub fn eigh(a: &Array2<C64>) -> Result<(Vec<f64>, Array2<C64>)> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    // LAPACK wants column-major; for Hermitian input the column-major image
    // of `a` is `conj(a)`, whose eigenvectors are the conjugates of ours.
    let mut m: Vec<C64> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            m.push(a[(i, j)].conj());
        }
    }
    let mut w = vec![0.0f64; n];
    if zheevd_inplace(&mut m, &mut w, n, true).is_err() {
        // rebuild the input; zheevd may have clobbered it
        m.clear();
        for j in 0..n {
            for i in 0..n {
                m.push(a[(i, j)].conj());
            }
        }
        zheev_inplace(&mut m, &mut w, n)?;
    }
    let mut v = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            v[(i, j)] = m[j * n + i].conj();
        }
    }
    Ok((w, v))
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(a: &Array2<C64>) -> Result<Vec<f64>> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m: Vec<C64> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            m.push(a[(i, j)].conj());
        }
    }
    let mut w = vec![0.0f64; n];
    zheevd_inplace(&mut m, &mut w, n, false)?;
    Ok(w)
}

/// Singular values, descending.
pub fn singular_values(a: &Array2<C64>) -> Result<Vec<f64>> {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    // column-major copy of a (no symmetry to exploit here)
    let mut m: Vec<C64> = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            m.push(a[(i, j)]);
        }
    }
    let (mr, nc) = (rows as i32, cols as i32);
    let mn = rows.min(cols);
    let mut s = vec![0.0f64; mn];
    let mut u = [C64::new(0.0, 0.0)];
    let mut vt = [C64::new(0.0, 0.0)];
    let mut iwork = vec![0i32; 8 * mn];
    let mut rwork = vec![0.0f64; (7 * mn).max(1)];
    let mut info = 0i32;
    let mut work = vec![C64::new(0.0, 0.0); 1];
    unsafe {
        lapack::zgesdd(
            b'N', mr, nc, &mut m, mr, &mut s, &mut u, 1, &mut vt, 1, &mut work, -1, &mut rwork,
            &mut iwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigFailure(format!("zgesdd workspace query: info={info}")));
    }
    let lwork = work[0].re as usize;
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1)];
    unsafe {
        lapack::zgesdd(
            b'N', mr, nc, &mut m, mr, &mut s, &mut u, 1, &mut vt, 1, &mut work,
            lwork as i32, &mut rwork, &mut iwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigFailure(format!("zgesdd: info={info}")));
    }
    Ok(s)
}

/// Largest singular value (spectral norm). Zero-sized matrices have norm 0.
pub fn spectral_norm(a: &Array2<C64>) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// Solves `a x = b` for square `a` (LU with partial pivoting).
pub fn solve(a: &Array2<C64>, b: &Array2<C64>) -> Result<Array2<C64>> {
    let n = check_square(a)?;
    if b.nrows() != n {
        return Err(Error::DimMismatch(format!("rhs has {} rows for n={n}", b.nrows())));
    }
    let nrhs = b.ncols();
    let mut am: Vec<C64> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            am.push(a[(i, j)]);
        }
    }
    let mut bm: Vec<C64> = Vec::with_capacity(n * nrhs);
    for j in 0..nrhs {
        for i in 0..n {
            bm.push(b[(i, j)]);
        }
    }
    let mut ipiv = vec![0i32; n];
    let mut info = 0i32;
    unsafe {
        lapack::zgesv(n as i32, nrhs as i32, &mut am, n as i32, &mut ipiv, &mut bm, n as i32, &mut info);
    }
    if info != 0 {
        return Err(Error::EigFailure(format!("zgesv: info={info}")));
    }
    let mut x = Array2::zeros((n, nrhs));
    for j in 0..nrhs {
        for i in 0..n {
            x[(i, j)] = bm[j * n + i];
        }
    }
    Ok(x)
}

/// Matrix exponential by Pade approximation with scaling and squaring
/// (Higham order 13). Independent of any eigendecomposition, which makes it
/// usable as an oracle against spectral-decomposition semigroups.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = check_square(a)?;
    let one_norm = (0..n)
        .map(|j| (0..n).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let theta13 = 5.371920351148152;
    let s = if one_norm > theta13 {
        ((one_norm / theta13).log2().ceil() as i32).max(0)
    } else {
        0
    };
    let scale = 2.0f64.powi(-s);
    let a1 = a.mapv(|z| z * scale);
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let eye = Array2::<C64>::eye(n);
    let a2 = a1.dot(&a1);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let u_inner = a6.mapv(|z| z * B[13])
        + a4.mapv(|z| z * B[11])
        + a2.mapv(|z| z * B[9]);
    let u = a1.dot(
        &(a6.dot(&u_inner)
            + a6.mapv(|z| z * B[7])
            + a4.mapv(|z| z * B[5])
            + a2.mapv(|z| z * B[3])
            + eye.mapv(|z| z * B[1])),
    );
    let v_inner = a6.mapv(|z| z * B[12]) + a4.mapv(|z| z * B[10]) + a2.mapv(|z| z * B[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * B[6])
        + a4.mapv(|z| z * B[4])
        + a2.mapv(|z| z * B[2])
        + eye.mapv(|z| z * B[0]);
    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

fn check_square(a: &Array2<C64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::DimMismatch(format!("expected square matrix, got {r}x{c}")));
    }
    Ok(r)
}

fn zheevd_inplace(m: &mut [C64], w: &mut [f64], n: usize, vectors: bool) -> Result<()> {
    let jobz = if vectors { b'V' } else { b'N' };
    let nn = n as i32;
    let mut info = 0i32;
    let mut work = vec![C64::new(0.0, 0.0); 1];
    let mut rwork = vec![0.0f64; 1];
    let mut iwork = vec![0i32; 1];
    unsafe {
        lapack::zheevd(jobz, b'L', nn, m, nn, w, &mut work, -1, &mut rwork, -1, &mut iwork, -1, &mut info);
    }
    if info != 0 {
        return Err(Error::EigFailure(format!("zheevd workspace query: info={info}")));
    }
    let lwork = work[0].re as usize;
    let lrwork = rwork[0] as usize;
    let liwork = iwork[0] as usize;
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1)];
    let mut rwork = vec![0.0f64; lrwork.max(1)];
    let mut iwork = vec![0i32; liwork.max(1)];
    unsafe {
        lapack::zheevd(
            jobz, b'L', nn, m, nn, w, &mut work, lwork as i32, &mut rwork, lrwork as i32,
            &mut iwork, liwork as i32, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigFailure(format!("zheevd: info={info} (n={n})")));
    }
    Ok(())
}

fn zheev_inplace(m: &mut [C64], w: &mut [f64], n: usize) -> Result<()> {
    let nn = n as i32;
    let mut info = 0i32;
    let mut rwork = vec![0.0f64; (3 * n).max(1)];
    let mut work = vec![C64::new(0.0, 0.0); 1];
    unsafe {
        lapack::zheev(b'V', b'L', nn, m, nn, w, &mut work, -1, &mut rwork, &mut info);
    }
    if info != 0 {
        return Err(Error::EigFailure(format!("zheev workspace query: info={info}")));
    }
    let lwork = work[0].re as usize;
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1)];
    unsafe {
        lapack::zheev(b'V', b'L', nn, m, nn, w, &mut work, lwork as i32, &mut rwork, &mut info);
    }
    if info != 0 {
        return Err(Error::EigFailure(format!(
            "zheev did not converge: info={info}, n={n}"
        )));
    }
    Ok(())
}
