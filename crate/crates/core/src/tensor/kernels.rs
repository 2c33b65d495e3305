//! Plain matrix-product loops. Orders are chosen so the innermost loop walks
//! contiguous memory.

/// `c[p×r] += a[p×q] · b[q×r]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let c_row = &mut c[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// `c[p×r] += a[p×q] · b[r×q]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let b_row = &b[j * q..(j + 1) * q];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * r + j] += acc;
        }
    }
}

/// `c[q×r] += a[p×q]ᵀ · b[p×r]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let b_row = &b[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let c_row = &mut c[k * r..(k + 1) * r];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
        let mut c = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..r {
                for k in 0..q {
                    c[i * r + j] += a[i * q + k] * b[k * r + j];
                }
            }
        }
        c
    }

    fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; m.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = m[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive_product() {
        let (p, q, r) = (3, 5, 4);
        let a: Vec<f64> = (0..p * q).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..q * r).map(|i| (i as f64 * 0.91).cos()).collect();
        let expect = naive(&a, &b, p, q, r);

        let mut c = vec![0.0; p * r];
        gemm_nn(&a, &b, &mut c, p, q, r);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }

        let bt = transpose(&b, q, r);
        let mut c = vec![0.0; p * r];
        gemm_nt(&a, &bt, &mut c, p, q, r);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }

        let at = transpose(&a, p, q);
        let mut c = vec![0.0; p * r];
        gemm_tn(&at, &b, &mut c, q, p, r);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
