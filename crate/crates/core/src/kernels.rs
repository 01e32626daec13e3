//! Gram matrices, centering and the biased empirical HSIC estimator.
//!
//! `hsic(K, L) = tr(H K H L) / (n - 1)^2` with `H = I - (1/n) 1 1^T`.
//! Every function here has a plain version on [`Matrix`] and a tape version
//! used inside training objectives.

use crate::error::{Error, Result};
use crate::numgrad::{Matrix, Tape, Var};

pub fn linear_gram(embeddings: &Matrix) -> Matrix {
    embeddings
        .matmul_transposed(embeddings)
        .expect("a matrix is always conformable with its transpose")
}

pub fn centering_matrix(n: usize) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "centering needs at least 2 samples, got {n}"
        )));
    }
    let off = 1.0 / n as f64;
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 - off
        } else {
            -off
        }
    }))
}

fn check_pair(kg: &Matrix, kr: &Matrix) -> Result<usize> {
    if !kg.is_square() || kg.shape() != kr.shape() {
        return Err(Error::shape(
            "hsic",
            format!("kernels are {:?} and {:?}", kg.shape(), kr.shape()),
        ));
    }
    Ok(kg.rows())
}

/// Double-centers a square matrix: `H K H`.
pub fn center(k: &Matrix) -> Result<Matrix> {
    if !k.is_square() {
        return Err(Error::shape("center", format!("{:?} is not square", k.shape())));
    }
    let n = k.rows();
    if n < 2 {
        return Err(Error::Contract(format!(
            "centering needs at least 2 samples, got {n}"
        )));
    }
    let row_means: Vec<f64> = k.row_iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let col_means: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| k[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    Ok(Matrix::from_fn(n, n, |i, j| {
        k[(i, j)] - row_means[i] - col_means[j] + grand
    }))
}

pub fn hsic(kg: &Matrix, kr: &Matrix) -> Result<f64> {
    let n = check_pair(kg, kr)?;
    let centered = center(kg)?;
    // tr(A B) = sum_ij A_ij B_ji
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += centered[(i, j)] * kr[(j, i)];
        }
    }
    let scale = ((n - 1) * (n - 1)) as f64;
    Ok(acc / scale)
}

/// Uniform average of equally sized kernels.
pub fn average_kernels(kernels: &[Matrix]) -> Result<Matrix> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::Contract("cannot average an empty list of kernels".into()))?;
    let mut acc = first.clone();
    for k in &kernels[1..] {
        if k.shape() != first.shape() {
            return Err(Error::shape(
                "average_kernels",
                format!("{:?} vs {:?}", k.shape(), first.shape()),
            ));
        }
        acc.add_assign(k)?;
    }
    Ok(acc.scale(1.0 / kernels.len() as f64))
}

/// Linear Gram of `embeddings` on the tape.
pub fn linear_gram_var(tape: &mut Tape, embeddings: Var) -> Result<Var> {
    tape.matmul_t(embeddings, embeddings)
}

/// HSIC on the tape; differentiable in both kernels.
pub fn hsic_var(tape: &mut Tape, kg: Var, kr: Var) -> Result<Var> {
    let n = check_pair(tape.value(kg), tape.value(kr))?;
    let h = tape.constant(centering_matrix(n)?);
    let hk = tape.matmul(h, kg)?;
    let hkh = tape.matmul(hk, h)?;
    let kr_t = tape.transpose(kr);
    let prod = tape.hadamard(hkh, kr_t)?;
    let tr = tape.sum(prod);
    Ok(tape.scale(tr, 1.0 / ((n - 1) * (n - 1)) as f64))
}

/// Uniform average of kernels on the tape.
pub fn average_kernels_var(tape: &mut Tape, kernels: &[Var]) -> Result<Var> {
    let (&first, rest) = kernels
        .split_first()
        .ok_or_else(|| Error::Contract("cannot average an empty list of kernels".into()))?;
    let mut acc = first;
    for &k in rest {
        acc = tape.add(acc, k)?;
    }
    Ok(tape.scale(acc, 1.0 / kernels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Independent route: explicit H, three dense products and a diagonal sum.
    fn hsic_oracle(kg: &Matrix, kr: &Matrix) -> f64 {
        let n = kg.rows();
        let h = Matrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - 1.0 / n as f64);
        let p = h.matmul(kg).unwrap().matmul(&h).unwrap().matmul(kr).unwrap();
        let tr: f64 = (0..n).map(|i| p[(i, i)]).sum();
        tr / ((n - 1) * (n - 1)) as f64
    }

    #[test]
    fn gram_of_orthonormal_rows_is_identity() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(linear_gram(&e), Matrix::identity(2));
        let single = Matrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        assert_eq!(linear_gram(&single).into_vec(), vec![4.0]);
    }

    #[test]
    fn gram_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random(&mut rng, 6, 3);
        let g = linear_gram(&e);
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += e[(i, k)] * e[(j, k)];
                }
                assert!((g[(i, j)] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn centering_properties() {
        let h2 = centering_matrix(2).unwrap();
        assert_eq!(h2.into_vec(), vec![0.5, -0.5, -0.5, 0.5]);
        let h = centering_matrix(7).unwrap();
        assert!(h.matmul(&h).unwrap().max_abs_diff(&h).unwrap() <= 1e-12);
        let ones = Matrix::filled(7, 1, 1.0);
        assert!(h.matmul(&ones).unwrap().as_slice().iter().all(|v| v.abs() <= 1e-12));
        assert!(matches!(centering_matrix(1), Err(Error::Contract(_))));
    }

    #[test]
    fn hsic_identity_pair() {
        let i2 = Matrix::identity(2);
        assert!((hsic(&i2, &i2).unwrap() - hsic_oracle(&i2, &i2)).abs() <= 1e-15);
        assert!((hsic(&i2, &i2).unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn constant_kernel_has_zero_hsic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, 5, 5);
        let kr = linear_gram(&x);
        assert!(hsic(&Matrix::filled(5, 5, 1.0), &kr).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn hsic_matches_oracle_on_random_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kg = linear_gram(&random(&mut rng, 10, 4));
        let kr = linear_gram(&random(&mut rng, 10, 3));
        assert!((hsic(&kg, &kr).unwrap() - hsic_oracle(&kg, &kr)).abs() <= 1e-10);

        let mut t = Tape::new();
        let a = t.constant(kg.clone());
        let b = t.constant(kr.clone());
        let v = hsic_var(&mut t, a, b).unwrap();
        assert!((t.value(v)[(0, 0)] - hsic_oracle(&kg, &kr)).abs() <= 1e-10);
    }

    #[test]
    fn hsic_dimension_mismatch() {
        let err = hsic(&Matrix::identity(3), &Matrix::identity(4));
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn average_cases() {
        let i = Matrix::identity(3);
        assert_eq!(average_kernels(std::slice::from_ref(&i)).unwrap(), i);
        let avg = average_kernels(&[i.clone(), i.scale(3.0)]).unwrap();
        assert_eq!(avg, i.scale(2.0));
        assert!(matches!(average_kernels(&[]), Err(Error::Contract(_))));
        assert!(average_kernels(&[i, Matrix::identity(2)]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ks: Vec<Matrix> = (0..4).map(|_| random(&mut rng, 4, 4)).collect();
        let avg = average_kernels(&ks).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let mean = ks.iter().map(|k| k[(r, c)]).sum::<f64>() / 4.0;
                assert!((avg[(r, c)] - mean).abs() <= 1e-12);
            }
        }
    }
}
