//! Dense complex linear algebra and quadrature rules.
//!
//! Everything here operates on small matrices (per-mode dimension up to a few
//! tens; two-mode objects are handled block-wise by the callers, so nothing of
//! dimension ~10^3 is ever factorized). The eigensolver is a cyclic Jacobi
//! iteration for complex Hermitian matrices, which keeps the crate free of
//! LAPACK linkage while giving machine-precision spectra at these sizes.

use ndarray::Array2;
use num_complex::Complex64;

/// Conjugate transpose.
pub fn dagger(a: &Array2<Complex64>) -> Array2<Complex64> {
    a.t().mapv(|z| z.conj())
}

/// Matrix trace.
pub fn trace(a: &Array2<Complex64>) -> Complex64 {
    a.diag().sum()
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Frobenius distance between two matrices of equal shape.
pub fn frobenius_distance(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as the
/// columns of a unitary matrix. The input is symmetrized as (A + A†)/2 first,
/// so tiny anti-Hermitian noise from upstream arithmetic is harmless.
pub fn hermitian_eig(mat: &Array2<Complex64>) -> (Vec<f64>, Array2<Complex64>) {
    let n = mat.nrows();
    assert_eq!(n, mat.ncols(), "hermitian_eig wants a square matrix");
    let mut a = (mat + &dagger(mat)).mapv(|z| 0.5 * z);
    let mut v = Array2::<Complex64>::eye(n);
    if n <= 1 {
        let lam = if n == 1 { vec![a[(0, 0)].re] } else { vec![] };
        return (lam, v);
    }

    let scale: f64 = frobenius(&a).max(f64::MIN_POSITIVE);
    let tol = 1e-30 * scale * scale;
    for _sweep in 0..60 {
        let off: f64 = {
            let mut s = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    s += a[(p, q)].norm_sqr();
                }
            }
            s
        };
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let b = apq.norm();
                if b <= 1e-300 {
                    continue;
                }
                let phase = apq / b;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // tan(2*phi) = 2b/(app - aqq); smaller-angle root keeps |phi| <= pi/4.
                let tau = (app - aqq) / (2.0 * b);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Column rotation A <- A J with J[p][p]=c, J[p][q]=-s*phase,
                // J[q][p]=s*conj(phase), J[q][q]=c; then row rotation A <- J† A.
                let sp = s * phase;
                let spc = s * phase.conj();
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip + spc * aiq;
                    a[(i, q)] = -sp * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = c * apj + sp * aqj;
                    a[(q, j)] = -spc * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip + spc * viq;
                    v[(i, q)] = -sp * vip + c * viq;
                }
                a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let lams: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| lams[i].partial_cmp(&lams[j]).unwrap());
    let sorted_lams: Vec<f64> = order.iter().map(|&i| lams[i]).collect();
    let mut sorted_v = Array2::<Complex64>::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            sorted_v[(i, new_col)] = v[(i, old_col)];
        }
    }
    (sorted_lams, sorted_v)
}

/// Applies a real function to the spectrum of a Hermitian matrix: V f(Λ) V†.
pub fn hermitian_map(mat: &Array2<Complex64>, f: impl Fn(f64) -> Complex64) -> Array2<Complex64> {
    let (lams, v) = hermitian_eig(mat);
    let n = lams.len();
    let mut scaled = v.clone();
    for (j, &lam) in lams.iter().enumerate() {
        let fl = f(lam);
        for i in 0..n {
            scaled[(i, j)] *= fl;
        }
    }
    scaled.dot(&dagger(&v))
}

/// exp(i·H) for Hermitian H, exactly unitary up to roundoff.
pub fn unitary_exp_i(h: &Array2<Complex64>) -> Array2<Complex64> {
    hermitian_map(h, |lam| Complex64::new(0.0, lam).exp())
}

/// λ^(-1/2) of a Hermitian PSD matrix with an eigenvalue floor.
///
/// Eigenvalues below `floor` are clamped to it before inversion; the matrix is
/// singular on unprobed subspaces and the floor keeps the update bounded.
pub fn hermitian_inv_sqrt(mat: &Array2<Complex64>, floor: f64) -> Array2<Complex64> {
    hermitian_map(mat, |lam| {
        Complex64::new(1.0 / lam.max(floor).sqrt(), 0.0)
    })
}

/// Gauss-Legendre nodes and weights on [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Standard cosine initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Map from [-1, 1] to [a, b]; return in ascending order.
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut pairs: Vec<(f64, f64)> = nodes
        .iter()
        .zip(weights.iter())
        .map(|(&x, &w)| (mid + half * x, half * w))
        .collect();
    pairs.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap());
    pairs.into_iter().unzip()
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Hermite nodes and weights for the weight function e^(-x²).
///
/// Golub-Welsch on the Jacobi tridiagonal (off-diagonal sqrt(k/2)), using the
/// in-house eigensolver; weights are sqrt(pi) times the squared first component
/// of each eigenvector.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut j = Array2::<Complex64>::zeros((n, n));
    for k in 1..n {
        let beta = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = Complex64::new(beta, 0.0);
        j[(k, k - 1)] = Complex64::new(beta, 0.0);
    }
    let (nodes, v) = hermitian_eig(&j);
    let mu0 = std::f64::consts::PI.sqrt();
    let weights: Vec<f64> = (0..n).map(|i| mu0 * v[(0, i)].norm_sqr()).collect();
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eig_two_by_two_known() {
        // [[2, i],[-i, 2]] has eigenvalues 1 and 3.
        let mut m = Array2::<Complex64>::zeros((2, 2));
        m[(0, 0)] = c(2.0, 0.0);
        m[(0, 1)] = c(0.0, 1.0);
        m[(1, 0)] = c(0.0, -1.0);
        m[(1, 1)] = c(2.0, 0.0);
        let (lams, v) = hermitian_eig(&m);
        assert_relative_eq!(lams[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(lams[1], 3.0, epsilon = 1e-12);
        let vtv = dagger(&v).dot(&v);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - c(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        // Deterministic pseudo-random Hermitian matrix.
        let n = 12;
        let mut m = Array2::<Complex64>::zeros((n, n));
        let mut s = 1u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            for j in i..n {
                let re = next();
                let im = if i == j { 0.0 } else { next() };
                m[(i, j)] = c(re, im);
                m[(j, i)] = c(re, -im);
            }
        }
        let (lams, v) = hermitian_eig(&m);
        // A V = V diag(lams)
        let av = m.dot(&v);
        for j in 0..n {
            for i in 0..n {
                let want = v[(i, j)] * lams[j];
                assert!((av[(i, j)] - want).norm() < 1e-10);
            }
        }
        assert!(lams.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn exp_i_is_unitary() {
        let mut h = Array2::<Complex64>::zeros((5, 5));
        for i in 0..5 {
            for j in 0..5 {
                let re = ((i * 7 + j * 3) % 11) as f64 / 11.0;
                let im = if i == j { 0.0 } else { ((i + 2 * j) % 5) as f64 / 7.0 };
                h[(i, j)] = c(re, if i < j { im } else { -im });
            }
        }
        let h = (&h + &dagger(&h)).mapv(|z| 0.5 * z);
        let u = unitary_exp_i(&h);
        let prod = dagger(&u).dot(&u);
        let eye = Array2::<Complex64>::eye(5);
        assert!(frobenius_distance(&prod, &eye) < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8, -1.0, 3.0);
        // Exact for degree <= 15; check x^5 over [-1, 3]: (3^6 - 1)/6.
        let got: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(5)).sum();
        assert_relative_eq!(got, (729.0 - 1.0) / 6.0, epsilon = 1e-10);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(20);
        let m0: f64 = w.iter().sum();
        assert_relative_eq!(m0, std::f64::consts::PI.sqrt(), epsilon = 1e-10);
        let m2: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi * xi).sum();
        assert_relative_eq!(m2, 0.5 * std::f64::consts::PI.sqrt(), epsilon = 1e-10);
        let m6: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(6)).sum();
        // (5!!/2^3) sqrt(pi) = 15/8 sqrt(pi)
        assert_relative_eq!(m6, 1.875 * std::f64::consts::PI.sqrt(), epsilon = 1e-9);
    }
}
