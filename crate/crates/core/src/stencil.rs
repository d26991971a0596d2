//! Finite-difference stencils on uniform 1D grids.

use nalgebra::{DMatrix, DVector};

/// Dirichlet stiffness `(1/h)·tridiag(−1, 2, −1)` on `n` interior nodes.
pub fn dirichlet_stiffness(n: usize, h: f64) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 2.0 / h;
        if i + 1 < n {
            k[(i, i + 1)] = -1.0 / h;
            k[(i + 1, i)] = -1.0 / h;
        }
    }
    k
}

/// Periodic stiffness `(1/h)·circ(−1, 2, −1)` on `n` nodes.
pub fn periodic_stiffness(n: usize, h: f64) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] += 2.0 / h;
        k[(i, (i + 1) % n)] -= 1.0 / h;
        k[((i + 1) % n, i)] -= 1.0 / h;
    }
    k
}

/// Skew transport `a·∂ₓ + ½(∂ₓa)` on interior nodes with homogeneous
/// Dirichlet data: `B[i, i+1] = (aᵢ + aᵢ₊₁)/(4h) = −B[i+1, i]`.
///
/// The matrix is antisymmetric, hence skew in any `c·I` Gram.
pub fn skew_transport(a: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = a.len();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        let w = (a[i] + a[i + 1]) / (4.0 * h);
        b[(i, i + 1)] = w;
        b[(i + 1, i)] = -w;
    }
    b
}

/// Periodic variant of [`skew_transport`].
pub fn skew_transport_periodic(a: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = a.len();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        let w = (a[i] + a[j]) / (4.0 * h);
        b[(i, j)] += w;
        b[(j, i)] -= w;
    }
    b
}

/// Trapezoid quadrature weights on `n` nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> DVector<f64> {
    DVector::from_fn(n, |i, _| if i == 0 || i + 1 == n { 0.5 * h } else { h })
}

/// Summation-by-parts first derivative `W⁻¹Q` on `n` nodes, with `W` the
/// trapezoid weights and `Q` central in the interior and one-sided at the
/// ends, so that `xᵀQx = ½(x_{n−1}² − x₀²)`.
pub fn sbp_derivative(n: usize, h: f64) -> DMatrix<f64> {
    assert!(n >= 2, "need at least two nodes");
    let w = trapezoid_weights(n, h);
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        q[(i, i + 1)] = 0.5;
        q[(i + 1, i)] = -0.5;
    }
    q[(0, 0)] = -0.5;
    q[(n - 1, n - 1)] = 0.5;
    for i in 0..n {
        for j in 0..n {
            q[(i, j)] /= w[i];
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stiffness_annihilates_constants_periodically() {
        let k = periodic_stiffness(8, 0.125);
        let ones = DVector::from_element(8, 1.0);
        assert!((k * ones).amax() < 1e-14);
    }

    #[test]
    fn dirichlet_stiffness_matches_second_difference() {
        let n = 15;
        let h = 1.0 / (n + 1) as f64;
        let k = dirichlet_stiffness(n, h);
        // u = x(1−x) has −u'' = 2, reproduced exactly by the 3-point stencil.
        let u = DVector::from_fn(n, |i, _| {
            let x = (i + 1) as f64 * h;
            x * (1.0 - x)
        });
        let r = k * u / h;
        assert!(r.iter().all(|v| (v - 2.0).abs() < 1e-10));
    }

    #[test]
    fn transport_is_antisymmetric_and_consistent() {
        let n = 32;
        let h = 1.0 / (n + 1) as f64;
        let a = DVector::from_element(n, 1.5);
        let b = skew_transport(&a, h);
        assert!((&b + b.transpose()).amax() == 0.0);
        let u = DVector::from_fn(n, |i, _| ((i + 1) as f64 * h).powi(2));
        let bu = &b * &u;
        // Interior rows: a·u' = 1.5·2x exactly for quadratics.
        for i in 1..n - 1 {
            let x = (i + 1) as f64 * h;
            assert!((bu[i] - 3.0 * x).abs() < 1e-10);
        }
    }

    #[test]
    fn sbp_identity() {
        let n = 11;
        let h = 0.1;
        let d = sbp_derivative(n, h);
        let w = trapezoid_weights(n, h);
        let x = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin() + 0.2);
        let lhs = x.dot(&(&d * &x).component_mul(&w));
        let rhs = 0.5 * (x[n - 1].powi(2) - x[0].powi(2));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
