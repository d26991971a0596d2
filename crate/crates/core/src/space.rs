//! Finite-dimensional Hilbert spaces defined by a Gram matrix.
//!
//! Primal, pivot and dual elements share coordinates; only the pairing
//! `⟨x, y⟩ = xᵀ G y` distinguishes them. Dual objects (subgradients,
//! momenta) are stored through their Riesz representatives.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

pub type Element = DVector<f64>;

#[derive(Clone, Debug)]
enum Gram {
    Identity,
    Diagonal(DVector<f64>),
    Dense {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

#[derive(Clone, Debug)]
pub struct Space {
    dim: usize,
    gram: Gram,
}

impl Space {
    pub fn euclidean(dim: usize) -> Self {
        assert!(dim > 0, "space dimension must be positive");
        Space {
            dim,
            gram: Gram::Identity,
        }
    }

    pub fn with_diagonal_gram(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty Gram diagonal".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!(
                "diagonal entry {i} is {}",
                weights[i]
            )));
        }
        Ok(Space {
            dim: weights.len(),
            gram: Gram::Diagonal(weights),
        })
    }

    /// Dense Gram matrix; symmetry is checked to 1e-12 relative and
    /// definiteness by Cholesky factorization.
    pub fn with_gram(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "Gram matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "asymmetry {asym:.3e} relative to {scale:.3e}"
            )));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        Ok(Space {
            dim: n,
            gram: Gram::Dense { matrix, chol },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_diagonal(&self) -> bool {
        !matches!(self.gram, Gram::Dense { .. })
    }

    pub fn gram_matrix(&self) -> DMatrix<f64> {
        match &self.gram {
            Gram::Identity => DMatrix::identity(self.dim, self.dim),
            Gram::Diagonal(w) => DMatrix::from_diagonal(w),
            Gram::Dense { matrix, .. } => matrix.clone(),
        }
    }

    /// Diagonal of the Gram matrix when it is diagonal.
    pub fn gram_diagonal(&self) -> Option<DVector<f64>> {
        match &self.gram {
            Gram::Identity => Some(DVector::from_element(self.dim, 1.0)),
            Gram::Diagonal(w) => Some(w.clone()),
            Gram::Dense { .. } => None,
        }
    }

    /// `G x`: maps a Riesz representative to Euclidean dual coordinates.
    pub fn gram_apply(&self, x: &Element) -> Element {
        match &self.gram {
            Gram::Identity => x.clone(),
            Gram::Diagonal(w) => x.component_mul(w),
            Gram::Dense { matrix, .. } => matrix * x,
        }
    }

    /// `G⁻¹ y`: Riesz representative of Euclidean dual coordinates.
    pub fn gram_solve(&self, y: &Element) -> Element {
        match &self.gram {
            Gram::Identity => y.clone(),
            Gram::Diagonal(w) => y.component_div(w),
            Gram::Dense { chol, .. } => chol.solve(y),
        }
    }

    /// `G⁻¹ M` column-wise.
    pub fn gram_solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.gram {
            Gram::Identity => m.clone(),
            Gram::Diagonal(w) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= w[i];
                }
                out
            }
            Gram::Dense { chol, .. } => chol.solve(m),
        }
    }

    /// `G M`.
    pub fn gram_apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.gram {
            Gram::Identity => m.clone(),
            Gram::Diagonal(w) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                out
            }
            Gram::Dense { matrix, .. } => matrix * m,
        }
    }

    pub fn check(&self, x: &Element) -> Result<()> {
        check_dim(self.dim, x.len())
    }

    /// Checked pairing.
    pub fn inner(&self, x: &Element, y: &Element) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.dot(x, y))
    }

    /// Unchecked pairing for hot paths; panics on dimension mismatch.
    pub fn dot(&self, x: &Element, y: &Element) -> f64 {
        match &self.gram {
            Gram::Identity => x.dot(y),
            Gram::Diagonal(w) => x.iter().zip(y.iter()).zip(w.iter()).map(|((a, b), c)| a * b * c).sum(),
            Gram::Dense { matrix, .. } => x.dot(&(matrix * y)),
        }
    }

    pub fn norm_sq(&self, x: &Element) -> f64 {
        self.dot(x, x).max(0.0)
    }

    pub fn norm(&self, x: &Element) -> f64 {
        self.norm_sq(x).sqrt()
    }

    /// Dual norm of Euclidean dual coordinates `g`: `sqrt(gᵀ G⁻¹ g)`.
    pub fn dual_norm(&self, g: &Element) -> f64 {
        g.dot(&self.gram_solve(g)).max(0.0).sqrt()
    }

    pub fn zeros(&self) -> Element {
        DVector::zeros(self.dim)
    }

    pub fn element(&self, coords: Vec<f64>) -> Result<Element> {
        check_dim(self.dim, coords.len())?;
        Ok(DVector::from_vec(coords))
    }

    /// Block-diagonal product space `self × other`.
    pub fn product(&self, other: &Space) -> Space {
        let n = self.dim + other.dim;
        match (self.gram_diagonal(), other.gram_diagonal()) {
            (Some(a), Some(b)) => {
                if matches!(self.gram, Gram::Identity) && matches!(other.gram, Gram::Identity) {
                    return Space::euclidean(n);
                }
                let w = DVector::from_iterator(n, a.iter().chain(b.iter()).copied());
                Space::with_diagonal_gram(w).expect("product of valid diagonal Grams")
            }
            _ => {
                let mut m = DMatrix::zeros(n, n);
                m.view_mut((0, 0), (self.dim, self.dim)).copy_from(&self.gram_matrix());
                m.view_mut((self.dim, self.dim), (other.dim, other.dim))
                    .copy_from(&other.gram_matrix());
                Space::with_gram(m).expect("product of valid Grams")
            }
        }
    }

    /// Standard normal coordinates rescaled to unit norm, then by a radius
    /// drawn uniformly from `[0, radius]`.
    pub fn random_element(&self, rng: &mut ChaCha8Rng, radius: f64) -> Element {
        let mut x = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = self.norm(&x);
        if n > 0.0 {
            x *= rng.gen_range(0.0..=radius) / n;
        }
        x
    }

    pub fn random_elements(&self, rng: &mut ChaCha8Rng, count: usize, radius: f64) -> Vec<Element> {
        (0..count).map(|_| self.random_element(rng, radius)).collect()
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parses rows of whitespace-separated decimals into a dense matrix.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {tok:?}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

/// Gram matrix from optional text; identity of size `dim` when absent.
pub fn space_from_gram_text(text: Option<&str>, dim: usize) -> Result<Space> {
    match text {
        None => Ok(Space::euclidean(dim)),
        Some(t) => {
            let m = parse_matrix(t)?;
            check_dim(dim, m.nrows())?;
            Space::with_gram(m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn inner_examples() {
        let s = Space::euclidean(2);
        assert_eq!(s.inner(&dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(s.inner(&dvector![3.0, 4.0], &dvector![3.0, 4.0]).unwrap(), 25.0);
        let g = Space::with_diagonal_gram(dvector![2.0, 1.0]).unwrap();
        assert_eq!(g.inner(&dvector![1.0, 1.0], &dvector![1.0, 1.0]).unwrap(), 3.0);
        let d = Space::with_gram(DMatrix::from_diagonal(&dvector![2.0, 1.0])).unwrap();
        assert_eq!(d.inner(&dvector![1.0, 1.0], &dvector![1.0, 1.0]).unwrap(), 3.0);
    }

    #[test]
    fn inner_rejects_mismatch() {
        let s = Space::euclidean(2);
        assert!(matches!(
            s.inner(&dvector![1.0], &dvector![1.0, 2.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn gram_validation() {
        assert!(Space::with_gram(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(Space::with_gram(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(Space::with_diagonal_gram(dvector![1.0, 0.0]).is_err());
    }

    #[test]
    fn gram_solve_inverts_apply() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let s = Space::with_gram(m).unwrap();
        let x = dvector![1.0, -2.0, 0.5];
        let back = s.gram_solve(&s.gram_apply(&x));
        assert!((back - x).amax() < 1e-14);
    }

    #[test]
    fn matrix_text_round_trip() {
        let m = parse_matrix("# gram\n2 0\n0 1\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert!(parse_matrix("1 2\n3\n").is_err());
        assert!(parse_matrix("1 x\n").is_err());
        let s = space_from_gram_text(None, 3).unwrap();
        assert_eq!(s.gram_matrix(), DMatrix::identity(3, 3));
    }

    #[test]
    fn product_space_pairs_blockwise() {
        let a = Space::with_diagonal_gram(dvector![2.0]).unwrap();
        let b = Space::euclidean(1);
        let p = a.product(&b);
        assert_eq!(p.inner(&dvector![1.0, 1.0], &dvector![1.0, 1.0]).unwrap(), 3.0);
    }
}
