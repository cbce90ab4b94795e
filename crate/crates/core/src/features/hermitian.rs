use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance on `|M − M^H|` accepted by [`pack_hermitian`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Dense square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    /// Wraps `data` without checking symmetry; [`pack_hermitian`] does.
    pub fn from_rows(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Shape(format!("{} entries for a {dim}x{dim} matrix", data.len())));
        }
        Ok(Self { dim, data })
    }

    /// `u·u^H`.
    pub fn outer(u: &[Complex64]) -> Self {
        let dim = u.len();
        let mut data = Vec::with_capacity(dim * dim);
        for a in u {
            for b in u {
                data.push(a * b.conj());
            }
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }
}

/// Number of reals produced by packing an `m×m` Hermitian matrix.
pub fn packed_len(m: usize, include_diagonal: bool) -> usize {
    if include_diagonal {
        m * (m + 1)
    } else {
        m * m.saturating_sub(1)
    }
}

/// Writes the lower triangle of `lower(i, j)` (row-major, `j ≤ i` or
/// `j < i`) into `out`: all real parts first, then all imaginary parts.
pub(crate) fn pack_lower_into(
    m: usize,
    include_diagonal: bool,
    lower: impl Fn(usize, usize) -> Complex64,
    out: &mut [f64],
) {
    let half = packed_len(m, include_diagonal) / 2;
    let mut idx = 0;
    for i in 0..m {
        let end = if include_diagonal { i + 1 } else { i };
        for j in 0..end {
            let c = lower(i, j);
            out[idx] = c.re;
            out[half + idx] = c.im;
            idx += 1;
        }
    }
}

/// Flattens the lower triangle of a Hermitian matrix, row-major, real parts
/// followed by imaginary parts.
pub fn pack_hermitian(m: &HermitianMatrix, include_diagonal: bool) -> Result<Vec<f64>> {
    let asym = m.max_asymmetry();
    if asym > HERMITIAN_TOL {
        return Err(Error::InvalidArgument(format!(
            "matrix is not Hermitian (max |M - M^H| = {asym:e})"
        )));
    }
    let mut out = vec![0.0; packed_len(m.dim, include_diagonal)];
    pack_lower_into(m.dim, include_diagonal, |i, j| m.get(i, j), &mut out);
    Ok(out)
}
