use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::matrix::Matrix;

/// Square banded matrix: nonzeros confined to `band` diagonals on each side
/// of the principal diagonal. Only the band entries are stored.
///
/// Diagonal at offset `k = col − row` (k ∈ [−band, band]) has `n − |k|`
/// entries; entry `i` of diagonal `k` sits at `(i + max(0, −k), i + max(0, k))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandedMatrix {
    n: usize,
    band: usize,
    /// diagonals[k + band], each of length n − |k|.
    diagonals: Vec<Vec<f64>>,
}

/// Number of stored entries: n·(2b+1) − b·(b+1).
pub fn banded_param_count(n: usize, band: usize) -> Result<usize> {
    if band >= n {
        return Err(Error::Validation(format!(
            "band {band} must be < dimension {n}"
        )));
    }
    Ok(n * (2 * band + 1) - band * (band + 1))
}

impl BandedMatrix {
    pub fn zeros(n: usize, band: usize) -> Result<Self> {
        banded_param_count(n, band)?;
        let diagonals = (0..=2 * band)
            .map(|idx| {
                let k = idx as isize - band as isize;
                vec![0.0; n - k.unsigned_abs()]
            })
            .collect();
        Ok(BandedMatrix { n, band, diagonals })
    }

    pub fn from_diagonals(n: usize, band: usize, diagonals: Vec<Vec<f64>>) -> Result<Self> {
        banded_param_count(n, band)?;
        if diagonals.len() != 2 * band + 1 {
            return Err(Error::Shape {
                context: "BandedMatrix::from_diagonals",
                expected: 2 * band + 1,
                got: diagonals.len(),
            });
        }
        for (idx, d) in diagonals.iter().enumerate() {
            let k = idx as isize - band as isize;
            if d.len() != n - k.unsigned_abs() {
                return Err(Error::Shape {
                    context: "BandedMatrix diagonal length",
                    expected: n - k.unsigned_abs(),
                    got: d.len(),
                });
            }
        }
        Ok(BandedMatrix { n, band, diagonals })
    }

    pub fn glorot(n: usize, band: usize, rng: &mut Rng) -> Result<Self> {
        let mut m = BandedMatrix::zeros(n, band)?;
        let s = (6.0 / (2 * n) as f64).sqrt();
        for d in &mut m.diagonals {
            for v in d {
                *v = rng.uniform_in(-s, s);
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn param_count(&self) -> usize {
        self.diagonals.iter().map(Vec::len).sum()
    }

    /// Logical entry (r, c); exactly zero outside the band.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let k = c as isize - r as isize;
        if k.unsigned_abs() > self.band {
            return 0.0;
        }
        self.diagonals[(k + self.band as isize) as usize][r.min(c)]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        let k = c as isize - r as isize;
        debug_assert!(k.unsigned_abs() <= self.band);
        self.diagonals[(k + self.band as isize) as usize][r.min(c)] = v;
    }

    /// y = M x, visiting columns left to right within each row so the result
    /// matches `densify().apply(x)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Shape {
                context: "banded_apply",
                expected: self.n,
                got: x.len(),
            });
        }
        let mut y = Vec::with_capacity(self.n);
        for r in 0..self.n {
            let lo = r.saturating_sub(self.band);
            let hi = (r + self.band).min(self.n - 1);
            let mut acc = 0.0;
            for c in lo..=hi {
                acc += self.get(r, c) * x[c];
            }
            y.push(acc);
        }
        Ok(y)
    }

    /// y = Mᵀ x.
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Shape {
                context: "banded_apply_transpose",
                expected: self.n,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let lo = r.saturating_sub(self.band);
            let hi = (r + self.band).min(self.n - 1);
            let xr = x[r];
            for c in lo..=hi {
                y[c] += self.get(r, c) * xr;
            }
        }
        Ok(y)
    }

    /// self += scale · band-mask(g ⊗ x). The off-band part of the outer
    /// product is discarded (those entries are structurally zero).
    pub fn add_scaled_outer(&mut self, g: &[f64], x: &[f64], scale: f64) {
        debug_assert_eq!(g.len(), self.n);
        debug_assert_eq!(x.len(), self.n);
        for r in 0..self.n {
            let lo = r.saturating_sub(self.band);
            let hi = (r + self.band).min(self.n - 1);
            for c in lo..=hi {
                let v = self.get(r, c) + scale * g[r] * x[c];
                self.set(r, c, v);
            }
        }
    }

    /// Dense matrix with zeros filled in outside the band.
    pub fn densify(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for c in 0..self.n {
                m.set(r, c, self.get(r, c));
            }
        }
        m
    }

    /// Stored entries in flat order: diagonals from offset −band to +band,
    /// each diagonal in position order. This is the layout used for
    /// gradients and checkpoints.
    pub fn flat(&self) -> Vec<f64> {
        self.diagonals.iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                context: "BandedMatrix::set_flat",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for d in &mut self.diagonals {
            for v in d {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }
}
