//! Fully-connected pairwise CRF over a patch grid.
//!
//! Potentials: unary cost `psi_u(y_i) = -logit_i[y_i]`, pairwise cost
//! `I(y_i = y_j) * w_ij * (1 - cos(x_i, x_j))`. [`exact`] enumerates the
//! Gibbs distribution outright (small grids only) and serves as the oracle
//! for [`mean_field`], the unrolled differentiable inference that production
//! paths use.

pub mod exact;
pub mod mean_field;


use serde::{Deserialize, Serialize};

use crate::error::{NcrfError, Result};

/// Binary labels: 0 = normal, 1 = tumor.
pub const LABELS: usize = 2;

/// Exact enumeration walks 2^N configurations; refuse beyond this.
pub const MAX_EXACT_SITES: usize = 16;

/// Marginals are clamped to this floor before logarithms.
pub const MARGINAL_FLOOR: f64 = 1e-12;

/// Which label pairs the pairwise cost charges.
///
/// `Equal` is the model's convention: equal labels on dissimilar patches pay
/// the coupling cost. `NotEqual` is the more common Potts-style alternative,
/// kept behind this switch and off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorConvention {
    #[default]
    Equal,
    NotEqual,
}

impl IndicatorConvention {
    #[inline]
    pub fn active(self, yi: usize, yj: usize) -> bool {
        match self {
            IndicatorConvention::Equal => yi == yj,
            IndicatorConvention::NotEqual => yi != yj,
        }
    }
}

/// Square patch grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    side: usize,
}

impl GridSpec {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 {
            return Err(NcrfError::Contract("grid side must be >= 1".into()));
        }
        Ok(GridSpec { side })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of patches.
    #[inline]
    pub fn sites(&self) -> usize {
        self.side * self.side
    }

    #[inline]
    pub fn labels(&self) -> usize {
        LABELS
    }

    /// Flat index of the center patch; the side must be odd.
    pub fn center(&self) -> Result<usize> {
        if self.side % 2 == 0 {
            return Err(NcrfError::Contract(format!(
                "grid side {} has no center patch",
                self.side
            )));
        }
        Ok(self.sites() / 2)
    }
}

/// Number of unordered site pairs.
#[inline]
pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Index of the unordered pair {i, j} in upper-triangle order.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    lo * (2 * n - lo - 1) / 2 + (hi - lo - 1)
}

/// Per-site label costs `psi_u(y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryPotentials {
    psi: Vec<[f64; LABELS]>,
}

impl UnaryPotentials {
    pub fn new(psi: Vec<[f64; LABELS]>) -> Self {
        UnaryPotentials { psi }
    }

    /// `psi_u(y_i) = -logit_i[y_i]`.
    pub fn from_logits(logits: &[[f64; LABELS]]) -> Self {
        UnaryPotentials {
            psi: logits.iter().map(|row| [-row[0], -row[1]]).collect(),
        }
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.psi.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64; LABELS] {
        &self.psi[i]
    }

    pub fn rows(&self) -> &[[f64; LABELS]] {
        &self.psi
    }
}

/// Symmetric pairwise distances `d_ij` with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricDistances {
    n: usize,
    data: Vec<f64>,
}

impl SymmetricDistances {
    pub fn zeros(n: usize) -> Self {
        SymmetricDistances {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Build from upper-triangle values in `pair_index` order.
    pub fn from_pairs(n: usize, pairs: &[f64]) -> Result<Self> {
        if pairs.len() != pair_count(n) {
            return Err(NcrfError::Contract(format!(
                "expected {} pair distances for {} sites, got {}",
                pair_count(n),
                n,
                pairs.len()
            )));
        }
        let mut d = SymmetricDistances::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                d.set(i, j, pairs[pair_index(n, i, j)]);
            }
        }
        Ok(d)
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i != j);
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Per-site label distributions; each row sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    q: Vec<[f64; LABELS]>,
}

impl Marginals {
    pub fn new(q: Vec<[f64; LABELS]>) -> Self {
        Marginals { q }
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.q.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64; LABELS] {
        &self.q[i]
    }

    pub fn rows(&self) -> &[[f64; LABELS]] {
        &self.q
    }

    pub fn argmax(&self, i: usize) -> usize {
        usize::from(self.q[i][1] > self.q[i][0])
    }

    /// Largest deviation of any row sum from 1 plus any out-of-range mass.
    pub fn row_sum_error(&self) -> f64 {
        self.q
            .iter()
            .map(|r| {
                let sum_err = (r[0] + r[1] - 1.0).abs();
                let range_err = r
                    .iter()
                    .map(|&v| (-v).max(v - 1.0).max(0.0))
                    .fold(0.0, f64::max);
                sum_err.max(range_err)
            })
            .fold(0.0, f64::max)
    }

    pub fn linf_distance(&self, other: &Marginals) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Row-wise softmax of logits; the baseline (no-CRF) predictor.
pub fn softmax2(logits: &[f64; LABELS]) -> [f64; LABELS] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}
