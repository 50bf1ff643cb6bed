//! Differentiable mean-field inference, unrolled on the tape.
//!
//! Site update (label-equality convention):
//! `Q_i(l) ∝ exp(-psi_u(l) - sum_{j != i} Q_j(l) * d_ij)`.
//! Sites are updated sequentially in raster order within a sweep, which makes
//! each update a coordinate-descent step on `KL(Q || P)`; the monotone-KL
//! tests against [`super::exact`] validate exactly that.

use crate::error::{NcrfError, Result};
use crate::numerics::{NodeId, Scalar, Tape};
use crate::crf::{
    pair_count, pair_index, IndicatorConvention, Marginals, SymmetricDistances, LABELS,
    MARGINAL_FLOOR,
};

/// Pairwise distances `d_ij = w_ij * (1 - cos(x_i, x_j))` as tape nodes,
/// one per unordered pair.
pub struct PairwiseDistances {
    n: usize,
    pairs: Vec<NodeId>,
}

impl PairwiseDistances {
    /// Production route: distances derived from embeddings and the trainable
    /// coupling vector (one weight per unordered pair).
    pub fn from_embeddings<F: Scalar>(
        tape: &mut Tape<F>,
        embeddings: &[NodeId],
        coupling: NodeId,
    ) -> Result<Self> {
        let n = embeddings.len();
        if tape.value(coupling).numel() != pair_count(n) {
            return Err(NcrfError::Contract(format!(
                "coupling has {} weights, expected {} for {} sites",
                tape.value(coupling).numel(),
                pair_count(n),
                n
            )));
        }
        let mut pairs = Vec::with_capacity(pair_count(n));
        for i in 0..n {
            for j in (i + 1)..n {
                let cos = tape.cosine_similarity(embeddings[i], embeddings[j])?;
                let one_minus = tape.sub_from_const(F::one(), cos)?;
                let w = tape.pick(coupling, pair_index(n, i, j))?;
                pairs.push(tape.mul(w, one_minus)?);
            }
        }
        Ok(PairwiseDistances { n, pairs })
    }

    /// Fixed distances entered as constants (tests, oracles).
    pub fn from_matrix<F: Scalar>(tape: &mut Tape<F>, d: &SymmetricDistances) -> Result<Self> {
        let n = d.sites();
        let mut pairs = Vec::with_capacity(pair_count(n));
        for i in 0..n {
            for j in (i + 1)..n {
                let t = crate::numerics::Tensor::scalar(F::from_f64(d.get(i, j)));
                pairs.push(tape.constant(t)?);
            }
        }
        Ok(PairwiseDistances { n, pairs })
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> NodeId {
        self.pairs[pair_index(self.n, i, j)]
    }

    /// Snapshot of the current distance values.
    pub fn to_matrix<F: Scalar>(&self, tape: &Tape<F>) -> SymmetricDistances {
        let mut d = SymmetricDistances::zeros(self.n);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                d.set(i, j, tape.value(self.node(i, j)).item().as_f64());
            }
        }
        d
    }
}

/// Extract marginal values from tape nodes.
pub fn marginal_values<F: Scalar>(tape: &Tape<F>, q: &[NodeId]) -> Marginals {
    Marginals::new(
        q.iter()
            .map(|&id| {
                let v = tape.value(id).data();
                [v[0].as_f64(), v[1].as_f64()]
            })
            .collect(),
    )
}

/// Unrolled mean-field inference; returns one `[2]` marginal node per site.
///
/// `iterations = 0` yields the initialization, `softmax(-psi)`, i.e. the
/// baseline per-patch classifier.
pub fn mean_field<F: Scalar>(
    tape: &mut Tape<F>,
    psi: &[NodeId],
    dists: &PairwiseDistances,
    iterations: usize,
    convention: IndicatorConvention,
) -> Result<Vec<NodeId>> {
    mean_field_observed(tape, psi, dists, iterations, convention, &mut |_| {})
}

/// [`mean_field`] with a callback invoked after initialization and after
/// every single-site update; used by the monotone-KL oracle tests.
pub fn mean_field_observed<F: Scalar>(
    tape: &mut Tape<F>,
    psi: &[NodeId],
    dists: &PairwiseDistances,
    iterations: usize,
    convention: IndicatorConvention,
    observer: &mut dyn FnMut(&Marginals),
) -> Result<Vec<NodeId>> {
    let n = psi.len();
    if n == 0 {
        return Err(NcrfError::Contract("mean_field needs at least one site".into()));
    }
    if dists.sites() != n {
        return Err(NcrfError::Contract(format!(
            "distance sites {} != unary sites {}",
            dists.sites(),
            n
        )));
    }
    for &p in psi {
        let shape = tape.value(p).shape();
        if shape != [LABELS] {
            return Err(NcrfError::shape(
                "mean_field",
                format!("unary node must be [{LABELS}], got {:?}", shape),
            ));
        }
    }

    // init: Q_i = normalize(exp(-psi)) = softmax(-psi), in log domain
    let neg_psi: Vec<NodeId> = psi.iter().map(|&p| tape.neg(p)).collect::<Result<_>>()?;
    let mut q = Vec::with_capacity(n);
    for &np in &neg_psi {
        let lq = tape.log_softmax(np)?;
        q.push(tape.exp(lq)?);
    }
    observer(&marginal_values(tape, &q));

    for _ in 0..iterations {
        for i in 0..n {
            // s_i = -psi_i - sum_{j != i} coupling_term_j
            let mut acc: Option<NodeId> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let neighbor = match convention {
                    IndicatorConvention::Equal => q[j],
                    IndicatorConvention::NotEqual => tape.sub_from_const(F::one(), q[j])?,
                };
                let term = tape.scale_by_scalar(neighbor, dists.node(i, j))?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term)?,
                });
            }
            let score = match acc {
                Some(a) => tape.sub(neg_psi[i], a)?,
                None => neg_psi[i],
            };
            let lq = tape.log_softmax(score)?;
            q[i] = tape.exp(lq)?;
            observer(&marginal_values(tape, &q));
        }
    }
    Ok(q)
}

/// Mean cross-entropy of the marginals against the labels:
/// `mean_i -ln(max(Q_i(label_i), 1e-12))`.
pub fn crf_loss<F: Scalar>(
    tape: &mut Tape<F>,
    marginals: &[NodeId],
    labels: &[usize],
) -> Result<NodeId> {
    if marginals.len() != labels.len() || marginals.is_empty() {
        return Err(NcrfError::Contract(format!(
            "{} marginal nodes vs {} labels",
            marginals.len(),
            labels.len()
        )));
    }
    let floor = F::from_f64(MARGINAL_FLOOR);
    let mut sum: Option<NodeId> = None;
    for (&m, &label) in marginals.iter().zip(labels) {
        if label >= LABELS {
            return Err(NcrfError::Contract(format!("label {label} out of range")));
        }
        let p = tape.pick(m, label)?;
        let lnp = tape.ln_floor(p, floor)?;
        sum = Some(match sum {
            None => lnp,
            Some(s) => tape.add(s, lnp)?,
        });
    }
    let total = sum.expect("non-empty");
    tape.scale_const(total, F::from_f64(-1.0 / labels.len() as f64))
}
