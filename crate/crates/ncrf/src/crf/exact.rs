//! Brute-force Gibbs enumeration: the oracle that mean-field is checked
//! against. Everything here is plain f64 and never touches the tape.

use crate::error::{NcrfError, Result};
use crate::crf::{
    IndicatorConvention, Marginals, SymmetricDistances, UnaryPotentials, LABELS, MAX_EXACT_SITES,
};

/// Energy of one label configuration:
/// `E(y) = sum_i psi_u(y_i) + sum_{i<j} indicator(y_i, y_j) * d_ij`.
pub fn energy(
    labels: &[usize],
    psi: &UnaryPotentials,
    d: &SymmetricDistances,
    convention: IndicatorConvention,
) -> f64 {
    let n = labels.len();
    debug_assert_eq!(n, psi.sites());
    debug_assert_eq!(n, d.sites());
    let mut e = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        e += psi.row(i)[y];
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if convention.active(labels[i], labels[j]) {
                e += d.get(i, j);
            }
        }
    }
    e
}

fn config_labels(mask: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| (mask >> i) & 1).collect()
}

fn check_sites(psi: &UnaryPotentials, d: &SymmetricDistances) -> Result<usize> {
    let n = psi.sites();
    if n != d.sites() {
        return Err(NcrfError::Contract(format!(
            "unary sites {} != distance sites {}",
            n,
            d.sites()
        )));
    }
    if n > MAX_EXACT_SITES {
        return Err(NcrfError::TooManySites {
            n,
            limit: MAX_EXACT_SITES,
        });
    }
    Ok(n)
}

/// Exact marginals and log partition function of the Gibbs distribution
/// `P(y) = exp(-E(y)) / Z`, by enumerating all 2^N configurations in the
/// log domain.
pub fn exact_marginals(
    psi: &UnaryPotentials,
    d: &SymmetricDistances,
    convention: IndicatorConvention,
) -> Result<(Marginals, f64)> {
    let n = check_sites(psi, d)?;
    let configs = 1usize << n;
    let mut neg_energy = Vec::with_capacity(configs);
    let mut max_ne = f64::NEG_INFINITY;
    for mask in 0..configs {
        let ne = -energy(&config_labels(mask, n), psi, d, convention);
        max_ne = max_ne.max(ne);
        neg_energy.push(ne);
    }
    let mut z = 0.0;
    let mut site_mass = vec![[0.0f64; LABELS]; n];
    for (mask, &ne) in neg_energy.iter().enumerate() {
        let w = (ne - max_ne).exp();
        z += w;
        for (i, m) in site_mass.iter_mut().enumerate() {
            m[(mask >> i) & 1] += w;
        }
    }
    let log_z = max_ne + z.ln();
    let q = site_mass
        .into_iter()
        .map(|m| [m[0] / z, m[1] / z])
        .collect();
    Ok((Marginals::new(q), log_z))
}

/// `KL(prod_i Q_i || P)` by enumeration:
/// `sum_y (prod_i Q_i(y_i)) * [sum_i ln Q_i(y_i) + E(y)] + ln Z`.
///
/// Non-negative up to rounding; zero-probability configurations contribute
/// nothing.
pub fn kl_to_exact(
    q: &Marginals,
    psi: &UnaryPotentials,
    d: &SymmetricDistances,
    convention: IndicatorConvention,
) -> Result<f64> {
    let n = check_sites(psi, d)?;
    if q.sites() != n {
        return Err(NcrfError::Contract(format!(
            "marginal sites {} != unary sites {}",
            q.sites(),
            n
        )));
    }
    let (_, log_z) = exact_marginals(psi, d, convention)?;
    let configs = 1usize << n;
    let mut kl = 0.0;
    for mask in 0..configs {
        let labels = config_labels(mask, n);
        let mut weight = 1.0;
        let mut log_q = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let p = q.row(i)[y];
            if p == 0.0 {
                weight = 0.0;
                break;
            }
            weight *= p;
            log_q += p.ln();
        }
        if weight == 0.0 {
            continue;
        }
        kl += weight * (log_q + energy(&labels, psi, d, convention));
    }
    Ok(kl + log_z)
}
