//! Closed-form inverses of the per-cluster covariance blocks.
//!
//! With `K` participants in each period, the inverse of an exchangeable or
//! nested-exchangeable block has three distinct entries: `d` on the diagonal,
//! `f` between two participants of the same period and `g` between periods.
//! Aggregating a period block against vectors of ones gives `a = K(d + (K-1)f)`
//! and the cross-period term `b = K² g`.

use std::collections::HashMap;

use super::{CorrelationStructure, VarianceComponents, WeightingScheme};
use crate::linalg::SymMatrix;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTerms<T> {
    pub d: T,
    pub f: T,
    pub g: T,
    pub a: T,
    pub b: T,
}

impl<T: Scalar> BlockTerms<T> {
    fn weighted(self, k: T, weighting: WeightingScheme) -> Self {
        match weighting {
            WeightingScheme::Unweighted => self,
            WeightingScheme::InverseClusterPeriodSize => Self {
                d: self.d / k,
                f: self.f / k,
                g: self.g / k,
                a: self.a / k,
                b: self.b / k,
            },
        }
    }
}

fn check_size(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::invalid("cell size must be at least 1"))
    } else {
        Ok(())
    }
}

/// Inverse-block terms of the exchangeable model; `tau_gamma2` is ignored.
pub fn eme_block_terms<T: Scalar>(
    k: usize,
    vc: &VarianceComponents<T>,
    weighting: WeightingScheme,
) -> Result<BlockTerms<T>> {
    check_size(k)?;
    let vc = vc.without_period_effect();
    vc.check_nondegenerate()?;
    let kk = T::from_count(k);
    let one = T::one();
    let two = T::lit(2.0);
    let (s, t) = (vc.sigma_w2, vc.tau_alpha2);
    let den = s * (s + two * kk * t);
    let d = (s + (two * kk - one) * t) / den;
    let f = -t / den;
    let terms = BlockTerms { d, f, g: f, a: kk * (d + (kk - one) * f), b: kk * kk * f };
    Ok(terms.weighted(kk, weighting))
}

/// Inverse-block terms of the nested-exchangeable model.
pub fn neme_block_terms<T: Scalar>(
    k: usize,
    vc: &VarianceComponents<T>,
    weighting: WeightingScheme,
) -> Result<BlockTerms<T>> {
    check_size(k)?;
    vc.check_nondegenerate()?;
    let kk = T::from_count(k);
    let one = T::one();
    let (s, ta, tg) = (vc.sigma_w2, vc.tau_alpha2, vc.tau_gamma2);
    let c = ta + tg;
    let q = s + kk * c;
    let det = q * q - kk * kk * ta * ta;
    if !(det > T::zero()) {
        return Err(Error::Degenerate(format!("period block determinant {det:e} is not positive")));
    }
    // Effective within-period intercept variance once the other period is
    // conditioned out.
    let e = c - kk * ta * ta / q;
    let den = s * (s + kk * e);
    let d = (s + (kk - one) * e) / den;
    let f = -e / den;
    let g = -ta / det;
    let terms = BlockTerms { d, f, g, a: kk * q / det, b: kk * kk * g };
    Ok(terms.weighted(kk, weighting))
}

/// Dense `(K0+K1) x (K0+K1)` covariance block, period-0 participants first.
pub fn dense_block<T: Scalar>(
    structure: CorrelationStructure,
    k0: usize,
    k1: usize,
    vc: &VarianceComponents<T>,
) -> Result<SymMatrix<T>> {
    check_size(k0)?;
    check_size(k1)?;
    vc.validate()?;
    let n = k0 + k1;
    let (ta, tg) = match structure {
        CorrelationStructure::Independence => (T::zero(), T::zero()),
        CorrelationStructure::Exchangeable => (vc.tau_alpha2, T::zero()),
        CorrelationStructure::NestedExchangeable => (vc.tau_alpha2, vc.tau_gamma2),
    };
    let period = |i: usize| usize::from(i >= k0);
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut v = ta;
            if period(i) == period(j) {
                v = v + tg;
            }
            if i == j {
                v = v + vc.sigma_w2;
            }
            m.set(i, j, v);
        }
    }
    Ok(m)
}

/// Log-determinant of the covariance block with `K` participants per period.
pub fn block_logdet<T: Scalar>(
    structure: CorrelationStructure,
    k: usize,
    vc: &VarianceComponents<T>,
) -> Result<T> {
    check_size(k)?;
    vc.check_nondegenerate()?;
    let kk = T::from_count(k);
    let two = T::lit(2.0);
    let s = vc.sigma_w2;
    let ls = s.ln();
    Ok(match structure {
        CorrelationStructure::Independence => two * kk * ls,
        CorrelationStructure::Exchangeable => {
            (two * kk - T::one()) * ls + (s + two * kk * vc.tau_alpha2).ln()
        }
        CorrelationStructure::NestedExchangeable => {
            let q = s + kk * (vc.tau_alpha2 + vc.tau_gamma2);
            let r = kk * vc.tau_alpha2;
            (two * kk - two) * ls + (q - r).ln() + (q + r).ln()
        }
    })
}

/// The inverse covariance block of one cluster projected on its two cell
/// means.
///
/// For a cluster with cell means `ȳ` and within-cell sums of squares `W`,
/// `Z'V⁻¹Z = X' C X`, `Z'V⁻¹Y = X' C ȳ` and `Y'V⁻¹Y = (W0 + W1)/σ² + ȳ' C ȳ`,
/// where `C = [[c00, c01], [c01, c11]]` and `X` holds the two cell design rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBlock<T> {
    pub c00: T,
    pub c01: T,
    pub c11: T,
    pub inv_sigma2: T,
    pub logdet: T,
}

impl<T: Scalar> CellBlock<T> {
    pub fn quad(&self, y0: T, y1: T) -> T {
        self.c00 * y0 * y0 + T::lit(2.0) * self.c01 * y0 * y1 + self.c11 * y1 * y1
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            c00: self.c00 * c,
            c01: self.c01 * c,
            c11: self.c11 * c,
            inv_sigma2: self.inv_sigma2 * c,
            logdet: self.logdet,
        }
    }
}

/// Cell-level inverse block for sizes `(k0, k1)`.
///
/// Equal sizes use the closed forms; unequal sizes use the Woodbury identity
/// on the two period random effects, which is exact for any sizes.
pub fn cell_block<T: Scalar>(
    structure: CorrelationStructure,
    k0: usize,
    k1: usize,
    vc: &VarianceComponents<T>,
) -> Result<CellBlock<T>> {
    check_size(k0)?;
    check_size(k1)?;
    vc.check_nondegenerate()?;
    let s = vc.sigma_w2;
    let (n0, n1) = (T::from_count(k0), T::from_count(k1));
    if structure == CorrelationStructure::Independence {
        return Ok(CellBlock {
            c00: n0 / s,
            c01: T::zero(),
            c11: n1 / s,
            inv_sigma2: s.recip(),
            logdet: (n0 + n1) * s.ln(),
        });
    }
    if k0 == k1 {
        let terms = match structure {
            CorrelationStructure::Exchangeable => eme_block_terms(k0, vc, WeightingScheme::Unweighted)?,
            _ => neme_block_terms(k0, vc, WeightingScheme::Unweighted)?,
        };
        return Ok(CellBlock {
            c00: terms.a,
            c01: terms.b,
            c11: terms.a,
            inv_sigma2: s.recip(),
            logdet: block_logdet(structure, k0, vc)?,
        });
    }
    let ta = vc.tau_alpha2;
    let tg = if structure == CorrelationStructure::NestedExchangeable {
        vc.tau_gamma2
    } else {
        T::zero()
    };
    // G = covariance of the period random effects; M = σ²I + N G.
    let (g00, g01) = (ta + tg, ta);
    let m00 = s + n0 * g00;
    let m01 = n0 * g01;
    let m10 = n1 * g01;
    let m11 = s + n1 * g00;
    let det_m = m00 * m11 - m01 * m10;
    if !(det_m > T::zero()) {
        return Err(Error::Degenerate(format!("cell block determinant {det_m:e} is not positive")));
    }
    // H = G M⁻¹ (symmetric), C = (N - N H N) / σ².
    let (i00, i01, i10, i11) = (m11 / det_m, -m01 / det_m, -m10 / det_m, m00 / det_m);
    let h00 = g00 * i00 + g01 * i10;
    let h01 = g00 * i01 + g01 * i11;
    let h11 = g01 * i01 + g00 * i11;
    let two = T::lit(2.0);
    Ok(CellBlock {
        c00: (n0 - n0 * h00 * n0) / s,
        c01: -(n0 * h01 * n1) / s,
        c11: (n1 - n1 * h11 * n1) / s,
        inv_sigma2: s.recip(),
        logdet: (n0 + n1 - two) * s.ln() + det_m.ln(),
    })
}

/// Memo of cell blocks by `(k0, k1)` for one structure and one set of
/// variance components. Owned by a single evaluation, so no locking.
#[derive(Debug)]
pub struct BlockCache<T> {
    structure: CorrelationStructure,
    vc: VarianceComponents<T>,
    blocks: HashMap<(usize, usize), CellBlock<T>>,
}

impl<T: Scalar> BlockCache<T> {
    pub fn new(structure: CorrelationStructure, vc: VarianceComponents<T>) -> Self {
        Self { structure, vc, blocks: HashMap::new() }
    }

    pub fn get(&mut self, k0: usize, k1: usize) -> Result<CellBlock<T>> {
        if let Some(b) = self.blocks.get(&(k0, k1)) {
            return Ok(*b);
        }
        let b = cell_block(self.structure, k0, k1, &self.vc)?;
        self.blocks.insert((k0, k1), b);
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Cholesky;

    fn vc(s: f64, a: f64, g: f64) -> VarianceComponents<f64> {
        VarianceComponents::new(s, a, g).unwrap()
    }

    #[test]
    fn identity_case() {
        let t = eme_block_terms(1, &vc(1.0, 0.0, 0.0), WeightingScheme::Unweighted).unwrap();
        assert_eq!((t.d, t.f, t.a, t.b), (1.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn eme_a_matches_icc_form() {
        let v = vc(1.0, 1.0 / 19.0, 0.0);
        let rho = v.rho();
        for k in 1..30 {
            let t = eme_block_terms(k, &v, WeightingScheme::Unweighted).unwrap();
            let kk = k as f64;
            let expect = kk * (1.0 + (kk - 1.0) * rho) / (1.0 + (2.0 * kk - 1.0) * rho);
            assert!((t.a - expect).abs() < 1e-12 * expect);
            assert!(t.b <= 0.0);
            let w = eme_block_terms(k, &v, WeightingScheme::InverseClusterPeriodSize).unwrap();
            assert!((w.a / kk - t.a / (kk * kk)).abs() < 1e-15);
        }
    }

    #[test]
    fn neme_k1_direct() {
        let t = neme_block_terms(1, &vc(1.0, 0.04, 0.01), WeightingScheme::Unweighted).unwrap();
        let expect = 1.05 / (1.05f64.powi(2) - 0.04f64.powi(2));
        assert!((t.a - expect).abs() < 1e-15);
    }

    #[test]
    fn neme_without_interaction_is_eme() {
        let v = vc(0.7, 0.3, 0.0);
        for k in 1..10 {
            let e = eme_block_terms(k, &v, WeightingScheme::Unweighted).unwrap();
            let n = neme_block_terms(k, &v, WeightingScheme::Unweighted).unwrap();
            for (x, y) in [(e.d, n.d), (e.f, n.f), (e.g, n.g), (e.a, n.a), (e.b, n.b)] {
                assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn logdet_small_cases() {
        let v = vc(1.0, 0.5, 0.2);
        assert_eq!(block_logdet(CorrelationStructure::Independence, 2, &vc(1.0, 0.0, 0.0)).unwrap(), 0.0);
        let e = block_logdet(CorrelationStructure::Exchangeable, 1, &v).unwrap();
        assert!((e - (1.0f64 * 2.0).ln()).abs() < 1e-14);
        for k in 1..6 {
            let dense = dense_block(CorrelationStructure::NestedExchangeable, k, k, &v).unwrap();
            let ld = Cholesky::new(&dense).unwrap().logdet();
            let cf = block_logdet(CorrelationStructure::NestedExchangeable, k, &v).unwrap();
            assert!((ld - cf).abs() < 1e-10);
        }
    }

    #[test]
    fn cell_block_unequal_matches_dense() {
        let v = vc(0.8, 0.3, 0.15);
        for structure in [
            CorrelationStructure::Independence,
            CorrelationStructure::Exchangeable,
            CorrelationStructure::NestedExchangeable,
        ] {
            for (k0, k1) in [(1, 3), (4, 2), (3, 3), (5, 1)] {
                let cb = cell_block(structure, k0, k1, &v).unwrap();
                let dense = dense_block(structure, k0, k1, &v).unwrap();
                let ch = Cholesky::new(&dense).unwrap();
                let inv = ch.inverse();
                let sum = |r: std::ops::Range<usize>, c: std::ops::Range<usize>| {
                    let mut s = 0.0;
                    for i in r.clone() {
                        for j in c.clone() {
                            s += inv.get(i, j);
                        }
                    }
                    s
                };
                let n = k0 + k1;
                assert!((cb.c00 - sum(0..k0, 0..k0)).abs() < 1e-12);
                assert!((cb.c01 - sum(0..k0, k0..n)).abs() < 1e-12);
                assert!((cb.c11 - sum(k0..n, k0..n)).abs() < 1e-12);
                assert!((cb.logdet - ch.logdet()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cache_returns_same_block() {
        let mut cache = BlockCache::new(CorrelationStructure::Exchangeable, vc(1.0, 0.1, 0.0));
        let a = cache.get(3, 3).unwrap();
        let b = cache.get(3, 3).unwrap();
        assert_eq!(a, b);
    }
}
