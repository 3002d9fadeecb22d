//! Evaluation of `Σ_q exp(-c_q d²)` for a fixed list of coefficients.

/// Coefficients `c_q = 1/(2σ_q²)`. When every `c_q` is an integer multiple
/// (a power of two, up to 1024) of the smallest one, one `exp` plus
/// repeated squaring serves all bandwidths.
#[derive(Clone, Debug)]
pub(crate) struct RbfMixture {
    coefs: Vec<f64>,
    base: f64,
    /// Squarings from the base term to each `c_q`, ascending.
    chain: Option<Vec<(u32, usize)>>,
}

impl RbfMixture {
    pub fn new(sigmas: &[f64]) -> Self {
        let coefs: Vec<f64> = sigmas.iter().map(|s| 1.0 / (2.0 * s * s)).collect();
        let base = coefs.iter().cloned().fold(f64::INFINITY, f64::min);
        let chain = (!coefs.is_empty())
            .then(|| {
                let mut steps: Vec<(u32, usize)> = Vec::with_capacity(coefs.len());
                for (q, c) in coefs.iter().enumerate() {
                    let r = c / base;
                    let k = r.log2().round();
                    if !(0.0..=10.0).contains(&k) || (r - k.exp2()).abs() > 1e-12 * r {
                        return None;
                    }
                    steps.push((k as u32, q));
                }
                steps.sort_unstable();
                Some(steps)
            })
            .flatten();
        Self { coefs, base, chain }
    }

    /// `(Σ_q k_q, Σ_q c_q k_q)` at squared distance `d2`.
    #[inline]
    pub fn eval(&self, d2: f64) -> (f64, f64) {
        match &self.chain {
            Some(steps) => {
                let mut u = (-d2 * self.base).exp();
                let mut at = 0;
                let (mut k, mut ck) = (0.0, 0.0);
                for &(s, q) in steps {
                    while at < s {
                        u *= u;
                        at += 1;
                    }
                    k += u;
                    ck += self.coefs[q] * u;
                }
                (k, ck)
            }
            None => self.coefs.iter().fold((0.0, 0.0), |(k, ck), c| {
                let e = (-d2 * c).exp();
                (k + e, ck + c * e)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_matches_direct_exps() {
        for sigmas in [
            vec![0.25, 0.5, 1.0, 2.0, 4.0],
            vec![1.0, 3.0],
            vec![2.0, 1.0, 8.0],
        ] {
            let mix = RbfMixture::new(&sigmas);
            for d2 in [0.0, 0.01, 0.7, 3.0, 40.0] {
                let (k, ck) = mix.eval(d2);
                let direct: f64 = sigmas.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum();
                let dck: f64 = sigmas
                    .iter()
                    .map(|s| (-d2 / (2.0 * s * s)).exp() / (2.0 * s * s))
                    .sum();
                assert!(
                    (k - direct).abs() < 1e-13 * direct.max(1e-300) + 1e-300,
                    "{sigmas:?} {d2}"
                );
                assert!((ck - dck).abs() < 1e-13 * dck.max(1e-300) + 1e-300);
            }
        }
        assert!(RbfMixture::new(&[0.25, 0.5, 1.0, 2.0, 4.0]).chain.is_some());
        assert!(RbfMixture::new(&[1.0, 3.0]).chain.is_none());
    }
}
