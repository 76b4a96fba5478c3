//! Tsallis mirror geometry on the probability simplex.
//!
//! The mirror step is realized in scaled dual coordinates `u = q^(α-1)`:
//! an additive ascent update followed by the entmax-style thresholded map
//! `q_g = [u_g - λ]_+^(1/(α-1))`, with `λ` chosen so that `Σ q_g = 1`.
//! For `α > 1` coordinates below the threshold become exactly zero; `α = 2`
//! is sparsemax and `α → 1` recovers the dense softmax / exponentiated
//! gradient update implemented by [`exponentiated_gradient_step`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|Σ q - 1|` used by [`entmax_project`] unless a caller overrides it.
pub const PROJECTION_TOL: f64 = 1e-10;

/// Hard cap on bisection iterations.
pub const MAX_BISECTION_ITERS: usize = 200;

/// Tolerance used when validating that a vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

// Below this value of α-1 the mass function is evaluated in log space.
const LOG_SPACE_BELOW: f64 = 0.05;

// Residual still accepted (after renormalization) when the iteration cap is hit.
const CAP_ACCEPT_RESIDUAL: f64 = 1e-6;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("simplex vector must be non-empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "simplex entries must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "simplex entries sum to {total}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::invalid("simplex dimension must be at least 1"));
        }
        Ok(Self(vec![1.0 / groups as f64; groups]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Shannon entropy in nats over the positive entries.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&q| q > 0.0)
            .map(|&q| q * q.ln())
            .sum::<f64>()
    }

    /// Number of strictly positive entries.
    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|&&q| q > 0.0).count()
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(value: SimplexVector) -> Self {
        value.0
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Scaled dual coordinates `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector(pub Vec<f64>);

impl DualVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Order `α > 1` of the Tsallis mirror map.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TsallisOrder(f64);

impl TsallisOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 1.0 {
            return Err(Error::invalid(format!(
                "Tsallis order must be finite and > 1, got {alpha}"
            )));
        }
        Ok(Self(alpha))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// The projection exponent `1 / (α - 1)`.
    pub fn exponent(self) -> f64 {
        1.0 / (self.0 - 1.0)
    }
}

impl TryFrom<f64> for TsallisOrder {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<TsallisOrder> for f64 {
    fn from(value: TsallisOrder) -> Self {
        value.0
    }
}

/// Output of [`entmax_project`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub q: SimplexVector,
    /// The threshold `λ`.
    pub threshold: f64,
    /// False when the iteration cap was reached and the point was renormalized.
    pub converged: bool,
    pub iterations: usize,
}

/// Primal to scaled dual map, `q_g^(α-1)` componentwise.
pub fn to_dual(q: &SimplexVector, alpha: TsallisOrder) -> Result<DualVector> {
    if q.is_empty() {
        return Err(Error::invalid("cannot map an empty vector to dual"));
    }
    let power = alpha.get() - 1.0;
    Ok(DualVector(q.0.iter().map(|&x| x.powf(power)).collect()))
}

/// Mass `Σ [u_g - λ]_+^p - 1` evaluated either directly or in log space.
struct MassFn<'a> {
    u: &'a [f64],
    p: f64,
    log_space: bool,
}

impl MassFn<'_> {
    fn residual(&self, lambda: f64) -> f64 {
        if self.log_space {
            let mut max_log = f64::NEG_INFINITY;
            for &x in self.u {
                if x > lambda {
                    max_log = max_log.max(self.p * (x - lambda).ln());
                }
            }
            if max_log == f64::NEG_INFINITY {
                return -1.0;
            }
            let sum: f64 = self
                .u
                .iter()
                .filter(|&&x| x > lambda)
                .map(|&x| (self.p * (x - lambda).ln() - max_log).exp())
                .sum();
            (max_log + sum.ln()).exp() - 1.0
        } else {
            self.u
                .iter()
                .filter(|&&x| x > lambda)
                .map(|&x| (x - lambda).powf(self.p))
                .sum::<f64>()
                - 1.0
        }
    }

    /// Newton refinement of `λ` on the support fixed by the current iterate.
    /// Steps are only taken while they shrink the residual and stay inside the bracket.
    fn polish(&self, mut lambda: f64, lo: f64, hi: f64) -> f64 {
        let mut residual = self.residual(lambda).abs();
        for _ in 0..16 {
            if residual == 0.0 {
                break;
            }
            let (f, df) = self.u.iter().filter(|&&x| x > lambda).fold(
                (-1.0, 0.0),
                |(f, df), &x| {
                    let gap = x - lambda;
                    (f + gap.powf(self.p), df - self.p * gap.powf(self.p - 1.0))
                },
            );
            if df == 0.0 || !df.is_finite() || !f.is_finite() {
                break;
            }
            let next = lambda - f / df;
            if !(next > lo && next < hi) {
                break;
            }
            let next_residual = self.residual(next).abs();
            if next_residual >= residual {
                break;
            }
            lambda = next;
            residual = next_residual;
        }
        lambda
    }
}

/// Entmax-style dual-to-primal projection: finds `λ` with
/// `Σ [u_g - λ]_+^(1/(α-1)) = 1` by bisection on `[min(u) - 1, max(u)]`,
/// then polishes `λ` by Newton steps on the identified support.
pub fn entmax_project(u: &DualVector, alpha: TsallisOrder, tol: f64) -> Result<Projection> {
    if u.is_empty() {
        return Err(Error::invalid("cannot project an empty dual vector"));
    }
    if u.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("dual vector contains non-finite values"));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    if u.len() == 1 {
        return Ok(Projection {
            q: SimplexVector(vec![1.0]),
            threshold: u.0[0] - 1.0,
            converged: true,
            iterations: 0,
        });
    }

    let mass = MassFn {
        u: &u.0,
        p: alpha.exponent(),
        log_space: alpha.get() - 1.0 < LOG_SPACE_BELOW,
    };
    let min_u = u.0.iter().copied().fold(f64::INFINITY, f64::min);
    let max_u = u.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (min_u - 1.0, max_u);

    let mut lambda = 0.5 * (lo + hi);
    let mut iterations = 0;
    while iterations < MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        lambda = mid;
        let r = mass.residual(lambda);
        if r.abs() <= tol {
            break;
        }
        if r > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    let lambda = mass.polish(lambda, lo, hi);

    let p = mass.p;
    let mut q: Vec<f64> =
        u.0.iter()
            .map(|&x| if x > lambda { (x - lambda).powf(p) } else { 0.0 })
            .collect();
    let total: f64 = q.iter().sum();
    let residual = total - 1.0;
    let converged = residual.abs() <= tol;
    if !converged && (residual.abs() > CAP_ACCEPT_RESIDUAL || !(total > 0.0)) {
        return Err(Error::NumericalFailure {
            message: format!("entmax bisection did not converge in {iterations} iterations"),
            residual,
        });
    }
    q.iter_mut().for_each(|x| *x /= total);

    Ok(Projection {
        q: SimplexVector(q),
        threshold: lambda,
        converged,
        iterations,
    })
}

/// One Tsallis mirror-ascent step: `project(q^(α-1) + (α-1)·η·ascent)`.
pub fn mirror_ascent_step(
    q: &SimplexVector,
    ascent: &[f64],
    alpha: TsallisOrder,
    eta: f64,
) -> Result<SimplexVector> {
    if ascent.len() != q.len() {
        return Err(Error::invalid(format!(
            "ascent has length {}, simplex has {}",
            ascent.len(),
            q.len()
        )));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("step size must be >= 0, got {eta}")));
    }
    if ascent.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("ascent signal contains non-finite values"));
    }
    if eta == 0.0 {
        return Ok(q.clone());
    }
    let scale = (alpha.get() - 1.0) * eta;
    let mut dual = to_dual(q, alpha)?;
    dual.0
        .iter_mut()
        .zip(ascent)
        .for_each(|(u, a)| *u += scale * a);
    Ok(entmax_project(&dual, alpha, PROJECTION_TOL)?.q)
}

/// Dense exponentiated-gradient update `q'_g ∝ q_g·exp(η·loss_g)`.
pub fn exponentiated_gradient_step(
    q: &SimplexVector,
    losses: &[f64],
    eta: f64,
) -> Result<SimplexVector> {
    if losses.len() != q.len() {
        return Err(Error::invalid(format!(
            "losses have length {}, simplex has {}",
            losses.len(),
            q.len()
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) || !eta.is_finite() {
        return Err(Error::invalid("losses and step size must be finite"));
    }
    let shift = losses
        .iter()
        .map(|l| eta * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut next: Vec<f64> = q
        .0
        .iter()
        .zip(losses)
        .map(|(&w, &l)| w * (eta * l - shift).exp())
        .collect();
    let total: f64 = next.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NumericalFailure {
            message: "exponentiated-gradient normalizer vanished".into(),
            residual: total,
        });
    }
    next.iter_mut().for_each(|w| *w /= total);
    Ok(SimplexVector(next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn order(a: f64) -> TsallisOrder {
        TsallisOrder::new(a).unwrap()
    }

    #[test]
    fn order_must_exceed_one() {
        assert!(TsallisOrder::new(1.0).is_err());
        assert!(TsallisOrder::new(0.5).is_err());
        assert!(TsallisOrder::new(f64::NAN).is_err());
        assert!(TsallisOrder::new(1.0001).is_ok());
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexVector::new(vec![]).is_err());
        assert!(SimplexVector::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexVector::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexVector::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn to_dual_examples() {
        let third = SimplexVector::uniform(3).unwrap();
        let d = to_dual(&third, order(2.0)).unwrap();
        for x in d.as_slice() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let one = SimplexVector::new(vec![1.0]).unwrap();
        assert_eq!(to_dual(&one, order(1.3)).unwrap().0, vec![1.0]);

        let q = SimplexVector::new(vec![0.6, 0.4]).unwrap();
        let d = to_dual(&q, order(1.5)).unwrap();
        assert_abs_diff_eq!(d.0[0], 0.7745966692414834, epsilon = 1e-12);
        assert_abs_diff_eq!(d.0[1], 0.6324555320336759, epsilon = 1e-12);
    }

    #[test]
    fn sparsemax_example() {
        let u = DualVector(vec![0.8, 0.6, 0.1]);
        let p = entmax_project(&u, order(2.0), PROJECTION_TOL).unwrap();
        assert_abs_diff_eq!(p.q[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p.q[1], 0.4, epsilon = 1e-12);
        assert_eq!(p.q[2], 0.0);
        assert_abs_diff_eq!(p.threshold, 0.2, epsilon = 1e-12);
        assert!(p.converged);
    }

    #[test]
    fn constant_dual_projects_to_uniform() {
        for c in [-3.0, 0.0, 0.25, 7.5] {
            let u = DualVector(vec![c; 3]);
            let p = entmax_project(&u, order(2.0), PROJECTION_TOL).unwrap();
            for x in p.q.as_slice() {
                assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn single_group_projection() {
        let p = entmax_project(&DualVector(vec![0.3]), order(1.08), PROJECTION_TOL).unwrap();
        assert_eq!(p.q.as_slice(), &[1.0]);
        assert_abs_diff_eq!(p.threshold, -0.7, epsilon = 1e-15);
    }

    #[test]
    fn projection_rejects_bad_input() {
        let a = order(1.5);
        assert!(matches!(
            entmax_project(&DualVector(vec![]), a, 1e-10),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            entmax_project(&DualVector(vec![0.1, f64::NAN]), a, 1e-10),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            entmax_project(&DualVector(vec![0.1, 0.2]), a, 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn log_space_projection_near_one() {
        // α - 1 = 0.01 routes through the log-space mass function.
        let u = DualVector(vec![0.97, 0.99, 1.0, 0.95, 0.98]);
        let p = entmax_project(&u, order(1.01), PROJECTION_TOL).unwrap();
        let total: f64 = p.q.as_slice().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(p.q.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn mirror_step_example() {
        let q = SimplexVector::uniform(3).unwrap();
        let next = mirror_ascent_step(&q, &[1.5, 0.9, 0.6], order(2.0), 0.3).unwrap();
        let expected = [0.48333333333333334, 0.30333333333333334, 0.21333333333333335];
        for (a, b) in next.as_slice().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let q = SimplexVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let next = mirror_ascent_step(&q, &[3.0, -1.0, 0.5], order(1.08), 0.0).unwrap();
        assert_eq!(next, q);
    }

    #[test]
    fn mirror_step_rejects_mismatched_ascent() {
        let q = SimplexVector::uniform(3).unwrap();
        assert!(mirror_ascent_step(&q, &[1.0], order(1.5), 0.1).is_err());
        assert!(mirror_ascent_step(&q, &[1.0; 3], order(1.5), -0.1).is_err());
    }

    #[test]
    fn exponentiated_gradient_examples() {
        let q = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        let next = exponentiated_gradient_step(&q, &[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(next[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 1.0 / (e + 1.0), epsilon = 1e-15);

        let q = SimplexVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let next = exponentiated_gradient_step(&q, &[4.0, 4.0, 4.0], 0.7).unwrap();
        for (a, b) in next.as_slice().iter().zip(q.as_slice()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }

        let q = SimplexVector::new(vec![1.0, 0.0]).unwrap();
        let next = exponentiated_gradient_step(&q, &[0.0, 50.0], 2.0).unwrap();
        assert_eq!(next.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn exponentiated_gradient_survives_large_losses() {
        let q = SimplexVector::uniform(2).unwrap();
        let next = exponentiated_gradient_step(&q, &[1e4, 1e4 - 1.0], 1.0).unwrap();
        assert!(next.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn entropy_and_support() {
        let u = SimplexVector::uniform(9).unwrap();
        assert_abs_diff_eq!(u.entropy(), 9f64.ln(), epsilon = 1e-12);
        assert_eq!(u.support_size(), 9);
        let mut point = vec![0.0; 9];
        point[0] = 1.0;
        let point = SimplexVector::new(point).unwrap();
        assert_eq!(point.entropy(), 0.0);
        assert_eq!(point.support_size(), 1);
    }
}
