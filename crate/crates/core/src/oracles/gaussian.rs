//! Closed-form ELBO of a Gaussian approximation against a Gaussian target.

use nalgebra::{DMatrix, DVector};

use crate::engine::Assembly;
use crate::error::{dimension, Result, VcviError};
use crate::targets::GaussianTarget;

/// `log Z − KL(N(m, S) ‖ N(μ, Σ))`.
pub fn gaussian_elbo(mean: &[f64], cov: &DMatrix<f64>, target: &GaussianTarget) -> Result<f64> {
    let d = target.mean.len();
    if mean.len() != d || cov.shape() != (d, d) {
        return Err(dimension(format!("approximation has dimension {}, target {d}", mean.len())));
    }
    let r = &target.prec_chol;
    let diff = DVector::from_iterator(d, mean.iter().zip(&target.mean).map(|(a, b)| a - b));
    let w = r.tr_mul(&diff);
    let tr = (r.transpose() * cov * r).trace();
    let ln_det_sigma = -2.0 * r.diagonal().map(f64::ln).sum();
    let ln_det_s = 2.0
        * cov
            .clone()
            .cholesky()
            .ok_or_else(|| VcviError::Numerical("approximation covariance is not positive definite".into()))?
            .l()
            .diagonal()
            .map(f64::ln)
            .sum();
    let kl = 0.5 * (tr + w.norm_squared() - d as f64 + ln_det_sigma - ln_det_s);
    Ok(target.log_evidence() - kl)
}

/// Closed-form ELBO of an exactly Gaussian assembly; other assemblies are
/// rejected.
pub fn gaussian_elbo_closed_form(assembly: &Assembly, lambda: &[f64], target: &GaussianTarget) -> Result<f64> {
    let (m, s) = assembly.gaussian_form(lambda)?;
    gaussian_elbo(&m, &s, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::elbo::tests::{correlated_target, perturbed};
    use crate::engine::elbo_mc;
    use crate::kernels::normal::LN_SQRT_2PI;
    use crate::parallel::Parallelism;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn equal_distributions_give_log_evidence() {
        let t = correlated_target(5, 1);
        let v = gaussian_elbo(&t.mean, &t.covariance(), &t).unwrap();
        assert!((v - t.log_evidence()).abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_hand_value() {
        // q = N(0, 1), h = N(0, 2) density: KL = ½(½ − 1 + ln 2)
        let t = GaussianTarget::from_covariance(vec![0.0], &DMatrix::from_element(1, 1, 2.0), -LN_SQRT_2PI - 0.5 * 2f64.ln()).unwrap();
        assert!(t.log_evidence().abs() < 1e-14);
        let v = gaussian_elbo(&[0.0], &DMatrix::identity(1, 1), &t).unwrap();
        assert!((v + 0.5 * (0.5 - 1.0 + 2f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn matches_monte_carlo_of_the_engine_estimator() {
        let t = correlated_target(6, 2);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for fam in ["GMF", "GVC-I&M1", "GVC-F2&M1(L=dense)", "G-F2"] {
            let a = Assembly::from_family(fam, &[3, 3]).unwrap();
            let lam = perturbed(&a, 0.3, &mut rng);
            let exact = gaussian_elbo_closed_form(&a, &lam, &t).unwrap();
            let (m, se) = elbo_mc(&a, &lam, &t, 1_000_000, 4, Parallelism::Rayon).unwrap();
            assert!((m - exact).abs() < 3.0 * se, "{fam}: {m} ± {se} vs {exact}");
        }
        let a = Assembly::from_family("GVC-I&M1-YJ", &[3, 3]).unwrap();
        let lam = a.init(&mut rng);
        assert!(gaussian_elbo_closed_form(&a, &lam, &t).is_err());
    }
}
