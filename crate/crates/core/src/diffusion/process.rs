use super::{DiffusionError, NoiseSchedule};
use crate::numerics::DenseArray;

fn same_shape(a: &DenseArray, b: &DenseArray, what: &str) -> Result<(), DiffusionError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(DiffusionError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

/// Closed-form jump from clean data to step `k`:
/// `√α_k·x0 + √(1−α_k)·eps`.
pub fn forward_noise(
    x0: &DenseArray,
    k: usize,
    eps: &DenseArray,
    sched: &NoiseSchedule,
) -> Result<DenseArray, DiffusionError> {
    sched.check_step(k)?;
    same_shape(x0, eps, "forward_noise")?;
    let a = sched.alpha(k);
    let (s, n) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0.zip_map(eps, |x, e| s * x + n * e)?)
}

/// Mean of the learned reverse transition:
/// `(x_k − β_k/√(1−α_k)·eps_hat) / √α̂_k`.
pub fn mu_theta(
    x_k: &DenseArray,
    k: usize,
    eps_hat: &DenseArray,
    sched: &NoiseSchedule,
) -> Result<DenseArray, DiffusionError> {
    sched.check_step(k)?;
    same_shape(x_k, eps_hat, "mu_theta")?;
    let coef = sched.beta(k) / (1.0 - sched.alpha(k)).sqrt();
    let inv = 1.0 / sched.alpha_hat(k).sqrt();
    Ok(x_k.zip_map(eps_hat, |x, e| inv * (x - coef * e))?)
}

/// One reverse transition `mu_theta + σ(k)·z`. At `k = 1` the noise term is
/// dropped entirely.
pub fn reverse_step(
    x_k: &DenseArray,
    k: usize,
    eps_hat: &DenseArray,
    z: &DenseArray,
    sched: &NoiseSchedule,
) -> Result<DenseArray, DiffusionError> {
    let mu = mu_theta(x_k, k, eps_hat, sched)?;
    if k == 1 {
        return Ok(mu);
    }
    same_shape(&mu, z, "reverse_step")?;
    let sigma = sched.sigma(k);
    Ok(mu.zip_map(z, |m, zz| m + sigma * zz)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Standard DDPM posterior mean of x^{k−1} given x0 and x^k.
    fn posterior_mean(x0: &DenseArray, xk: &DenseArray, k: usize, s: &NoiseSchedule) -> DenseArray {
        let (a_prev, a_k, b) = (s.alpha(k - 1), s.alpha(k), s.beta(k));
        let c0 = a_prev.sqrt() * b / (1.0 - a_k);
        let ck = (1.0 - b).sqrt() * (1.0 - a_prev) / (1.0 - a_k);
        x0.zip_map(xk, |x, y| c0 * x + ck * y).unwrap()
    }

    #[test]
    fn forward_limits() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x0 = random_array(&[3, 6], &mut rng);
        let eps = random_array(&[3, 6], &mut rng);
        let zeros = DenseArray::zeros(&[3, 6]);
        let k = 7;
        let a = s.alpha(k);
        assert_eq!(forward_noise(&x0, k, &zeros, &s).unwrap(), x0.scale(a.sqrt()).unwrap());
        assert_eq!(forward_noise(&zeros, k, &eps, &s).unwrap(), eps.scale((1.0 - a).sqrt()).unwrap());
        assert!(matches!(
            forward_noise(&x0, 0, &eps, &s),
            Err(DiffusionError::StepOutOfRange { k: 0, .. })
        ));
        assert!(forward_noise(&x0, 21, &eps, &s).is_err());
    }

    #[test]
    fn forward_moments_monte_carlo() {
        let s = NoiseSchedule::standard();
        let (k, x0v) = (12, 0.7);
        let x0 = DenseArray::filled(&[1], x0v);
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let e = DenseArray::filled(&[1], StandardNormal.sample(&mut rng));
                forward_noise(&x0, k, &e, &s).unwrap().data()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (m_true, v_true) = (s.alpha(k).sqrt() * x0v, 1.0 - s.alpha(k));
        let se_mean = (v_true / n as f64).sqrt();
        let se_var = v_true * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - m_true).abs() < 3.0 * se_mean, "mean {mean} vs {m_true}");
        assert!((var - v_true).abs() < 3.0 * se_var, "var {var} vs {v_true}");
    }

    #[test]
    fn mu_theta_cases() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let xk = random_array(&[4, 3], &mut rng);
        let e = random_array(&[4, 3], &mut rng);
        let zero = DenseArray::zeros(&[4, 3]);
        for k in 1..=20 {
            let m = mu_theta(&xk, k, &zero, &s).unwrap();
            let expect = xk.scale(1.0 / (1.0 - s.beta(k)).sqrt()).unwrap();
            assert!(m.max_abs_diff(&expect) < 1e-15);

            let a = -2.5;
            let lhs = mu_theta(&xk.scale(a).unwrap(), k, &e.scale(a).unwrap(), &s).unwrap();
            let rhs = mu_theta(&xk, k, &e, &s).unwrap().scale(a).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }
    }

    #[test]
    fn oracle_reverse_step_hits_posterior_mean() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let zero = DenseArray::zeros(&[5, 6]);
        for _ in 0..20 {
            let x0 = random_array(&[5, 6], &mut rng);
            let eps = random_array(&[5, 6], &mut rng);
            for k in 1..=20 {
                let xk = forward_noise(&x0, k, &eps, &s).unwrap();
                let step = reverse_step(&xk, k, &eps, &zero, &s).unwrap();
                let target = posterior_mean(&x0, &xk, k, &s);
                assert!(step.max_abs_diff(&target) < 1e-10, "k = {k}");
            }
        }
    }

    #[test]
    fn reverse_step_noise_handling() {
        let s = NoiseSchedule::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let xk = random_array(&[2, 3], &mut rng);
        let e = random_array(&[2, 3], &mut rng);
        let z = random_array(&[2, 3], &mut rng);
        let zero = DenseArray::zeros(&[2, 3]);
        assert_eq!(
            reverse_step(&xk, 9, &e, &zero, &s).unwrap(),
            mu_theta(&xk, 9, &e, &s).unwrap()
        );
        assert_eq!(
            reverse_step(&xk, 1, &e, &z, &s).unwrap(),
            reverse_step(&xk, 1, &e, &zero, &s).unwrap()
        );
        assert!(reverse_step(&xk, 3, &e, &DenseArray::zeros(&[3, 2]), &s).is_err());
    }

    #[test]
    fn reverse_step_variance_monte_carlo() {
        let s = NoiseSchedule::standard();
        let k = 15;
        let xk = DenseArray::filled(&[1], 0.3);
        let e = DenseArray::filled(&[1], -0.2);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let z = DenseArray::filled(&[1], StandardNormal.sample(&mut rng));
                reverse_step(&xk, k, &e, &z, &s).unwrap().data()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let v_true = s.sigma2(k);
        let se_var = v_true * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - v_true).abs() < 3.0 * se_var, "var {var} vs {v_true}");
    }
}
