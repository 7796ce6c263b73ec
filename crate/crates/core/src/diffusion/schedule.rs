use super::DiffusionError;

/// Linear β schedule and the tables derived from it.
///
/// Steps are indexed `1..=K`; index 0 denotes clean data and only exists in
/// the cumulative table (`alpha(0) = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    beta: Vec<f64>,
    alpha_hat: Vec<f64>,
    alpha: Vec<f64>,
    sigma2: Vec<f64>,
}

impl NoiseSchedule {
    /// `β_k = beta_min + (k−1)/(K−1)·(beta_max − beta_min)`.
    pub fn new(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::Config("steps must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(DiffusionError::Config(format!(
                "need 0 < beta_min ≤ beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let beta: Vec<f64> = (1..=steps)
            .map(|k| {
                if k == steps {
                    beta_max
                } else if steps == 1 {
                    beta_min
                } else {
                    beta_min + (k - 1) as f64 / (steps - 1) as f64 * (beta_max - beta_min)
                }
            })
            .collect();
        let alpha_hat: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha = Vec::with_capacity(steps + 1);
        alpha.push(1.0);
        for a in &alpha_hat {
            let prev = *alpha.last().expect("non-empty");
            alpha.push(prev * a);
        }
        let sigma2 = (1..=steps)
            .map(|k| (1.0 - alpha[k - 1]) / (1.0 - alpha[k]) * beta[k - 1])
            .collect();
        Ok(Self {
            steps,
            beta_min,
            beta_max,
            beta,
            alpha_hat,
            alpha,
            sigma2,
        })
    }

    /// Defaults: K = 20 over [0.001, 0.333].
    pub fn standard() -> Self {
        Self::new(20, 0.001, 0.333).expect("valid defaults")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn check_step(&self, k: usize) -> Result<(), DiffusionError> {
        if k == 0 || k > self.steps {
            Err(DiffusionError::StepOutOfRange { k, steps: self.steps })
        } else {
            Ok(())
        }
    }

    /// Panics unless `1 ≤ k ≤ K`.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn alpha_hat(&self, k: usize) -> f64 {
        self.alpha_hat[k - 1]
    }

    /// Cumulative product, defined for `0 ≤ k ≤ K`.
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k]
    }

    pub fn sigma2(&self, k: usize) -> f64 {
        self.sigma2[k - 1]
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma2(k).sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }
}
