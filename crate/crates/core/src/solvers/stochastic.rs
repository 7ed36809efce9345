//! Langevin Monte Carlo over the penalised energy.
//!
//! Each sample is the endpoint of an independent Euler-Maruyama chain
//! `u[t+1] = u[t] - eta * grad L(u[t]) + sqrt(2 eta) * b[t]` started at the
//! mode. Chain `i` draws its noise from stream `i` of the seeded generator,
//! so results are bitwise reproducible regardless of thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scm::{Antecedent, Scm};
use crate::vector::StructuredVector;

use super::{
    energy_grad, mode_deepbc, residual_sq, BacktrackingConfig, CounterfactualResult,
};

pub fn stochastic_deepbc(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
    n_samples: usize,
) -> Result<Vec<CounterfactualResult>> {
    if n_samples == 0 {
        return Err(Error::InvalidPlan(
            "stochastic solve needs at least one sample".to_string(),
        ));
    }
    scm.check_antecedent(antecedent)?;
    let u0 = scm.abduct(x)?;
    let init = mode_deepbc(scm, x, antecedent, config)?.u_star;
    let eta = config.step_size();
    let noise_scale = (2.0 * eta).sqrt();

    (0..n_samples)
        .into_par_iter()
        .map(|chain| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
            rng.set_stream(chain as u64);
            let mut u = init.clone();
            for t in 1..=config.iterations() {
                let (_, g) = energy_grad(scm, &u, &u0, antecedent, config)?;
                for (k, uv) in u.flat_mut().iter_mut().enumerate() {
                    let b: f64 = rng.sample(StandardNormal);
                    *uv += -eta * g[k] + noise_scale * b;
                }
                if !u.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("langevin chain {chain}"),
                        step: t,
                    });
                }
            }
            let x_star = scm.reduced_form(&u)?;
            let residual = residual_sq(scm, &u, antecedent)?;
            Ok(CounterfactualResult {
                u_star: u,
                x_star,
                residual,
                energy_trace: Vec::new(),
                iterations: config.iterations(),
                changed_mask: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeId;
    use crate::solvers::test_fixtures::linear_chain;
    use nalgebra::{DMatrix, DVector};

    fn zeros_x(scm: &Scm) -> StructuredVector {
        let u = StructuredVector::zeros(scm.latent_layout().clone());
        scm.reduced_form(&u).unwrap()
    }

    #[test]
    fn empirical_law_matches_the_analytic_gaussian() {
        let scm = linear_chain(2, 1.0);
        let x = zeros_x(&scm);
        let target = 2.0;
        let ante = Antecedent::single(NodeId(2), vec![target]);
        let lambda = 10.0;
        let cfg = BacktrackingConfig::default()
            .with_lambda(lambda)
            .unwrap()
            .with_step_size(1e-3)
            .unwrap()
            .with_iterations(1_500)
            .unwrap()
            .with_seed(7);
        let n = 1_500;
        let samples = stochastic_deepbc(&scm, &x, &ante, &cfg, n).unwrap();
        assert_eq!(samples.len(), n);

        // exp(-L) is Gaussian with mean A^-1 b and covariance A^-1/2 for
        // A = W + lambda J^T J and b = W u0 + lambda J^T x*.
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[1.0 + lambda, lambda, lambda, 1.0 + lambda],
        );
        let b = DVector::from_vec(vec![lambda * target, lambda * target]);
        let mean = a.clone().try_inverse().unwrap() * b;

        // Rotate into the eigenbasis (1,1)/sqrt2, (1,-1)/sqrt2.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut sum = [0.0, 0.0];
        let mut sumsq = [0.0, 0.0];
        for r in &samples {
            let u = r.u_star.flat();
            let p = s * (u[0] + u[1]);
            let q = s * (u[0] - u[1]);
            sum[0] += p;
            sum[1] += q;
            sumsq[0] += p * p;
            sumsq[1] += q * q;
        }
        let nf = n as f64;
        let mean_rot = [
            s * (mean[0] + mean[1]),
            s * (mean[0] - mean[1]),
        ];
        let var_expected = [1.0 / (2.0 * (1.0 + 2.0 * lambda)), 0.5];
        for k in 0..2 {
            let m = sum[k] / nf;
            let v = sumsq[k] / nf - m * m;
            assert!(
                (m - mean_rot[k]).abs() < 0.05,
                "mean[{k}] {m} vs {}",
                mean_rot[k]
            );
            assert!(
                (v - var_expected[k]).abs() / var_expected[k] < 0.15,
                "var[{k}] {v} vs {}",
                var_expected[k]
            );
        }
    }

    #[test]
    fn chains_are_reproducible_and_stream_separated() {
        let scm = linear_chain(2, 1.0);
        let x = zeros_x(&scm);
        let ante = Antecedent::single(NodeId(2), vec![1.0]);
        let cfg = BacktrackingConfig::stochastic_default()
            .with_iterations(50)
            .unwrap()
            .with_seed(3);
        let a = stochastic_deepbc(&scm, &x, &ante, &cfg, 4).unwrap();
        let b = stochastic_deepbc(&scm, &x, &ante, &cfg, 4).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.u_star.flat(), rb.u_star.flat());
            assert_eq!(ra.x_star.flat(), rb.x_star.flat());
        }
        assert_ne!(a[0].u_star.flat(), a[1].u_star.flat());
        let other_seed = stochastic_deepbc(&scm, &x, &ante, &cfg.clone().with_seed(4), 1).unwrap();
        assert_ne!(a[0].u_star.flat(), other_seed[0].u_star.flat());
    }

    #[test]
    fn zero_step_size_returns_the_mode_exactly() {
        let scm = linear_chain(2, 1.0);
        let x = zeros_x(&scm);
        let ante = Antecedent::single(NodeId(2), vec![2.0]);
        let cfg = BacktrackingConfig::default().with_step_size(0.0).unwrap();
        let mode = crate::solvers::mode_deepbc(&scm, &x, &ante, &cfg).unwrap();
        let samples = stochastic_deepbc(&scm, &x, &ante, &cfg, 3).unwrap();
        for r in &samples {
            assert_eq!(r.u_star.flat(), mode.u_star.flat());
        }
    }

    #[test]
    fn divergent_chain_reports_non_finite() {
        let scm = linear_chain(2, 1.0);
        let x = zeros_x(&scm);
        let ante = Antecedent::single(NodeId(2), vec![2.0]);
        let cfg = BacktrackingConfig::stochastic_default()
            .with_step_size(10.0)
            .unwrap();
        match stochastic_deepbc(&scm, &x, &ante, &cfg, 2) {
            Err(Error::NonFinite { context, .. }) => assert!(context.contains("langevin")),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_sample_request() {
        let scm = linear_chain(2, 1.0);
        let x = zeros_x(&scm);
        let ante = Antecedent::single(NodeId(2), vec![2.0]);
        assert!(matches!(
            stochastic_deepbc(&scm, &x, &ante, &BacktrackingConfig::stochastic_default(), 0),
            Err(Error::InvalidPlan(_))
        ));
    }
}
