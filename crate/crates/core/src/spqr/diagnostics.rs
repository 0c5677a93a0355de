use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{SiteModel, SplineBasis, TrainingSet};
use crate::error::{NpmmError, Result};

fn mixture_cdf(pi: &[f64], basis: &SplineBasis, u: f64, buf: &mut [f64]) -> f64 {
    basis.integral_into(u, buf);
    pi.iter().zip(buf.iter()).map(|(p, i)| p * i).sum()
}

/// Conditional CDF at the observed responses.
pub fn pit_diagnostic(model: &SiteModel, basis: &SplineBasis, test: &TrainingSet) -> Result<Vec<f64>> {
    let pi = model.net.forward(test.inputs.view())?;
    let mut buf = vec![0.0; basis.k];
    Ok(pi
        .rows()
        .into_iter()
        .zip(&test.response)
        .map(|(row, &u)| {
            mixture_cdf(row.as_slice().expect("contiguous"), basis, u, &mut buf).clamp(0.0, 1.0)
        })
        .collect())
}

/// Inverse of the mixture CDF by bisection.
pub fn mixture_quantile(pi: &[f64], basis: &SplineBasis, q: f64) -> f64 {
    let mut buf = vec![0.0; basis.k];
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(pi, basis, mid, &mut buf) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn quantiles(probs: ArrayView2<f64>, basis: &SplineBasis, levels: &[f64]) -> Vec<Vec<f64>> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let pi = row.to_vec();
            levels.iter().map(|&q| mixture_quantile(&pi, basis, q)).collect()
        })
        .collect()
}

/// Permutation importance: mean absolute change of the conditional
/// quantile at each level when one input column is shuffled.
///
/// Returns `scores[feature][level]`.
pub fn variable_importance<R: Rng + ?Sized>(
    model: &SiteModel,
    basis: &SplineBasis,
    test: &TrainingSet,
    levels: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if let Some(q) = levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(NpmmError::InvalidArgument(format!(
            "quantile levels must lie in (0,1), got {q}"
        )));
    }
    let base_q = quantiles(model.net.forward(test.inputs.view())?.view(), basis, levels);
    let n = test.len() as f64;
    let d = test.inputs.ncols();
    let mut out = Vec::with_capacity(d);
    for col in 0..d {
        let mut x: Array2<f64> = test.inputs.clone();
        let mut perm: Vec<f64> = x.column(col).to_vec();
        perm.shuffle(rng);
        x.column_mut(col).assign(&ndarray::Array1::from(perm));
        let q = quantiles(model.net.forward(x.view())?.view(), basis, levels);
        let scores = (0..levels.len())
            .map(|l| {
                base_q
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (a[l] - b[l]).abs())
                    .sum::<f64>()
                    / n
            })
            .collect();
        out.push(scores);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spqr::{Mlp, NetSpec};

    fn one_hot_model(k: usize, input_dim: usize) -> SiteModel {
        // zero network with a large bias on one output: nearly all mass in basis `k`
        let spec = NetSpec::default_for(input_dim);
        let mut net = Mlp::zeros(&spec);
        net.layers.last_mut().unwrap().b[k] = 50.0;
        SiteModel {
            position: 1,
            net,
            loss_trace: vec![],
        }
    }

    fn uniform_test(n: usize, input_dim: usize) -> TrainingSet {
        TrainingSet {
            position: 1,
            inputs: Array2::zeros((n, input_dim)),
            response: (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
            theta: vec![[0.0; 4]; n],
        }
    }

    #[test]
    fn degenerate_model_is_rejected_by_pit() {
        let basis = SplineBasis::cubic15();
        let m = one_hot_model(7, 3);
        let pit = pit_diagnostic(&m, &basis, &uniform_test(2000, 3)).unwrap();
        assert!(pit.iter().all(|p| (0.0..=1.0).contains(p)));
        let ks = crate::stats::ks_statistic(&pit, |x| x);
        assert!(ks > crate::stats::ks_critical(pit.len(), 0.01));
    }

    #[test]
    fn quantile_inverts_cdf() {
        let basis = SplineBasis::cubic15();
        let pi = basis.flat_weights();
        for &q in &[0.05, 0.5, 0.93] {
            assert!((mixture_quantile(&pi, &basis, q) - q).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_inputs_have_zero_importance() {
        let basis = SplineBasis::cubic15();
        let m = one_hot_model(3, 4);
        let mut rng = crate::rng::stream_rng(0, 0);
        let imp = variable_importance(&m, &basis, &uniform_test(50, 4), &[0.1, 0.5], &mut rng)
            .unwrap();
        assert!(imp.iter().flatten().all(|&v| v == 0.0));
        assert!(variable_importance(&m, &basis, &uniform_test(5, 4), &[1.0], &mut rng).is_err());
    }
}
