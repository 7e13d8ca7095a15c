//! Freshly trained domain probe: a logistic regression on frozen embeddings
//! that measures how separable two domains remain. High held-out accuracy
//! means the encoder still leaks domain identity; chance-level accuracy
//! means adaptation collapsed the domains.

use rand::seq::SliceRandom;

use crate::numerics::rng;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains a logistic probe to distinguish `source` rows (label 0) from
/// `target` rows (label 1) on a seeded 70/30 split, and reports held-out
/// accuracy. Features are standardized on the training split; optimization
/// is full-batch gradient descent with momentum, deterministic per seed.
pub fn train_domain_probe(source: &Tensor, target: &Tensor, seed: u64) -> Result<ProbeReport> {
    let (ss, ts) = (source.shape(), target.shape());
    if ss.len() != 2 || ts.len() != 2 || ss[1] != ts[1] {
        return Err(CoreError::shape(
            "train_domain_probe",
            "[n, d] and [m, d] embeddings",
            format!("{ss:?} vs {ts:?}"),
        ));
    }
    let d = ss[1];
    let n_total = ss[0] + ts[0];
    if ss[0] < 4 || ts[0] < 4 {
        return Err(CoreError::InvalidArgument(
            "probe needs at least 4 rows per domain".into(),
        ));
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n_total);
    for i in 0..ss[0] {
        rows.push((
            source.data()[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect(),
            0.0,
        ));
    }
    for i in 0..ts[0] {
        rows.push((
            target.data()[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect(),
            1.0,
        ));
    }
    rows.shuffle(&mut rng::stream(seed, "probe.split"));
    let n_train = (n_total * 7) / 10;
    let (train, test) = rows.split_at(n_train);

    // standardize on the training split
    let mut mean = vec![0.0f64; d];
    for (x, _) in train {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= train.len() as f64;
    }
    let mut var = vec![0.0f64; d];
    for (x, _) in train {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| (v / train.len() as f64).sqrt().max(1e-6))
        .collect();
    let norm = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&mean)
            .zip(&std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };

    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let mut vw = vec![0.0f64; d];
    let mut vb = 0.0f64;
    let lr = 0.5;
    let momentum = 0.9;
    for _ in 0..300 {
        let mut gw = vec![0.0f64; d];
        let mut gb = 0.0f64;
        for (x, y) in train {
            let xn = norm(x);
            let z: f64 = xn.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y;
            for (g, v) in gw.iter_mut().zip(&xn) {
                *g += err * v;
            }
            gb += err;
        }
        let inv = 1.0 / train.len() as f64;
        for ((wv, vel), g) in w.iter_mut().zip(vw.iter_mut()).zip(&gw) {
            *vel = momentum * *vel + g * inv;
            *wv -= lr * *vel;
        }
        vb = momentum * vb + gb * inv;
        b -= lr * vb;
    }

    let accuracy = |set: &[(Vec<f64>, f64)]| -> f64 {
        let correct = set
            .iter()
            .filter(|(x, y)| {
                let xn = norm(x);
                let z: f64 = xn.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                (z > 0.0) == (*y > 0.5)
            })
            .count();
        correct as f64 / set.len() as f64
    };

    Ok(ProbeReport {
        train_accuracy: accuracy(train),
        test_accuracy: accuracy(test),
        n_train: train.len(),
        n_test: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blob(n: usize, d: usize, center: f32, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "probe.test");
        Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| center + r.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let a = blob(40, 8, 0.0, 1);
        let b = blob(40, 8, 2.0, 2);
        let report = train_domain_probe(&a, &b, 7).unwrap();
        assert!(report.test_accuracy > 0.95, "{report:?}");
    }

    #[test]
    fn identical_distributions_stay_near_chance() {
        let a = blob(60, 8, 0.0, 3);
        let b = blob(60, 8, 0.0, 4);
        let report = train_domain_probe(&a, &b, 7).unwrap();
        assert!(
            (0.3..0.7).contains(&report.test_accuracy),
            "{report:?}"
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let a = blob(20, 4, 0.0, 5);
        let b = blob(20, 4, 0.4, 6);
        let r1 = train_domain_probe(&a, &b, 11).unwrap();
        let r2 = train_domain_probe(&a, &b, 11).unwrap();
        assert_eq!(r1.test_accuracy, r2.test_accuracy);
    }
}
