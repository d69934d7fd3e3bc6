//! Independent reference computations for the loss, optimizer and metrics.

use dfl_core::head::{
    adam_step, backward, batch_loss, focal_loss, forward, init_head, softmax, Dense, Gradients, HeadConfig, HeadModel,
};
use dfl_core::metrics::{self, confusion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest |focal(gamma=0, alpha=1) - cross-entropy| over random cases, and whether a
/// certain prediction (p_y = 1) costs exactly 0 for every gamma tried.
pub fn focal_reduces_to_cross_entropy(cases: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.random_range(2..8);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        let p = softmax(&logits);
        let y = rng.random_range(0..k);
        let alpha = vec![1.0; k];
        let ce = -p[y].ln();
        worst = worst.max((focal_loss(&p, y, 0.0, &alpha) - ce).abs());
    }
    let certain = [0.0, 1.0, 0.0];
    let zero = [0.0, 0.5, 1.0, 2.0, 5.0]
        .iter()
        .all(|&g| focal_loss(&certain, 1, g, &[0.3, 2.0, 1.0]) == 0.0);
    (worst, zero)
}

fn random_model(rng: &mut ChaCha8Rng, hidden: bool, gamma: f64) -> HeadModel {
    let input = rng.random_range(2..7);
    let classes = rng.random_range(2..5);
    let cfg = HeadConfig {
        hidden_dim: hidden.then(|| rng.random_range(2..6)),
        gamma,
        seed: rng.random(),
        ..HeadConfig::linear(input, classes)
    };
    let mut model = init_head(&cfg).unwrap();
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
    }
    model
}

/// Smallest |pre-activation| of the hidden layer over the batch; FD is meaningless
/// across a ReLU kink so such draws are rejected.
fn min_preactivation(model: &HeadModel, x: &[f64]) -> f64 {
    let Some(h) = &model.hidden else {
        return f64::INFINITY;
    };
    let mut m = f64::INFINITY;
    for row in x.chunks_exact(h.inputs) {
        for (w, b) in h.weights.chunks_exact(h.inputs).zip(&h.bias) {
            let z: f64 = w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + b;
            m = m.min(z.abs());
        }
    }
    m
}

/// Smallest probability assigned to the true class. Near the loss's probability
/// floor the clamped value is flat, so such draws are rejected like ReLU kinks.
fn min_true_probability(model: &HeadModel, x: &[f64], y: &[usize]) -> f64 {
    x.chunks_exact(model.input_dim())
        .zip(y)
        .map(|(row, &c)| forward(model, row).unwrap()[c])
        .fold(1.0, f64::min)
}

/// Relative error, floored at 1e-4. Central differences at h = 1e-5 carry about
/// 1e-10 of absolute roundoff on an O(1) loss, so below the floor this is an
/// absolute check at 1e-9.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Max relative error between analytic and central-difference gradients over
/// `pairs` random (model, batch) draws for each gamma in {0, 1, 2} and each head shape.
pub fn gradient_check(pairs: usize, seed: u64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for gamma in [0.0, 1.0, 2.0] {
        for hidden in [false, true] {
            let mut done = 0;
            while done < pairs {
                let model = random_model(&mut rng, hidden, gamma);
                let batch = rng.random_range(1..6);
                let dim = model.input_dim();
                let x: Vec<f64> = (0..batch * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..model.num_classes())).collect();
                let alpha: Vec<f64> = (0..model.num_classes()).map(|_| rng.random_range(0.2..2.0)).collect();
                if min_preactivation(&model, &x) < 1e-3 || min_true_probability(&model, &x, &y) < 1e-9 {
                    continue;
                }
                let (grads, _) = backward(&model, &x, &y, gamma, &alpha).unwrap();
                let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
                let mut probe = model.clone();
                for (ti, tensor) in analytic.iter().enumerate() {
                    for (pi, &a) in tensor.iter().enumerate() {
                        let orig = probe.tensors()[ti][pi];
                        probe.tensors_mut()[ti][pi] = orig + h;
                        let up = batch_loss(&probe, &x, &y, gamma, &alpha).unwrap();
                        probe.tensors_mut()[ti][pi] = orig - h;
                        let down = batch_loss(&probe, &x, &y, gamma, &alpha).unwrap();
                        probe.tensors_mut()[ti][pi] = orig;
                        let numeric = (up - down) / (2.0 * h);
                        worst = worst.max(relative_error(a, numeric));
                    }
                }
                done += 1;
            }
        }
    }
    worst
}

/// Scalar ADAM written from the update rule.
pub struct ScalarAdam {
    pub w: f64,
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    pub fn new(w: f64) -> Self {
        Self {
            w,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, g: f64, lr: f64, b1: f64, b2: f64, eps: f64) {
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let v_hat = self.v / (1.0 - b2.powi(self.t));
        self.w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Minimizes f(w) = w^2 from w = 1 with both implementations; returns the largest
/// per-step difference and the final weight.
pub fn adam_against_scalar(steps: usize, lr: f64) -> (f64, f64) {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut model = init_head(&HeadConfig::linear(1, 2)).unwrap();
    for t in model.tensors_mut() {
        t.fill(1.0);
    }
    let mut reference = ScalarAdam::new(1.0);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let grad_of = |d: &Dense| Dense {
            weights: d.weights.iter().map(|w| 2.0 * w).collect(),
            bias: d.bias.iter().map(|b| 2.0 * b).collect(),
            ..d.clone()
        };
        let grads = Gradients {
            hidden: None,
            output: grad_of(&model.output),
        };
        adam_step(&mut model, &grads, lr, b1, b2, eps).unwrap();
        reference.step(2.0 * reference.w, lr, b1, b2, eps);
        for t in model.tensors() {
            for &w in t {
                worst = worst.max((w - reference.w).abs());
            }
        }
    }
    (worst, reference.w)
}

#[derive(Debug, Default)]
pub struct MetricDeviation {
    pub confusion_mismatches: usize,
    pub balanced_accuracy: f64,
    pub kappa: f64,
    pub weighted_f1: f64,
    pub precision_recall_f1: f64,
    pub pr_auc: f64,
}

impl MetricDeviation {
    pub fn worst(&self) -> f64 {
        [
            self.balanced_accuracy,
            self.kappa,
            self.weighted_f1,
            self.precision_recall_f1,
            self.pr_auc,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn naive_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Average precision by brute force: for every distinct score threshold, the set
/// predicted positive is `score >= t`.
pub fn naive_average_precision(truth: &[bool], scores: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = truth.iter().filter(|&&t| t).count();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| truth[i]).count();
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Compares the library metrics with definitional computations on random label sets.
pub fn metric_oracles(sets: usize, seed: u64) -> MetricDeviation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = MetricDeviation::default();
    for _ in 0..sets {
        let k = rng.random_range(2..6);
        let n = rng.random_range(1..60);
        let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..k) as u32).collect();
        // skewed predictions so some classes are never predicted
        let mut pred = Vec::with_capacity(n);
        for &t in &truth {
            let p = if rng.random_bool(0.5) {
                t
            } else {
                rng.random_range(0..k) as u32
            };
            pred.push(if p as usize == k - 1 && rng.random_bool(0.5) {
                0
            } else {
                p
            });
        }

        let cm = confusion(&truth, &pred, k).unwrap();
        for a in 0..k {
            for b in 0..k {
                let count = (0..n)
                    .filter(|&i| truth[i] as usize == a && pred[i] as usize == b)
                    .count();
                if cm.get(a, b) != count as u64 {
                    dev.confusion_mismatches += 1;
                }
            }
        }

        let support = |c: usize| truth.iter().filter(|&&t| t as usize == c).count();
        let predicted = |c: usize| pred.iter().filter(|&&p| p as usize == c).count();
        let tp = |c: usize| {
            (0..n)
                .filter(|&i| truth[i] as usize == c && pred[i] as usize == c)
                .count()
        };

        let present: Vec<usize> = (0..k).filter(|&c| support(c) > 0).collect();
        let ba = present.iter().map(|&c| naive_ratio(tp(c), support(c))).sum::<f64>() / present.len() as f64;
        dev.balanced_accuracy = dev
            .balanced_accuracy
            .max((metrics::balanced_accuracy(&cm).unwrap() - ba).abs());

        let po = (0..n).filter(|&i| truth[i] == pred[i]).count() as f64 / n as f64;
        let pe: f64 = (0..k)
            .map(|c| (support(c) as f64 / n as f64) * (predicted(c) as f64 / n as f64))
            .sum();
        let kappa = if (1.0 - pe).abs() < 1e-15 {
            0.0
        } else {
            (po - pe) / (1.0 - pe)
        };
        dev.kappa = dev.kappa.max((metrics::cohen_kappa(&cm).unwrap().value - kappa).abs());

        let f1 = |c: usize| naive_ratio(2 * tp(c), support(c) + predicted(c));
        let wf1: f64 = (0..k).map(|c| support(c) as f64 / n as f64 * f1(c)).sum();
        dev.weighted_f1 = dev.weighted_f1.max((metrics::weighted_f1(&cm).unwrap() - wf1).abs());

        for (c, s) in metrics::per_class(&cm).iter().enumerate() {
            let d = (s.precision - naive_ratio(tp(c), predicted(c)))
                .abs()
                .max((s.recall - naive_ratio(tp(c), support(c))).abs())
                .max((s.f1 - f1(c)).abs());
            dev.precision_recall_f1 = dev.precision_recall_f1.max(d);
        }

        // binary PR-AUC on coarse scores so ties are common
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().any(|&l| l) {
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
            let got = metrics::pr_auc(&labels, &scores).unwrap();
            dev.pr_auc = dev.pr_auc.max((got - naive_average_precision(&labels, &scores)).abs());
        }
    }
    dev
}

/// Hand cases: kappa of [[40,10],[20,30]] and weighted F1 of [[8,2],[4,6]].
pub fn hand_cases() -> (f64, f64) {
    let k = metrics::cohen_kappa(&metrics::ConfusionMatrix::from_rows(&[vec![40, 10], vec![20, 30]]).unwrap())
        .unwrap()
        .value;
    let f = metrics::weighted_f1(&metrics::ConfusionMatrix::from_rows(&[vec![8, 2], vec![4, 6]]).unwrap()).unwrap();
    (k, f)
}
