use crate::execution::Observation;
use crate::marketdata::FeatureMatrix;
use crate::oracle::INFEASIBLE;

use super::net::ValueNet;
use super::replay::Transition;
use super::LearnError;

/// Appends the network input for `obs`: its feature row followed by the encoded position.
pub fn encode_state(features: &FeatureMatrix, n_positions: usize, obs: Observation, out: &mut Vec<f64>) {
    out.extend_from_slice(features.row(obs.t));
    out.push(obs.position_index as f64 / (n_positions - 1) as f64);
}

pub fn state_vector(features: &FeatureMatrix, n_positions: usize, obs: Observation) -> Vec<f64> {
    let mut v = Vec::with_capacity(features.dim + 1);
    encode_state(features, n_positions, obs, &mut v);
    v
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    /// Weight of the teacher KL term; 0 turns it off.
    pub alpha: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `td + alpha * kl`.
    pub loss: f64,
    /// Mean squared TD error.
    pub td: f64,
    /// Mean KL divergence to the teacher distribution.
    pub kl: f64,
    pub grads: Vec<f64>,
}

/// Softmax of `q / temperature` over entries where `mask` is set; others get 0.
/// Returns the probabilities and their logs.
fn masked_softmax(q: &[f64], mask: &[bool], temperature: f64) -> (Vec<f64>, Vec<f64>) {
    let m = q
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_z = m + q
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| (v / temperature - m).exp())
        .sum::<f64>()
        .ln();
    let logp: Vec<f64> = q
        .iter()
        .zip(mask)
        .map(|(&v, &ok)| if ok { v / temperature - log_z } else { f64::NEG_INFINITY })
        .collect();
    let p = logp.iter().map(|&l| if l.is_finite() { l.exp() } else { 0.0 }).collect();
    (p, logp)
}

/// KL divergence `KL(softmax(q/T) || softmax(q*/T))` over the feasible entries of
/// `qstar_row`, and its gradient with respect to `q`.
pub fn teacher_kl(q: &[f64], qstar_row: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let mask: Vec<bool> = qstar_row.iter().map(|&v| v != INFEASIBLE).collect();
    let (p, logp) = masked_softmax(q, &mask, temperature);
    let (_, logp_star) = masked_softmax(qstar_row, &mask, temperature);
    let mut kl = 0.0;
    let mut log_ratio = vec![0.0; q.len()];
    for k in 0..q.len() {
        if mask[k] {
            log_ratio[k] = logp[k] - logp_star[k];
            kl += p[k] * log_ratio[k];
        }
    }
    let grad = (0..q.len())
        .map(|k| if mask[k] { p[k] / temperature * (log_ratio[k] - kl) } else { 0.0 })
        .collect();
    (kl, grad)
}

/// Double-Q TD loss plus the teacher KL term, averaged over `batch`, with gradients
/// for the online network. The TD target bootstraps from `target` at the online argmax.
pub fn qteacher_loss(
    online: &ValueNet,
    target: &ValueNet,
    features: &FeatureMatrix,
    n_positions: usize,
    batch: &[&Transition],
    cfg: &LossConfig,
) -> Result<LossOutput, LearnError> {
    let b = batch.len();
    if b == 0 {
        return Err(LearnError::NotEnoughSamples { have: 0, need: 1 });
    }
    let k = online.output_dim();
    let mut x = Vec::with_capacity(b * online.input_dim());
    let mut x_next = Vec::with_capacity(b * online.input_dim());
    for t in batch {
        encode_state(features, n_positions, t.state, &mut x);
        encode_state(features, n_positions, t.next_state, &mut x_next);
    }
    if x.len() != b * online.input_dim() {
        return Err(LearnError::Shape(format!(
            "state width {} does not match network input {}",
            x.len() / b,
            online.input_dim()
        )));
    }
    let cache = online.forward_train(&x, b);
    let q = cache.output();
    let q_next_online = online.forward_batch(&x_next, b);
    let q_next_target = target.forward_batch(&x_next, b);

    let mut d_out = vec![0.0; b * k];
    let (mut td, mut kl) = (0.0, 0.0);
    let scale = 1.0 / b as f64;
    for (j, t) in batch.iter().enumerate() {
        let row = &q[j * k..(j + 1) * k];
        let bootstrap = if t.done {
            0.0
        } else {
            let a_star = argmax(&q_next_online[j * k..(j + 1) * k]);
            q_next_target[j * k + a_star]
        };
        let y = t.reward + cfg.gamma * bootstrap;
        let delta = row[t.action] - y;
        td += delta * delta;
        d_out[j * k + t.action] += 2.0 * delta * scale;
        if cfg.alpha > 0.0 {
            let qs = t.qstar_row.as_deref().ok_or(LearnError::MissingTeacher)?;
            let (kl_j, grad) = teacher_kl(row, qs, cfg.temperature);
            kl += kl_j;
            for (d, g) in d_out[j * k..(j + 1) * k].iter_mut().zip(grad) {
                *d += cfg.alpha * scale * g;
            }
        }
    }
    td *= scale;
    kl *= scale;
    let grads = online.backward(&cache, &d_out);
    Ok(LossOutput {
        loss: td + cfg.alpha * kl,
        td,
        kl,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(t: usize, p: usize) -> Observation {
        Observation { t, position_index: p }
    }

    /// Net whose output is the constant `bias` regardless of input.
    fn constant_net(input: usize, bias: &[f64]) -> ValueNet {
        let mut net = ValueNet::zeros(&[input, 4, bias.len()]).unwrap();
        let n = net.params().len();
        net.params_mut()[n - bias.len()..].copy_from_slice(bias);
        net
    }

    fn features() -> FeatureMatrix {
        FeatureMatrix::from_rows("t", 2, &[vec![0.5, -1.0], vec![1.5, 2.0], vec![0.0, 0.3]])
    }

    #[test]
    fn kl_zero_under_shift_and_positive_otherwise() {
        let qs = [1.0, -2.0, 0.5];
        let shifted: Vec<f64> = qs.iter().map(|v| v + 7.25).collect();
        let (kl, grad) = teacher_kl(&shifted, &qs, 1.0);
        assert!(kl.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
        let (kl, _) = teacher_kl(&[0.0, 0.0, 0.0], &qs, 1.0);
        assert!(kl > 0.0);
    }

    #[test]
    fn kl_ignores_infeasible_entries() {
        let (kl, grad) = teacher_kl(&[1.0, 50.0, 2.0], &[1.0, INFEASIBLE, 2.0], 1.0);
        assert!(kl.abs() < 1e-12);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let qs = [0.3, -1.0, 2.2, 0.0];
        let q = [1.0, 0.5, -0.3, 0.8];
        for temperature in [0.5, 1.0, 3.0] {
            let (_, grad) = teacher_kl(&q, &qs, temperature);
            for i in 0..4 {
                let h = 1e-6;
                let mut p = q;
                p[i] += h;
                let mut m = q;
                m[i] -= h;
                let fd = (teacher_kl(&p, &qs, temperature).0 - teacher_kl(&m, &qs, temperature).0) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-7, "{fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn zero_loss_when_targets_match() {
        let f = features();
        let net = ValueNet::zeros(&[3, 4, 2]).unwrap();
        let t = Transition {
            state: obs(0, 0),
            action: 1,
            reward: 0.0,
            next_state: obs(1, 1),
            done: false,
            qstar_row: None,
        };
        let cfg = LossConfig {
            gamma: 0.99,
            alpha: 0.0,
            temperature: 1.0,
        };
        let out = qteacher_loss(&net, &net, &f, 2, &[&t], &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hand_built_single_transition() {
        let f = features();
        // online predicts [1, 3] everywhere, target [2, 5]
        let online = constant_net(3, &[1.0, 3.0]);
        let target = constant_net(3, &[2.0, 5.0]);
        let t = Transition {
            state: obs(0, 0),
            action: 0,
            reward: 0.5,
            next_state: obs(1, 1),
            done: false,
            qstar_row: Some(vec![0.0, 1.0]),
        };
        let cfg = LossConfig {
            gamma: 0.9,
            alpha: 2.0,
            temperature: 1.0,
        };
        let out = qteacher_loss(&online, &target, &f, 2, &[&t], &cfg).unwrap();
        // online argmax at next state is action 1, target value 5: y = 0.5 + 0.9 * 5 = 5.0
        let td = (1.0f64 - 5.0).powi(2);
        // p = softmax([1, 3]), p* = softmax([0, 1])
        let z = 1f64.exp() + 3f64.exp();
        let p = [1f64.exp() / z, 3f64.exp() / z];
        let zs = 1.0 + 1f64.exp();
        let ps = [1.0 / zs, 1f64.exp() / zs];
        let kl = p[0] * (p[0] / ps[0]).ln() + p[1] * (p[1] / ps[1]).ln();
        assert!((out.td - td).abs() < 1e-12);
        assert!((out.kl - kl).abs() < 1e-12);
        assert!((out.loss - (td + 2.0 * kl)).abs() < 1e-12);

        let done = Transition { done: true, ..t.clone() };
        let out = qteacher_loss(&online, &target, &f, 2, &[&done], &cfg).unwrap();
        assert!((out.td - (1.0f64 - 0.5).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn missing_teacher_row_is_an_error() {
        let f = features();
        let net = ValueNet::zeros(&[3, 4, 2]).unwrap();
        let t = Transition {
            state: obs(0, 0),
            action: 0,
            reward: 0.0,
            next_state: obs(1, 0),
            done: false,
            qstar_row: None,
        };
        let cfg = LossConfig {
            gamma: 0.9,
            alpha: 1.0,
            temperature: 1.0,
        };
        assert!(matches!(
            qteacher_loss(&net, &net, &f, 2, &[&t], &cfg),
            Err(LearnError::MissingTeacher)
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let f = features();
        let online = ValueNet::new(&[3, 5, 3], 4).unwrap();
        let target = ValueNet::new(&[3, 5, 3], 5).unwrap();
        let ts = [
            Transition {
                state: obs(0, 1),
                action: 2,
                reward: 0.3,
                next_state: obs(1, 2),
                done: false,
                qstar_row: Some(vec![0.1, INFEASIBLE, 0.4]),
            },
            Transition {
                state: obs(2, 0),
                action: 0,
                reward: -0.2,
                next_state: obs(1, 0),
                done: true,
                qstar_row: Some(vec![1.0, 0.0, -1.0]),
            },
        ];
        let batch: Vec<&Transition> = ts.iter().collect();
        let cfg = LossConfig {
            gamma: 0.95,
            alpha: 0.7,
            temperature: 1.0,
        };
        let out = qteacher_loss(&online, &target, &f, 3, &batch, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..online.params().len() {
            let mut p = online.clone();
            p.params_mut()[i] += h;
            let mut m = online.clone();
            m.params_mut()[i] -= h;
            // hold the bootstrap target fixed: it does not carry gradient
            let lp = qteacher_loss(&p, &target, &f, 3, &batch, &cfg).unwrap();
            let lm = qteacher_loss(&m, &target, &f, 3, &batch, &cfg).unwrap();
            let fd = (lp.loss - lm.loss) / (2.0 * h);
            assert!((fd - out.grads[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", out.grads[i]);
        }
    }
}
