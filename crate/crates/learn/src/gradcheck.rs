//! Analytic gradients against central finite differences in f64, on sampled game positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use davinci_core::audit::sample_position;
use davinci_core::encoding::{encode_view, legal_mask, ActionMask, NUM_ACTIONS};

use crate::network::{policy_row_grad, row_stats, Head, Network, NetworkConfig};
use crate::Batch;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Entries checked per parameter tensor.
const PICKS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Weighted sum of state values.
    Critic,
    /// Weighted sum of log-probabilities of fixed legal actions.
    LogProb,
    /// Weighted sum of masked-policy entropies.
    Entropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    /// Entries that needed the narrow stencil because a ReLU input sat within a step of zero.
    pub kinks: usize,
    pub worst_relative: f64,
}

struct Sample {
    batch: Batch,
    masks: Vec<ActionMask>,
    actions: Vec<usize>,
}

fn sample(seeds: &[u64]) -> Sample {
    let mut states = Vec::new();
    let mut masks = Vec::new();
    let mut actions = Vec::new();
    for &s in seeds {
        let pos = sample_position(s);
        states.push(encode_view(&pos.view, pos.state.history()).expect("sampled positions encode"));
        let mask = legal_mask(&pos.view.legal_actions).expect("legal actions map to indices");
        actions.push(mask.indices().nth(s as usize % mask.count()).unwrap());
        masks.push(mask);
    }
    Sample { batch: Batch::from_states(&states), masks, actions }
}

fn objective(net: &Network<f64>, s: &Sample, obj: Objective, weights: &[f64]) -> f64 {
    let out = net.forward(&s.batch).unwrap();
    match obj {
        Objective::Critic => out.iter().zip(weights).map(|(v, w)| v * w).sum(),
        _ => (0..s.masks.len())
            .map(|i| {
                let st = row_stats(&out[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS], &s.masks[i]).unwrap();
                let v = if obj == Objective::LogProb { st.logp[s.actions[i]] } else { st.entropy };
                v * weights[i]
            })
            .sum(),
    }
}

fn analytic(net: &mut Network<f64>, s: &Sample, obj: Objective, weights: &[f64]) {
    net.zero_grad();
    let (out, cache) = net.forward_cached::<ChaCha8Rng>(&s.batch, None).unwrap();
    let dout: Vec<f64> = match obj {
        Objective::Critic => weights.to_vec(),
        _ => {
            let mut g = vec![0.0; out.len()];
            for i in 0..s.masks.len() {
                let row = i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS;
                let st = row_stats(&out[row.clone()], &s.masks[i]).unwrap();
                let (c, e) = if obj == Objective::LogProb { (weights[i], 0.0) } else { (0.0, weights[i]) };
                policy_row_grad(&st, &s.masks[i], s.actions[i], c, e, &mut g[row]);
            }
            g
        }
    };
    net.backward(&s.batch, &cache, &dout);
}

fn central_difference(net: &mut Network<f64>, tensor: usize, i: usize, h: f64, s: &Sample, obj: Objective, w: &[f64]) -> f64 {
    let orig = net.params()[tensor].1.value[i];
    net.params_mut()[tensor].1.value[i] = orig + h;
    let up = objective(net, s, obj, w);
    net.params_mut()[tensor].1.value[i] = orig - h;
    let down = objective(net, s, obj, w);
    net.params_mut()[tensor].1.value[i] = orig;
    (up - down) / (2.0 * h)
}

/// Compares analytic and numeric gradients on a few random entries of every parameter
/// tensor, over three sampled positions. Fails on any disagreement beyond
/// [`TOLERANCE`] that a narrower stencil does not resolve, or when more than 2% of the
/// entries sit on ReLU kinks.
pub fn check_gradients(config: NetworkConfig, obj: Objective, seed: u64) -> Result<GradReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = if obj == Objective::Critic { Head::Critic } else { Head::Actor };
    let mut net = Network::<f64>::new(head, config, &mut rng).map_err(|e| e.to_string())?;
    let s = sample(&[seed, seed + 101, seed + 202]);
    let weights: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
    analytic(&mut net, &s, obj, &weights);
    let grads: Vec<Vec<f64>> = net.params().iter().map(|(_, p)| p.grad.clone()).collect();
    let names: Vec<String> = net.params().iter().map(|(n, _)| n.clone()).collect();
    let mut report = GradReport { checked: 0, kinks: 0, worst_relative: 0.0 };
    for (t, name) in names.iter().enumerate() {
        let len = grads[t].len();
        let picks: Vec<usize> =
            if len <= PICKS { (0..len).collect() } else { (0..PICKS).map(|_| rng.random_range(0..len)).collect() };
        for i in picks {
            let an = grads[t][i];
            let fd = central_difference(&mut net, t, i, STEP, &s, obj, &weights);
            let scale = fd.abs().max(an.abs());
            if scale < 1e-7 {
                continue;
            }
            report.checked += 1;
            let rel = (fd - an).abs() / scale;
            if rel > TOLERANCE {
                let fine = central_difference(&mut net, t, i, STEP * 1e-2, &s, obj, &weights);
                let fine_rel = (fine - an).abs() / fine.abs().max(an.abs());
                if fine_rel > TOLERANCE {
                    return Err(format!("{name}[{i}]: analytic {an:e} vs finite difference {fd:e} (rel {rel:e})"));
                }
                report.kinks += 1;
                continue;
            }
            report.worst_relative = report.worst_relative.max(rel);
        }
    }
    if report.checked <= 30 {
        return Err(format!("only {} entries had measurable gradients", report.checked));
    }
    if report.kinks * 50 > report.checked {
        return Err(format!("{} of {} entries sat on a ReLU kink", report.kinks, report.checked));
    }
    Ok(report)
}
