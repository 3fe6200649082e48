use davinci_core::audit::sample_position;
use davinci_core::encoding::{encode_view, legal_mask, ActionMask, EncodedState, NUM_ACTIONS, VOCAB_SIZE};
use davinci_learn::checkpoint;
use davinci_learn::network::{log_softmax, masked_logits, row_stats, sample_action, MASK_SENTINEL};
use davinci_learn::{ActorCritic, Batch, NetworkConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn position(seed: u64) -> (EncodedState, ActionMask) {
    let pos = sample_position(seed);
    (encode_view(&pos.view, pos.state.history()).unwrap(), legal_mask(&pos.view.legal_actions).unwrap())
}

fn random_mask(rng: &mut impl Rng) -> ActionMask {
    let mut bits: Vec<bool> = (0..NUM_ACTIONS).map(|_| rng.random_bool(0.2)).collect();
    bits[rng.random_range(0..NUM_ACTIONS)] = true;
    ActionMask::from_bools(&bits)
}

#[test]
fn masked_softmax_is_normalized_on_real_positions() {
    let model = ActorCritic::<f32>::new(NetworkConfig::default(), 3).unwrap();
    for seed in 0..40 {
        let (state, mask) = position(seed);
        let out = model.policy_output(&state, &mask).unwrap();
        let logp = log_softmax(&out.masked_logits);
        let total: f64 = logp.iter().map(|l| f64::from(l.exp())).sum();
        assert!((total - 1.0).abs() < 1e-6, "seed {seed}: {total}");
        for i in 0..NUM_ACTIONS {
            if !mask.get(i) {
                assert_eq!(out.masked_logits[i], MASK_SENTINEL as f32);
                assert_eq!(logp[i].exp(), 0.0);
            }
        }
        let stats = row_stats(&out.logits, &mask).unwrap();
        assert!(f64::from(stats.entropy) <= (mask.count() as f64).ln() + 1e-5);
        assert!(out.value.is_finite());
    }
}

#[test]
fn illegal_indices_are_never_sampled() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let logits: Vec<f32> = (0..NUM_ACTIONS).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mask = random_mask(&mut rng);
    let stats = row_stats(&logits, &mask).unwrap();
    let mut counts = vec![0u32; NUM_ACTIONS];
    for _ in 0..100_000 {
        counts[sample_action(&stats.logp, &mask, &mut rng)] += 1;
    }
    let illegal: u32 = (0..NUM_ACTIONS).filter(|i| !mask.get(*i)).map(|i| counts[i]).sum();
    assert_eq!(illegal, 0);
    // Frequencies track the masked softmax.
    for i in mask.indices() {
        let p = f64::from(stats.logp[i].exp());
        let sd = (p * (1.0 - p) / 1e5).sqrt();
        assert!((f64::from(counts[i]) / 1e5 - p).abs() < 5.0 * sd + 1e-4, "index {i}");
    }
}

proptest! {
    #[test]
    fn logits_at_masked_indices_do_not_matter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f32> = (0..NUM_ACTIONS).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mask = random_mask(&mut rng);
        let mut other = logits.clone();
        for i in 0..NUM_ACTIONS {
            if !mask.get(i) {
                other[i] = rng.random_range(-1e6..1e6);
            }
        }
        let a = log_softmax(&masked_logits(&logits, &mask).unwrap());
        let b = log_softmax(&masked_logits(&other, &mask).unwrap());
        prop_assert_eq!(&a, &b);
        let mut r1 = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..50 {
            prop_assert_eq!(sample_action(&a, &mask, &mut r1), sample_action(&b, &mask, &mut r2));
        }
    }
}

#[test]
fn pad_region_contents_never_change_outputs() {
    let model = ActorCritic::<f32>::new(NetworkConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..20 {
        let (state, mask) = position(seed);
        let base = model.policy_output(&state, &mask).unwrap();
        let mut noisy = state.clone();
        let n = noisy.content_len();
        for id in &mut noisy.token_ids[n..] {
            *id = rng.random_range(0..VOCAB_SIZE as u16);
        }
        noisy.token_ids[n..].reverse();
        assert_eq!(model.policy_output(&noisy, &mask).unwrap(), base);
    }
}

#[test]
fn batching_matches_single_sample_evaluation() {
    let model = ActorCritic::<f32>::new(NetworkConfig::default(), 6).unwrap();
    let positions: Vec<_> = (0..6).map(position).collect();
    let batch = Batch::from_states(positions.iter().map(|(s, _)| s));
    let masks: Vec<ActionMask> = positions.iter().map(|(_, m)| *m).collect();
    let together = model.evaluate(&batch, &masks).unwrap();
    for (i, (state, mask)) in positions.iter().enumerate() {
        let alone = model.evaluate(&Batch::from_states([state]), &[*mask]).unwrap();
        assert!((alone[0].1 - together[i].1).abs() < 1e-4);
        for a in mask.indices() {
            assert!((alone[0].0.logp[a] - together[i].0.logp[a]).abs() < 1e-4);
        }
    }
}

#[test]
fn saved_parameters_reproduce_forward_results_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = ActorCritic::<f32>::new(NetworkConfig::default(), 11).unwrap();
    checkpoint::save_model(&path, &model).unwrap();
    let loaded = checkpoint::load(&path).unwrap().model;
    for seed in 0..10 {
        let (state, mask) = position(seed);
        let a = model.policy_output(&state, &mask).unwrap();
        let b = loaded.policy_output(&state, &mask).unwrap();
        assert_eq!(a.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }
}

#[test]
fn parameter_count_is_a_function_of_the_config() {
    let a = ActorCritic::<f32>::new(NetworkConfig::default(), 1).unwrap();
    let b = ActorCritic::<f32>::new(NetworkConfig::default(), 2).unwrap();
    assert_eq!(a.actor.param_count(), b.actor.param_count());
    assert_ne!(a.actor, b.actor);
    let mut bigger = NetworkConfig::default();
    bigger.encoder.num_layers = 4;
    assert!(ActorCritic::<f32>::new(bigger, 1).unwrap().actor.param_count() > a.actor.param_count());
}
