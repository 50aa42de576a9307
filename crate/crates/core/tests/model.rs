mod common;

use adiff_core::audio::{MelSpec, TaggerConfig};
use adiff_core::model::{load_model, nearest_vocab, save_model, Adiff, Example, ModelConfig};
use adiff_core::tensor::{Graph, GroupSet, ParamGroup, Tensor};
use adiff_core::text::EOT_ID;
use common::gradcheck::{check_params, rel_err};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_tagger() -> TaggerConfig {
    TaggerConfig { mels: 8, hidden: 8, ..TaggerConfig::default() }
}

fn toy(seed: u64) -> Adiff<f64> {
    Adiff::new(ModelConfig::toy(), toy_tagger(), seed).unwrap()
}

fn random_mel(frames: usize, mels: usize, rng: &mut impl Rng) -> MelSpec {
    MelSpec { frames, mels, data: (0..frames * mels).map(|_| rng.random_range(-3.0..3.0)).collect() }
}

fn random_emb(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Scales every weight matrix up so the check exercises non-trivial activations.
fn inflate(m: &mut Adiff<f64>, rng: &mut impl Rng) {
    let ids: Vec<_> = m.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = m.store.get(id);
        if p.name.starts_with("phi.norm") {
            continue;
        }
        let shape = p.value.shape().to_vec();
        *m.store.value_mut(id) = Tensor::randn(&shape, 0.3, rng);
    }
}

#[test]
fn full_toy_forward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut m = toy(1);
    inflate(&mut m, &mut rng);
    let mel1 = random_mel(12, 8, &mut rng);
    let mel2 = random_mel(9, 8, &mut rng);
    let prompt = vec![72, 105, EOT_ID];
    let target = vec![104, 299, 5, EOT_ID];
    let loss = |g: &mut Graph<f64>| {
        let e1 = m.encode(g, &mel1).unwrap();
        let e2 = m.encode(g, &mel2).unwrap();
        let (_, post) = m.prefix(g, e1, e2, &prompt).unwrap();
        m.target_nll(g, post.seq, &target).unwrap()
    };
    // normalisation statistics are fixed inputs, not differentiable weights
    let skip = [m.tagger.norm_mean, m.tagger.norm_scale];
    let (err, probed) = check_params(&m.store, GroupSet::all(), &skip, 24, &mut rng, &loss);
    assert!(probed > 500, "probed {probed}");
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn dropped_constant_rows_still_receive_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = toy(2);
    inflate(&mut m, &mut rng);
    let ex = Example {
        emb1: random_emb(8, &mut rng),
        emb2: random_emb(8, &mut rng),
        prompt: vec![1, 2, 3],
        target: vec![9, EOT_ID],
    };
    let mut g = Graph::with_params(&m.store, GroupSet::of(&[ParamGroup::Zeta]));
    let l = m.sequence_loss(&mut g, std::slice::from_ref(&ex)).unwrap();
    let grads = g.backward(l).unwrap();
    let gk = grads.param(m.audio_map.constant).expect("constant reached");
    assert!(gk.data().iter().any(|v| v.abs() > 1e-8));
    let loss = |g: &mut Graph<f64>| m.sequence_loss(g, std::slice::from_ref(&ex)).unwrap();
    let store = m.store.clone();
    let others: Vec<_> = store.ids_in(GroupSet::all()).into_iter().filter(|&id| id != m.audio_map.constant).collect();
    let (err, probed) = check_params(&store, GroupSet::all(), &others, usize::MAX, &mut rng, &loss);
    assert_eq!(probed, store.value(m.audio_map.constant).len());
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn paper_default_prefix_is_121() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.prefix_len(), 121);
    let m = Adiff::<f32>::new(cfg, TaggerConfig::default(), 0).unwrap();
    let mut g = Graph::with_params(&m.store, GroupSet::EMPTY);
    let e = g.constant(Tensor::full(&[1, 64], 0.1));
    let prompt = vec![EOT_ID; 40];
    let (pre, post) = m.prefix(&mut g, e, e, &prompt).unwrap();
    assert_eq!(pre.len(), 121);
    assert_eq!(g.shape(post.seq), &[121, 128]);
    assert_eq!(pre.blocks, [(0, 40), (40, 41), (41, 81), (81, 121)]);
}

#[test]
fn disabled_cross_projection_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ModelConfig { cross_projection: false, ..ModelConfig::toy() };
    let m = Adiff::<f32>::new(cfg, toy_tagger(), 5).unwrap();
    let mut g = Graph::with_params(&m.store, GroupSet::EMPTY);
    let e1 = m.embedding_var(&mut g, &random_emb(8, &mut rng)).unwrap();
    let e2 = m.embedding_var(&mut g, &random_emb(8, &mut rng)).unwrap();
    let (pre, post) = m.prefix(&mut g, e1, e2, &[4, 5, 6]).unwrap();
    let a: Vec<u32> = g.value(pre.seq).data().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = g.value(post.seq).data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn enabled_cross_projection_changes_the_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = toy(6);
    let mut g = Graph::with_params(&m.store, GroupSet::EMPTY);
    let e1 = m.embedding_var(&mut g, &random_emb(8, &mut rng)).unwrap();
    let e2 = m.embedding_var(&mut g, &random_emb(8, &mut rng)).unwrap();
    let (pre, post) = m.prefix(&mut g, e1, e2, &[4, 5, 6]).unwrap();
    assert!(g.value(pre.seq).max_abs_diff(g.value(post.seq)) > 0.0);
}

#[test]
fn swapping_audio_swaps_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = toy(7);
    let (x1, x2) = (random_emb(8, &mut rng), random_emb(8, &mut rng));
    let mut g = Graph::with_params(&m.store, GroupSet::EMPTY);
    let (a, b) = (m.embedding_var(&mut g, &x1).unwrap(), m.embedding_var(&mut g, &x2).unwrap());
    let (fwd, _) = m.prefix(&mut g, a, b, &[7, 8, 9]).unwrap();
    let (rev, _) = m.prefix(&mut g, b, a, &[7, 8, 9]).unwrap();
    let (f, r) = (g.value(fwd.seq).clone(), g.value(rev.seq).clone());
    let [b1, sep, b2, text] = fwd.blocks;
    let rows = |t: &Tensor<f64>, (s, e): (usize, usize)| t.slice_rows(s, e).unwrap();
    assert_eq!(rows(&f, b1), rows(&r, b2));
    assert_eq!(rows(&f, b2), rows(&r, b1));
    assert_eq!(rows(&f, sep), rows(&r, sep));
    assert_eq!(rows(&f, text), rows(&r, text));
}

#[test]
fn logits_are_causal_over_generated_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = toy(8);
    let prefix = m.prefix_tensor(&random_emb(8, &mut rng), &random_emb(8, &mut rng), &[1, 2, 3]).unwrap();
    let logits = |tokens: &[u32]| {
        let mut g = Graph::with_params(&m.store, GroupSet::EMPTY);
        let p = g.constant(prefix.clone());
        let l = m.decode_logits(&mut g, Some(p), tokens).unwrap();
        g.value(l).clone()
    };
    let base = logits(&[10, 20, 30, 40, 50]);
    assert_eq!(base.shape(), &[13, 300]);
    for j in 0..5 {
        let mut changed = vec![10, 20, 30, 40, 50];
        for t in changed.iter_mut().skip(j + 1) {
            *t = rng.random_range(0..300);
        }
        let other = logits(&changed);
        let upto = 8 + j + 1;
        assert_eq!(base.slice_rows(0, upto).unwrap(), other.slice_rows(0, upto).unwrap(), "position {j}");
    }
}

#[test]
fn second_audio_changes_next_token_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = toy(9);
    let e1 = random_emb(8, &mut rng);
    let a = m.prefix_tensor(&e1, &random_emb(8, &mut rng), &[1, 2, 3]).unwrap();
    let b = m.prefix_tensor(&e1, &random_emb(8, &mut rng), &[1, 2, 3]).unwrap();
    let la = m.next_token_logits(&a, &[]).unwrap();
    let lb = m.next_token_logits(&b, &[]).unwrap();
    assert_eq!(la.len(), 300);
    let diff = la.iter().zip(&lb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 0.0);
}

#[test]
fn project_text_is_pure() {
    let m = toy(10);
    let run = || {
        let mut g = Graph::with_params(&m.store, GroupSet::EMPTY);
        let v = m.project_text(&mut g, &[3, 1, 4]).unwrap();
        g.value(v).clone()
    };
    let out = run();
    assert_eq!(out.shape(), &[3, 8]);
    assert_eq!(out, run());
}

#[test]
fn nearest_vocab_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = toy(11);
    let table = m.store.value(m.wte);
    for _ in 0..200 {
        let latent: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..300 {
            let row = table.row(i);
            let cos = row.iter().zip(&latent).map(|(a, b)| a * b).sum::<f64>()
                / (row.iter().map(|a| a * a).sum::<f64>().sqrt() * latent.iter().map(|b| b * b).sum::<f64>().sqrt());
            if cos > best.0 {
                best = (cos, i as u32);
            }
        }
        assert_eq!(nearest_vocab(&latent, table).unwrap(), best.1);
    }
}

#[test]
fn nearest_vocab_ties_go_to_lowest_id() {
    let table = Tensor::<f64>::from_f64(&[4, 2], &[0.0, 1.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(nearest_vocab(&[3.0, 0.0], &table).unwrap(), 1);
}

#[test]
fn parameter_groups_partition_all_parameters() {
    let m = toy(12);
    let mut total = 0;
    for g in ParamGroup::ALL {
        let ids = m.store.ids_in(GroupSet::of(&[g]));
        for id in &ids {
            assert!(m.store.get(*id).name.starts_with(g.ascii()));
        }
        total += ids.len();
    }
    assert_eq!(total, m.store.len());
    assert!(ParamGroup::ALL.iter().all(|&g| !m.store.ids_in(GroupSet::of(&[g])).is_empty()));
}

#[test]
fn model_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = Adiff::<f32>::new(ModelConfig::toy(), toy_tagger(), 21).unwrap();
    m.meta.insert("stage".into(), "2".into());
    save_model(&m, dir.path()).unwrap();
    let back = load_model::<f32>(dir.path()).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.meta, m.meta);
    for ((_, a), (_, b)) in m.store.iter().zip(back.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn loss_is_mean_of_per_example_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let m = toy(13);
    let exs: Vec<Example> = (0..3)
        .map(|i| Example {
            emb1: random_emb(8, &mut rng),
            emb2: random_emb(8, &mut rng),
            prompt: vec![1, 2, 3],
            target: (0..=i).map(|t| 40 + t as u32).chain([EOT_ID]).collect(),
        })
        .collect();
    let mut g = Graph::with_params(&m.store, GroupSet::EMPTY);
    let batch = m.sequence_loss(&mut g, &exs).unwrap();
    let batch = g.value(batch).item();
    let mut per = 0.0;
    for ex in &exs {
        // oracle: explicit log-softmax per target position
        let prefix = m.prefix_tensor(&ex.emb1, &ex.emb2, &ex.prompt).unwrap();
        for j in 0..ex.target.len() {
            let row = m.next_token_logits(&prefix, &ex.target[..j]).unwrap();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            per += lse - row[ex.target[j] as usize];
        }
    }
    assert!(rel_err(batch, per / 3.0) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn cross_projection_preserves_length(
        heads in 1usize..3, half in 1usize..4, s in 1usize..5, text in 1usize..6,
        mapper_const in 1usize..4, cross_const in 1usize..4, cross_depth in 1usize..3, seed: u64,
    ) {
        let d = heads * half * 2;
        let cfg = ModelConfig {
            d, heads, layers: 1, vocab: 260, audio_prefix: s, text_prefix: text,
            mapper_depth: 1, mapper_const, cross_depth, cross_const,
            max_len: 2 * s + 1 + text + 4, encoder_dim: 6, cross_projection: true, text_projection: true,
        };
        let m = Adiff::<f32>::new(cfg, TaggerConfig { mels: 4, hidden: 6, ..TaggerConfig::default() }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prompt: Vec<u32> = (0..text).map(|_| rng.random_range(0..260)).collect();
        let t = m.prefix_tensor(&random_emb(6, &mut rng), &random_emb(6, &mut rng), &prompt).unwrap();
        prop_assert_eq!(t.shape(), &[2 * s + 1 + text, d]);
    }
}
