use super::*;
use crate::dataset::CategorySet;
use crate::provider::LmProvider;
use crate::token::END_TOKEN;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn category_set(names: &[&str]) -> CategorySet {
    CategorySet::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn small_config(feat_dim: usize) -> ModelConfig {
    ModelConfig {
        feat_dim,
        rank: 2,
        alpha: 4.0,
        ..ModelConfig::default()
    }
}

/// Model with every weight zero: the softmax is uniform everywhere.
fn zero_lm(names: &[&str], feat_dim: usize) -> RefLm {
    let cfg = ModelConfig {
        w0_scale: 0.0,
        a_scale: 0.0,
        ..small_config(feat_dim)
    };
    RefLm::new(&category_set(names), &cfg).unwrap()
}

/// Fully random parameters, including a live adapter.
fn random_lm(rng: &mut ChaCha8Rng, words: &[&str], feat_dim: usize, rank: usize) -> RefLm {
    let mut vocab: Vec<String> = words.iter().map(|s| s.to_string()).collect();
    vocab.push(END_TOKEN.to_string());
    let vlen = vocab.len();
    let input_dim = feat_dim + vlen;
    let w0 = Mat::from_fn(vlen, input_dim, |_, _| rng.gen_range(-0.5..0.5));
    let a = Mat::from_fn(vlen, rank, |_, _| rng.gen_range(-0.5..0.5));
    let b = Mat::from_fn(input_dim, rank, |_, _| rng.gen_range(-0.5..0.5));
    RefLm::from_parts(vocab, feat_dim, 0, rank, 2.0 * rank as f64, w0, a, b)
}

fn random_prompt(rng: &mut ChaCha8Rng, pool: &[&str], len: usize) -> String {
    (0..len)
        .map(|_| *pool.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

const POOL: &[&str] = &[
    "roof", "window", "wall", "bird", "green", "painting", "sketch", "photo", "lines", "color",
    "small", "large", "tail", "mane", "strings",
];

// ---- featurize ----

#[test]
fn featurize_counts_repeats() {
    let lm = zero_lm(&["dog"], 32);
    let feat = lm.featurize("dog dog");
    assert_eq!(feat.len(), 1);
    assert_eq!(feat[0].1, 2.0);
}

#[test]
fn featurize_is_bag_of_tokens() {
    let lm = zero_lm(&["dog"], 64);
    assert_eq!(lm.featurize("a b c b"), lm.featurize("b c a b"));
}

#[test]
fn featurize_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lm = zero_lm(&["dog"], 128);
    for _ in 0..1000 {
        let len = rng.gen_range(1..30);
        let prompt = random_prompt(&mut rng, POOL, len);
        // Oracle: count words in a dictionary, then map through the hash.
        let mut word_counts: HashMap<String, f64> = HashMap::new();
        for w in crate::token::tokenize(&prompt) {
            *word_counts.entry(w).or_insert(0.0) += 1.0;
        }
        let mut expected: BTreeMap<usize, f64> = BTreeMap::new();
        for (w, c) in word_counts {
            *expected.entry(lm.hash_index(&w)).or_insert(0.0) += c;
        }
        let expected: Vec<(usize, f64)> = expected.into_iter().collect();
        assert_eq!(lm.featurize(&prompt), expected);
    }
}

// ---- scoring ----

#[test]
fn zero_weights_are_uniform() {
    let names = [
        "dog", "elephant", "giraffe", "guitar", "horse", "house", "person",
    ];
    let lm = zero_lm(&names, 32);
    let vlen = lm.vocab_len() as f64; // 7 category tokens + end
    let score = lm
        .score_answer("anything at all", &["horse".to_string()])
        .unwrap();
    assert!((score.logprobs[0] - (-vlen.ln())).abs() < 1e-12);
}

#[test]
fn hand_set_weights_match_closed_form_softmax() {
    // Three-token answer vocabulary: red, blue, end. Dense reference
    // computation done inline with explicit exp/ln.
    let feat_dim = 4;
    let vocab = vec!["red".to_string(), "blue".to_string(), END_TOKEN.to_string()];
    let input_dim = feat_dim + 3;
    let mut w0 = Mat::zeros(3, input_dim);
    let mut a = Mat::zeros(3, 2);
    let mut b = Mat::zeros(input_dim, 2);
    // arbitrary hand-set values
    for (r, c, v) in [
        (0usize, 0usize, 0.7),
        (0, 5, -0.3),
        (1, 1, 1.1),
        (1, 6, 0.4),
        (2, 0, -0.2),
    ] {
        w0.set(r, c, v);
    }
    for (r, c, v) in [(0, 0, 0.5), (1, 1, -0.25), (2, 0, 0.125)] {
        a.set(r, c, v);
    }
    for (r, c, v) in [(0usize, 0usize, 0.5), (1, 0, -1.0), (6, 1, 2.0)] {
        b.set(r, c, v);
    }
    let alpha = 3.0;
    let rank = 2;
    let lm = RefLm::from_parts(
        vocab,
        feat_dim,
        0,
        rank,
        alpha,
        w0.clone(),
        a.clone(),
        b.clone(),
    );

    let prompt = "red sky";
    let answer = ["blue".to_string()];
    let got = lm.score_answer(prompt, &answer).unwrap();

    // Reference: dense x, dense W = W0 + (alpha/rank) A B^T.
    let mut x = vec![0.0; input_dim];
    for tok in crate::token::tokenize(prompt) {
        x[lm.hash_index(&tok)] += 1.0;
    }
    x[feat_dim + 2] = 1.0; // previous token is the boundary marker
    let scale = alpha / rank as f64;
    let mut z = [0.0f64; 3];
    for (k, zk) in z.iter_mut().enumerate() {
        for (i, xi) in x.iter().enumerate() {
            let mut w = w0.get(k, i);
            for l in 0..rank {
                w += scale * a.get(k, l) * b.get(i, l);
            }
            *zk += w * xi;
        }
    }
    let denom: f64 = z.iter().map(|v| v.exp()).sum();
    let expected = z[1].exp() / denom;
    assert!((got.logprobs[0] - expected.ln()).abs() < 1e-12);
}

#[test]
fn score_total_recomposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lm = random_lm(&mut rng, &["dog", "house"], 32, 2);
    let score = lm
        .score_answer(
            "a dog in a photo",
            &["dog".to_string(), END_TOKEN.to_string()],
        )
        .unwrap();
    let sum: f64 = score.logprobs.iter().sum();
    assert!((score.total - sum).abs() < 1e-9);
    assert!(score.logprobs.iter().all(|lp| *lp <= 0.0));
}

#[test]
fn unknown_answer_token_rejected() {
    let lm = zero_lm(&["dog"], 16);
    assert!(matches!(
        lm.score_answer("p", &["zebra".to_string()]),
        Err(Error::Vocab(_))
    ));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let lm = random_lm(&mut rng, &["dog", "house", "horse"], 24, 3);
        let prompt = random_prompt(&mut rng, POOL, 8);
        let total: f64 = (0..lm.vocab_len())
            .map(|id| {
                let tok = lm.vocab()[id].clone();
                lm.score_answer(&prompt, &[tok]).unwrap().logprobs[0].exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn adapter_identity_when_inert() {
    // Fresh models have B = 0, so scores must equal the W0-only model's,
    // even against an opinionated nonzero base.
    let names = ["dog", "house"];
    let cfg = ModelConfig {
        w0_scale: 0.05,
        ..small_config(32)
    };
    let no_adapter = RefLm::new(
        &category_set(&names),
        &ModelConfig {
            a_scale: 0.0,
            ..cfg.clone()
        },
    )
    .unwrap();
    let with_adapter = RefLm::new(&category_set(&names), &cfg).unwrap();
    let prompt = "a house with windows";
    for tok in ["dog", "house"] {
        let s1 = with_adapter
            .score_answer(prompt, &[tok.to_string()])
            .unwrap();
        let s2 = no_adapter.score_answer(prompt, &[tok.to_string()]).unwrap();
        assert_eq!(s1.logprobs[0].to_bits(), s2.logprobs[0].to_bits());
    }
}

// ---- beam search ----

#[test]
fn beam_one_equals_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..200 {
        let words: &[&str] = if trial % 2 == 0 {
            &["dog", "house", "horse"]
        } else {
            &["red", "blue", "green", "gray"]
        };
        let lm = random_lm(&mut rng, words, 16, 2);
        let prompt_len = rng.gen_range(1..10);
        let prompt = random_prompt(&mut rng, POOL, prompt_len);
        let max_tokens = 5;
        let got = lm.beam_generate(&prompt, 1, max_tokens);

        // Greedy oracle: extend by the argmax token each step, ties to the
        // smaller id, using score_answer as the probability source.
        let mut prefix: Vec<String> = Vec::new();
        let mut truncated = true;
        for _ in 0..max_tokens {
            let mut best: Option<(f64, usize)> = None;
            for id in 0..lm.vocab_len() {
                let mut cand = prefix.clone();
                cand.push(lm.vocab()[id].clone());
                let lp = *lm
                    .score_answer(&prompt, &cand)
                    .unwrap()
                    .logprobs
                    .last()
                    .unwrap();
                let better = match best {
                    None => true,
                    Some((b, _)) => lp > b,
                };
                if better {
                    best = Some((lp, id));
                }
            }
            let (_, id) = best.unwrap();
            if id == lm.end_id() {
                truncated = false;
                break;
            }
            prefix.push(lm.vocab()[id].clone());
        }
        let expected: Vec<usize> = prefix.iter().map(|t| lm.token_id(t).unwrap()).collect();
        assert_eq!(got.token_ids, expected, "trial {trial}");
        assert_eq!(got.truncated, truncated, "trial {trial}");
    }
}

#[test]
fn beam_prefers_trained_sequence() {
    // vocab {house, end}: weight mass on "house" at step 0, end after.
    let feat_dim = 4;
    let vocab = vec!["house".to_string(), END_TOKEN.to_string()];
    let input_dim = feat_dim + 2;
    let mut w0 = Mat::zeros(2, input_dim);
    w0.set(0, feat_dim + 1, 3.0); // house likely after boundary
    w0.set(1, feat_dim, 3.0); // end likely after house
    let lm = RefLm::from_parts(
        vocab,
        feat_dim,
        0,
        1,
        1.0,
        w0,
        Mat::zeros(2, 1),
        Mat::zeros(input_dim, 1),
    );
    let out = lm.beam_generate("anything", 4, 8);
    assert_eq!(lm.answer_text(&out.token_ids), "house");
    assert!(!out.truncated);

    let gen = LmProvider::generate(&lm, "anything", 4, 8).unwrap();
    assert_eq!(gen.text, "house");
}

#[test]
fn wide_beam_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..50 {
        let lm = random_lm(&mut rng, &["red", "blue"], 8, 2);
        let prompt = random_prompt(&mut rng, POOL, 4);
        let max_tokens = 3;
        // Every complete sequence emits at most max_tokens tokens including
        // the end marker, i.e. up to 2 answer tokens here.
        let mut sequences: Vec<Vec<usize>> = vec![vec![]];
        for len in 1..max_tokens {
            let mut next = Vec::new();
            for s in sequences.iter().filter(|s| s.len() == len - 1) {
                for t in 0..lm.vocab_len() - 1 {
                    let mut s2 = s.clone();
                    s2.push(t);
                    next.push(s2);
                }
            }
            sequences.extend(next);
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for seq in &sequences {
            let mut tokens: Vec<String> = seq.iter().map(|&t| lm.vocab()[t].clone()).collect();
            tokens.push(END_TOKEN.to_string());
            let total = lm.score_answer(&prompt, &tokens).unwrap().total;
            let full: Vec<usize> = seq
                .iter()
                .copied()
                .chain(std::iter::once(lm.end_id()))
                .collect();
            let replace = match &best {
                None => true,
                Some((bt, bseq)) => total > *bt || (total == *bt && full < *bseq),
            };
            if replace {
                best = Some((total, full));
            }
        }
        let (best_total, mut best_seq) = best.unwrap();
        best_seq.pop();
        let got = lm.beam_generate(&prompt, 64, max_tokens);
        assert_eq!(got.token_ids, best_seq, "trial {trial}");
        assert!((got.total - best_total).abs() < 1e-12, "trial {trial}");
        assert!(!got.truncated);
    }
}

#[test]
fn wider_beam_never_scores_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut compared = 0;
    for _ in 0..100 {
        let lm = random_lm(&mut rng, &["dog", "house", "horse"], 12, 2);
        let prompt = random_prompt(&mut rng, POOL, 5);
        let mut prev: Option<f64> = None;
        for width in 1..=5 {
            let out = lm.beam_generate(&prompt, width, 6);
            if out.truncated {
                prev = None;
                continue;
            }
            if let Some(p) = prev {
                assert!(
                    out.total >= p - 1e-12,
                    "width {width}: {} < {}",
                    out.total,
                    p
                );
                compared += 1;
            }
            prev = Some(out.total);
        }
    }
    assert!(compared > 100, "too few comparable pairs: {compared}");
}

// ---- loss and gradients ----

#[test]
fn uniform_loss_is_log_vocab() {
    // 7-token answer vocabulary, single 1-token example, zero weights.
    let names = ["dog", "elephant", "giraffe", "guitar", "horse", "house"];
    let lm = zero_lm(&names, 32); // 6 categories + end = 7 tokens
    assert_eq!(lm.vocab_len(), 7);
    let ex = Example::new(&lm, "whatever prompt", &["dog".to_string()]).unwrap();
    let (loss, _) = lm.loss_and_grad(&[ex]).unwrap();
    assert!((loss - 7.0f64.ln()).abs() < 1e-12);
}

fn loss_of(lm: &RefLm, batch: &[Example]) -> f64 {
    lm.loss_and_grad(batch).unwrap().0
}

#[test]
fn gradients_match_central_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let h = 1e-5;
    for trial in 0..100 {
        let words: &[&str] = &["dog", "house", "horse"][..rng.gen_range(2..4)];
        let feat_dim = rng.gen_range(6..20);
        let rank = rng.gen_range(1..4);
        let lm = random_lm(&mut rng, words, feat_dim, rank);
        let batch: Vec<Example> = (0..rng.gen_range(1..4))
            .map(|_| {
                let prompt_len = rng.gen_range(1..8);
                let prompt = random_prompt(&mut rng, POOL, prompt_len);
                let n_answer = rng.gen_range(1..3);
                let mut answer: Vec<String> = (0..n_answer)
                    .map(|_| words.choose(&mut rng).unwrap().to_string())
                    .collect();
                answer.push(END_TOKEN.to_string());
                Example::new(&lm, &prompt, &answer).unwrap()
            })
            .collect();
        let (_, grads) = lm.loss_and_grad(&batch).unwrap();

        let check = |analytic: f64, fd: f64, what: &str| {
            let denom = analytic.abs().max(fd.abs());
            let ok = (analytic - fd).abs() <= 1e-4 * denom || (analytic - fd).abs() <= 1e-8;
            assert!(ok, "trial {trial} {what}: analytic {analytic} vs fd {fd}");
        };

        for r in 0..lm.vocab_len() {
            for c in 0..rank {
                let mut plus = lm.clone();
                plus.adapter_a_mut().add_at(r, c, h);
                let mut minus = lm.clone();
                minus.adapter_a_mut().add_at(r, c, -h);
                let fd = (loss_of(&plus, &batch) - loss_of(&minus, &batch)) / (2.0 * h);
                check(grads.a.get(r, c), fd, &format!("A[{r}][{c}]"));
            }
        }
        for r in 0..lm.input_dim() {
            for c in 0..rank {
                let mut plus = lm.clone();
                plus.adapter_b_mut().add_at(r, c, h);
                let mut minus = lm.clone();
                minus.adapter_b_mut().add_at(r, c, -h);
                let fd = (loss_of(&plus, &batch) - loss_of(&minus, &batch)) / (2.0 * h);
                check(grads.b.get(r, c), fd, &format!("B[{r}][{c}]"));
            }
        }
    }
}

#[test]
fn duplicated_batch_is_mean_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let lm = random_lm(&mut rng, &["dog", "house"], 16, 2);
    let batch: Vec<Example> = (0..3)
        .map(|i| {
            Example::new(
                &lm,
                &random_prompt(&mut rng, POOL, 4 + i),
                &["dog".to_string(), END_TOKEN.to_string()],
            )
            .unwrap()
        })
        .collect();
    let mut doubled = batch.clone();
    doubled.extend(batch.clone());
    let (l1, g1) = lm.loss_and_grad(&batch).unwrap();
    let (l2, g2) = lm.loss_and_grad(&doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (x, y) in g1.a.data().iter().zip(g2.a.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in g1.b.data().iter().zip(g2.b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

// ---- optimizer ----

#[test]
fn zero_gradient_is_a_fixed_point() {
    let cfg = TrainConfig::default();
    let mut params = vec![0.5, -1.25, 2.0];
    let grads = vec![0.0; 3];
    let mut m = vec![0.0; 3];
    let mut v = vec![0.0; 3];
    adamw_update(&mut params, &grads, &mut m, &mut v, &cfg, 0.1, 0.001);
    assert_eq!(params, vec![0.5, -1.25, 2.0]);
}

#[test]
fn weight_decay_shrinks_without_gradient() {
    let cfg = TrainConfig {
        weight_decay: 0.1,
        ..TrainConfig::default()
    };
    let mut params = vec![1.0];
    let mut m = vec![0.0];
    let mut v = vec![0.0];
    adamw_update(&mut params, &[0.0], &mut m, &mut v, &cfg, 0.1, 0.001);
    assert!((params[0] - (1.0 - 1e-3 * 0.1)).abs() < 1e-15);
}

#[test]
fn one_step_decreases_single_example_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for trial in 0..100 {
        let mut lm = random_lm(&mut rng, &["dog", "house"], 16, 2);
        let ex = Example::new(
            &lm,
            &{
                let prompt_len = rng.gen_range(2..8);
                random_prompt(&mut rng, POOL, prompt_len)
            },
            &["house".to_string(), END_TOKEN.to_string()],
        )
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            ..TrainConfig::default()
        };
        let mut state = OptimState::new(&lm);
        let before = loss_of(&lm, std::slice::from_ref(&ex));
        train_step(&mut lm, &mut state, std::slice::from_ref(&ex), &cfg).unwrap();
        let after = loss_of(&lm, std::slice::from_ref(&ex));
        assert!(after < before, "trial {trial}: {after} !< {before}");
    }
}

#[test]
fn training_is_deterministic_and_w0_frozen() {
    let run = || {
        let names = ["dog", "house", "horse"];
        let cfg = ModelConfig {
            w0_scale: 0.05,
            ..small_config(64)
        };
        let mut lm = RefLm::new(&category_set(&names), &cfg).unwrap();
        let w0_before: Vec<u64> = lm.w0().data().iter().map(|v| v.to_bits()).collect();
        let mut state = OptimState::new(&lm);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tc = TrainConfig::default();
        for _ in 0..50 {
            let batch: Vec<Example> = (0..4)
                .map(|_| {
                    let label = ["dog", "house", "horse"]
                        .choose(&mut rng)
                        .unwrap()
                        .to_string();
                    let prompt = format!("{} {}", random_prompt(&mut rng, POOL, 5), label);
                    Example::new(&lm, &prompt, &[label, END_TOKEN.to_string()]).unwrap()
                })
                .collect();
            train_step(&mut lm, &mut state, &batch, &tc).unwrap();
        }
        let w0_after: Vec<u64> = lm.w0().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(w0_before, w0_after, "frozen base must not move");
        (
            lm.adapter_a()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            lm.adapter_b()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

// ---- sensitivity ----

#[test]
fn dominant_feature_ranks_first() {
    // One prompt word is wired (through W0) to determine the answer; its
    // loss gradient must dominate every other word's.
    let feat_dim = 64;
    let vocab = vec![
        "dog".to_string(),
        "house".to_string(),
        END_TOKEN.to_string(),
    ];
    let input_dim = feat_dim + 3;
    let mut w0 = Mat::zeros(3, input_dim);
    let lm_probe = RefLm::from_parts(
        vocab.clone(),
        feat_dim,
        0,
        1,
        1.0,
        Mat::zeros(3, input_dim),
        Mat::zeros(3, 1),
        Mat::zeros(input_dim, 1),
    );
    let slot = lm_probe.hash_index("kennel");
    w0.set(0, slot, 4.0); // "kennel" pushes hard toward "dog"
    w0.set(1, slot, -4.0);
    let lm = RefLm::from_parts(
        vocab,
        feat_dim,
        0,
        1,
        1.0,
        w0,
        Mat::zeros(3, 1),
        Mat::zeros(input_dim, 1),
    );
    let scores = lm
        .token_sensitivity("the kennel near a window", &["dog".to_string()])
        .unwrap();
    let top = scores.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(top.0, "kennel");
    let kennel = scores.iter().find(|(w, _)| w == "kennel").unwrap().1;
    for (w, s) in &scores {
        if w != "kennel" {
            assert!(kennel > *s, "{w} not dominated");
        }
    }
}

#[test]
fn zero_model_has_zero_sensitivity() {
    let lm = zero_lm(&["dog", "house"], 32);
    let scores = lm
        .token_sensitivity("some words here", &["dog".to_string()])
        .unwrap();
    assert!(!scores.is_empty());
    assert!(scores.iter().all(|(_, s)| *s == 0.0));
}

#[test]
fn sensitivity_invariant_under_word_reordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let lm = random_lm(&mut rng, &["dog", "house"], 32, 2);
    let a = lm
        .token_sensitivity("roof bird wall", &["dog".to_string()])
        .unwrap();
    let b = lm
        .token_sensitivity("wall roof bird", &["dog".to_string()])
        .unwrap();
    let to_map = |v: Vec<(String, f64)>| -> HashMap<String, u64> {
        v.into_iter().map(|(w, s)| (w, s.to_bits())).collect()
    };
    assert_eq!(to_map(a), to_map(b));
}

#[test]
fn multi_token_word_gets_mean_of_its_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let lm = random_lm(&mut rng, &["dog"], 64, 2);
    // "e-mail" tokenizes to [e, mail]. Within one prompt (one gradient), its
    // score is the mean of the standalone words' scores.
    let scores = lm
        .token_sensitivity("e-mail e mail", &["dog".to_string()])
        .unwrap();
    let find = |w: &str| scores.iter().find(|(x, _)| x == w).unwrap().1;
    let expected = (find("e") + find("mail")) / 2.0;
    assert_eq!(scores[0].0, "e-mail");
    assert!((find("e-mail") - expected).abs() < 1e-12);
}

// ---- checkpoints ----

#[test]
fn checkpoint_round_trips_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut lm = random_lm(&mut rng, &["dog", "house"], 16, 2);
    let mut state = OptimState::new(&lm);
    let ex = Example::new(&lm, "roof wall", &["dog".to_string()]).unwrap();
    for _ in 0..3 {
        train_step(
            &mut lm,
            &mut state,
            std::slice::from_ref(&ex),
            &TrainConfig::default(),
        )
        .unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&lm, Some(&state), &path).unwrap();
    let (loaded, loaded_state) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, lm);
    assert_eq!(loaded_state.unwrap(), state);
    assert_eq!(loaded.param_digest(), lm.param_digest());

    // Saving the loaded model reproduces the same bytes.
    let path2 = dir.path().join("model2.ckpt");
    save_checkpoint(&loaded, Some(&state), &path2).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap()
    );
}

#[test]
fn checkpoint_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::FormatFile(_))));
}

#[test]
fn category_round_trip_enforced() {
    // "e-mail" tokenizes to "e mail", which no longer matches the name.
    let cs = category_set(&["e-mail", "dog"]);
    assert!(matches!(
        RefLm::new(&cs, &small_config(16)),
        Err(Error::Arg(_))
    ));
}
