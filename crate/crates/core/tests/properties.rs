//! Property tests over the parser, validator, truncation and metrics.

mod common;

use pitfall_core::corpus::{truncate_extremities, truncate_text};
use pitfall_core::metrics::{best_recall, extract_letter, max_score, token_recall, window_scores, WindowConfig};
use pitfall_core::{parse_plan, print_plan, validate_plan, Validation, WhitespaceTokenizer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn printed_plans_reparse_to_the_same_structure(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = common::random_registry(&mut rng);
        let plan = common::random_plan(&mut rng, &entries);
        let text = print_plan(&plan);
        let back = parse_plan(&text).unwrap();
        prop_assert!(plan.same_structure(&back), "{text}");
        prop_assert_eq!(print_plan(&back), text);
    }

    #[test]
    fn validator_matches_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = common::random_registry(&mut rng);
        let plan = common::random_plan(&mut rng, &entries);
        let mut got: Vec<_> = match validate_plan(&plan, &common::to_registry(&entries)) {
            Validation::Valid => vec![],
            Validation::Invalid(fb) => fb.errors.into_iter().map(|e| e.kind).collect(),
        };
        got.sort();
        prop_assert_eq!(got, common::reference_error_kinds(&plan, &entries));
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,300}") {
        let _ = parse_plan(&text);
    }

    #[test]
    fn parser_handles_step_like_noise(lines in prop::collection::vec("[0-9]{1,2}\\. [a-z]{1,4} = [A-Z_]{1,6}\\((CTX|\"[a-z ,]*\"|[a-z]{1,3})?(, (CTX|[a-z]{1,3}))*\\)( : [a-z :]*)?", 1..8)) {
        let text = lines.join("\n");
        if let Ok(plan) = parse_plan(&text) {
            let again = parse_plan(&print_plan(&plan)).unwrap();
            prop_assert!(plan.same_structure(&again));
        }
    }

    #[test]
    fn truncation_keeps_extremities(len in 0usize..300, limit in 0usize..400) {
        let tokens: Vec<usize> = (0..len).collect();
        let out = truncate_extremities(&tokens, limit);
        prop_assert_eq!(out.len(), len.min(limit));
        if len > limit {
            let head = limit / 2;
            prop_assert_eq!(&out[..head], &tokens[..head]);
            prop_assert_eq!(&out[head..], &tokens[len - (limit - head)..]);
        } else {
            prop_assert_eq!(&out, &tokens);
        }
        prop_assert_eq!(truncate_extremities(&out, limit), out);
    }

    #[test]
    fn text_truncation_counts_tokens(words in prop::collection::vec("[a-z]{1,6}", 0..80), limit in 1usize..100) {
        let text = words.join(" ");
        let cut = truncate_text(&text, limit, &WhitespaceTokenizer);
        prop_assert_eq!(cut.split_whitespace().count(), words.len().min(limit));
        prop_assert_eq!(truncate_text(&cut, limit, &WhitespaceTokenizer), cut.clone());
    }

    #[test]
    fn recall_matches_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prediction = common::random_text(&mut rng, 25);
        let gold = common::random_text(&mut rng, 10);
        let got = token_recall(&prediction, &gold).ok();
        let want = common::reference_recall(&prediction, &gold);
        match (got, want) {
            (Some(g), Some(w)) => prop_assert!((g - w).abs() <= 1e-12),
            (g, w) => prop_assert_eq!(g.is_none(), w.is_none()),
        }
    }

    #[test]
    fn recall_never_drops_when_prediction_grows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prediction = common::random_text(&mut rng, 20);
        let extra = common::random_text(&mut rng, 10);
        let gold = common::random_text(&mut rng, 8);
        if let Ok(base) = token_recall(&prediction, &gold) {
            let longer = token_recall(&format!("{prediction} {extra}"), &gold).unwrap();
            prop_assert!(longer >= base);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert_eq!(token_recall(&gold, &gold).unwrap(), 1.0);
        }
    }

    #[test]
    fn best_recall_is_max_over_golds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prediction = common::random_text(&mut rng, 20);
        let golds: Vec<String> = (0..3).map(|_| common::random_text(&mut rng, 6)).collect();
        let each: Vec<f64> = golds.iter().filter_map(|g| token_recall(&prediction, g).ok()).collect();
        prop_assert_eq!(best_recall(&prediction, &golds), each.iter().copied().reduce(f64::max));
    }

    #[test]
    fn nli_windows_cover_every_token(len in 0usize..300, window in 1usize..64, stride_frac in 0.01f64..1.0) {
        let stride = ((window as f64 * stride_frac).ceil() as usize).clamp(1, window);
        let text = (0..len).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let seen = std::sync::Mutex::new(std::collections::BTreeSet::new());
        let scorer = |premise: &str, _: &str| {
            let mut s = seen.lock().unwrap();
            for t in premise.split_whitespace() {
                s.insert(t.to_string());
            }
            premise.split_whitespace().count() as f64 / 1000.0
        };
        let scores = window_scores(&text, "h", &scorer, WindowConfig { window, stride }).unwrap();
        prop_assert_eq!(seen.lock().unwrap().len(), len);
        prop_assert!(max_score(&scores).unwrap() <= window as f64 / 1000.0);
    }

    #[test]
    fn letter_extraction_only_returns_allowed_letters(output in "\\PC{0,60}", count in 1usize..8) {
        if let Some(c) = extract_letter(&output, count) {
            prop_assert!(c.is_ascii_uppercase());
            prop_assert!(((c as u8 - b'A') as usize) < count);
        }
    }
}
