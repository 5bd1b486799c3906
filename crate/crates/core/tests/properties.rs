use std::sync::LazyLock;

use nepgpt::corpus::{clean_text, dedup_corpus, CleanConfig, DocRecord};
use nepgpt::model::{attention_naive, attention_tiled, AttnTiling};
use nepgpt::shards::{list_shards, next_batch, read_shard, write_shards, Cursor, DatasetSplit, SplitRole};
use nepgpt::tokenizer::{decode, encode, train_bpe, BpeVocab, TokenizerConfig, BOS_ID, EOS_ID};
use proptest::prelude::*;

static VOCAB: LazyLock<BpeVocab> = LazyLock::new(|| {
    let corpus = [
        "नेपाल हिमालको देश हो ।",
        "हामी नेपाली भाषा बोल्छौं ।",
        "काठमाडौं उपत्यका सुन्दर छ ।",
    ];
    let cfg = TokenizerConfig {
        vocab_size: 320,
        ..TokenizerConfig::default()
    };
    train_bpe(&corpus, &cfg, 0).unwrap()
});

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => "[\u{0900}-\u{097F} ]{0,40}",
        1 => any::<String>(),
        1 => "[a-z\u{0915}-\u{0939} \n]{0,30}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn encode_decode_round_trip(s in text(), bos: bool, eos: bool) {
        let ids = encode(&s, &VOCAB, bos, eos);
        prop_assert!(ids.iter().all(|&id| (id as usize) < VOCAB.len()));
        prop_assert_eq!(ids.first() == Some(&BOS_ID), bos);
        let body = &ids[usize::from(bos)..ids.len() - usize::from(eos)];
        prop_assert_eq!(decode(body, &VOCAB).unwrap(), s);
        if eos {
            prop_assert_eq!(ids.last(), Some(&EOS_ID));
        }
    }

    #[test]
    fn dedup_is_idempotent(lines in prop::collection::vec("[कखगघ ]{0,6}", 0..30), split in 1usize..5) {
        let cfg = CleanConfig { min_sentence_chars: 1, ..CleanConfig::default() };
        let docs: Vec<DocRecord> = lines
            .chunks(split)
            .enumerate()
            .map(|(i, c)| DocRecord::new(format!("d{i}"), c.join("\n")))
            .collect();
        let (once, _) = dedup_corpus(docs, &cfg);
        let (twice, stats) = dedup_corpus(once.clone(), &cfg);
        prop_assert_eq!(stats.duplicates_removed, 0);
        let texts = |d: &[DocRecord]| d.iter().map(|r| r.text.clone()).collect::<Vec<_>>();
        prop_assert_eq!(texts(&once), texts(&twice));
        let all: Vec<&str> = once.iter().flat_map(|d| d.text.lines()).collect();
        let unique: std::collections::HashSet<&str> = all.iter().copied().collect();
        prop_assert_eq!(unique.len(), all.len());
    }

    #[test]
    fn cleaning_is_idempotent(s in any::<String>()) {
        let cfg = CleanConfig::default();
        let once = clean_text(&s, &cfg);
        prop_assert_eq!(clean_text(&once, &cfg), once);
    }

    #[test]
    fn tiled_attention_matches_naive(
        seq in 1usize..40,
        heads in 1usize..4,
        rows in 1usize..20,
        cols in 1usize..20,
        causal: bool,
        seed: u64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = heads * seq * 4;
        let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-3.0..3.0)).collect() };
        let (q, k, v) = (draw(), draw(), draw());
        let tiling = AttnTiling::new(rows, cols).unwrap();
        let a = attention_tiled(&q, &k, &v, heads, seq, tiling, causal).unwrap();
        let b = attention_naive(&q, &k, &v, heads, seq, causal).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shards_reassemble_the_stream(tokens in prop::collection::vec(0u32..1000, 0..3000), per in 1usize..700) {
        let dir = tempfile::tempdir().unwrap();
        let files = write_shards(tokens.iter().copied(), per, dir.path(), 1000).unwrap();
        let sizes: Vec<u64> = files.iter().map(|f| f.header.token_count).collect();
        prop_assert_eq!(sizes.len(), tokens.len().div_ceil(per));
        if let Some((last, full)) = sizes.split_last() {
            prop_assert!(full.iter().all(|&n| n == per as u64));
            prop_assert!(*last >= 1 && *last <= per as u64);
        }
        let mut back = Vec::new();
        for p in list_shards(dir.path()).unwrap() {
            back.extend(read_shard(&p).unwrap().1.into_iter().map(u32::from));
        }
        prop_assert_eq!(back, tokens);
    }

    #[test]
    fn batches_are_shifted_windows(n in 20usize..400, micro in 1usize..5, seq in 1usize..9, steps in 1usize..6) {
        let tokens: Vec<u16> = (0..n as u16).collect();
        let split = DatasetSplit::from_tokens(SplitRole::Train, tokens, 1000);
        let mut cursor = Cursor::default();
        for _ in 0..steps {
            let (b, next) = next_batch(&split, cursor, micro, seq).unwrap();
            for r in 0..micro {
                let (x, y) = (b.row_inputs(r), b.row_targets(r));
                prop_assert_eq!(&x[1..], &y[..seq - 1]);
                prop_assert!(x.iter().zip(y).all(|(a, b)| a + 1 == *b));
            }
            prop_assert!(next.position <= n as u64);
            cursor = next;
        }
    }
}
