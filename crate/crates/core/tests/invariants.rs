use std::sync::OnceLock;

use proptest::prelude::*;
use ptkit::corpus::{pack_sentences, PackedDocument, Sentence};
use ptkit::denoise::{decode_cache, encode_cache, DenoisePair};
use ptkit::metrics::{f1_score, pearson, F1Average};
use ptkit::model::{round_to_f32, Checkpoint, ModelConfig, PositionScheme, Seq2Seq};
use ptkit::ner::{merge_windows, parse_tagged_output, repair_bio, to_bio, Bio, LabelLanguage, NerClass};
use ptkit::tasks::{build_ner_target, window_offsets};
use ptkit::unigram::{train_vocab, TrainerConfig, UnigramVocab};

const CORPUS: &[&str] = &[
    "a menina comeu o bolo de laranja",
    "o menino leu um livro na praia",
    "choveu muito em são paulo ontem",
    "ação, reação e emoção: três palavras",
];

fn vocab() -> &'static UnigramVocab {
    static V: OnceLock<UnigramVocab> = OnceLock::new();
    V.get_or_init(|| {
        train_vocab(
            CORPUS,
            &TrainerConfig {
                vocab_size: 70,
                ..TrainerConfig::default()
            },
        )
        .unwrap()
    })
}

fn covered_text() -> impl Strategy<Value = String> {
    let chars: Vec<char> = {
        let mut c: Vec<char> = CORPUS.iter().flat_map(|s| s.chars()).collect();
        c.sort();
        c.dedup();
        c
    };
    prop::collection::vec(prop::sample::select(chars), 0..60).prop_map(|v| v.into_iter().collect())
}

fn bio_tags(max_len: usize) -> impl Strategy<Value = Vec<Bio>> {
    prop::collection::vec((0..3u8, 0..5usize), 1..max_len).prop_map(|v| {
        let mut tags: Vec<Bio> = v
            .into_iter()
            .map(|(kind, c)| match kind {
                0 => Bio::O,
                1 => Bio::B(NerClass::ALL[c]),
                _ => Bio::I(NerClass::ALL[c]),
            })
            .collect();
        repair_bio(&mut tags);
        tags
    })
}

proptest! {
    #[test]
    fn covered_text_round_trips(s in covered_text()) {
        let v = vocab();
        prop_assert!(v.covers(&s));
        prop_assert_eq!(v.decode(&v.encode(&s)).unwrap(), s);
    }

    #[test]
    fn encoding_never_emits_control_ids(s in covered_text()) {
        prop_assert!(vocab().encode(&s).iter().all(|&id| !UnigramVocab::is_reserved(id)));
    }

    #[test]
    fn windows_cover_every_position(len in 1usize..400, size in 2usize..64, stride_frac in 0.05f64..0.99) {
        let stride = ((size as f64 * stride_frac) as usize).clamp(1, size - 1);
        let offs = window_offsets(len, size, stride).unwrap();
        prop_assert_eq!(offs[0], 0);
        prop_assert!(offs.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= stride));
        prop_assert_eq!((offs[offs.len() - 1] + size).min(len), len);
        prop_assert!(len <= size || offs.iter().all(|&o| o + size <= len));
    }

    #[test]
    fn ner_target_inverts(tags in bio_tags(40), english in any::<bool>()) {
        let words: Vec<String> = (0..tags.len()).map(|i| format!("w{i}")).collect();
        let lang = if english { LabelLanguage::English } else { LabelLanguage::Portuguese };
        let text = build_ner_target(&words, &tags, lang).unwrap();
        let parsed = parse_tagged_output(&text);
        prop_assert!(!parsed.dangling && parsed.unknown_labels == 0 && parsed.empty_segments == 0);
        prop_assert_eq!(to_bio(&parsed.segments, tags.len()), (tags, 0));
    }

    #[test]
    fn merging_consistent_windows_recovers_tags(tags in bio_tags(120), size in 2usize..16, stride in 1usize..15) {
        prop_assume!(stride < size);
        let windows: Vec<(usize, Vec<Bio>)> = window_offsets(tags.len(), size, stride)
            .unwrap()
            .into_iter()
            .map(|o| {
                let mut w = tags[o..(o + size).min(tags.len())].to_vec();
                repair_bio(&mut w);
                (o, w)
            })
            .collect();
        prop_assert_eq!(merge_windows(&windows, tags.len()).unwrap(), tags);
    }

    #[test]
    fn pearson_symmetries(
        xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let Ok(r) = pearson(&x, &y) else { return Ok(()) };
        prop_assert!((r - pearson(&y, &x).unwrap()).abs() < 1e-12);
        let moved: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
        prop_assert!((r - pearson(&moved, &y).unwrap()).abs() < 1e-9);
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((r + pearson(&flipped, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_is_bounded_and_label_permutation_invariant(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60),
    ) {
        let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let f = f1_score(&p, &g, 3, F1Average::Macro).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&f));
        let perm = |v: &[usize]| v.iter().map(|c| (c + 1) % 3).collect::<Vec<_>>();
        let f2 = f1_score(&perm(&p), &perm(&g), 3, F1Average::Macro).unwrap().value;
        prop_assert!((f - f2).abs() < 1e-12);
        prop_assert_eq!(f1_score(&g, &g, 3, F1Average::Macro).unwrap().value == 1.0, {
            let mut seen = g.clone();
            seen.sort();
            seen.dedup();
            seen.len() == 3
        });
    }

    #[test]
    fn packing_preserves_words(lens in prop::collection::vec(1usize..30, 1..40), max_words in 1usize..50) {
        let sentences: Vec<Sentence> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| Sentence::from_words((0..n).map(|k| format!("s{i}w{k}")).collect()).unwrap())
            .collect();
        let docs = pack_sentences(&sentences, max_words).unwrap();
        prop_assert!(docs.iter().all(|d| d.total_words() <= max_words && d.total_words() > 0));
        let expected: Vec<String> = sentences
            .iter()
            .flat_map(|s| s.words().iter().take(max_words).cloned())
            .collect();
        let got: Vec<String> = docs.iter().flat_map(|d| d.words().map(str::to_string).collect::<Vec<_>>()).collect();
        prop_assert_eq!(got, expected);
        for d in &docs {
            let back = PackedDocument::from_line(&d.to_line());
            prop_assert_eq!(back.as_ref(), Some(d));
        }
    }

    // Seeds are not part of the cache format.
    #[test]
    fn cache_round_trips(seqs in prop::collection::vec(prop::collection::vec(0u32..500, 0..20), 0..10)) {
        let pairs: Vec<DenoisePair> = seqs
            .into_iter()
            .map(|ids| DenoisePair { input_ids: ids.clone(), target_ids: ids, seed: 0 })
            .collect();
        let (max_len, back) = decode_cache(&encode_cache(&pairs, 20)).unwrap();
        prop_assert_eq!(max_len, 20);
        prop_assert_eq!(back, pairs);
    }
}

#[test]
fn checkpoint_round_trip_is_exact_at_f32() {
    for scheme in [
        PositionScheme::LearnedAbsolute,
        PositionScheme::RelativeBucket {
            num_buckets: 8,
            max_distance: 20,
        },
    ] {
        let cfg = ModelConfig {
            vocab_size: 30,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_enc_layers: 1,
            n_dec_layers: 1,
            max_len: 12,
            position_scheme: scheme,
            tie_embeddings: scheme == PositionScheme::LearnedAbsolute,
        };
        let model = Seq2Seq::init(&cfg, 3).unwrap();
        let bytes = Checkpoint::from_model(&model, Vec::new()).to_bytes().unwrap();
        let (back, opt) = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
        assert!(opt.is_empty());
        let mut expected = model.params().clone();
        round_to_f32(&mut expected);
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), &expected);
        assert_eq!(Checkpoint::from_model(&back, Vec::new()).to_bytes().unwrap(), bytes);
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(Checkpoint::from_bytes(&truncated).is_err());
    }
}
