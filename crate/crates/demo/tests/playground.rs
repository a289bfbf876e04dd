use ptkit_demo::{ner_to_bio, Playground};

const CORPUS: &str = "o gato come peixe\na menina lê um livro\no gato dorme no parque\n";

#[test]
fn segment_lists_every_piece() {
    let p = Playground::new(CORPUS, 30).unwrap();
    assert_eq!(p.size(), 30);
    let lines = p.segment("o gato");
    let pieces: String = lines.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(pieces, "o▁gato");
}

#[test]
fn mask_keeps_target_intact() {
    let p = Playground::new(CORPUS, 30).unwrap();
    let out = p.mask("o gato come peixe", 0.5, 7).unwrap();
    let target = out.lines().nth(1).unwrap().trim_start_matches("target: ");
    assert!(target.ends_with("</s>"));
    assert!(!target.contains("<M>"));
}

#[test]
fn ner_example_aligns() {
    let out = ner_to_bio("John [Person] lives in [Other] New York [Local]", "John lives in New York");
    let tags: Vec<&str> = out.lines().map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(tags, ["B-PER", "O", "O", "B-LOC", "I-LOC"]);
    assert!(ner_to_bio("a b c", "a").contains("dropped"));
}

#[test]
fn bad_vocab_size_is_reported() {
    assert!(Playground::new(CORPUS, 5).is_err());
}
