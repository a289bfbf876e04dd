use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const RAW: &str = "A menina comeu o bolo. O menino leu um livro na praia!\n\
Choveu muito em São Paulo ontem. A cidade ficou parada?\n\
O gato dorme no sofá. A casa é grande e bonita.\n\
Ela gosta de café. Ele prefere chá com leite.\n";

fn ptkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ptkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const MODEL: &str = "[model]\nd_model = 16\nn_heads = 2\nd_ff = 32\nn_enc_layers = 1\nn_dec_layers = 1\nmax_len = 48\n";

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("raw.txt"), RAW).unwrap();

    ok(d, &["preprocess", "--input", "raw.txt", "--output", "docs.txt", "--max-words", "20", "--stats", "stats.txt"]);
    let docs = fs::read_to_string(d.join("docs.txt")).unwrap();
    assert!(docs.lines().count() >= 2 && docs.contains('\t'));
    assert!(!fs::read_to_string(d.join("stats.txt")).unwrap().is_empty());

    ok(d, &["train-vocab", "--input", "docs.txt", "--output", "pt.vocab", "--vocab-size", "90"]);
    let vocab = fs::read_to_string(d.join("pt.vocab")).unwrap();
    assert_eq!(vocab.lines().filter(|l| !l.starts_with('#')).count(), 90);

    ok(d, &["--seed", "3", "make-pretrain-data", "--vocab", "pt.vocab", "--input", "docs.txt", "--output", "pre.dnpz", "--max-len", "48"]);
    assert_eq!(&fs::read(d.join("pre.dnpz")).unwrap()[..4], b"DNPZ");

    fs::write(
        d.join("pre.cfg"),
        format!("[run]\ntask = pretrain\ndeterministic = true\n{MODEL}[train]\nmax_epochs = 1\nbatch_size = 2\n[paths]\nvocab = pt.vocab\ntrain = pre.dnpz\ncheckpoint_dir = pre\n"),
    )
    .unwrap();
    ok(d, &["--config", "pre.cfg", "pretrain"]);
    assert_eq!(&fs::read(d.join("pre/model.sqfg")).unwrap()[..4], b"SQFG");

    let pairs = "id\tsentence1\tsentence2\tsimilarity\tentailment\n\
1\tA menina comeu o bolo.\tO menino comeu o bolo.\t4.0\tentail\n\
2\tO gato dorme.\tChoveu muito ontem.\t1.0\tnone\n\
3\tEla gosta de café.\tEle prefere chá.\t2.5\tnone\n";
    fs::write(d.join("pairs.tsv"), pairs).unwrap();
    fs::write(
        d.join("sim.cfg"),
        format!("[run]\ntask = similarity\ndeterministic = true\n{MODEL}[train]\nmax_epochs = 2\nbatch_size = 2\n[paths]\nvocab = pt.vocab\ntrain = pairs.tsv\nvalid = pairs.tsv\ntest = pairs.tsv\ninit_checkpoint = pre/model.sqfg\ncheckpoint_dir = sim\n"),
    )
    .unwrap();
    ok(d, &["--config", "sim.cfg", "finetune"]);
    assert!(fs::read_to_string(d.join("sim/train_log.tsv")).unwrap().lines().count() >= 2);

    let out = ok(d, &["--config", "sim.cfg", "evaluate", "--predictions", "pred.tsv"]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("pearson") && report.contains("mse"), "{report}");
    assert_eq!(fs::read_to_string(d.join("pred.tsv")).unwrap().lines().count(), 4);

    fs::write(d.join("in.txt"), "O gato dorme.\nA casa é grande.\n").unwrap();
    let out = ok(d, &["decode", "--checkpoint", "sim/model.sqfg", "--vocab", "pt.vocab", "--input", "in.txt", "--beam", "2", "--max-out", "4"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(ptkit(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(ptkit(d, &["pretrain"]).status.code(), Some(1));
    fs::write(d.join("bad.cfg"), "[run]\ntask = ner\n[train]\nbatchsize = 3\n").unwrap();
    assert_eq!(ptkit(d, &["--config", "bad.cfg", "finetune"]).status.code(), Some(1));
    assert_eq!(
        ptkit(d, &["train-vocab", "--input", "missing.txt", "--output", "v"]).status.code(),
        Some(2)
    );
    assert_eq!(ptkit(d, &["--help"]).status.code(), Some(0));
}
