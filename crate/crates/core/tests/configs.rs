use std::path::Path;

use ptkit::config::{OutputStrategy, RunConfig, Task};

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let load = |name: &str| RunConfig::load(&dir.join(name)).unwrap();
    let p = load("pretrain.cfg");
    assert_eq!((p.task, p.optimizer.as_str(), p.lr), (Task::Pretrain, "adafactor", 0.003));
    let s = load("assin-similarity-linear.cfg");
    assert_eq!((s.task, s.output_strategy), (Task::Similarity, OutputStrategy::LinearHead));
    assert!(s.paths.init_checkpoint.unwrap().ends_with("runs/pretrain/model.sqfg"));
    assert_eq!(load("assin-similarity-generate.cfg").output_strategy, OutputStrategy::Generate);
    let e = load("assin-entailment.cfg");
    assert_eq!((e.task, e.patience), (Task::Entailment, 10));
    let n = load("harem-ner.cfg");
    assert_eq!((n.task, n.window_size, n.window_stride, n.grad_accum_steps), (Task::Ner, 128, 64, 4));
}
