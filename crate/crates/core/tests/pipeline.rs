mod common;

use common::{cli, epochs, mini_config, s, write_config, Run};
use mimicmap::dsp::archive;

#[test]
fn mini_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let run = Run::new(tmp.path(), write_config(tmp.path(), "mini.json", &mini_config()));
    run.full_pipeline();

    for f in ["classifier.mmck", "classifier_final.mmck", "report.jsonl", "steps.jsonl", "config.json"] {
        assert!(run.dir("cls").join(f).is_file(), "{f}");
    }
    let joint = epochs(&run.dir("joint"));
    assert_eq!(joint[0]["epoch"], 0);
    assert_eq!(joint[0]["alpha"], 0.1);
    assert_eq!(joint[0]["tap"], "pre-softmax");

    let resolved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.dir("joint").join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train_joint"]["batching"], "utterances");
    assert_eq!(resolved["train_joint"]["batch_norm"], "frozen");

    let enhanced: Vec<_> = std::fs::read_dir(run.dir("enh").join("enhanced")).unwrap().collect();
    assert_eq!(enhanced.len(), 12);
    let first = enhanced[0].as_ref().unwrap().path();
    assert_eq!(archive::read(&first).unwrap().cols(), 257);
}

#[test]
fn stage_three_without_a_classifier_names_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.mmck");
    let code = cli(&[
        "--out",
        s(&tmp.path().join("out")),
        "train-joint",
        "--features",
        s(tmp.path()),
        "--classifier",
        s(&missing),
        "--mapper",
        s(&missing),
    ]);
    assert_eq!(code, mimicmap::cli::EXIT_USAGE);
}
