use otpdag_experiments::config::ExperimentConfig;
use otpdag_experiments::runner::{lda_checkpoints, steps_per_epoch};
use otpdag_experiments::{run, Metric};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(text).unwrap()
}

#[test]
fn lda_run_reports_topic_metrics() {
    let out = run(&config(
        r#"{"experiment":"lda-bars","seed":1,"replicates":1,"knobs":{"m":60,"n":40},"train":{"epochs":10,"batch_size":20}}"#,
    ))
    .unwrap();
    for metric in [Metric::Ws, Metric::Hellinger, Metric::Kl] {
        let steps: Vec<usize> = out.rows.iter().filter(|r| r.metric == metric).map(|r| r.step).collect();
        assert_eq!(steps, vec![1, 10], "{metric:?}");
    }
    assert!(out.rows.iter().all(|r| r.value.is_finite() && r.experiment == "lda-bars"));
    assert_eq!(out.manifest.dataset_digests.len(), 1);
}

#[test]
fn hmm_run_reports_rate_errors_for_both_methods() {
    let out = run(&config(
        r#"{"experiment":"poisson-hmm","seed":2,"replicates":1,"knobs":{"t":400},"train":{"epochs":2}}"#,
    ))
    .unwrap();
    for method in ["em", "otp"] {
        assert!(
            out.rows.iter().any(|r| r.method == method && r.metric == Metric::Mae && r.value.is_finite()),
            "{method}"
        );
    }
}

#[test]
fn toy_and_mwe_runs_produce_rows() {
    let toy = run(&config(r#"{"experiment":"toy-chain","seed":0,"knobs":{"n":60,"steps":20}}"#)).unwrap();
    assert_eq!(toy.rows.iter().filter(|r| r.metric == Metric::Loss).count(), 20);
    assert!(toy.rows.iter().any(|r| r.metric == Metric::Ws));

    let mwe = run(&config(
        r#"{"experiment":"mwe-consistency","seed":0,"replicates":3,"knobs":{"sizes":[20,40],"steps":30}}"#,
    ))
    .unwrap();
    assert_eq!(mwe.rows.len(), 6);
    assert!(mwe.rows.iter().all(|r| r.metric == Metric::Mae && [20, 40].contains(&r.step)));
    assert_eq!(mwe.manifest.seeds, vec![0, 1, 2]);
}

#[test]
fn epoch_bookkeeping() {
    assert_eq!(steps_per_epoch(1000, 50), 20);
    assert_eq!(steps_per_epoch(101, 50), 2);
    assert_eq!(steps_per_epoch(102, 50), 3);
    assert_eq!(steps_per_epoch(10, 50), 1);
    assert_eq!(lda_checkpoints(25), vec![1, 10, 20, 25]);
    assert_eq!(lda_checkpoints(20), vec![1, 10, 20]);
}
