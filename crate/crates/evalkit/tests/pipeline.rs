//! The command-line pipeline end to end on a toy configuration.

use std::collections::BTreeMap;
use std::path::Path;

use oda_evalkit::cli::main_with_args;
use oda_evalkit::report::report;
use oda_evalkit::table::ResultTable;
use oda_evalkit::EvalError;

const TINY: &str = "\
family.n_train = 2
family.n_test = 1
family.n_ood = 1
data.demos_per_task = 3
data.offline_episodes = 6
net.d_z = 2
net.factor_hidden = 8
net.actor_hidden = 8
net.critic_hidden = 8
train.iterations = 4
train.batch_size = 16
train.context_size = 4
awac.iterations = 4
bc.iterations = 4
bc.batch_size = 16
eval.n_episodes = 3
solve.threshold = 1.0
solve.n_eval = 2
finetune.budget = 2
finetune.check_every = 1
finetune.updates_per_episode = 1
finetune.batch_size = 16
ddpgfd.hidden = 8
ddpgfd.batch_size = 16
ddpgfd.updates_per_episode = 1
scaling.sizes = 1,2
scaling.seeds = 0,1
scaling.iterations = 3
";

fn oda(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("oda").chain(args.iter().copied()))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn studies_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let (cfg, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    // finetune needs the adaptation outputs first
    assert_eq!(oda(&["study", "finetune", "--config", cfg, "--out", out_s]), 3);
    for study in ["adaptation", "finetune", "scaling"] {
        assert_eq!(oda(&["study", study, "--config", cfg, "--out", out_s]), 0, "{study}");
    }
    for f in ["adaptation.csv", "finetune.csv", "finetune_runs.csv", "finetune_curves.csv", "scaling.csv", "meta.ckpt", "awac.ckpt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let adapt = ResultTable::load(out.join("adaptation.csv")).unwrap();
    assert_eq!(adapt.len(), 4, "oda and awac on one test and one ood task");

    assert_eq!(oda(&["report", "--out", out_s]), 0);
    let first = snapshot(&out.join("report"));
    for f in ["report.md", "summary_adaptation.csv", "summary_finetune.csv", "summary_scaling.csv", "adaptation.svg", "finetune.svg", "scaling.svg"] {
        assert!(first.contains_key(f), "{f}");
    }
    let md = String::from_utf8(first["report.md"].clone()).unwrap();
    assert!(md.contains("environment steps"));
    assert_eq!(oda(&["report", "--out", out_s]), 0);
    assert_eq!(snapshot(&out.join("report")), first);
}

#[test]
fn report_names_missing_and_inconsistent_inputs() {
    let dir = tempfile::tempdir().unwrap();
    match report(dir.path()) {
        Err(EvalError::Missing(paths)) => assert!(paths.iter().any(|p| p.ends_with("adaptation.csv"))),
        other => panic!("{other:?}"),
    }

    std::fs::write(dir.path().join("scaling.csv"), "n_train,seed,mean_success,successes,n_eval\n1,0,0.5,1,2\n").unwrap();
    std::fs::write(dir.path().join("adaptation.csv"), "").unwrap();
    match report(dir.path()) {
        Err(EvalError::Missing(paths)) => {
            let names: Vec<_> = paths.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
            assert_eq!(names, ["adaptation_episodes.csv", "tasks.txt"]);
        }
        other => panic!("{other:?}"),
    }
    std::fs::remove_file(dir.path().join("adaptation.csv")).unwrap();
    let written = report(dir.path()).unwrap();
    assert!(written.iter().any(|p| p.ends_with("scaling.svg")));
    assert!(!written.iter().any(|p| p.ends_with("adaptation.svg")));
}

#[test]
fn report_rejects_a_table_that_disagrees_with_its_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tasks.txt"), oda_core::sim::tasks_to_string(&[oda_core::sim::TaskSpec::easy(4)])).unwrap();
    std::fs::write(
        d.join("adaptation_episodes.csv"),
        "method,task_id,phase,episode_seed,success,length\noda,4,adapt,1,1,10\noda,4,adapt,2,0,100\n",
    )
    .unwrap();
    let table = "method,task_id,phase,success_rate,successes,n_eval,online_episodes,env_steps\n";
    std::fs::write(d.join("adaptation.csv"), format!("{table}oda,4,adapt,0.5,1,2,0,0\n")).unwrap();
    report(d).unwrap();
    std::fs::write(d.join("adaptation.csv"), format!("{table}oda,4,adapt,1,2,2,0,0\n")).unwrap();
    assert!(matches!(report(d), Err(EvalError::Table(_))));
}
