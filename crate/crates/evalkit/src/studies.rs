//! The three experiments: adaptation from demos, online finetuning where
//! adaptation falls short, and scaling with the number of training tasks.

use std::fmt::Write as _;

use oda_core::baselines::{awac_finetune, awac_train, bc_train, ddpgfd_train, offline_buffer, zero_latent_policy};
use oda_core::config::ExperimentConfig;
use oda_core::data::{task_demos, Buffer, Episode, Source};
use oda_core::learners::ActMode;
use oda_core::oda::{adapt, eval_start_noise, evaluate, finetune, meta_train, CurvePoint, EvalResult, MetaCheckpoint, MetaTrainOutput};
use oda_core::policy::Policy;
use oda_core::seeding;
use oda_core::sim::{make_ood_tasks, make_task_family, TaskSpec};
use oda_core::Scalar;

use crate::table::{episode_records, row_from_eval, EpisodeRecord, Phase, ResultTable};
use crate::EvalError;

/// Train, held-out in-distribution and out-of-distribution tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTasks {
    pub train: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
    pub ood: Vec<TaskSpec>,
}

impl StudyTasks {
    pub fn held_out(&self) -> Vec<TaskSpec> {
        self.test.iter().chain(&self.ood).cloned().collect()
    }

    pub fn all(&self) -> Vec<TaskSpec> {
        self.train.iter().chain(&self.test).chain(&self.ood).cloned().collect()
    }

    pub fn test_ids(&self) -> Vec<u64> {
        self.test.iter().map(|t| t.task_id).collect()
    }

    /// Split a flat task list back by id range and the out-of-distribution flag.
    pub fn from_all(all: Vec<TaskSpec>, n_train: usize) -> Self {
        let (ood, rest): (Vec<_>, Vec<_>) = all.into_iter().partition(|t| t.out_of_distribution);
        let (train, test) = rest.into_iter().partition(|t| (t.task_id as usize) < n_train);
        StudyTasks { train, test, ood }
    }
}

pub fn study_tasks(config: &ExperimentConfig) -> Result<StudyTasks, EvalError> {
    let (train, test) = make_task_family(config.family_seed, config.n_train, config.n_test)?;
    let ood = make_ood_tasks(config.family_seed, config.n_ood, (config.n_train + config.n_test) as u64);
    Ok(StudyTasks { train, test, ood })
}

/// Demos for every task and offline data for the training tasks.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub demos: Buffer,
    pub offline: Buffer,
}

pub fn study_data(tasks: &StudyTasks, config: &ExperimentConfig) -> Result<StudyData, EvalError> {
    let mut demos = Buffer::new();
    for t in tasks.all() {
        for ep in task_demos(&t, config)? {
            demos.push_episode(&ep);
        }
    }
    Ok(StudyData { demos, offline: offline_buffer(&tasks.train, config)? })
}

/// One task's demos as episodes again.
pub fn demo_episodes(demos: &Buffer, task_id: u64) -> Vec<Episode> {
    demos
        .episodes(task_id)
        .into_iter()
        .filter(|ep| ep.iter().all(|t| t.source == Source::Demo))
        .enumerate()
        .map(|(k, transitions)| Episode {
            task_id,
            episode_seed: k as u64,
            source: Source::Demo,
            success: transitions.last().is_some_and(|t| t.r > 0.0),
            transitions,
        })
        .collect()
}

fn task_demo_transitions(demos: &Buffer, task_id: u64) -> Vec<oda_core::data::Transition> {
    demos.task_transitions(task_id).filter(|t| t.source == Source::Demo).copied().collect()
}

/// Mean-action evaluation with the shared evaluation seeds.
pub fn eval_policy(policy: &mut impl Policy, task: &TaskSpec, config: &ExperimentConfig) -> Result<EvalResult, EvalError> {
    Ok(evaluate(policy, task, config.n_eval, config.eval_seed, eval_start_noise(task, config))?)
}

/// ODA adapted from the task's demos, evaluated on it.
pub fn eval_oda<T: Scalar>(ck: &MetaCheckpoint<T>, task: &TaskSpec, demos: &Buffer, config: &ExperimentConfig) -> Result<EvalResult, EvalError> {
    let ctx = task_demo_transitions(demos, task.task_id);
    let ad = adapt(ck, &ctx, config.z_mode, seeding::derive(config.seed, "adapt", task.task_id))?;
    eval_policy(&mut ad.policy(ActMode::Mean), task, config)
}

/// Everything the adaptation study produced.
#[derive(Debug, Clone)]
pub struct AdaptationStudy<T> {
    pub tasks: StudyTasks,
    pub data: StudyData,
    pub oda: MetaTrainOutput<T>,
    pub awac: MetaTrainOutput<T>,
    pub table: ResultTable,
    pub episodes: Vec<EpisodeRecord>,
}

/// Rows `{oda, awac} x held-out tasks`, both evaluated on identical seeds.
pub fn adaptation_table<T: Scalar>(
    tasks: &StudyTasks,
    demos: &Buffer,
    oda: &MetaCheckpoint<T>,
    awac: &MetaCheckpoint<T>,
    config: &ExperimentConfig,
) -> Result<(ResultTable, Vec<EpisodeRecord>), EvalError> {
    let mut table = ResultTable::new();
    let mut episodes = Vec::new();
    for task in tasks.held_out() {
        let id = task.task_id;
        let e = eval_oda(oda, &task, demos, config)?;
        table.insert(row_from_eval("oda", id, Phase::Adapt, &e, 0, 0))?;
        episodes.extend(episode_records("oda", id, Phase::Adapt, &e));
        let e = eval_policy(&mut zero_latent_policy(awac).policy(ActMode::Mean), &task, config)?;
        table.insert(row_from_eval("awac", id, Phase::Adapt, &e, 0, 0))?;
        episodes.extend(episode_records("awac", id, Phase::Adapt, &e));
    }
    Ok((table, episodes))
}

/// Generate the family and its data, meta-train ODA, train pooled AWAC on
/// the same data, and evaluate both on every held-out task.
pub fn run_adaptation_study<T: Scalar>(config: &ExperimentConfig) -> Result<AdaptationStudy<T>, EvalError> {
    let tasks = study_tasks(config)?;
    let data = study_data(&tasks, config)?;
    let oda = meta_train::<T>(&tasks.train, &data.demos, &data.offline, config)?;
    let awac = awac_train::<T>(&tasks.train, &data.demos, &data.offline, config)?;
    let (table, episodes) = adaptation_table(&tasks, &data.demos, &oda.checkpoint, &awac.checkpoint, config)?;
    Ok(AdaptationStudy { tasks, data, oda, awac, table, episodes })
}

/// One method's online run on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRun {
    pub method: String,
    pub task_id: u64,
    pub solved_after: Option<usize>,
    pub budget: usize,
    pub curve: Vec<CurvePoint>,
}

impl FinetuneRun {
    /// Online episodes until solved; an unsolved run counts its whole budget.
    pub fn episodes_used(&self) -> usize {
        self.solved_after.unwrap_or(self.budget)
    }

    pub fn env_steps(&self) -> usize {
        self.curve.last().map_or(0, |p| p.env_steps)
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneStudy {
    /// Held-out tasks whose ODA adaptation success was below the threshold.
    pub needing: Vec<u64>,
    pub table: ResultTable,
    pub episodes: Vec<EpisodeRecord>,
    pub runs: Vec<FinetuneRun>,
}

/// Online comparison on every held-out task ODA did not already solve by
/// adaptation: ODA finetuning, AWAC finetuning, DDPG from demos from
/// scratch, and BC on the task's demos. Tasks ODA solved contribute a
/// zero-episode ODA run.
pub fn run_finetune_study<T: Scalar>(
    tasks: &StudyTasks,
    demos: &Buffer,
    adaptation: &ResultTable,
    oda: &MetaCheckpoint<T>,
    awac: &MetaCheckpoint<T>,
    config: &ExperimentConfig,
) -> Result<FinetuneStudy, EvalError> {
    let mut study = FinetuneStudy { needing: Vec::new(), table: ResultTable::new(), episodes: Vec::new(), runs: Vec::new() };
    let budget = config.finetune_budget;
    for task in tasks.held_out() {
        let id = task.task_id;
        let adapted = adaptation
            .get("oda", id, Phase::Adapt)
            .ok_or_else(|| EvalError::Table(format!("no ODA adaptation row for task {id}")))?;
        if adapted.success_rate() >= config.solve_threshold {
            study.runs.push(FinetuneRun { method: "oda".into(), task_id: id, solved_after: Some(0), budget, curve: Vec::new() });
            continue;
        }
        study.needing.push(id);
        let eps = demo_episodes(demos, id);
        let record = |study: &mut FinetuneStudy, method: &str, e: &EvalResult, run: Option<FinetuneRun>| -> Result<(), EvalError> {
            let (online, steps) = run.as_ref().map_or((0, 0), |r| (r.curve.len(), r.env_steps()));
            study.table.insert(row_from_eval(method, id, Phase::Finetune, e, online, steps))?;
            study.episodes.extend(episode_records(method, id, Phase::Finetune, e));
            study.runs.extend(run);
            Ok(())
        };

        let out = finetune(oda, &task, &eps)?;
        let e = eval_policy(&mut out.adapted.policy(ActMode::Mean), &task, config)?;
        let run = FinetuneRun { method: "oda".into(), task_id: id, solved_after: out.solved_after, budget, curve: out.curve };
        record(&mut study, "oda", &e, Some(run))?;

        let out = awac_finetune(awac, &task, &eps)?;
        let e = eval_policy(&mut out.adapted.policy(ActMode::Mean), &task, config)?;
        let run = FinetuneRun { method: "awac".into(), task_id: id, solved_after: out.solved_after, budget, curve: out.curve };
        record(&mut study, "awac", &e, Some(run))?;

        let out = ddpgfd_train::<T>(&task, &eps, config)?;
        let e = eval_policy(&mut out.checkpoint.policy(), &task, config)?;
        let run = FinetuneRun { method: "ddpgfd".into(), task_id: id, solved_after: out.solved_after, budget, curve: out.curve };
        record(&mut study, "ddpgfd", &e, Some(run))?;

        let mut task_demos = Buffer::new();
        for ep in &eps {
            task_demos.push_episode(ep);
        }
        let bc = bc_train::<T>(&task_demos, config)?;
        let e = eval_policy(&mut zero_latent_policy(&bc.checkpoint).policy(ActMode::Mean), &task, config)?;
        record(&mut study, "bc", &e, None)?;
    }
    Ok(study)
}

const RUNS_HEADER: &str = "method,task_id,solved_after,episodes_used,budget,env_steps\n";

pub fn runs_to_csv(runs: &[FinetuneRun]) -> String {
    let mut out = String::from(RUNS_HEADER);
    for r in runs {
        let solved = r.solved_after.map_or(String::new(), |n| n.to_string());
        let _ = writeln!(out, "{},{},{},{},{},{}", r.method, r.task_id, solved, r.episodes_used(), r.budget, r.env_steps());
    }
    out
}

pub fn curves_to_csv(runs: &[FinetuneRun]) -> String {
    let mut out = String::from("method,task_id,episode,success,length,env_steps\n");
    for r in runs {
        for p in &r.curve {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.method, r.task_id, p.episode, u8::from(p.success), p.length, p.env_steps);
        }
    }
    out
}

/// `(method, task, solved_after, episodes_used, budget)` rows of a runs file.
pub fn runs_from_csv(text: &str) -> Result<Vec<(String, u64, Option<usize>, usize, usize)>, EvalError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = || EvalError::Table(format!("bad run record {:?}", rec.iter().collect::<Vec<_>>()));
        let solved = if rec[2].is_empty() { None } else { Some(rec[2].parse().map_err(|_| bad())?) };
        out.push((rec[0].to_string(), rec[1].parse().map_err(|_| bad())?, solved, rec[3].parse().map_err(|_| bad())?, rec[4].parse().map_err(|_| bad())?));
    }
    Ok(out)
}

/// Mean adaptation success of one scaling cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub n_train: usize,
    pub seed: u64,
    pub successes: usize,
    pub n_eval: usize,
}

impl ScalingRow {
    pub fn mean_success(&self) -> f64 {
        self.successes as f64 / self.n_eval.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub n_train: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n_seeds: usize,
}

/// Mean and standard error of the mean over seeds, per subset size.
pub fn scaling_summary(rows: &[ScalingRow]) -> Vec<ScalingPoint> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n_train).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|n| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.n_train == n).map(ScalingRow::mean_success).collect();
            let k = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / k;
            let stderr = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt() } else { 0.0 };
            ScalingPoint { n_train: n, mean, stderr, n_seeds: xs.len() }
        })
        .collect()
}

pub fn scaling_to_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("n_train,seed,mean_success,successes,n_eval\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.n_train, r.seed, r.mean_success(), r.successes, r.n_eval);
    }
    out
}

pub fn scaling_from_csv(text: &str) -> Result<Vec<ScalingRow>, EvalError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = || EvalError::Table(format!("bad scaling record {:?}", rec.iter().collect::<Vec<_>>()));
        let row = ScalingRow {
            n_train: rec[0].parse().map_err(|_| bad())?,
            seed: rec[1].parse().map_err(|_| bad())?,
            successes: rec[3].parse().map_err(|_| bad())?,
            n_eval: rec[4].parse().map_err(|_| bad())?,
        };
        if rec[2].parse::<f64>().ok() != Some(row.mean_success()) {
            return Err(bad());
        }
        out.push(row);
    }
    Ok(out)
}

/// Training tasks of each subset size: nested prefixes of one family with
/// as many training tasks as the largest size.
pub fn scaling_subsets(config: &ExperimentConfig) -> Result<(Vec<Vec<TaskSpec>>, Vec<TaskSpec>), EvalError> {
    let max = config.scaling_sizes.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(EvalError::Table("scaling.sizes is empty".into()));
    }
    let (train, test) = make_task_family(config.family_seed, max, config.n_test)?;
    Ok((config.scaling_sizes.iter().map(|&n| train[..n].to_vec()).collect(), test))
}

/// Meta-train on nested training subsets for every seed and evaluate
/// adaptation on the same held-out tasks. One row per (size, seed).
pub fn run_scaling_study<T: Scalar>(config: &ExperimentConfig, mut progress: impl FnMut(&ScalingRow)) -> Result<Vec<ScalingRow>, EvalError> {
    let (subsets, test) = scaling_subsets(config)?;
    let all_train = subsets.last().cloned().unwrap_or_default();
    let mut rows = Vec::new();
    for &seed in &config.scaling_seeds {
        let cfg = ExperimentConfig { seed, iterations: config.scaling_iterations, n_train: all_train.len(), ..config.clone() };
        let mut demos = Buffer::new();
        for t in all_train.iter().chain(&test) {
            for ep in task_demos(t, &cfg)? {
                demos.push_episode(&ep);
            }
        }
        let offline = offline_buffer(&all_train, &cfg)?;
        for train in &subsets {
            let ck = meta_train::<T>(train, &demos, &offline, &cfg)?.checkpoint;
            let mut successes = 0;
            let mut n_eval = 0;
            for task in &test {
                let e = eval_oda(&ck, task, &demos, &cfg)?;
                successes += e.records.iter().filter(|r| r.success).count();
                n_eval += e.records.len();
            }
            let row = ScalingRow { n_train: train.len(), seed, successes, n_eval };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_nested_prefixes() {
        let cfg = ExperimentConfig::default();
        let (subsets, test) = scaling_subsets(&cfg).unwrap();
        assert_eq!(subsets.iter().map(Vec::len).collect::<Vec<_>>(), cfg.scaling_sizes);
        for w in subsets.windows(2) {
            assert_eq!(&w[1][..w[0].len()], &w[0][..]);
        }
        let max = *cfg.scaling_sizes.last().unwrap();
        assert!(test.iter().all(|t| t.task_id as usize >= max));
    }

    #[test]
    fn summary_mean_and_stderr() {
        let rows = [
            ScalingRow { n_train: 1, seed: 0, successes: 10, n_eval: 100 },
            ScalingRow { n_train: 1, seed: 1, successes: 30, n_eval: 100 },
            ScalingRow { n_train: 3, seed: 0, successes: 50, n_eval: 100 },
        ];
        let s = scaling_summary(&rows);
        assert_eq!(s.len(), 2);
        assert!((s[0].mean - 0.2).abs() < 1e-15);
        assert!((s[0].stderr - 0.1).abs() < 1e-15);
        assert_eq!((s[1].stderr, s[1].n_seeds), (0.0, 1));
        assert_eq!(scaling_from_csv(&scaling_to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn task_split_round_trips() {
        let cfg = ExperimentConfig::default();
        let tasks = study_tasks(&cfg).unwrap();
        assert_eq!((tasks.train.len(), tasks.test.len(), tasks.ood.len()), (8, 3, 2));
        assert_eq!(StudyTasks::from_all(tasks.all(), cfg.n_train), tasks);
    }

    #[test]
    fn unsolved_runs_count_their_budget() {
        let r = FinetuneRun { method: "ddpgfd".into(), task_id: 1, solved_after: None, budget: 300, curve: Vec::new() };
        assert_eq!(r.episodes_used(), 300);
        let back = runs_from_csv(&runs_to_csv(&[r])).unwrap();
        assert_eq!(back, vec![("ddpgfd".to_string(), 1, None, 300, 300)]);
    }
}
