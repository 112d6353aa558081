//! Per-(method, task, phase) result rows and the raw per-episode records
//! behind them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use oda_core::oda::EvalResult;

use crate::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Adapt,
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Adapt => "adapt",
            Phase::Finetune => "finetune",
        })
    }
}

impl FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adapt" => Ok(Phase::Adapt),
            "finetune" => Ok(Phase::Finetune),
            o => Err(format!("unknown phase {o:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub task_id: u64,
    pub phase: Phase,
    pub successes: usize,
    pub n_eval: usize,
    pub online_episodes: usize,
    pub env_steps: usize,
}

impl ResultRow {
    pub fn success_rate(&self) -> f64 {
        if self.n_eval == 0 {
            0.0
        } else {
            self.successes as f64 / self.n_eval as f64
        }
    }
}

/// Rows keyed uniquely by `(method, task, phase)`, kept in key order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    rows: BTreeMap<(String, u64, Phase), ResultRow>,
}

const HEADER: [&str; 8] = ["method", "task_id", "phase", "success_rate", "successes", "n_eval", "online_episodes", "env_steps"];

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, row: ResultRow) -> Result<(), EvalError> {
        let key = (row.method.clone(), row.task_id, row.phase);
        if self.rows.contains_key(&key) {
            return Err(EvalError::Table(format!("duplicate row {} / task {} / {}", key.0, key.1, key.2)));
        }
        self.rows.insert(key, row);
        Ok(())
    }

    pub fn get(&self, method: &str, task_id: u64, phase: Phase) -> Option<&ResultRow> {
        self.rows.get(&(method.to_string(), task_id, phase))
    }

    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn merge(&mut self, other: &ResultTable) -> Result<(), EvalError> {
        for r in other.rows() {
            self.insert(r.clone())?;
        }
        Ok(())
    }

    /// Mean success rate of `method` in `phase` over `tasks` that have a row.
    pub fn mean_success(&self, method: &str, phase: Phase, tasks: &[u64]) -> Option<f64> {
        let rates: Vec<f64> = tasks.iter().filter_map(|&t| self.get(method, t, phase)).map(ResultRow::success_rate).collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in self.rows() {
            w.write_record([
                r.method.clone(),
                r.task_id.to_string(),
                r.phase.to_string(),
                r.success_rate().to_string(),
                r.successes.to_string(),
                r.n_eval.to_string(),
                r.online_episodes.to_string(),
                r.env_steps.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != HEADER {
            return Err(EvalError::Table(format!("unexpected header {header:?}")));
        }
        let mut t = ResultTable::new();
        for rec in rd.records() {
            let rec = rec?;
            let bad = |what: &str| EvalError::Table(format!("bad {what} in row {:?}", rec.iter().collect::<Vec<_>>()));
            let row = ResultRow {
                method: rec[0].to_string(),
                task_id: rec[1].parse().map_err(|_| bad("task_id"))?,
                phase: rec[2].parse().map_err(|_| bad("phase"))?,
                successes: rec[4].parse().map_err(|_| bad("successes"))?,
                n_eval: rec[5].parse().map_err(|_| bad("n_eval"))?,
                online_episodes: rec[6].parse().map_err(|_| bad("online_episodes"))?,
                env_steps: rec[7].parse().map_err(|_| bad("env_steps"))?,
            };
            if rec[3].parse::<f64>().ok() != Some(row.success_rate()) {
                return Err(bad("success_rate"));
            }
            t.insert(row)?;
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        crate::write_file(path, self.to_csv())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_csv(&crate::read_file(path)?)
    }
}

/// One evaluation episode behind a table row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub method: String,
    pub task_id: u64,
    pub phase: Phase,
    pub episode_seed: u64,
    pub success: bool,
    pub length: usize,
}

pub fn episode_records(method: &str, task_id: u64, phase: Phase, eval: &EvalResult) -> Vec<EpisodeRecord> {
    eval.records
        .iter()
        .map(|r| EpisodeRecord {
            method: method.to_string(),
            task_id,
            phase,
            episode_seed: r.episode_seed,
            success: r.success,
            length: r.length,
        })
        .collect()
}

/// A table row summarising `eval`.
pub fn row_from_eval(method: &str, task_id: u64, phase: Phase, eval: &EvalResult, online_episodes: usize, env_steps: usize) -> ResultRow {
    ResultRow {
        method: method.to_string(),
        task_id,
        phase,
        successes: eval.records.iter().filter(|r| r.success).count(),
        n_eval: eval.records.len(),
        online_episodes,
        env_steps,
    }
}

const EPISODE_HEADER: [&str; 6] = ["method", "task_id", "phase", "episode_seed", "success", "length"];

pub fn episodes_to_csv(records: &[EpisodeRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EPISODE_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.method.clone(),
            r.task_id.to_string(),
            r.phase.to_string(),
            r.episode_seed.to_string(),
            u8::from(r.success).to_string(),
            r.length.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub fn episodes_from_csv(text: &str) -> Result<Vec<EpisodeRecord>, EvalError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != EPISODE_HEADER {
        return Err(EvalError::Table(format!("unexpected episode header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = || EvalError::Table(format!("bad episode record {:?}", rec.iter().collect::<Vec<_>>()));
        out.push(EpisodeRecord {
            method: rec[0].to_string(),
            task_id: rec[1].parse().map_err(|_| bad())?,
            phase: rec[2].parse().map_err(|_| bad())?,
            episode_seed: rec[3].parse().map_err(|_| bad())?,
            success: match &rec[4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
            length: rec[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Rebuild the success counts of a table from its raw episode records.
pub fn table_from_episodes(records: &[EpisodeRecord], like: &ResultTable) -> Result<ResultTable, EvalError> {
    let mut counts: BTreeMap<(String, u64, Phase), (usize, usize)> = BTreeMap::new();
    for r in records {
        let c = counts.entry((r.method.clone(), r.task_id, r.phase)).or_default();
        c.0 += usize::from(r.success);
        c.1 += 1;
    }
    let mut out = ResultTable::new();
    for ((method, task_id, phase), (successes, n_eval)) in counts {
        let (online_episodes, env_steps) = like.get(&method, task_id, phase).map_or((0, 0), |r| (r.online_episodes, r.env_steps));
        out.insert(ResultRow { method, task_id, phase, successes, n_eval, online_episodes, env_steps })?;
    }
    Ok(out)
}
