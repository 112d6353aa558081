//! Summary CSVs, SVG plots and a markdown report built from the raw study
//! outputs in a results directory. Rerunning overwrites with identical
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use oda_core::sim::tasks_from_str;

use crate::studies::{runs_from_csv, scaling_from_csv, scaling_summary, ScalingPoint};
use crate::table::{episodes_from_csv, table_from_episodes, Phase, ResultTable};
use crate::{read_file, write_file, EvalError};

const ADAPTATION: [&str; 3] = ["adaptation.csv", "adaptation_episodes.csv", "tasks.txt"];
const FINETUNE: [&str; 4] = ["finetune.csv", "finetune_episodes.csv", "finetune_runs.csv", "tasks.txt"];
const SCALING: [&str; 1] = ["scaling.csv"];

const METHOD_ORDER: [&str; 4] = ["oda", "awac", "ddpgfd", "bc"];

fn method_color(method: &str) -> RGBColor {
    match method {
        "oda" => RGBColor(31, 119, 180),
        "awac" => RGBColor(255, 127, 14),
        "ddpgfd" => RGBColor(44, 160, 44),
        "bc" => RGBColor(214, 39, 40),
        _ => RGBColor(127, 127, 127),
    }
}

fn sorted_methods<'a>(methods: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut m: Vec<String> = methods.map(str::to_string).collect();
    m.sort_by_key(|x| (METHOD_ORDER.iter().position(|o| o == x).unwrap_or(usize::MAX), x.clone()));
    m.dedup();
    m
}

fn plot_err(e: impl std::fmt::Display) -> EvalError {
    EvalError::Plot(e.to_string())
}

/// Success rates recomputed from the per-episode records, checked against
/// the stored table.
fn verified_table(dir: &Path, table: &str, episodes: &str) -> Result<ResultTable, EvalError> {
    let stored = ResultTable::load(dir.join(table))?;
    let raw = episodes_from_csv(&read_file(dir.join(episodes))?)?;
    let rebuilt = table_from_episodes(&raw, &stored)?;
    if rebuilt != stored {
        return Err(EvalError::Table(format!("{table} disagrees with {episodes}")));
    }
    Ok(rebuilt)
}

fn ood_ids(dir: &Path) -> Result<Vec<u64>, EvalError> {
    let tasks = tasks_from_str(&read_file(dir.join("tasks.txt"))?)?;
    Ok(tasks.iter().filter(|t| t.out_of_distribution).map(|t| t.task_id).collect())
}

fn bar_chart(path: &Path, title: &str, y_desc: &str, groups: &[String], series: &[(String, Vec<f64>)], y_max: f64) -> Result<(), EvalError> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = groups.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..n as f64, 0f64..y_max)
        .map_err(plot_err)?;
    let labels = groups.to_vec();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n + 1)
        .x_label_formatter(&|x| {
            let i = (x - 0.5).round();
            if (x - 0.5 - i).abs() < 1e-9 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    let k = series.len().max(1) as f64;
    let width = 0.8 / k;
    for (j, (method, values)) in series.iter().enumerate() {
        let color = method_color(method);
        chart
            .draw_series(values.iter().enumerate().map(|(i, &v)| {
                let x0 = i as f64 + 0.1 + j as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width * 0.9, v)], color.filled())
            }))
            .map_err(plot_err)?
            .label(method.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn scaling_chart(path: &Path, points: &[ScalingPoint]) -> Result<(), EvalError> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let x_max = points.iter().map(|p| p.n_train).max().unwrap_or(1) as f64 + 1.0;
    let mut chart = ChartBuilder::on(&root)
        .caption("Adaptation success vs training tasks", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..x_max, 0f64..1.05f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("training tasks")
        .y_desc("mean success (held-out)")
        .draw()
        .map_err(plot_err)?;
    let color = method_color("oda");
    chart
        .draw_series(LineSeries::new(points.iter().map(|p| (p.n_train as f64, p.mean)), color.stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|p| {
            ErrorBar::new_vertical(p.n_train as f64, p.mean - p.stderr, p.mean, p.mean + p.stderr, color.filled(), 8)
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|p| Circle::new((p.n_train as f64, p.mean), 4, color.filled())))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn md_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), " --- |".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

/// Write `report/` inside `dir` for every study whose outputs are present and
/// return the files written. A partially present study, or no study at
/// all, is an error listing the missing files.
pub fn report(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let present = |names: &[&str]| names.iter().any(|n| n.ends_with(".csv") && dir.join(n).exists());
    let missing = |names: &[&str]| names.iter().map(|n| dir.join(n)).filter(|p| !p.exists()).collect::<Vec<_>>();
    let studies: Vec<(&str, &[&str])> = vec![("adaptation", &ADAPTATION), ("finetune", &FINETUNE), ("scaling", &SCALING)];
    let active: Vec<_> = studies.iter().filter(|(_, f)| present(f)).collect();
    if active.is_empty() {
        return Err(EvalError::Missing(vec![dir.join("adaptation.csv"), dir.join("finetune.csv"), dir.join("scaling.csv")]));
    }
    let lacking: Vec<PathBuf> = active.iter().flat_map(|(_, f)| missing(f)).collect();
    if !lacking.is_empty() {
        return Err(EvalError::Missing(lacking));
    }

    let out = dir.join("report");
    let mut written = Vec::new();
    let mut md = String::from("# Results\n\nComparisons of cost are in online episodes and environment steps. Wall-clock time is not reported.\n");

    if present(&ADAPTATION) {
        let table = verified_table(dir, "adaptation.csv", "adaptation_episodes.csv")?;
        let ood = ood_ids(dir)?;
        let methods = sorted_methods(table.rows().map(|r| r.method.as_str()));
        let mut tasks: Vec<u64> = table.rows().map(|r| r.task_id).collect();
        tasks.sort_unstable();
        tasks.dedup();
        let (test, ood_tasks): (Vec<u64>, Vec<u64>) = tasks.iter().partition(|t| !ood.contains(t));
        let mut csv = String::from("method,task,success_rate,n_eval\n");
        let mut md_rows = Vec::new();
        for m in &methods {
            for &t in &tasks {
                if let Some(r) = table.get(m, t, Phase::Adapt) {
                    let _ = writeln!(csv, "{m},{t},{},{}", r.success_rate(), r.n_eval);
                }
            }
            let mean_test = table.mean_success(m, Phase::Adapt, &test);
            let mean_ood = table.mean_success(m, Phase::Adapt, &ood_tasks);
            for (label, v) in [("mean_test", mean_test), ("mean_ood", mean_ood)] {
                if let Some(v) = v {
                    let _ = writeln!(csv, "{m},{label},{v},");
                }
            }
            let mut row = vec![m.clone()];
            row.extend(tasks.iter().map(|&t| table.get(m, t, Phase::Adapt).map_or("-".into(), |r| format!("{:.2}", r.success_rate()))));
            row.push(mean_test.map_or("-".into(), |v| format!("{v:.3}")));
            md_rows.push(row);
        }
        let p = out.join("summary_adaptation.csv");
        write_file(&p, csv)?;
        written.push(p);
        let labels: Vec<String> = tasks.iter().map(|t| if ood.contains(t) { format!("{t}*") } else { t.to_string() }).collect();
        let series: Vec<(String, Vec<f64>)> = methods
            .iter()
            .map(|m| (m.clone(), tasks.iter().map(|&t| table.get(m, t, Phase::Adapt).map_or(0.0, |r| r.success_rate())).collect()))
            .collect();
        let p = out.join("adaptation.svg");
        std::fs::create_dir_all(&out).map_err(|source| EvalError::Io { path: out.clone(), source })?;
        bar_chart(&p, "Adaptation from demonstrations", "success rate", &labels, &series, 1.05)?;
        written.push(p);
        let mut header: Vec<String> = vec!["method".into()];
        header.extend(labels.iter().cloned());
        header.push("mean (in-distribution)".into());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let _ = write!(md, "\n## Adaptation\n\nSuccess rate per held-out task (`*`: out of distribution).\n\n{}\n![adaptation](adaptation.svg)\n", md_table(&header, &md_rows));
    }

    if present(&FINETUNE) {
        let table = verified_table(dir, "finetune.csv", "finetune_episodes.csv")?;
        let runs = runs_from_csv(&read_file(dir.join("finetune_runs.csv"))?)?;
        let mut by_task: BTreeMap<u64, BTreeMap<String, (Option<usize>, usize, usize)>> = BTreeMap::new();
        for (m, t, solved, used, budget) in &runs {
            by_task.entry(*t).or_default().insert(m.clone(), (*solved, *used, *budget));
        }
        let needing: Vec<u64> = table.rows().map(|r| r.task_id).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let methods = sorted_methods(table.rows().map(|r| r.method.as_str()));
        let mut csv = String::from("task,method,solved_after,episodes_used,budget,final_success,n_eval\n");
        let mut md_rows = Vec::new();
        for &t in &needing {
            for m in &methods {
                let run = by_task.get(&t).and_then(|r| r.get(m));
                let fin = table.get(m, t, Phase::Finetune);
                let solved = run.and_then(|r| r.0).map_or(String::new(), |n| n.to_string());
                let used = run.map_or(String::new(), |r| r.1.to_string());
                let budget = run.map_or(String::new(), |r| r.2.to_string());
                let (succ, n) = fin.map_or((String::new(), String::new()), |r| (r.success_rate().to_string(), r.n_eval.to_string()));
                let _ = writeln!(csv, "{t},{m},{solved},{used},{budget},{succ},{n}");
                md_rows.push(vec![
                    t.to_string(),
                    m.clone(),
                    if solved.is_empty() && run.is_some() { format!(">{budget}") } else if solved.is_empty() { "-".into() } else { solved },
                    fin.map_or("-".into(), |r| format!("{:.2}", r.success_rate())),
                ]);
            }
        }
        let p = out.join("summary_finetune.csv");
        write_file(&p, csv)?;
        written.push(p);
        let online: Vec<String> = methods.iter().filter(|m| needing.iter().any(|t| by_task.get(t).is_some_and(|r| r.contains_key(*m)))).cloned().collect();
        let series: Vec<(String, Vec<f64>)> = online
            .iter()
            .map(|m| (m.clone(), needing.iter().map(|t| by_task.get(t).and_then(|r| r.get(m)).map_or(0.0, |r| r.1 as f64)).collect()))
            .collect();
        let y_max = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(1.0, f64::max) * 1.1;
        let labels: Vec<String> = needing.iter().map(u64::to_string).collect();
        let p = out.join("finetune.svg");
        bar_chart(&p, "Online episodes to solve (unsolved: full budget)", "episodes", &labels, &series, y_max)?;
        written.push(p);
        let _ = write!(
            md,
            "\n## Finetuning\n\nTasks whose adaptation success was below the threshold. `>B`: not solved within the budget B.\n\n{}\n![finetune](finetune.svg)\n",
            md_table(&["task", "method", "episodes to solve", "final success"], &md_rows)
        );
    }

    if present(&SCALING) {
        let rows = scaling_from_csv(&read_file(dir.join("scaling.csv"))?)?;
        let points = scaling_summary(&rows);
        let mut csv = String::from("n_train,mean_success,stderr,n_seeds\n");
        for p in &points {
            let _ = writeln!(csv, "{},{},{},{}", p.n_train, p.mean, p.stderr, p.n_seeds);
        }
        let p = out.join("summary_scaling.csv");
        write_file(&p, csv)?;
        written.push(p);
        let p = out.join("scaling.svg");
        scaling_chart(&p, &points)?;
        written.push(p);
        let md_rows: Vec<Vec<String>> =
            points.iter().map(|p| vec![p.n_train.to_string(), format!("{:.3}", p.mean), format!("{:.3}", p.stderr), p.n_seeds.to_string()]).collect();
        let _ = write!(
            md,
            "\n## Scaling\n\nMean held-out adaptation success by number of training tasks.\n\n{}\n![scaling](scaling.svg)\n",
            md_table(&["training tasks", "mean", "stderr", "seeds"], &md_rows)
        );
    }

    let p = out.join("report.md");
    write_file(&p, md)?;
    written.push(p);
    Ok(written)
}
