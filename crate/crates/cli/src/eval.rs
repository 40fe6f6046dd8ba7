//! Batch evaluation with resume support.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use hyperplan_core::eval::{EvalReport, EvalRow, QaRecord};
use hyperplan_core::pipeline::{write_jsonl, RunLayout};
use hyperplan_core::reasoning::TraceRecord;
use hyperplan_core::{Engine, Error, QueryResult};

/// Rows finished so far, one JSON object per line, appended as each
/// question completes.
fn progress_path(layout: &RunLayout) -> PathBuf {
    layout.root.join("eval_rows.jsonl")
}

fn failure(id: String, reason: String) -> EvalRow {
    EvalRow {
        id,
        question: String::new(),
        golden_answer: String::new(),
        answer: String::new(),
        result: None,
        d_avg: None,
        error: Some(reason),
    }
}

enum Task {
    Ask(String, QaRecord),
    Failed(EvalRow),
}

/// Parses the QA file. Records without an id are named after their line;
/// malformed lines and repeated ids become failure rows.
fn read_tasks(path: &Path) -> Result<Vec<Task>> {
    let file = fs::File::open(path)
        .map_err(Error::from)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::from)?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<QaRecord>(&line) {
            Ok(rec) => {
                let id = rec.id.clone().unwrap_or_else(|| format!("line-{n}"));
                if seen.insert(id.clone()) {
                    tasks.push(Task::Ask(id, rec));
                } else {
                    tasks.push(Task::Failed(failure(
                        format!("{id}@line-{n}"),
                        format!("duplicate id {id:?}"),
                    )));
                }
            }
            Err(e) => {
                warn!(line = n, error = %e, "malformed QA line");
                tasks.push(Task::Failed(failure(
                    format!("line-{n}"),
                    format!("malformed record at line {n}: {e}"),
                )));
            }
        }
    }
    Ok(tasks)
}

/// Successful rows from an earlier run of the same directory.
fn finished_rows(path: &Path) -> Result<BTreeMap<String, EvalRow>> {
    let mut done = BTreeMap::new();
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(done);
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<EvalRow>(line) {
            Ok(row) if row.error.is_none() => {
                done.insert(row.id.clone(), row);
            }
            Ok(_) => {}
            Err(e) => warn!(error = %e, "ignoring unreadable progress line"),
        }
    }
    Ok(done)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: &'a str,
    question: &'a str,
    golden_answer: &'a str,
    answer: &'a str,
    f1: Option<f64>,
    rs: Option<f64>,
    ge: Option<f64>,
    d_avg: Option<f64>,
    error: Option<&'a str>,
}

fn write_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(CsvRow {
            id: &r.id,
            question: &r.question,
            golden_answer: &r.golden_answer,
            answer: &r.answer,
            f1: r.result.map(|x| x.f1),
            rs: r.result.and_then(|x| x.rs),
            ge: r.result.and_then(|x| x.ge),
            d_avg: r.d_avg,
            error: r.error.as_deref(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

pub fn run_eval(engine: &Engine, qa: &Path, layout: &RunLayout) -> Result<EvalReport> {
    fs::create_dir_all(&layout.root)?;
    let started = Instant::now();
    let progress = progress_path(layout);
    let done = finished_rows(&progress)?;
    let tasks = read_tasks(qa)?;

    let mut rows: Vec<EvalRow> = Vec::new();
    let mut todo: Vec<(String, QaRecord)> = Vec::new();
    for task in tasks {
        match task {
            Task::Ask(id, _) if done.contains_key(&id) => rows.push(done[&id].clone()),
            Task::Ask(id, rec) => todo.push((id, rec)),
            Task::Failed(row) => rows.push(row),
        }
    }
    info!(skipped = rows.len(), pending = todo.len(), "evaluating");

    let sink = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&progress)?,
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(engine.config.workers)
        .build()
        .context("starting worker pool")?;
    let fresh: Vec<(EvalRow, Option<QueryResult>)> = pool.install(|| {
        todo.par_iter()
            .map(|(id, rec)| -> Result<(EvalRow, Option<QueryResult>)> {
                let out = engine.evaluate(id, rec)?;
                if out.0.error.is_none() {
                    let mut line = serde_json::to_string(&out.0)?;
                    line.push('\n');
                    let mut f = sink.lock().expect("progress lock");
                    f.write_all(line.as_bytes())?;
                    f.flush()?;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut results: Vec<(String, QueryResult)> = Vec::new();
    for (row, result) in fresh {
        if let Some(r) = result {
            results.push((row.id.clone(), r));
        }
        rows.push(row);
    }
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let report = EvalReport::new(rows);
    let text = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(layout.report_json(), text)?;
    write_csv(&layout.report_csv(), &report.rows)?;
    let refs: Vec<&QueryResult> = results.iter().map(|(_, r)| r).collect();
    let manifest = engine.manifest(&refs, Some(started.elapsed()));
    fs::write(
        layout.manifest(),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    write_jsonl(
        &layout.trace(),
        results
            .iter()
            .flat_map(|(id, r)| r.trace.iter().map(move |record| TraceLine { id, record })),
    )?;
    Ok(report)
}
