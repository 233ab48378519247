use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;

use scpnet_core::evaluation::RankingReport;

use super::train::{evaluate_model, train_run};
use crate::args::{SweepArgs, SweepAxis};
use crate::config::{runs_root, usage, RunConfig};

/// Outcome of one sweep value.
#[derive(Debug)]
pub struct SweepRow {
    pub value: String,
    pub result: Result<RankingReport>,
}

pub fn run(args: &SweepArgs) -> Result<()> {
    let base = RunConfig::load(&args.config)?;
    if base.eval_dirs().is_none() {
        return Err(usage("sweep needs data.query and data.gallery in the config"));
    }
    let root = runs_root().join(base.run_name(args.name.as_deref(), &args.config));
    super::require_empty(&root)?;
    fs::create_dir_all(&root)?;

    let one = |value: &String| SweepRow {
        value: value.clone(),
        result: run_value(&base, args.axis, value, &root),
    };
    let rows: Vec<SweepRow> = if args.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = args.values.iter().map(|v| s.spawn(move || one(v))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        args.values.iter().map(one).collect()
    };

    let axis = axis_name(args.axis);
    let mut csv = format!("# scpnet sweep v1; axis={axis}\nvalue,status,rank1,rank5,rank10,map,error\n");
    for row in &rows {
        match &row.result {
            Ok(r) => {
                writeln!(csv, "{},ok,{},{},{},{},", row.value, r.rank(1), r.rank(5), r.rank(10), r.map).unwrap();
                println!("{axis}={}: {}", row.value, r.summary_text());
            }
            Err(e) => {
                let msg = format!("{e:#}").replace('\n', " ").replace(',', ";");
                writeln!(csv, "{},error,,,,,{msg}", row.value).unwrap();
                println!("{axis}={}: failed: {e:#}", row.value);
            }
        }
    }
    fs::write(root.join("sweep.csv"), csv)?;
    println!("sweep results: {}", root.join("sweep.csv").display());
    if rows.iter().all(|r| r.result.is_err()) {
        anyhow::bail!("every sweep run failed");
    }
    Ok(())
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Lambda => "lambda",
        SweepAxis::R => "r",
    }
}

fn run_value(base: &RunConfig, axis: SweepAxis, value: &str, root: &Path) -> Result<RankingReport> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Lambda => {
            let v: f64 = value.parse().map_err(|_| usage(format!("lambda value {value:?} is not a number")))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(usage(format!("lambda={v} must be finite and nonnegative")));
            }
            cfg.train.loss.lambda_scp = v;
        }
        SweepAxis::R => {
            cfg.model.stripes = value
                .parse()
                .map_err(|_| usage(format!("R value {value:?} is not a positive integer")))?;
        }
    }
    cfg.name = None;
    let dir = root.join(format!("{}_{value}", axis_name(axis)));
    let (model, state, cfg, _) = train_run(cfg, &dir, None)?;
    let report = evaluate_model(&model, state.normalization, &cfg)?.expect("eval dirs checked up front");
    report.write_csv(&dir.join("eval"))?;
    Ok(report)
}
