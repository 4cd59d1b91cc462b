//! `rtmpc bench`: repeated closed-loop runs per option combination.
//!
//! Each repeat reduces to one number per phase (the mean per-sample wall
//! time); the table reports mean, max and percentiles of those numbers
//! across repeats, so a single repeat gives mean = max.

use crate::{visit, BenchArgs, ClosedLoop, Failure};
use rtmpc::sim::SimLog;

const PHASES: [&str; 5] = ["solve", "generation", "condensing", "qp", "line_search"];

fn phase_times(log: &SimLog) -> [f64; 5] {
    let s = log.summary();
    [
        s.solve_time.mean,
        s.generation_time.mean,
        s.condensing_time.mean,
        s.qp_time.mean,
        s.line_search_time.mean,
    ]
}

/// Linear interpolation between closest ranks; `v` must be sorted.
fn percentile(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn sweep_axes(sweeps: &[String]) -> Result<Vec<(String, Vec<String>)>, Failure> {
    sweeps
        .iter()
        .map(|s| {
            let (k, vs) = crate::split_pair(s)?;
            let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(Failure::Input(format!("sweep `{k}` has no values")));
            }
            Ok((k.to_string(), values))
        })
        .collect()
}

fn combinations(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut out = vec![vec![]];
    for (key, values) in axes {
        out = out
            .into_iter()
            .flat_map(|c: Vec<(String, String)>| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    out
}

pub(crate) fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    if args.repeats == 0 {
        return Err(Failure::Input("--repeats must be >= 1".into()));
    }
    let combos = combinations(&sweep_axes(&args.sweep)?);
    // validate every combination before spending time on any of them
    let specs = combos
        .iter()
        .map(|c| args.spec.resolve(c).map(|s| (c, s)))
        .collect::<Result<Vec<_>, _>>()?;
    args.spec.init_threads()?;

    let mut header = vec!["combination", "benchmark", "repeats", "samples", "failures", "final_kkt", "tracking", "update_fraction"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for p in PHASES {
        for s in ["mean", "max", "p50", "p95"] {
            header.push(format!("{p}_{s}"));
        }
    }
    let mut rows = Vec::new();
    let mut failed = false;
    for (combo, spec) in &specs {
        let label = if combo.is_empty() {
            "default".to_string()
        } else {
            combo.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
        };
        let mut per_phase: Vec<Vec<f64>> = vec![Vec::new(); PHASES.len()];
        let mut last = None;
        for _ in 0..args.repeats {
            let log = visit(spec, ClosedLoop(spec))??;
            for (acc, t) in per_phase.iter_mut().zip(phase_times(&log)) {
                acc.push(t);
            }
            last = Some(log);
        }
        let log = last.expect("repeats >= 1");
        let s = log.summary();
        failed |= s.failures > 0;
        let mut row = vec![
            label,
            spec.benchmark.name().to_string(),
            args.repeats.to_string(),
            s.samples.to_string(),
            s.failures.to_string(),
            format!("{:e}", s.final_kkt),
            format!("{:e}", s.stage_cost.mean),
            format!("{}", s.update_fraction.mean),
        ];
        for mut v in per_phase {
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let max = *v.last().expect("nonempty");
            for x in [mean, max, percentile(&v, 0.5), percentile(&v, 0.95)] {
                row.push(format!("{x:e}"));
            }
        }
        rows.push(row);
    }

    let mut w = csv::Writer::from_writer(std::io::stdout());
    let io = |e: csv::Error| Failure::Solver(e.to_string());
    w.write_record(&header).map_err(io)?;
    for r in &rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Solver(e.to_string()))?;
    if let Some(dir) = &args.spec.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Solver(e.to_string()))?;
        let mut f = csv::Writer::from_path(dir.join("bench.csv")).map_err(io)?;
        f.write_record(&header).map_err(io)?;
        for r in &rows {
            f.write_record(r).map_err(io)?;
        }
        f.flush().map_err(|e| Failure::Solver(e.to_string()))?;
    }
    if failed {
        return Err(Failure::Solver("some samples failed".into()));
    }
    Ok(())
}
