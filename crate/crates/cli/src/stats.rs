use std::path::PathBuf;

use anyhow::Result;
use hawkes_latency::data::{
    exogeneity_ratio, interval_stats, Dedup, SessionWindow, TimestampFormat, QUANTILE_LEVELS,
};

use crate::config::{parse_list, Config};
use crate::io::{expand_inputs, load, parse_with_usage, stem, Output};
use crate::{usage, StatsArgs};

pub const HELP: &str = "\
Outputs (in --out, or printed when --out is absent):
  stats.csv   series,n_events,dt_p10,dt_p15,dt_p25,dt_p50,dt_p75,dt_p90,dt_mean,fat_tailed
              plus below_latency with --latency; quantiles are lower nearest-rank
  ratios.csv  series,lambda0,n_events,session_seconds,exogeneity_ratio (with --lambda0)
Series are named by file stem, with ':<id>' appended for long files.
--n-events replaces the observed counts; with it no input files are needed.";

struct Plan {
    files: Vec<PathBuf>,
    format: TimestampFormat,
    dedup: Dedup,
    session: Option<SessionWindow>,
    latency: Option<f64>,
    lambda0: Option<Vec<f64>>,
    n_events: Option<Vec<usize>>,
    session_seconds: Option<f64>,
    out: Option<PathBuf>,
}

fn plan(args: StatsArgs) -> Result<Plan> {
    let cfg = Config::load(args.config.as_deref())?;
    let format = match cfg.pick(args.format, "format")? {
        Some(f) => parse_with_usage(&f)?,
        None => TimestampFormat::Plain,
    };
    let dedup = match cfg.pick(args.dedup, "dedup")? {
        Some(d) => parse_with_usage(&d)?,
        None => Dedup::Reject,
    };
    let session: Option<SessionWindow> = cfg
        .pick(args.session, "session")?
        .map(|s| parse_with_usage(&s))
        .transpose()?;
    let latency = cfg.pick(args.latency, "latency")?;
    if latency.is_some_and(|l| !(l.is_finite() && l >= 0.0)) {
        return Err(usage("--latency must be non-negative"));
    }
    let lambda0 = cfg
        .pick(args.lambda0, "lambda0")?
        .map(|v| parse_list(&v, "lambda0"))
        .transpose()?;
    let n_events = cfg
        .pick(args.n_events, "n-events")?
        .map(|v| {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| usage(format!("bad event count '{}'", x.trim())))
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let session_seconds = cfg
        .pick(args.session_seconds, "session-seconds")?
        .or(session.map(|w| w.seconds()));
    if lambda0.is_some() && session_seconds.is_none() {
        return Err(usage("ratios need --session-seconds or --session"));
    }
    if n_events.is_some() && lambda0.is_none() {
        return Err(usage("--n-events is only used with --lambda0"));
    }
    let files = if args.inputs.is_empty() && n_events.is_some() {
        Vec::new()
    } else {
        expand_inputs(&args.inputs, format)?
    };
    let out = cfg.pick(args.out, "out")?;
    cfg.finish()?;
    Ok(Plan {
        files,
        format,
        dedup,
        session,
        latency,
        lambda0,
        n_events,
        session_seconds,
        out,
    })
}

pub fn run(args: StatsArgs) -> Result<()> {
    let plan = plan(args)?;

    let mut names = Vec::new();
    let mut series = Vec::new();
    for path in &plan.files {
        let l = load(path, plan.format, plan.dedup, plan.session.as_ref())?;
        if l.jittered > 0 {
            eprintln!(
                "{}: jittered {} duplicate timestamps",
                path.display(),
                l.jittered
            );
        }
        for (id, s) in l.ids.iter().zip(l.series) {
            names.push(match plan.format {
                TimestampFormat::Plain => id.clone(),
                TimestampFormat::Long => format!("{}:{id}", stem(path)),
            });
            series.push(s);
        }
    }

    let mut stats_csv = None;
    if !series.is_empty() {
        let mut csv = String::from("series,n_events");
        for p in QUANTILE_LEVELS {
            csv.push_str(&format!(",dt_p{}", (p * 100.0).round()));
        }
        csv.push_str(",dt_mean,fat_tailed");
        if plan.latency.is_some() {
            csv.push_str(",below_latency");
        }
        csv.push('\n');
        for (name, s) in names.iter().zip(&series) {
            let st = interval_stats(s, plan.latency.unwrap_or(0.0))
                .map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
            csv.push_str(&format!("{name},{}", st.n_events));
            for q in st.quantiles {
                csv.push_str(&format!(",{q}"));
            }
            csv.push_str(&format!(",{},{}", st.mean, st.fat_tailed()));
            if plan.latency.is_some() {
                csv.push_str(&format!(",{}", st.below_latency));
            }
            csv.push('\n');
        }
        stats_csv = Some(csv);
    }

    let mut ratios_csv = None;
    if let Some(lambda0) = &plan.lambda0 {
        let counts: Vec<usize> = match &plan.n_events {
            Some(n) => n.clone(),
            None => series.iter().map(|s| s.len()).collect(),
        };
        if counts.len() != lambda0.len() {
            return Err(usage(format!(
                "{} lambda0 values for {} series",
                lambda0.len(),
                counts.len()
            )));
        }
        let secs = plan.session_seconds.expect("checked while planning");
        let mut csv = String::from("series,lambda0,n_events,session_seconds,exogeneity_ratio\n");
        for (k, (&l, &n)) in lambda0.iter().zip(&counts).enumerate() {
            let name = names
                .get(k)
                .cloned()
                .unwrap_or_else(|| format!("series_{k}"));
            let r = exogeneity_ratio(l, n, secs).map_err(|e| usage(e.to_string()))?;
            csv.push_str(&format!("{name},{l},{n},{secs},{r}\n"));
        }
        ratios_csv = Some(csv);
    }

    match plan.out {
        Some(dir) => {
            let mut out = Output::new(dir);
            if let Some(csv) = stats_csv {
                out.add("stats.csv", csv);
            }
            if let Some(csv) = ratios_csv {
                out.add("ratios.csv", csv);
            }
            out.write()
        }
        None => {
            for csv in [stats_csv, ratios_csv].into_iter().flatten() {
                print!("{csv}");
            }
            Ok(())
        }
    }
}
