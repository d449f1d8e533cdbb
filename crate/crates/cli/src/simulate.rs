use std::path::PathBuf;

use anyhow::Result;
use hawkes_latency::data::{format_long, format_plain, TimestampFormat};
use hawkes_latency::sim::{simulate, SimConfig, SimMethod};
use hawkes_latency::ModelMD;

use crate::config::{format_model, resolve_model, Config};
use crate::io::{parse_with_usage, Output};
use crate::{usage, SimulateArgs};

pub const HELP: &str = "\
Outputs, in --out:
  plain format: path_NNNN.txt, one timestamp per line (1-D models only)
  long format:  path_NNNN.csv, header 'series,t', node ids 0..M-1
  manifest.conf: model, seed, method, end time, format and per-node counts;
                 it can be passed back as --config to reproduce the run";

struct Plan {
    model: ModelMD,
    config: SimConfig,
    format: TimestampFormat,
    out: PathBuf,
}

fn plan(args: SimulateArgs) -> Result<Plan> {
    let cfg = Config::load(args.config.as_deref())?;
    let model = resolve_model(&args.model.flags(), &cfg)?;
    let st = model.stationarity();
    if !st.stable {
        return Err(usage(format!(
            "model is not stationary: spectral radius {} must be below 1",
            st.spectral_radius
        )));
    }
    let end_time = cfg
        .pick(args.end_time, "end-time")?
        .ok_or_else(|| usage("missing --end-time"))?;
    let n_paths = cfg.pick(args.paths, "paths")?.unwrap_or(1);
    let seed = cfg.pick(args.seed, "seed")?.unwrap_or(0);
    let method: SimMethod = match cfg.pick(args.method, "method")? {
        Some(m) => parse_with_usage(&m)?,
        None => SimMethod::Thinning,
    };
    let format = match cfg.pick(args.format, "format")? {
        Some(f) => parse_with_usage(&f)?,
        None if model.dim() == 1 => TimestampFormat::Plain,
        None => TimestampFormat::Long,
    };
    if format == TimestampFormat::Plain && model.dim() != 1 {
        return Err(usage(
            "plain format holds one series per file; use --format long",
        ));
    }
    let out = cfg
        .pick(args.out, "out")?
        .ok_or_else(|| usage("missing --out"))?;
    let config =
        SimConfig::new(end_time, n_paths, seed, method).map_err(|e| usage(e.to_string()))?;
    cfg.finish()?;
    Ok(Plan {
        model,
        config,
        format,
        out,
    })
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let plan = plan(args)?;
    let paths = simulate(&plan.model, &plan.config)?;
    let dim = plan.model.dim();
    let ids: Vec<String> = (0..dim).map(|m| m.to_string()).collect();

    let mut out = Output::new(plan.out);
    for (i, path) in paths.paths.iter().enumerate() {
        match plan.format {
            TimestampFormat::Plain => out.add(format!("path_{i:04}.txt"), format_plain(&path[0])),
            TimestampFormat::Long => out.add(format!("path_{i:04}.csv"), format_long(&ids, path)),
        }
    }

    let c = &plan.config;
    let mut manifest = String::from("command = simulate\n");
    manifest.push_str(&format_model(&plan.model));
    manifest.push_str(&format!(
        "end-time = {}\npaths = {}\nseed = {}\nmethod = {}\nformat = {}\ncollisions = {}\n",
        c.end_time,
        c.n_paths,
        c.seed,
        c.method.name(),
        match plan.format {
            TimestampFormat::Plain => "plain",
            TimestampFormat::Long => "long",
        },
        paths.collisions
    ));
    for m in 0..dim {
        let counts: Vec<String> = paths.counts(m).iter().map(|n| n.to_string()).collect();
        manifest.push_str(&format!("counts-node-{m} = {}\n", counts.join(",")));
    }
    out.add("manifest.conf", manifest);
    out.write()
}
