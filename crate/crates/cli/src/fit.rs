use std::path::PathBuf;

use anyhow::{anyhow, Result};
use hawkes_latency::data::{Dedup, SessionWindow, TimestampFormat};
use hawkes_latency::fit::{
    fit_1d, fit_joint_md, fit_multipath_1d, fit_multipath_md, fit_node_md, param_name, summarize,
    Bounds, FitOptions, FitResult, PoolMode, TyingScheme,
};
use hawkes_latency::likelihood::{NodeParams, Params1D, PrecomputedDiffs1D, PrecomputedDiffsMD};
use hawkes_latency::model::theta_len;
use hawkes_latency::optim::{Method, OptimOptions};
use hawkes_latency::{EventSeries, Latency, Model1D, ModelMD};
use rayon::prelude::*;

use crate::config::{format_model, parse_latency, parse_pair, read_model, Config};
use crate::io::{csv_field, csv_name, expand_inputs, load, parse_with_usage, stem, Output};
use crate::{usage, FitArgs};

pub const HELP: &str = "\
Inputs: plain files (one 1-D path each) or long files (one M-D path each,
series ids are the nodes in numeric order). Directories expand to their
.txt / .csv files.

Outputs, in --out:
  fits.csv     path[,node],status,converged,n_evals,neg_ll,<parameters>,bound_hits
               parameters: 1-D lambda0,alpha,beta; joint lambda0_m,alpha_m_n,beta_m_n;
               node mode lambda0,alpha_n,beta_n for the fitted target node
  summary.csv  param,mean,sd,median,n_used,n_excluded,n_failed over converged fits
  timings.csv  path[,node],runtime_s (kept apart so fits.csv is reproducible)
  model_<path>.txt  fitted model per path (usable with curves --model)
Failed paths are recorded with their error in the status column; the exit
code is nonzero only when every path fails.";

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Joint,
    Node(Option<usize>),
}

struct Plan {
    files: Vec<PathBuf>,
    format: TimestampFormat,
    dedup: Dedup,
    session: Option<SessionWindow>,
    horizon: Option<f64>,
    latency: Option<String>,
    mode: Mode,
    pooled: bool,
    options: FitOptions,
    tying: Option<String>,
    init: Option<ModelMD>,
    out: PathBuf,
}

fn bounds(cfg: &Config, args: &FitArgs) -> Result<Bounds> {
    let mut b = Bounds::default();
    if let Some(v) = cfg.pick(args.lambda0_bounds.clone(), "lambda0-bounds")? {
        b.lambda0 = parse_pair(&v, "lambda0-bounds")?;
    }
    if let Some(v) = cfg.pick(args.alpha_bounds.clone(), "alpha-bounds")? {
        b.alpha = parse_pair(&v, "alpha-bounds")?;
    }
    if let Some(v) = cfg.pick(args.beta_bounds.clone(), "beta-bounds")? {
        b.beta = parse_pair(&v, "beta-bounds")?;
    }
    b.validate().map_err(|e| usage(e.to_string()))?;
    Ok(b)
}

fn plan(args: FitArgs) -> Result<Plan> {
    let cfg = Config::load(args.config.as_deref())?;
    let format: TimestampFormat = match cfg.pick(args.format.clone(), "format")? {
        Some(f) => parse_with_usage(&f)?,
        None => TimestampFormat::Plain,
    };
    let dedup: Dedup = match cfg.pick(args.dedup.clone(), "dedup")? {
        Some(d) => parse_with_usage(&d)?,
        None => Dedup::Reject,
    };
    let session: Option<SessionWindow> = cfg
        .pick(args.session.clone(), "session")?
        .map(|s| parse_with_usage(&s))
        .transpose()?;
    let horizon = cfg
        .pick(args.horizon, "horizon")?
        .or(session.map(|w| w.seconds()));
    let node = cfg.pick(args.node, "node")?;
    let mode = match cfg.pick(args.mode.clone(), "mode")?.as_deref() {
        None | Some("joint") if node.is_none() => Mode::Joint,
        None | Some("node") => Mode::Node(node),
        Some("joint") => return Err(usage("--node needs --mode node")),
        Some(other) => return Err(usage(format!("unknown mode '{other}'"))),
    };
    let pooled = cfg.pick_bool(args.pooled, "pooled")?;
    if pooled && matches!(mode, Mode::Node(_)) {
        return Err(usage("--pooled applies to joint fits only"));
    }
    let method: Method = match cfg.pick(args.method.clone(), "method")? {
        Some(m) => parse_with_usage(&m)?,
        None => Method::Powell,
    };
    let mut optim = OptimOptions {
        seed: cfg.pick(args.seed, "seed")?.unwrap_or(0),
        ..OptimOptions::default()
    };
    if let Some(n) = cfg.pick(args.max_evals, "max-evals")? {
        if n == 0 {
            return Err(usage("--max-evals must be positive"));
        }
        optim.max_evals = n;
    }
    let options = FitOptions {
        method,
        bounds: bounds(&cfg, &args)?,
        optim,
    };
    let init = cfg
        .pick(args.init.clone(), "init")?
        .map(|p| read_model(&p).map_err(|e| usage(format!("{e:#}"))))
        .transpose()?;
    let out = cfg
        .pick(args.out.clone(), "out")?
        .ok_or_else(|| usage("missing --out"))?;
    let inputs = if args.inputs.is_empty() {
        cfg.raw("inputs")
            .map(|v| v.split(',').map(|s| PathBuf::from(s.trim())).collect())
            .unwrap_or_default()
    } else {
        args.inputs.clone()
    };
    let files = expand_inputs(&inputs, format)?;
    let plan = Plan {
        files,
        format,
        dedup,
        session,
        horizon,
        latency: cfg.pick(args.latency.clone(), "latency")?,
        mode,
        pooled,
        options,
        tying: cfg.pick(args.tying.clone(), "tying")?,
        init,
        out,
    };
    cfg.finish()?;
    Ok(plan)
}

/// Outcome of one fit, flattened for the tables.
struct RowFit {
    converged: bool,
    n_evals: usize,
    neg_ll: f64,
    values: Vec<f64>,
    bound_hits: Vec<String>,
    runtime_s: f64,
    model: Option<ModelMD>,
}

struct Row {
    path: String,
    node: Option<usize>,
    outcome: std::result::Result<RowFit, String>,
}

fn row_1d(f: FitResult<Model1D>) -> RowFit {
    let p = f.params;
    RowFit {
        converged: f.converged,
        n_evals: f.n_evals,
        neg_ll: f.neg_ll,
        values: vec![p.lambda0, p.alpha, p.beta],
        bound_hits: f.bound_hits,
        runtime_s: f.runtime_s,
        model: Some(ModelMD::from(p)),
    }
}

fn row_joint(f: FitResult<ModelMD>) -> RowFit {
    RowFit {
        converged: f.converged,
        n_evals: f.n_evals,
        neg_ll: f.neg_ll,
        values: f.params.theta(),
        bound_hits: f.bound_hits.iter().map(|h| csv_name(h)).collect(),
        runtime_s: f.runtime_s,
        model: Some(f.params),
    }
}

fn row_node(f: FitResult<NodeParams>) -> RowFit {
    let mut values = vec![f.params.lambda0];
    values.extend(&f.params.alpha);
    values.extend(&f.params.beta);
    RowFit {
        converged: f.converged,
        n_evals: f.n_evals,
        neg_ll: f.neg_ll,
        values,
        bound_hits: f.bound_hits.iter().map(|h| csv_name(h)).collect(),
        runtime_s: f.runtime_s,
        model: None,
    }
}

enum Kind {
    OneD,
    Joint(TyingScheme),
    Node(Vec<usize>),
}

struct Job<'a> {
    plan: &'a Plan,
    kind: Kind,
    dim: usize,
    tau: Latency,
}

impl Job<'_> {
    fn pre_md(&self, series: &[EventSeries]) -> hawkes_latency::Result<PrecomputedDiffsMD> {
        match self.plan.horizon {
            Some(h) => PrecomputedDiffsMD::with_horizon(series, &self.tau, h),
            None => PrecomputedDiffsMD::new(series, &self.tau),
        }
    }

    fn scalar_tau(&self) -> f64 {
        self.tau.get(0, 0)
    }

    fn init_1d(&self) -> Option<Params1D> {
        self.plan
            .init
            .as_ref()
            .and_then(|m| m.as_1d())
            .map(|m| Params1D::from(&m))
    }

    fn fit_path(&self, index: usize, label: &str, series: &[EventSeries]) -> Vec<Row> {
        let mut opts = self.plan.options;
        opts.optim.seed = opts.optim.seed.wrapping_add(index as u64);
        let row = |node, outcome: hawkes_latency::Result<RowFit>| Row {
            path: label.to_string(),
            node,
            outcome: outcome.map_err(|e| e.to_string()),
        };
        if series.len() != self.dim {
            let msg = format!("expected {} series, found {}", self.dim, series.len());
            let nodes: Vec<Option<usize>> = match &self.kind {
                Kind::Node(nodes) => nodes.iter().map(|&m| Some(m)).collect(),
                _ => vec![None],
            };
            return nodes
                .into_iter()
                .map(|node| Row {
                    path: label.to_string(),
                    node,
                    outcome: Err(msg.clone()),
                })
                .collect();
        }
        match &self.kind {
            Kind::OneD => {
                let pre = match self.plan.horizon {
                    Some(h) => PrecomputedDiffs1D::with_horizon(&series[0], self.scalar_tau(), h),
                    None => PrecomputedDiffs1D::new(&series[0], self.scalar_tau()),
                };
                vec![row(
                    None,
                    pre.and_then(|pre| fit_1d(&pre, self.init_1d(), &opts))
                        .map(row_1d),
                )]
            }
            Kind::Joint(tying) => {
                let fit = self
                    .pre_md(series)
                    .and_then(|pre| fit_joint_md(&pre, self.plan.init.as_ref(), tying, &opts));
                vec![row(None, fit.map(row_joint))]
            }
            Kind::Node(nodes) => match self.pre_md(series) {
                Ok(pre) => nodes
                    .iter()
                    .map(|&m| {
                        let init = self
                            .plan
                            .init
                            .as_ref()
                            .map(|model| NodeParams::from_theta(&model.theta(), self.dim, m));
                        row(Some(m), fit_node_md(&pre, m, init, &opts).map(row_node))
                    })
                    .collect(),
                Err(e) => nodes
                    .iter()
                    .map(|&m| row(Some(m), Err(e.clone())))
                    .collect(),
            },
        }
    }

    fn fit_pooled(&self, paths: &[Vec<EventSeries>]) -> Row {
        let opts = &self.plan.options;
        let outcome = match &self.kind {
            Kind::OneD => {
                let series: Vec<EventSeries> = paths.iter().map(|p| p[0].clone()).collect();
                fit_multipath_1d(
                    &series,
                    self.scalar_tau(),
                    self.plan.horizon,
                    self.init_1d(),
                    opts,
                    PoolMode::Pooled,
                )
                .map(|mut m| row_1d(m.fits.remove(0)))
            }
            Kind::Joint(tying) => fit_multipath_md(
                paths,
                &self.tau,
                self.plan.horizon,
                self.plan.init.as_ref(),
                tying,
                opts,
                PoolMode::Pooled,
            )
            .map(|mut m| row_joint(m.fits.remove(0))),
            Kind::Node(_) => unreachable!("rejected while planning"),
        };
        Row {
            path: "pooled".into(),
            node: None,
            outcome: outcome.map_err(|e| e.to_string()),
        }
    }
}

fn tying_for(spec: Option<&str>, dim: usize) -> Result<Option<TyingScheme>> {
    let Some(spec) = spec else {
        return Ok(None);
    };
    let scheme = if spec == "bund" {
        TyingScheme::bund()
    } else {
        let text = std::fs::read_to_string(spec)
            .map_err(|e| usage(format!("cannot read tying file {spec}: {e}")))?;
        TyingScheme::parse(dim, &text).map_err(|e| usage(e.to_string()))?
    };
    if scheme.dim() != dim {
        return Err(usage(format!(
            "tying scheme is for {} nodes, data has {dim}",
            scheme.dim()
        )));
    }
    Ok(Some(scheme))
}

fn param_columns(kind: &Kind, dim: usize) -> Vec<String> {
    match kind {
        Kind::OneD => ["lambda0", "alpha", "beta"].map(String::from).to_vec(),
        Kind::Joint(_) => (0..theta_len(dim))
            .map(|k| csv_name(&param_name(dim, k)))
            .collect(),
        Kind::Node(_) => std::iter::once("lambda0".to_string())
            .chain((0..dim).map(|n| format!("alpha_{n}")))
            .chain((0..dim).map(|n| format!("beta_{n}")))
            .collect(),
    }
}

fn summary_csv(kind: &Kind, dim: usize, rows: &[Row]) -> String {
    let mut out = String::from("param,mean,sd,median,n_used,n_excluded,n_failed\n");
    let groups: Vec<(Option<usize>, Vec<String>)> = match kind {
        Kind::Node(nodes) => nodes
            .iter()
            .map(|&m| {
                let names = std::iter::once(format!("lambda0_{m}"))
                    .chain((0..dim).map(|n| format!("alpha_{m}_{n}")))
                    .chain((0..dim).map(|n| format!("beta_{m}_{n}")))
                    .collect();
                (Some(m), names)
            })
            .collect(),
        _ => vec![(None, param_columns(kind, dim))],
    };
    for (node, names) in groups {
        let mine: Vec<&Row> = rows.iter().filter(|r| r.node == node).collect();
        let failed = mine.iter().filter(|r| r.outcome.is_err()).count();
        let ok: Vec<&RowFit> = mine
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        let used: Vec<Vec<f64>> = ok
            .iter()
            .filter(|f| f.converged)
            .map(|f| f.values.clone())
            .collect();
        let excluded = ok.len() - used.len();
        if used.is_empty() {
            for name in names {
                out.push_str(&format!("{name},,,,0,{excluded},{failed}\n"));
            }
            continue;
        }
        for s in summarize(names, &used) {
            out.push_str(&format!(
                "{},{},{},{},{},{excluded},{failed}\n",
                s.name,
                s.mean,
                s.sd,
                s.median,
                used.len()
            ));
        }
    }
    out
}

pub fn run(args: FitArgs) -> Result<()> {
    let plan = plan(args)?;

    let loaded: Vec<(String, std::result::Result<Vec<EventSeries>, String>)> = plan
        .files
        .par_iter()
        .map(|p| {
            let r = load(p, plan.format, plan.dedup, plan.session.as_ref());
            (stem(p), r.map_err(|e| format!("{e:#}")))
        })
        .map(|(label, r)| {
            let series = r.map(|l| {
                if l.jittered > 0 {
                    eprintln!("{label}: jittered {} duplicate timestamps", l.jittered);
                }
                l.series
            });
            (label, series)
        })
        .collect();

    let dim = loaded
        .iter()
        .find_map(|(_, r)| r.as_ref().ok().map(Vec::len))
        .ok_or_else(|| {
            let (label, err) = loaded
                .iter()
                .find_map(|(l, r)| r.as_ref().err().map(|e| (l, e)))
                .expect("at least one input");
            anyhow!("no input could be read; {label}: {err}")
        })?;
    let tau = match &plan.latency {
        Some(t) => parse_latency(t, dim)?,
        None => Latency::Scalar(0.0),
    };
    if let Some(init) = &plan.init {
        if init.dim() != dim {
            return Err(usage(format!(
                "initial model has {} nodes, data has {dim}",
                init.dim()
            )));
        }
    }
    let tying = tying_for(plan.tying.as_deref(), dim)?;
    let kind = match plan.mode {
        Mode::Node(Some(m)) if m >= dim => {
            return Err(usage(format!("--node {m} out of range for {dim} nodes")))
        }
        Mode::Node(Some(m)) => Kind::Node(vec![m]),
        Mode::Node(None) => Kind::Node((0..dim).collect()),
        Mode::Joint if dim == 1 && tying.is_none() && tau.is_scalar() => Kind::OneD,
        Mode::Joint => Kind::Joint(tying.unwrap_or_else(|| TyingScheme::identity(dim))),
    };
    let job = Job {
        plan: &plan,
        kind,
        dim,
        tau,
    };

    let rows: Vec<Row> = if plan.pooled {
        let mut rows: Vec<Row> = loaded
            .iter()
            .filter_map(|(label, r)| {
                r.as_ref().err().map(|e| Row {
                    path: label.clone(),
                    node: None,
                    outcome: Err(e.clone()),
                })
            })
            .collect();
        let good: Vec<Vec<EventSeries>> = loaded
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok().cloned())
            .filter(|s| s.len() == dim)
            .collect();
        rows.push(job.fit_pooled(&good));
        rows
    } else {
        loaded
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, (label, r))| match r {
                Ok(series) => job.fit_path(i, label, series),
                Err(e) => {
                    let nodes: Vec<Option<usize>> = match &job.kind {
                        Kind::Node(nodes) => nodes.iter().map(|&m| Some(m)).collect(),
                        _ => vec![None],
                    };
                    nodes
                        .into_iter()
                        .map(|node| Row {
                            path: label.clone(),
                            node,
                            outcome: Err(e.clone()),
                        })
                        .collect()
                }
            })
            .collect()
    };

    let node_col = matches!(job.kind, Kind::Node(_));
    let columns = param_columns(&job.kind, dim);
    let mut fits = String::from(if node_col { "path,node," } else { "path," });
    fits.push_str("status,converged,n_evals,neg_ll,");
    fits.push_str(&columns.join(","));
    fits.push_str(",bound_hits\n");
    let mut timings = String::from(if node_col {
        "path,node,runtime_s\n"
    } else {
        "path,runtime_s\n"
    });
    let mut out = Output::new(plan.out.clone());
    for r in &rows {
        let key = match r.node {
            Some(m) => format!("{},{m}", r.path),
            None => r.path.clone(),
        };
        match &r.outcome {
            Ok(f) => {
                let values: Vec<String> = f.values.iter().map(|v| format!("{v}")).collect();
                fits.push_str(&format!(
                    "{key},ok,{},{},{},{},{}\n",
                    f.converged,
                    f.n_evals,
                    f.neg_ll,
                    values.join(","),
                    f.bound_hits.join(";")
                ));
                timings.push_str(&format!("{key},{}\n", f.runtime_s));
                if let Some(model) = &f.model {
                    out.add(format!("model_{}.txt", r.path), format_model(model));
                }
            }
            Err(e) => {
                let blanks = ",".repeat(columns.len());
                fits.push_str(&format!(
                    "{key},{},,,{blanks},\n",
                    csv_field(&format!("error: {e}"))
                ));
            }
        }
    }
    if let Kind::Node(nodes) = &job.kind {
        if nodes.len() == dim {
            for model in assemble_node_models(&rows, dim, &job.tau) {
                out.add(format!("model_{}.txt", model.0), format_model(&model.1));
            }
        }
    }
    out.add("fits.csv", fits);
    out.add("summary.csv", summary_csv(&job.kind, dim, &rows));
    out.add("timings.csv", timings);
    out.write()?;

    if rows.iter().all(|r| r.outcome.is_err()) {
        return Err(anyhow!("every fit failed"));
    }
    Ok(())
}

/// Full models for paths whose every node was fitted successfully.
fn assemble_node_models(rows: &[Row], dim: usize, tau: &Latency) -> Vec<(String, ModelMD)> {
    let mut out = Vec::new();
    for chunk in rows.chunks(dim) {
        let fits: Option<Vec<&RowFit>> = chunk.iter().map(|r| r.outcome.as_ref().ok()).collect();
        let Some(fits) = fits else { continue };
        let mut lambda0 = Vec::with_capacity(dim);
        let mut alpha = Vec::with_capacity(dim * dim);
        let mut beta = Vec::with_capacity(dim * dim);
        for f in &fits {
            lambda0.push(f.values[0]);
            alpha.extend(&f.values[1..1 + dim]);
            beta.extend(&f.values[1 + dim..]);
        }
        if let Ok(model) = ModelMD::from_row_major(lambda0, &alpha, &beta, tau.clone()) {
            out.push((chunk[0].path.clone(), model));
        }
    }
    out
}
