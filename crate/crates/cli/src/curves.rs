use std::path::PathBuf;

use anyhow::Result;
use hawkes_latency::{kernel_curve, CurveUnits, ModelMD};

use crate::config::{parse_list, resolve_model, Config};
use crate::io::Output;
use crate::{usage, CurvesArgs};

pub const HELP: &str = "\
Outputs, in --out: kernel_<m>_<n>.csv for target m and source n (0-based),
with header 't,phi' in seconds or 't_over_tau,phi' in units of latency.";

struct Plan {
    model: ModelMD,
    units: CurveUnits,
    points: usize,
    horizon: Option<f64>,
    pairs: Vec<(usize, usize)>,
    out: PathBuf,
}

fn plan(args: CurvesArgs) -> Result<Plan> {
    let cfg = Config::load(args.config.as_deref())?;
    let model = resolve_model(&args.model.flags(), &cfg)?;
    let dim = model.dim();
    let units = match cfg.pick(args.units, "units")?.as_deref() {
        None | Some("seconds") => CurveUnits::Seconds,
        Some("latency") => CurveUnits::Latency,
        Some(other) => return Err(usage(format!("unknown units '{other}'"))),
    };
    let points = cfg.pick(args.points, "points")?.unwrap_or(201);
    if points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let horizon = cfg.pick(args.horizon, "horizon")?;
    let pairs = match cfg.pick(args.pair, "pair")? {
        Some(p) => match parse_list(&p, "pair")?.as_slice() {
            [m, n] if m.fract() == 0.0 && n.fract() == 0.0 && *m >= 0.0 && *n >= 0.0 => {
                let (m, n) = (*m as usize, *n as usize);
                if m >= dim || n >= dim {
                    return Err(usage(format!("pair {m},{n} out of range for {dim} nodes")));
                }
                vec![(m, n)]
            }
            _ => return Err(usage("--pair expects 'target,source'")),
        },
        None => (0..dim)
            .flat_map(|m| (0..dim).map(move |n| (m, n)))
            .collect(),
    };
    for &(m, n) in &pairs {
        let tau = model.tau(m, n);
        if units == CurveUnits::Latency && tau <= 0.0 {
            return Err(usage(format!(
                "latency units need a positive latency, kernel {m},{n} has tau = {tau}"
            )));
        }
        if let Some(h) = horizon {
            if h <= tau {
                return Err(usage(format!("horizon {h} must exceed the latency {tau}")));
            }
        }
    }
    let out = cfg
        .pick(args.out, "out")?
        .ok_or_else(|| usage("missing --out"))?;
    cfg.finish()?;
    Ok(Plan {
        model,
        units,
        points,
        horizon,
        pairs,
        out,
    })
}

pub fn run(args: CurvesArgs) -> Result<()> {
    let plan = plan(args)?;
    let mut out = Output::new(plan.out);
    for &(m, n) in &plan.pairs {
        let k = plan.model.kernel(m, n);
        let horizon = plan.horizon.unwrap_or(k.tau + 5.0 / k.beta);
        let curve = kernel_curve(&plan.model, (m, n), plan.points, horizon, plan.units)?;
        let mut csv = String::from(match plan.units {
            CurveUnits::Seconds => "t,phi\n",
            CurveUnits::Latency => "t_over_tau,phi\n",
        });
        for (x, y) in curve.abscissa.iter().zip(&curve.ordinate) {
            csv.push_str(&format!("{x},{y}\n"));
        }
        out.add(format!("kernel_{m}_{n}.csv"), csv);
    }
    out.write()
}
