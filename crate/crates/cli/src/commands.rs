use std::fs;
use std::path::PathBuf;

use serde_json::{json, Map, Value};
use sksd::config::{
    ica_from_body, split_document, variance_from_body, GofBenchmarkConfig, GofRbmConfig, RunSettings, SghmcSelectConfig,
    SvgdConfig,
};
use sksd::discrepancy::SliceConfig;
use sksd::goftest::{run_benchmark_methods, run_rbm_gof};
use sksd::models::{train_ica, IcaProblem};
use sksd::samplers::{
    average_variance, correlated_gaussian, parf, run_ssvgd, run_svgd, run_variance_experiment, select_step_sizes,
    ParfMode, ParticleEnsemble, SamplerKind, SliceInit,
};
use sksd::targets::{Ica, ScoreModel};
use sksd::{Matrix, Rng};

use crate::output::{num, opt_num, OutDir};
use crate::{CliError, Command, Shared};

/// Shared settings after applying flag overrides.
struct Resolved {
    seed: u64,
    workers: usize,
    out: OutDir,
    out_path: PathBuf,
}

fn resolve(flags: &Shared, file: RunSettings) -> Result<Resolved, CliError> {
    let seed = flags.seed.or(file.seed).ok_or_else(|| CliError::config("config error in `seed`: give `seed` in the config or --seed"))?;
    let out_path = match (&flags.out, file.out) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err(CliError::config("config error in `out`: give `out` in the config or --out")),
    };
    let workers = match flags.workers.or(file.workers) {
        Some(0) => return Err(CliError::config("config error in `workers`: must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(Resolved { seed, workers, out: OutDir::create(&out_path)?, out_path })
}

fn read_config(path: &PathBuf) -> Result<(RunSettings, Map<String, Value>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("config error in `--config`: cannot read {}: {e}", path.display())))?;
    Ok(split_document(&text)?)
}

macro_rules! to_value {
    ($v:expr) => {
        serde_json::to_value($v).unwrap_or(Value::Null)
    };
}

fn write_run_json(r: &Resolved, command: &str, config: Value) -> Result<(), CliError> {
    r.out.json(
        "run.json",
        &json!({
            "command": command,
            "seed": r.seed,
            "workers": r.workers,
            "out": r.out_path.display().to_string(),
            "config": config,
        }),
    )
}

pub fn run(command: Command) -> Result<(), CliError> {
    let (flags, name): (&Shared, &str) = match &command {
        Command::GofBenchmark(s) => (s, "gof-benchmark"),
        Command::GofRbm(s) => (s, "gof-rbm"),
        Command::Svgd(s) => (s, "svgd"),
        Command::Variance(s) => (s, "variance"),
        Command::SghmcSelect(s) => (s, "sghmc-select"),
        Command::Ica(s) => (s, "ica"),
    };
    let (file, body) = read_config(&flags.config)?;
    // Parse the body before touching the output directory.
    let parsed = Parsed::new(&command, body)?;
    let r = resolve(flags, file)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(r.workers)
        .build()
        .map_err(|e| CliError::runtime(format!("cannot start worker pool: {e}")))?;
    write_run_json(&r, name, parsed.echo())?;
    pool.install(|| parsed.execute(&r))
}

enum Parsed {
    GofBenchmark(GofBenchmarkConfig),
    GofRbm(GofRbmConfig),
    Svgd(SvgdConfig),
    Variance(sksd::samplers::VarianceSpec),
    SghmcSelect(SghmcSelectConfig),
    Ica(sksd::models::IcaConfig),
}

impl Parsed {
    fn new(command: &Command, body: Map<String, Value>) -> Result<Self, CliError> {
        Ok(match command {
            Command::GofBenchmark(_) => Parsed::GofBenchmark(GofBenchmarkConfig::from_body(body)?),
            Command::GofRbm(_) => Parsed::GofRbm(GofRbmConfig::from_body(body)?),
            Command::Svgd(_) => Parsed::Svgd(SvgdConfig::from_body(body)?),
            Command::Variance(_) => Parsed::Variance(variance_from_body(body)?),
            Command::SghmcSelect(_) => Parsed::SghmcSelect(SghmcSelectConfig::from_body(body)?),
            Command::Ica(_) => Parsed::Ica(ica_from_body(body)?),
        })
    }

    /// Resolved configuration, defaults filled in.
    fn echo(&self) -> Value {
        match self {
            Parsed::GofBenchmark(c) => {
                let mut v = to_value!(&c.spec);
                if let Value::Object(m) = &mut v {
                    m.remove("dim");
                    m.insert("dims".into(), to_value!(&c.dims));
                    m.insert("methods".into(), to_value!(&c.methods));
                }
                v
            }
            Parsed::GofRbm(c) => {
                let mut v = to_value!(&c.spec);
                if let Value::Object(m) = &mut v {
                    m.insert("methods".into(), to_value!(&c.methods));
                }
                v
            }
            Parsed::Svgd(c) => to_value!(c),
            Parsed::Variance(c) => to_value!(c),
            Parsed::SghmcSelect(c) => to_value!(c),
            Parsed::Ica(c) => {
                let resolved = sksd::models::IcaConfig { bandwidth: Some(c.policy()), rg_slices: c.rg_slices.or(Some(c.dim)), ..c.clone() };
                to_value!(&resolved)
            }
        }
    }

    fn execute(&self, r: &Resolved) -> Result<(), CliError> {
        match self {
            Parsed::GofBenchmark(c) => gof_benchmark(c, r),
            Parsed::GofRbm(c) => gof_rbm(c, r),
            Parsed::Svgd(c) => svgd(c, r),
            Parsed::Variance(c) => variance(c, r),
            Parsed::SghmcSelect(c) => sghmc_select(c, r),
            Parsed::Ica(c) => ica(c, r),
        }
    }
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// `trials.csv`: `method,benchmark,dim,trial,statistic,p_value,reject`;
/// `summary.csv`: `method,benchmark,dim,rejection_rate,mean_statistic,sd_statistic`.
fn gof_benchmark(c: &GofBenchmarkConfig, r: &Resolved) -> Result<(), CliError> {
    let mut records = Vec::new();
    for spec in c.specs() {
        records.extend(run_benchmark_methods(&spec, &c.methods, r.seed)?);
    }
    let trials = records.iter().flat_map(|rec| {
        rec.trials.iter().map(move |t| {
            vec![
                rec.method.name().to_string(),
                rec.alternative.name().to_string(),
                rec.dim.to_string(),
                t.trial.to_string(),
                num(t.statistic),
                num(t.p_value),
                flag(t.reject),
            ]
        })
    });
    r.out.csv("trials.csv", &["method", "benchmark", "dim", "trial", "statistic", "p_value", "reject"], trials)?;
    let summary = records.iter().map(|rec| {
        vec![
            rec.method.name().to_string(),
            rec.alternative.name().to_string(),
            rec.dim.to_string(),
            num(rec.rejection_rate),
            num(rec.mean_statistic),
            num(rec.sd_statistic),
        ]
    });
    r.out.csv("summary.csv", &["method", "benchmark", "dim", "rejection_rate", "mean_statistic", "sd_statistic"], summary)
}

/// `trials.csv`: `method,level,trial,statistic,p_value,reject`;
/// `summary.csv`: `method,level,rejection_rate,mean_statistic,sd_statistic`.
fn gof_rbm(c: &GofRbmConfig, r: &Resolved) -> Result<(), CliError> {
    let records = run_rbm_gof(&c.spec, &c.methods, r.seed)?;
    let trials = records.iter().flat_map(|rec| {
        rec.trials.iter().map(move |t| {
            vec![
                rec.method.name().to_string(),
                num(rec.level),
                t.trial.to_string(),
                num(t.statistic),
                num(t.p_value),
                flag(t.reject),
            ]
        })
    });
    r.out.csv("trials.csv", &["method", "level", "trial", "statistic", "p_value", "reject"], trials)?;
    let summary = records.iter().map(|rec| {
        vec![
            rec.method.name().to_string(),
            num(rec.level),
            num(rec.rejection_rate),
            num(rec.mean_statistic),
            num(rec.sd_statistic),
        ]
    });
    r.out.csv("summary.csv", &["method", "level", "rejection_rate", "mean_statistic", "sd_statistic"], summary)?;
    r.out.text("model.json", &ScoreModel::Rbm(c.spec.clean_model(r.seed)?).to_json())
}

/// `diagnostics.csv`: `iter,parf,var_avg`; `particles.csv`: `x0,…`; and
/// `slices.json` for sliced SVGD.
fn svgd(c: &SvgdConfig, r: &Resolved) -> Result<(), CliError> {
    let model = c.model()?;
    let d = sksd::targets::Score::dim(&model);
    let mut rng = Rng::new(r.seed);
    let mut init = rng.fork(0);
    let sd = c.init_var.sqrt();
    let x = Matrix::from_fn(c.particles, d, |_, _| c.init_mean + sd * init.normal());
    let ens = ParticleEnsemble::new(x, c.config.step_size)?;
    let (ens, slices) = match c.sampler {
        SamplerKind::Svgd => (run_svgd(&model, ens, &c.config, c.steps)?, None),
        SamplerKind::Ssvgd => {
            let g = match c.init_slices {
                SliceInit::Identity => SliceConfig::identity(d),
                SliceInit::Random => SliceConfig::random_g(d, &mut rng.fork(1)),
            };
            let (e, g) = run_ssvgd(&model, ens, g, &c.config, c.steps)?;
            (e, Some(g))
        }
    };
    let mut rows: Vec<(usize, f64, f64)> = ens.history.iter().map(|h| (h.iter, h.parf, h.var_avg)).collect();
    if rows.last().map(|l| l.0) != Some(ens.iteration) {
        let mode = if slices.is_some() { ParfMode::Ssvgd } else { ParfMode::Svgd };
        let p = parf(&ens.particles, mode, slices.as_ref(), &c.config.bandwidth)?;
        rows.push((ens.iteration, p, average_variance(&ens.particles)));
    }
    r.out.csv("diagnostics.csv", &["iter", "parf", "var_avg"], rows.into_iter().map(|(i, p, v)| vec![i.to_string(), num(p), num(v)]))?;
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    r.out.csv("particles.csv", &header, ens.particles.row_iter().map(|row| row.iter().map(|v| num(*v)).collect()))?;
    if let Some(g) = slices {
        r.out.text("slices.json", &g.to_json())?;
    }
    Ok(())
}

/// `variance.csv`: `sampler,dim,particles,step_size,var_avg,parf`.
fn variance(c: &sksd::samplers::VarianceSpec, r: &Resolved) -> Result<(), CliError> {
    let rows = run_variance_experiment(c, r.seed)?;
    r.out.csv(
        "variance.csv",
        &["sampler", "dim", "particles", "step_size", "var_avg", "parf"],
        rows.iter().map(|v| {
            vec![v.sampler.name().to_string(), v.dim.to_string(), v.particles.to_string(), num(v.step_size), num(v.var_avg), num(v.parf)]
        }),
    )
}

/// `step_sizes.csv`: `step_size,<one column per method>,kl`;
/// `selection.csv`: `method,step_size`, with a `kl-oracle` row for Gaussian
/// targets; `target.json` holds the target model.
fn sghmc_select(c: &SghmcSelectConfig, r: &Resolved) -> Result<(), CliError> {
    let model = match (&c.target, &c.correlated) {
        (Some(doc), _) => doc.clone().into_model()?,
        (None, Some(t)) => ScoreModel::Gaussian(correlated_gaussian(t.dim, t.min_var, t.max_var, &mut Rng::new(r.seed).fork(u64::MAX))?),
        (None, None) => return Err(CliError::config("config error in `target`: missing")),
    };
    let gaussian = match &model {
        ScoreModel::Gaussian(g) => Some(g),
        _ => None,
    };
    let sel = select_step_sizes(&model, gaussian, &c.selection, &Rng::new(r.seed))?;
    let mut header = vec!["step_size"];
    header.extend(sel.methods.iter().map(|m| m.name()));
    header.push("kl");
    r.out.csv(
        "step_sizes.csv",
        &header,
        sel.rows.iter().map(|row| {
            let mut v = vec![num(row.step_size)];
            v.extend(row.discrepancies.iter().map(|d| num(*d)));
            v.push(opt_num(row.kl));
            v
        }),
    )?;
    let mut chosen: Vec<Vec<String>> = sel.methods.iter().zip(&sel.chosen).map(|(m, h)| vec![m.name().to_string(), num(*h)]).collect();
    if let Some(h) = sel.kl_choice {
        chosen.push(vec!["kl-oracle".to_string(), num(h)]);
    }
    r.out.csv("selection.csv", &["method", "step_size"], chosen)?;
    r.out.text("target.json", &model.to_json())
}

/// `trace.csv`: `step,objective,test_nll`; `checkpoint.json`; and
/// `data_model.json` with the data-generating matrix.
fn ica(c: &sksd::models::IcaConfig, r: &Resolved) -> Result<(), CliError> {
    let problem = IcaProblem::generate(c.dim, c.n_train, c.n_test, &mut Rng::new(r.seed).fork(0))?;
    r.out.text("data_model.json", &ScoreModel::Ica(Ica::new(problem.w_true.clone())?).to_json())?;
    let run = train_ica(&problem, c, &mut Rng::new(r.seed).fork(1))?;
    r.out.csv(
        "trace.csv",
        &["step", "objective", "test_nll"],
        run.trace.iter().map(|t| vec![t.step.to_string(), num(t.objective), num(t.test_nll)]),
    )?;
    let mut cp = run.checkpoint().to_json();
    cp.push('\n');
    r.out.text("checkpoint.json", &cp)
}
