//! One function per subcommand.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sfdsfi::dataset::{gen_synthetic, save_csv};
use sfdsfi::eval::{
    compare_architectures, pd_sweep, run_battery, smearing_experiment, write_contrib_csv, write_curves_csv,
    write_sweep_csv, ArchitecturePoint, BatteryResult, BatterySpec, Ci, Stage, TestBed,
};
use sfdsfi::predictor::{Checkpoint, Model, TrainConfig};
use sfdsfi::sfi::{greedy_iso, CandidateOrder, FaultReport, IsolationSetup, SfiWindow};

use crate::config::{Algo, RunConfig};
use crate::pipeline::{self, *};
use crate::{Cli, Command, DataArgs};

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    /// `detect` declared H1 on at least one batch.
    FaultDeclared,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if let Command::Init = cli.command {
        return init(cli);
    }
    let cfg = resolve_config(cli)?;
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    match &cli.command {
        Command::Init => unreachable!(),
        Command::Synth => synth(&cfg),
        Command::Train => train_cmd(&cfg, cli.two_stage),
        Command::Detect(args) => detect(&cfg, cli, args),
        Command::Isolate(args) => isolate(&cfg, cli, args),
        Command::Sweep => sweep(&cfg, cli),
        Command::Report => report(&cfg, cli),
    }
}

/// Config file, then flag overrides; the seed flag also reads `SFDSFI_SEED`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(l) = cli.lambda {
        cfg.train.lambda = l;
    }
    if let Some(a) = cli.algo {
        cfg.isolation.algo = a;
    }
    if let Some(e) = cli.eta {
        cfg.isolation.sparse.eta = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init(cli: &Cli) -> Result<Outcome> {
    let path = cli.out.clone().or_else(|| cli.config.clone()).unwrap_or_else(|| PathBuf::from("sfdsfi.toml"));
    if path.exists() && !cli.force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    let mut cfg = RunConfig::default();
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    std::fs::write(&path, cfg.render(&path)?).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(Outcome::Clean)
}

fn synth(cfg: &RunConfig) -> Result<Outcome> {
    let series = gen_synthetic(cfg.data.sensors, cfg.data.samples, cfg.seed, &cfg.data.generator)?;
    let path = cfg.data_path();
    save_csv(&series, &path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}: {} sensors x {} samples", display_name(&path), series.n_sensors(), series.n_samples());
    Ok(Outcome::Clean)
}

#[derive(Serialize)]
struct StageHistory<'a> {
    stage: &'a str,
    lambda: f64,
    history: &'a [sfdsfi::predictor::EpochRecord],
}

fn train_cmd(cfg: &RunConfig, two_stage: bool) -> Result<Outcome> {
    let series = load_dataset(cfg)?;
    let data = prepare(cfg, &series, None)?;
    let stages: Vec<(&str, &str, TrainConfig)> = if two_stage {
        if cfg.train.lambda == 0.0 {
            log::warn!("two-stage training with lambda = 0 gives two identical models");
        }
        vec![
            ("detector", DETECTOR_CHECKPOINT, TrainConfig { lambda: 0.0, target_sensor: None, ..cfg.train.clone() }),
            ("isolator", ISOLATOR_CHECKPOINT, cfg.train.clone()),
        ]
    } else {
        vec![("model", SINGLE_CHECKPOINT, cfg.train.clone())]
    };
    let mut histories = Vec::new();
    for (stage, file, tc) in &stages {
        let (ckpt, history) = train_stage(cfg, &data, tc)?;
        let path = checkpoint_path(&cfg.output, file);
        ckpt.save(&path).with_context(|| format!("writing {}", path.display()))?;
        let last = history.last().expect("history starts with epoch 0");
        println!(
            "{stage}: lambda {} validation mse {:.6} gamma {:.6} -> {file}",
            tc.lambda,
            last.validation.mse,
            gamma_of(&ckpt)?
        );
        histories.push((stage.to_string(), tc.lambda, history));
    }
    let records: Vec<StageHistory> =
        histories.iter().map(|(s, l, h)| StageHistory { stage: s, lambda: *l, history: h }).collect();
    write_json(&cfg.output.join("loss_history.json"), &records)?;
    Ok(Outcome::Clean)
}

fn injections(args: &DataArgs) -> Result<Vec<(usize, f64)>> {
    args.inject.iter().map(|s| parse_injection(s)).collect()
}

fn detect(cfg: &RunConfig, cli: &Cli, args: &DataArgs) -> Result<Outcome> {
    let (detector, _) = load_stages(&cfg.output, cli.two_stage)?;
    let x = evaluation_data(cfg, &detector, args.data.as_deref(), &injections(args)?)?;
    let rule = cfg.fusion.resolve()?;
    let verdicts = pipeline::detection_pass(cfg, &detector, &x, &rule)?;
    let mut lines = String::new();
    for v in &verdicts {
        lines.push_str(&serde_json::to_string(&v.record(&rule))?);
        lines.push('\n');
    }
    std::fs::write(cfg.output.join("verdicts.jsonl"), &lines)?;
    std::io::stdout().write_all(lines.as_bytes())?;
    let faults = verdicts.iter().filter(|v| v.is_fault()).count();
    eprintln!("{faults} of {} batches declared H1", verdicts.len());
    Ok(if faults > 0 { Outcome::FaultDeclared } else { Outcome::Clean })
}

#[derive(Serialize)]
struct IsolationOutput {
    t_star: usize,
    forced: bool,
    algo: Algo,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    fault_list: Vec<usize>,
    /// Bias per listed sensor in raw data units.
    delta_hat: Vec<f64>,
    report: FaultReport,
}

fn isolate(cfg: &RunConfig, cli: &Cli, args: &DataArgs) -> Result<Outcome> {
    let (detector, isolator) = load_stages(&cfg.output, cli.two_stage)?;
    let x = evaluation_data(cfg, &detector, args.data.as_deref(), &injections(args)?)?;
    let rule = cfg.fusion.resolve()?;
    let verdicts = pipeline::detection_pass(cfg, &detector, &x, &rule)?;
    let first = verdicts.iter().find(|v| v.is_fault());
    let (t_star, forced) = match first {
        Some(v) => (v.t_star, false),
        None if cli.force => (cfg.isolation.warmup, true),
        None => bail!(
            "the detector declared no fault on these data, so there is nothing to isolate; \
             pass --force to search the first window anyway"
        ),
    };
    let window = SfiWindow::after_detection(t_star, rule.config.m, cfg.isolation.l, cfg.isolation.warmup);
    window.validate(x.n_samples())?;
    let setup =
        IsolationSetup { window, gamma: isolation_gamma_of(&isolator)?, rule, aggregation: cfg.isolation.aggregation };
    let order = match cfg.isolation.algo {
        Algo::Greedy => CandidateOrder::Contribution,
        Algo::Sparse => CandidateOrder::SparseBias(cfg.isolation.sparse),
    };
    let model = isolator.model()?;
    let report = greedy_iso(&model, x.values(), &setup, &order)?;
    let delta_hat = report.fault_list.iter().zip(&report.delta_hat).map(|(&c, &d)| d * isolator.norm.std[c]).collect();
    let out = IsolationOutput {
        t_star,
        forced,
        algo: cfg.isolation.algo,
        eta: (cfg.isolation.algo == Algo::Sparse).then_some(cfg.isolation.sparse.eta),
        fault_list: report.fault_list.clone(),
        delta_hat,
        report,
    };
    write_json(&cfg.output.join("fault_report.json"), &out)?;
    println!(
        "{}",
        serde_json::to_string(
            &serde_json::json!({ "t_star": out.t_star, "fault_list": out.fault_list, "delta_hat": out.delta_hat })
        )?
    );
    Ok(Outcome::Clean)
}

struct Loaded {
    detector: Checkpoint<f64>,
    isolator: Checkpoint<f64>,
    test: sfdsfi::dataset::SensorSeries<f64>,
    data: Prepared,
}

fn load_for_experiments(cfg: &RunConfig, two_stage: bool) -> Result<Loaded> {
    let (detector, isolator) = load_stages(&cfg.output, two_stage)?;
    let series = load_dataset(cfg)?;
    let data = prepare(cfg, &series, Some(&detector.norm))?;
    Ok(Loaded { detector, isolator, test: data.test.clone(), data })
}

#[derive(Serialize)]
struct SmearingSummary {
    channel: usize,
    crossover: Vec<Crossover>,
}

#[derive(Serialize)]
struct Crossover {
    model: String,
    beta: Option<f64>,
}

fn sweep(cfg: &RunConfig, cli: &Cli) -> Result<Outcome> {
    let l = load_for_experiments(cfg, cli.two_stage)?;
    let rule = cfg.fusion.resolve()?;
    let det_model = l.detector.model()?;
    let iso_model = l.isolator.model()?;
    let bed =
        TestBed { x: l.test.values(), norm: &l.detector.norm, rule, warmup: cfg.isolation.warmup, jobs: cli.jobs };
    let det_stage = Stage { model: &det_model, gamma: gamma_of(&l.detector)? };

    let result = pd_sweep(det_stage, &bed, &cfg.sweep)?;
    write_sweep_csv(&result, cfg.output.join("sweep.csv"))?;
    write_curves_csv(&result, cfg.output.join("curves.csv"))?;

    let target_lambda = if l.isolator.train_config.lambda > 0.0 { l.isolator.train_config.lambda } else { 0.01 };
    let targeted_cfg = TrainConfig {
        lambda: target_lambda,
        target_sensor: Some(cfg.smearing.channel),
        ..l.isolator.train_config.clone()
    };
    let (targeted, _) = train_stage(cfg, &l.data, &targeted_cfg)?;
    let targeted_model: Model<f64> = targeted.model()?;
    let stage = |m: &'static str, model, gamma| (m.to_string(), Stage { model, gamma });
    let mut models = vec![];
    if cli.two_stage {
        models.push(stage("lambda_0", &det_model as _, 0.0));
        models.push(stage("disentangled", &iso_model as _, 0.0));
    } else {
        models.push(stage("model", &iso_model as _, 0.0));
    }
    models.push(stage("targeted", &targeted_model as _, 0.0));
    let smear = smearing_experiment(&models, &bed, &cfg.smearing)?;
    write_contrib_csv(&smear, cfg.output.join("contrib.csv"))?;
    let summary = SmearingSummary {
        channel: smear.channel,
        crossover: smear.crossover.iter().map(|(m, b)| Crossover { model: m.clone(), beta: *b }).collect(),
    };
    write_json(&cfg.output.join("smearing.json"), &summary)?;

    if cli.two_stage {
        let one = Stage { model: &iso_model, gamma: gamma_of(&l.isolator)? };
        let (points, _, _) = compare_architectures(one, det_stage, &bed, &cfg.sweep)?;
        write_json(&cfg.output.join("comparison.json"), &points)?;
        let dominated = points.iter().filter(|p: &&ArchitecturePoint| !p.dominates).count();
        println!("two-stage vs one-stage: dominated at {dominated} of {} offsets", points.len());
    }
    println!("wrote sweep.csv, curves.csv, contrib.csv");
    Ok(Outcome::Clean)
}

#[derive(Serialize)]
struct MethodRow {
    method: String,
    /// Exact isolation rate on the single-fault battery.
    acc: f64,
    /// Mean IoU on the multi-fault battery.
    miou: f64,
    n_runs: usize,
    ci: Ci,
    /// Mean IoU over multi-fault runs whose fault batch was detected.
    miou_detected: Option<f64>,
}

#[derive(Serialize)]
struct Metrics {
    p_fa_detection: f64,
    p_fa_isolation: f64,
    multi_fault_detection_rate: f64,
    single_fault_detection_rate: f64,
    max_candidate_evaluations: usize,
    methods: Vec<MethodRow>,
}

fn detected_miou(res: &BatteryResult, method: &str, etas: &[f64]) -> Option<f64> {
    let runs: Vec<_> = res.runs.iter().filter(|r| r.detected).collect();
    if runs.is_empty() {
        return None;
    }
    let list = |r: &sfdsfi::eval::BatteryRun| -> Vec<usize> {
        match method {
            "top_k" => r.top_k.clone(),
            "greedy_iso" => r.greedy.fault_list.clone(),
            m => {
                let i = etas.iter().position(|e| m == format!("greedy_iso_sparse(eta={e})")).unwrap_or(0);
                r.sparse[i].clone()
            }
        }
    };
    Some(runs.iter().map(|r| sfdsfi::eval::iou(&list(r), &r.truth)).sum::<f64>() / runs.len() as f64)
}

fn report(cfg: &RunConfig, cli: &Cli) -> Result<Outcome> {
    let l = load_for_experiments(cfg, cli.two_stage)?;
    let rule = cfg.fusion.resolve()?;
    let det_model = l.detector.model()?;
    let iso_model = l.isolator.model()?;
    let bed =
        TestBed { x: l.test.values(), norm: &l.detector.norm, rule, warmup: cfg.isolation.warmup, jobs: cli.jobs };
    let detector = Stage { model: &det_model, gamma: gamma_of(&l.detector)? };
    let isolator = Stage { model: &iso_model, gamma: isolation_gamma_of(&l.isolator)? };

    let multi = run_battery(detector, isolator, &bed, &cfg.battery)?;
    let single_spec = BatterySpec { runs: cfg.single_fault_runs, min_faults: 1, max_faults: 1, ..cfg.battery.clone() };
    let single = run_battery(detector, isolator, &bed, &single_spec)?;

    let methods = multi
        .summary
        .iter()
        .map(|m| {
            let acc = single.method(&m.method).and_then(|s| s.acc).unwrap_or(f64::NAN);
            MethodRow {
                method: m.method.clone(),
                acc,
                miou: m.miou,
                n_runs: multi.runs.len(),
                ci: m.ci,
                miou_detected: detected_miou(&multi, &m.method, &cfg.battery.etas),
            }
        })
        .collect::<Vec<_>>();
    let metrics = Metrics {
        p_fa_detection: cfg.fusion.p_fa,
        p_fa_isolation: cfg.isolation.p_fa(&cfg.fusion),
        multi_fault_detection_rate: multi.detection_rate,
        single_fault_detection_rate: single.detection_rate,
        max_candidate_evaluations: multi.max_candidate_evaluations.max(single.max_candidate_evaluations),
        methods,
    };
    write_json(&cfg.output.join("metrics.json"), &metrics)?;
    write_json(&cfg.output.join("battery_multi.json"), &multi.runs)?;
    write_json(&cfg.output.join("battery_single.json"), &single.runs)?;
    let table = render_table(&metrics);
    std::fs::write(cfg.output.join("summary.md"), &table)?;
    print!("{table}");
    Ok(Outcome::Clean)
}

fn render_table(m: &Metrics) -> String {
    let mut s = String::from("| Method | Single fault ACC | Multiple faults mIoU | 95% CI |\n|---|---|---|---|\n");
    for r in &m.methods {
        s.push_str(&format!(
            "| {} | {:.1}% | {:.1}% | [{:.1}%, {:.1}%] |\n",
            r.method,
            100.0 * r.acc,
            100.0 * r.miou,
            100.0 * r.ci.lo,
            100.0 * r.ci.hi
        ));
    }
    s
}
