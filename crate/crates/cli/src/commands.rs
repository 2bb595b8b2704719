use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;
use setrec::data::{build_instances, gen_synthetic, ingest_events, pair_cooccurrence, split, Dataset, TrainingInstance};
use setrec::diversity::{extract_diverse_subsets, learn_diverse_kernel, DiversityFactor};
use setrec::eval::{
    bce_loss, bce_loss_grad, evaluate_users, format_table, write_metrics_csv, write_per_user_csv, IldDistance,
    MetricContext,
};
use setrec::model::{Checkpoint, ModelParams};
use setrec::objective::{finite_diff_check, finite_diff_check_with, FdConfig};
use setrec::train::{run_epochs, write_history_csv, ObjectiveKind, TrainData, TrainState};

use crate::config::{parse_sweep, parse_topn, RunConfig};
use crate::{Common, EvalArgs, Exit, IngestArgs, LearnDivArgs, SynthArgs, TrainArgs, EXIT_DATA, EXIT_INPUT, EXIT_NUMERIC};

/// Largest finite-difference error `train --grad-check` tolerates.
pub const GRAD_CHECK_LIMIT: f64 = 1e-3;

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| Exit::new(EXIT_INPUT, format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.sync_seeds();
    Ok(cfg)
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating run directory {}", out.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn save_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

fn print_stats(ds: &Dataset) {
    let s = ds.stats();
    println!(
        "users {}  items {}  sets {}  categories {}",
        s.users, s.items, s.sets, s.categories
    );
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.input {
        cfg.paths.input = Some(p.clone());
    }
    if let Some(n) = args.min_sets {
        cfg.ingest.min_sets = n;
    }
    if let Some(n) = args.max_set_size {
        cfg.ingest.max_set_size = n;
    }
    let input = cfg
        .paths
        .input
        .clone()
        .ok_or_else(|| Exit::new(EXIT_INPUT, "ingest needs --input or paths.input"))?;
    let out = &args.common.out;
    prepare_out(out)?;

    let ingested = ingest_events(&input, &cfg.ingest)?;
    let ds = Dataset::from_events(&ingested.events, &cfg.ingest)?;
    if ds.sequences.is_empty() {
        return Err(Exit::new(EXIT_DATA, "no user has enough sets after filtering").into());
    }
    ds.save(&out.join("dataset.json"))?;
    ingested.maps.save(&out.join("index_maps.json"))?;
    save_json(&out.join("ingest_summary.json"), &serde_json::to_value(&ingested.summary)?)?;
    cfg.write(out, "ingest")?;

    let s = &ingested.summary;
    println!("read {} rows, kept {}, dropped {}", s.rows_read, s.rows_kept, s.rows_dropped);
    print_stats(&ds);
    Ok(())
}

fn write_events_csv(path: &Path, events: &[setrec::data::Interaction]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
    writeln!(w, "user_id,item_id,category_id,timestamp")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.user, e.item, e.category, e.time)?;
    }
    w.flush()?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    let s = &mut cfg.synth;
    if let Some(r) = args.rho {
        s.rho = r;
    }
    if let Some(n) = args.users {
        s.n_users = n;
    }
    if let Some(n) = args.items {
        s.n_items = n;
    }
    if let Some(n) = args.categories {
        s.n_categories = n;
    }
    if let Some(n) = args.days {
        s.n_days = n;
    }
    let out = &args.common.out;
    prepare_out(out)?;

    let events = gen_synthetic(&cfg.synth, cfg.seed)?;
    let ds = Dataset::from_events(&events, &cfg.ingest)?;
    if ds.sequences.is_empty() {
        return Err(Exit::new(EXIT_DATA, "no user has enough sets after filtering").into());
    }
    write_events_csv(&out.join("events.csv"), &events)?;
    ds.save(&out.join("dataset.json"))?;
    let planted = cfg.synth.planted(cfg.seed);
    save_json(&out.join("planted.json"), &json!(planted))?;
    cfg.write(out, "synth")?;
    print_stats(&ds);

    if args.verify {
        // both directions of every pair, over all generated sets
        let floor = (cfg.synth.rho - 0.1).max(0.0);
        let mut worst = f64::INFINITY;
        for &(i, j) in &planted {
            for (x, y) in [(i, j), (j, i)] {
                if let Some(p) = pair_cooccurrence(&ds.sequences, x, y) {
                    worst = worst.min(p);
                }
            }
        }
        if planted.is_empty() || !worst.is_finite() {
            println!("verify: no planted pair occurs in the corpus");
        } else {
            println!(
                "verify: {} planted pairs, min P(partner | member) = {worst:.4} (floor {floor:.2})",
                planted.len()
            );
            if worst < floor {
                return Err(Exit::new(EXIT_DATA, format!("planted co-occurrence {worst:.4} below {floor:.2}")).into());
            }
        }
    }
    Ok(())
}

pub fn learn_div(args: &LearnDivArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(k) = args.rank {
        cfg.kernel.rank = k;
    }
    if let Some(n) = args.epochs {
        cfg.kernel.epochs = n;
    }
    if let Some(lr) = args.lr {
        cfg.kernel.lr = lr;
    }
    let out = &args.common.out;
    prepare_out(out)?;
    cfg.paths.dataset = Some(cfg.dataset_path(out));
    cfg.paths.factor = Some(cfg.factor_path(out));
    let ds = load_dataset(&cfg.dataset_path(out))?;

    let pairs = extract_diverse_subsets(ds.all_sets(), &ds.item_categories, cfg.kernel.rank, &cfg.subsets, cfg.seed);
    if pairs.is_empty() {
        return Err(Exit::new(EXIT_DATA, "no diverse subsets in the corpus").into());
    }
    let (factor, report) = learn_diverse_kernel(&pairs, ds.n_items, &cfg.kernel)?;
    let path = cfg.factor_path(out);
    factor.save(&path)?;
    save_json(
        &out.join("kernel_report.json"),
        &json!({
            "pairs": pairs.len(),
            "rank": factor.rank(),
            "initial_objective": report.initial_objective,
            "final_objective": report.final_objective,
            "restarted": report.restarted,
            "history": report.history,
        }),
    )?;
    cfg.write(out, "learn-div")?;
    println!(
        "{} diverse pairs, rank {}: objective {:.4} -> {:.4}{}",
        pairs.len(),
        factor.rank(),
        report.initial_objective,
        report.final_objective,
        if report.restarted { " (after warm restart)" } else { "" }
    );
    println!("factor written to {}", path.display());
    Ok(())
}

fn training_instances(ds: &Dataset, splits: &[setrec::data::UserSplit], cfg: &RunConfig) -> Vec<TrainingInstance> {
    let t = &cfg.train;
    splits
        .iter()
        .flat_map(|s| build_instances(&s.train_sequence(), t.a, t.b, t.z, ds.n_items, t.seed))
        .collect()
}

fn grad_check(instances: &[TrainingInstance], params: &ModelParams, factor: &DiversityFactor, cfg: &RunConfig) -> Result<f64> {
    let fd = FdConfig {
        seed: cfg.seed,
        ..FdConfig::default()
    };
    let mut worst: f64 = 0.0;
    for inst in instances.iter().take(3) {
        let r = match cfg.train.objective {
            ObjectiveKind::Sdpp => finite_diff_check(inst, params, factor, cfg.train.objective_options(), &fd)?,
            ObjectiveKind::Bce => {
                let (_, g) = bce_loss_grad(inst, params)?;
                finite_diff_check_with(params, &g, &fd, |p| bce_loss(inst, p))?
            }
        };
        worst = worst.max(r.max_rel_error);
    }
    Ok(worst)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(p) = &args.factor {
        cfg.paths.factor = Some(p.clone());
    }
    let t = &mut cfg.train;
    if let Some(o) = args.objective {
        t.objective = o.into();
    }
    if args.no_center {
        t.center = false;
    }
    if let Some(v) = args.a {
        t.a = v;
    }
    if let Some(v) = args.b {
        t.b = v;
    }
    if let Some(v) = args.z {
        t.z = v;
    }
    if let Some(v) = args.lambda {
        t.lambda = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.dim {
        cfg.model.dim = v;
    }
    cfg.train.validate()?;
    if cfg.train.a == 0 || cfg.train.b == 0 {
        return Err(Exit::new(EXIT_INPUT, "a and b must be at least 1").into());
    }
    let out = &args.common.out;
    prepare_out(out)?;
    cfg.paths.dataset = Some(cfg.dataset_path(out));
    cfg.paths.factor = Some(cfg.factor_path(out));

    let ds = load_dataset(&cfg.dataset_path(out))?;
    let factor_path = cfg.factor_path(out);
    let factor = DiversityFactor::load(&factor_path, cfg.kernel.reg_delta)
        .with_context(|| format!("loading diversity factor {}", factor_path.display()))?;
    if factor.n_items() != ds.n_items {
        return Err(Exit::new(
            EXIT_INPUT,
            format!("factor covers {} items, dataset has {}", factor.n_items(), ds.n_items),
        )
        .into());
    }
    let splits = split(&ds.sequences)?;
    let instances = training_instances(&ds, &splits, &cfg);
    if instances.is_empty() {
        return Err(Exit::new(EXIT_DATA, "no training instances: sequences are too short for a and b").into());
    }
    let model_cfg = cfg.model_config(ds.n_items);

    let mut state = if args.resume {
        TrainState::load(out).with_context(|| format!("resuming from {}", out.display()))?
    } else {
        TrainState::new(ModelParams::init(model_cfg, cfg.seed)?)
    };
    if state.params.config != model_cfg {
        return Err(Exit::new(EXIT_INPUT, "checkpoint model shape differs from the configuration").into());
    }
    if args.grad_check {
        let worst = grad_check(&instances, &state.params, &factor, &cfg)?;
        println!("gradient check: max relative error {worst:.3e}");
        if !(worst <= GRAD_CHECK_LIMIT) {
            return Err(Exit::new(
                EXIT_NUMERIC,
                format!("gradient check failed: {worst:.3e} > {GRAD_CHECK_LIMIT:e}"),
            )
            .into());
        }
    }
    cfg.write(out, "train")?;
    println!(
        "{} instances from {} users, objective {:?}, {} parameters",
        instances.len(),
        splits.len(),
        cfg.train.objective,
        state.params.n_scalars()
    );

    let data = TrainData {
        instances: &instances,
        val: &splits,
        categories: &ds.item_categories,
        n_categories: ds.n_categories,
        factor: &factor,
    };
    run_epochs(&mut state, &data, &cfg.train, None, |r| {
        println!(
            "epoch {:>3}  train {:>10.5}  val recall@20 {:.4}  ndcg@20 {:.4}",
            r.epoch, r.train_ll, r.val_recall20, r.val_ndcg20
        );
    })?;

    let meta = json!({
        "objective": cfg.train.objective,
        "eval_lambda": cfg.train.eval_lambda(),
        "best_val_recall20": state.best_score,
        "epochs": state.epoch,
    });
    state.save_with(out, meta)?;
    let hist = out.join("history.csv");
    write_history_csv(&state.history, File::create(&hist).with_context(|| format!("writing {}", hist.display()))?)?;
    println!(
        "stopped after {} epochs; best val recall@20 {:.4}; checkpoint {}",
        state.epoch,
        state.best_score,
        out.join("best.ckpt").display()
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(p) = &args.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(p) = &args.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    if let Some(p) = &args.factor {
        cfg.paths.factor = Some(p.clone());
    }
    if let Some(s) = &args.topn {
        cfg.eval.topn = parse_topn(s).map_err(|e| Exit::new(EXIT_INPUT, format!("{e:#}")))?;
    }
    if let Some(l) = args.lambda {
        cfg.eval.lambda = Some(l);
    }
    if let Some(s) = &args.lambda_sweep {
        cfg.eval.lambda_sweep = Some(s.clone());
    }
    if let Some(h) = args.holdout {
        cfg.eval.holdout = h.into();
    }
    if let Some(d) = args.ild {
        cfg.eval.ild = d.into();
    }
    if args.per_user {
        cfg.eval.per_user = true;
    }
    let out = &args.common.out;
    cfg.paths.dataset = Some(cfg.dataset_path(out));
    cfg.paths.checkpoint = Some(cfg.checkpoint_path(out));
    if cfg.eval.ild == IldDistance::Cosine {
        cfg.paths.factor = Some(cfg.factor_path(out));
    }

    let ckpt_path = cfg.checkpoint_path(out);
    if !ckpt_path.is_file() {
        return Err(Exit::new(EXIT_INPUT, format!("checkpoint not found: {}", ckpt_path.display())).into());
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let lambdas = match &cfg.eval.lambda_sweep {
        Some(s) => parse_sweep(s).map_err(|e| Exit::new(EXIT_INPUT, format!("{e:#}")))?,
        None => vec![cfg
            .eval
            .lambda
            .or_else(|| ckpt.meta.get("eval_lambda").and_then(|v| v.as_f64()))
            .unwrap_or(cfg.train.lambda)],
    };
    prepare_out(out)?;
    let ds = load_dataset(&cfg.dataset_path(out))?;
    if ckpt.params.config.n_items != ds.n_items {
        return Err(Exit::new(
            EXIT_INPUT,
            format!("checkpoint covers {} items, dataset has {}", ckpt.params.config.n_items, ds.n_items),
        )
        .into());
    }
    let factor = match cfg.eval.ild {
        IldDistance::Cosine => Some(DiversityFactor::load(&cfg.factor_path(out), cfg.kernel.reg_delta)?),
        IldDistance::Category => None,
    };
    let splits = split(&ds.sequences)?;
    let ctx = MetricContext {
        categories: &ds.item_categories,
        n_categories: ds.n_categories,
        distance: cfg.eval.ild,
        factor: factor.as_ref(),
    };
    let reports = evaluate_users(&ckpt.params, &splits, cfg.eval.holdout, &lambdas, &cfg.eval.topn, &ctx)?;

    let metrics = out.join("metrics.csv");
    write_metrics_csv(&reports, File::create(&metrics).with_context(|| format!("writing {}", metrics.display()))?)?;
    if cfg.eval.per_user {
        let p = out.join("per_user.csv");
        write_per_user_csv(&reports, File::create(&p).with_context(|| format!("writing {}", p.display()))?)?;
    }
    cfg.write(out, "eval")?;
    print!("{}", format_table(&reports));
    println!("metrics written to {}", metrics.display());
    Ok(())
}
