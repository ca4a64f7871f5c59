use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tbnet::complexity::{audit_report, table1_audit};
use tbnet::data::{Dataset, CLASS_NAMES};
use tbnet::gradcheck::{self, GradcheckConfig};
use tbnet::network::{checkpoint, Model, NetworkConfig};
use tbnet::trainer::{evaluate, train as train_model, EpochLog, EvalProtocol, EvalReport, TrainConfig};

use crate::config::*;
use crate::{AuditArgs, EvalArgs, Failure, GenArgs, GradcheckArgs, TrainArgs};

/// Seed of the test split, distinct from the training stream.
fn test_seed(seed: u64) -> u64 {
    seed ^ 0x7465_7374_7465_7374
}

fn io_failure(what: &str, path: &Path, e: std::io::Error) -> Failure {
    Failure::internal(format!("{what} {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_failure("cannot write", path, e))
}

pub fn gen(a: GenArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let synth = &mut cfg.synth;
    synth.classes = a.classes.unwrap_or(synth.classes);
    synth.frames = a.frames.unwrap_or(synth.frames);
    synth.noise = a.noise.unwrap_or(synth.noise);
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let out = a.out.or(cfg.paths.data).ok_or_else(|| Failure::usage("--out is required"))?;
    if !out.is_dir() {
        return Err(Failure::usage(format!("output directory {} does not exist", out.display())));
    }
    let counts = [a.train.unwrap_or(2000), a.test.unwrap_or(500)];
    let mut per_class = vec![[0usize; 2]; cfg.synth.classes];
    for (split, (file, count, split_seed)) in [(TRAIN_FILE, counts[0], seed), (TEST_FILE, counts[1], test_seed(seed))]
        .into_iter()
        .enumerate()
    {
        let data = Dataset::synthetic(cfg.synth, count, split_seed)?;
        data.write(out.join(file))?;
        for &l in data.labels() {
            per_class[l][split] += 1;
        }
    }
    println!(
        "wrote {} ({} videos) and {} ({} videos)",
        TRAIN_FILE, counts[0], TEST_FILE, counts[1]
    );
    println!("{:<6} {:<12} {:>6} {:>6}", "class", "name", "train", "test");
    for (c, [tr, te]) in per_class.iter().enumerate() {
        println!("{c:<6} {:<12} {tr:>6} {te:>6}", CLASS_NAMES[c]);
    }
    Ok(())
}

pub fn audit(a: AuditArgs) -> Result<(), Failure> {
    if a.table1 {
        let t = table1_audit(a.c, a.p, a.q)?;
        print!("{}", t.render());
        if let Some(path) = &a.json {
            write_file(path, &serde_json::to_string_pretty(&t).expect("audit serializes"))?;
        }
        return Ok(());
    }
    let mut cfg = NetworkConfig {
        width_divisor: a.width_divisor,
        frames: a.frames,
        height: a.size,
        width: a.size,
        ..NetworkConfig::standard(a.arch, a.classes)
    };
    if let Some(s) = &a.tb_stages {
        cfg.tb_stages = NetworkConfig::parse_stages(s)?;
    }
    let model = Model::<f32>::new(cfg, 0)?;
    let audit = audit_report(&model.layer_stack()?);
    println!("{} with {} bilinear blocks", model.cfg.arch, model.tb_block_count());
    println!("stage outputs (T×H×W):");
    for s in model.stage_shapes()? {
        println!("  {:<6} {}", s.stage, s.thw());
    }
    print!("{}", audit.text);
    if let Some(path) = &a.json {
        write_file(path, &audit.json)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let cfg = GradcheckConfig {
        seeds: a.seeds,
        base_seed: a.seed,
        step: a.step,
        ops: a
            .ops
            .map(|s| s.split(',').map(|o| o.trim().to_string()).filter(|o| !o.is_empty()).collect())
            .unwrap_or_default(),
        fault: a.fault.as_deref().map(str::parse).transpose()?,
        oracle_configs: a.oracle_configs,
        ..GradcheckConfig::default()
    };
    cfg.selected_ops()?;
    let report = gradcheck::run(&cfg)?;
    for r in &report.ops {
        println!(
            "{:<22} worst rel {:.3e} (seed {:>3})  tol {:.0e}  {}",
            r.op,
            r.worst_rel,
            r.worst_seed,
            r.tol,
            if r.passed() { "pass" } else { "FAIL" }
        );
        for (seed, err) in &r.failures {
            println!("  {} seed {seed}: relative error {err:.3e}", r.op);
        }
    }
    if let Some(o) = &report.oracle {
        println!(
            "{:<22} max abs {:.3e} over {} configs ({} outputs)  tol {:.0e}  {}",
            "dense oracle",
            o.max_abs_err,
            o.configs,
            o.elements,
            o.tol,
            if o.passed() { "pass" } else { "FAIL" }
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::internal("gradient check failed"))
    }
}

fn open_dataset(path: &Path) -> Result<Dataset, Failure> {
    if !path.is_file() {
        return Err(Failure::usage(format!("dataset {} not found", path.display())));
    }
    Dataset::open(path).map_err(|e| Failure::from(e).with_context(path))
}

impl Failure {
    fn with_context(mut self, path: &Path) -> Self {
        self.msg = format!("{}: {}", path.display(), self.msg);
        self
    }
}

#[derive(Serialize)]
struct Metrics<'a> {
    arch: String,
    params: usize,
    tb_blocks: usize,
    epochs: usize,
    seed: u64,
    protocol: &'a str,
    top1: f64,
    topk: f64,
    k: usize,
    pair_acc: f64,
}

fn print_report(report: &EvalReport) {
    println!(
        "{}: top-1 {:.4}  top-{} {:.4}  pair {:.4}",
        report.protocol, report.top1, report.k, report.topk, report.pair_acc
    );
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let net = &mut cfg.network;
    net.arch = a.arch.unwrap_or(net.arch);
    if let Some(s) = &a.tb_stages {
        net.tb_stages = Some(NetworkConfig::parse_stages(s)?);
    }
    net.width_divisor = a.width_divisor.unwrap_or(net.width_divisor);
    net.blocks_per_stage = a.blocks_per_stage.unwrap_or(net.blocks_per_stage);
    net.tb.factors = a.factors.unwrap_or(net.tb.factors);
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.base_lr = a.lr.unwrap_or(t.base_lr);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.seed = a.seed.unwrap_or(t.seed);
    cfg.train.validate()?;

    let data_dir = a
        .data
        .or(cfg.paths.data.clone())
        .ok_or_else(|| Failure::usage("--data is required"))?;
    let out = a.out.or(cfg.paths.out.clone()).ok_or_else(|| Failure::usage("--out is required"))?;
    let train_set = open_dataset(&data_dir.join(TRAIN_FILE))?;
    let test_path = data_dir.join(TEST_FILE);
    let test_set = if test_path.is_file() {
        Some(open_dataset(&test_path)?)
    } else {
        None
    };
    let classes = train_set.classes().max(test_set.as_ref().map_or(0, Dataset::classes));
    let net_cfg = cfg.network.build(&cfg.train, classes, train_set.dims()[1]);
    let mut model = Model::<f32>::new(net_cfg, cfg.train.seed)?;

    std::fs::create_dir_all(&out).map_err(|e| io_failure("cannot create", &out, e))?;
    cfg.paths.data = Some(data_dir);
    cfg.paths.out = Some(out.clone());
    cfg.paths.checkpoint = Some(out.join(CHECKPOINT_FILE));
    write_file(&out.join(RESOLVED_CONFIG_FILE), &cfg.to_toml())?;
    println!(
        "{}: {} params, {} bilinear blocks, {} training videos",
        model.cfg.arch,
        model.store.num_scalars(),
        model.tb_block_count(),
        train_set.len()
    );

    let log_path = out.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| io_failure("cannot create", &log_path, e))?);
    let ckpt = out.join(CHECKPOINT_FILE);
    let single = EvalProtocol::single();
    let train_cfg = cfg.train.clone();
    train_model(&mut model, &train_set, &train_cfg, |log: &mut EpochLog, m: &Model<f32>| {
        if let Some(test) = &test_set {
            if a.eval_every > 0 && (log.epoch + 1) % a.eval_every == 0 {
                log.eval_acc = Some(evaluate(m, test, &train_cfg, &single)?.top1);
            }
        }
        let line = serde_json::to_string(log).expect("log serializes");
        writeln!(log_file, "{line}")?;
        log_file.flush()?;
        checkpoint::save(m, &ckpt)?;
        println!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  acc {:.4}{}",
            log.epoch,
            log.lr,
            log.train_loss,
            log.train_acc,
            log.eval_acc.map(|v| format!("  eval {v:.4}")).unwrap_or_default()
        );
        Ok(())
    })?;
    if cfg.train.epochs == 0 {
        checkpoint::save(&model, &ckpt)?;
    }

    if let Some(test) = &test_set {
        let report = evaluate(&model, test, &cfg.train, &cfg.eval)?;
        print_report(&report);
        let metrics = Metrics {
            arch: model.cfg.arch.to_string(),
            params: model.store.num_scalars(),
            tb_blocks: model.tb_block_count(),
            epochs: cfg.train.epochs,
            seed: cfg.train.seed,
            protocol: &report.protocol,
            top1: report.top1,
            topk: report.topk,
            k: report.k,
            pair_acc: report.pair_acc,
        };
        write_file(
            &out.join(METRICS_FILE),
            &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
        )?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let run_dir = a.checkpoint.as_ref().filter(|p| p.is_dir()).cloned();
    let config_path = a
        .config
        .clone()
        .or_else(|| run_dir.as_ref().map(|d| d.join(RESOLVED_CONFIG_FILE)).filter(|p| p.is_file()));
    let mut cfg = RunConfig::load(config_path.as_deref())?;
    let ckpt: PathBuf = match (&run_dir, a.checkpoint.clone().or(cfg.paths.checkpoint.clone())) {
        (Some(dir), _) => dir.join(CHECKPOINT_FILE),
        (None, Some(p)) => p,
        (None, None) => return Err(Failure::usage("--checkpoint is required")),
    };
    if !ckpt.is_file() {
        return Err(Failure::usage(format!("checkpoint {} not found", ckpt.display())));
    }
    let model = checkpoint::load::<f32>(&ckpt).map_err(|e| Failure::from(e).with_context(&ckpt))?;
    let data_path = match (a.dataset, a.data.or(cfg.paths.data.clone())) {
        (Some(file), _) => file,
        (None, Some(dir)) => dir.join(TEST_FILE),
        (None, None) => return Err(Failure::usage("--data or --dataset is required")),
    };
    let data = open_dataset(&data_path)?;
    let proto = &mut cfg.eval;
    proto.clips = a.clips.unwrap_or(proto.clips);
    proto.crops = a.crops.unwrap_or(proto.crops);
    proto.top_k = a.top_k.unwrap_or(proto.top_k);
    let train_cfg = TrainConfig {
        clip_frames: model.cfg.frames,
        crop: model.cfg.height,
        ..cfg.train.clone()
    };
    let report = evaluate(&model, &data, &train_cfg, &cfg.eval).map_err(|e| Failure::from(e).with_context(&data_path))?;
    println!("{} on {} videos", model.cfg.arch, data.len());
    print_report(&report);
    Ok(())
}
