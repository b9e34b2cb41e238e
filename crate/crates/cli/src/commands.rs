use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Stdio;

use clap::Parser;

use tstcc_core::checks::{invariance_suite, oracle_suite, CheckRow};
use tstcc_core::data::{
    export_csv, load_dataset, save_dataset, split_dataset, synth_generate, Dataset, DomainShift, SplitSpec, SynthSpec,
};
use tstcc_core::diagnostics::gradient_suite;
use tstcc_core::model::{Checkpoint, TsTcc};
use tstcc_core::training::{
    ablation_variants, finetune_semi_supervised, linear_evaluate, pretrain_with, transfer_experiment,
    transfer_scenarios, PretrainOutcome, TrainConfig,
};
use tstcc_core::{augment, Rng};

use crate::manifest::{sha256_bytes, sha256_file, FileDigest, RunDir, RunManifest, RunStatus, MANIFEST_FILE};
use crate::output::{loss_log_csv, metrics_csv, quote, summarize, summary_csv, summary_table, MetricsRow};
use crate::{
    AugmentPreviewArgs, Cli, CliError, Command, DataArgs, FinetuneArgs, GradcheckArgs, LinearEvalArgs,
    OracleCheckArgs, PretrainArgs, ReplayArgs, SensitivityArgs, SplitArgs, SynthArgs, TransferArgs, EXIT_FAILURE,
    EXIT_IO, OUT_ENV, WORKER_ENV,
};

type CliResult<T = ()> = Result<T, CliError>;

/// Writes a line to stdout; a closed pipe is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

struct Invocation {
    cli: Cli,
    argv: Vec<String>,
    config_text: Option<String>,
}

/// Runs a parsed command. `argv` is recorded in the manifest; a
/// `config_text` replaces `--config` and `--set` (used by replay).
pub fn execute(cli: Cli, argv: Vec<String>, config_text: Option<String>) -> CliResult {
    let inv = Invocation { cli: cli.clone(), argv, config_text };
    match &cli.command {
        Command::Synth(a) => synth(&inv, a),
        Command::Split(a) => split(&inv, a),
        Command::Pretrain(a) => pretrain_cmd(&inv, a),
        Command::LinearEval(a) => linear_eval(&inv, a),
        Command::Finetune(a) => finetune_cmd(&inv, a),
        Command::Transfer(a) => transfer(&inv, a),
        Command::Ablate(a) => ablate(&inv, a),
        Command::Sensitivity(a) => sensitivity(&inv, a),
        Command::AugmentPreview(a) => augment_preview(&inv, a),
        Command::Gradcheck(a) => gradcheck(&inv, a),
        Command::OracleCheck(a) => oracle_check(&inv, a),
        Command::Replay(a) => replay(&inv, a),
    }
}

impl Invocation {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.cli.common.quiet {
            let _ = writeln!(std::io::stderr().lock(), "{}", msg.as_ref());
        }
    }

    fn base_config(&self) -> CliResult<TrainConfig> {
        if let Some(text) = &self.config_text {
            return Ok(TrainConfig::from_text(text)?);
        }
        let c = &self.cli.common;
        let base = match &c.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                TrainConfig::from_text(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => TrainConfig::default(),
        };
        Ok(base.with_overrides(&c.set)?)
    }

    /// Base configuration with the model input shape taken from `data`.
    fn config_for(&self, data: &Dataset) -> CliResult<TrainConfig> {
        let mut cfg = self.base_config()?;
        cfg.model.in_channels = data.channels;
        cfg.model.input_length = data.length;
        cfg.validate()?;
        Ok(cfg)
    }

    fn seeds(&self, cfg: &TrainConfig) -> Vec<u64> {
        self.cli.common.seeds.clone().unwrap_or_else(|| vec![cfg.seed])
    }

    fn open(&self, cfg: &TrainConfig, inputs: &[&Path], seeds: &[u64]) -> CliResult<RunDir> {
        let config = cfg.to_text();
        let inputs: Vec<FileDigest> = inputs
            .iter()
            .map(|p| Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<CliResult<_>>()?;
        let mut identity = format!("{:?}\n{config}\n{seeds:?}\n", self.cli.command);
        for i in &inputs {
            writeln!(identity, "{}", i.sha256).unwrap();
        }
        let run_id = sha256_bytes(identity.as_bytes())[..12].to_string();
        let name = self.cli.command.name();
        let dir = match &self.cli.common.out {
            Some(d) => d.clone(),
            None => {
                let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                root.join(format!("{name}-{run_id}"))
            }
        };
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: name.to_string(),
            argv: self.argv.clone(),
            run_id,
            config,
            seeds: seeds.to_vec(),
            inputs,
            output_dir: String::new(),
            status: RunStatus::Running,
            error: None,
            started_unix: 0.0,
            wall_clock_secs: None,
            artifacts: Vec::new(),
        };
        let run = RunDir::create(dir, manifest)?;
        self.log(format!("run {} in {}", run.run_id(), run.dir.display()));
        Ok(run)
    }
}

fn complete(run: RunDir, res: CliResult) -> CliResult {
    let fin = run.finish(&res);
    res?;
    fin
}

fn load(path: &Path) -> CliResult<Dataset> {
    load_dataset(path).map_err(|e| {
        let base = CliError::from(e);
        CliError::new(base.code, format!("{}: {}", path.display(), base.message))
    })
}

fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

fn pretrain_logged(inv: &Invocation, cfg: &TrainConfig, data: &Dataset, tag: &str) -> CliResult<PretrainOutcome> {
    let out = pretrain_with(cfg, data, &mut |e| {
        inv.log(format!(
            "[{tag} seed {}] epoch {}/{}  l_tc_s {:.4}  l_tc_w {:.4}  l_cc {:.4}  total {:.4}",
            cfg.seed, e.epoch, cfg.epochs, e.l_tc_s, e.l_tc_w, e.l_cc, e.total
        ))
    })?;
    for w in &out.warnings {
        inv.log(format!("warning: {w}"));
    }
    Ok(out)
}

fn write_metrics(run: &RunDir, rows: &[MetricsRow]) -> CliResult {
    run.write_text("metrics.csv", &metrics_csv(run.run_id(), rows))?;
    let summary = summarize(rows);
    run.write_text("summary.csv", &summary_csv(&summary))?;
    say!("{}", summary_table(&summary).trim_end());
    Ok(())
}

/// `10` for 0.1, `0.5` for 0.005.
fn percent(f: f64) -> String {
    let s = format!("{:.4}", f * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn synth(inv: &Invocation, a: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        name: a.name.clone(),
        classes: a.classes,
        samples: a.samples,
        channels: a.channels,
        length: a.length,
        noise: a.noise,
        shift: DomainShift::preset(a.domain)?,
        subjects: a.subjects,
        seed: a.seed,
    };
    spec.validate()?;
    let cfg = inv.base_config()?;
    let run = inv.open(&cfg, &[], &[])?;
    let res = (|| {
        let ds = synth_generate(&spec)?;
        let path = run.path("dataset.tsds");
        save_dataset(&ds, &path)?;
        if a.csv {
            let mut buf = Vec::new();
            export_csv(&ds, &mut buf)?;
            let p = run.path("dataset.csv");
            fs::write(&p, buf).map_err(|e| CliError::io(&p, e))?;
        }
        say!("{} samples of {}x{} with {} classes -> {}", ds.len(), ds.channels, ds.length, ds.classes, path.display());
        Ok(())
    })();
    complete(run, res)
}

fn split(inv: &Invocation, a: &SplitArgs) -> CliResult {
    let ds = load(&a.data)?;
    let [train, val, test] = a.fractions[..] else {
        return Err(CliError::usage(format!("--fractions needs three values, got {}", a.fractions.len())));
    };
    let spec = SplitSpec { train, val, test, subject_wise: a.subject_wise, seed: a.seed };
    spec.validate()?;
    let cfg = inv.base_config()?;
    let run = inv.open(&cfg, &[&a.data], &[a.seed])?;
    let res = (|| {
        let s = split_dataset(&ds, &spec)?;
        let mut csv = String::from("index,part\n");
        let mut assigned = vec![""; ds.len()];
        for (part, idx) in ["train", "val", "test"].iter().zip(&s.indices) {
            idx.iter().for_each(|&i| assigned[i] = part);
        }
        for (i, p) in assigned.iter().enumerate() {
            writeln!(csv, "{i},{p}").unwrap();
        }
        run.write_text("split.csv", &csv)?;
        for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
            save_dataset(part, run.path(&format!("{name}.tsds")))?;
            say!("{name}: {} samples", part.len());
        }
        Ok(())
    })();
    complete(run, res)
}

fn pretrain_cmd(inv: &Invocation, a: &PretrainArgs) -> CliResult {
    let train = load(&a.train)?;
    let test = a.test.as_deref().map(load).transpose()?;
    let cfg = inv.config_for(&train)?;
    let seeds = inv.seeds(&cfg);
    let mut inputs = vec![a.train.as_path()];
    inputs.extend(a.test.as_deref());
    let run = inv.open(&cfg, &inputs, &seeds)?;
    let res = (|| {
        let mut rows = Vec::new();
        for &s in &seeds {
            let c = seeded(&cfg, s);
            let out = pretrain_logged(inv, &c, &train, "pretrain")?;
            run.write_text(&format!("loss_log_seed{s}.csv"), &loss_log_csv(&out.log))?;
            out.model.to_checkpoint(c.to_text()).save(run.path(&format!("checkpoint_seed{s}.ckpt")))?;
            if let Some(test) = &test {
                rows.push(MetricsRow::new("ts-tcc", "test", &linear_evaluate(&out.model, &train, test, &c)?.report));
            }
        }
        if rows.is_empty() {
            say!("checkpoints written to {}", run.dir.display());
            Ok(())
        } else {
            write_metrics(&run, &rows)
        }
    })();
    complete(run, res)
}

fn load_checkpoint(path: &Path) -> CliResult<TsTcc> {
    let ckpt = Checkpoint::load(path).map_err(|e| {
        let base = CliError::from(e);
        CliError::new(base.code, format!("{}: {}", path.display(), base.message))
    })?;
    Ok(TsTcc::from_checkpoint(&ckpt)?)
}

fn load_pair(d: &DataArgs) -> CliResult<(Dataset, Dataset)> {
    Ok((load(&d.train)?, load(&d.test)?))
}

fn linear_eval(inv: &Invocation, a: &LinearEvalArgs) -> CliResult {
    let (train, test) = load_pair(&a.data)?;
    let cfg = inv.config_for(&train)?;
    let seeds = inv.seeds(&cfg);
    let loaded = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut inputs = vec![a.data.train.as_path(), a.data.test.as_path()];
    inputs.extend(a.checkpoint.as_deref());
    let run = inv.open(&cfg, &inputs, &seeds)?;
    let res = (|| {
        let mut rows = Vec::new();
        for &s in &seeds {
            let c = seeded(&cfg, s);
            let (variant, model) = match (&loaded, a.random_init) {
                (Some(m), _) => ("ts-tcc", m.clone()),
                (None, true) => ("random-init", TsTcc::new(c.model.clone(), s)?),
                (None, false) => {
                    let out = pretrain_logged(inv, &c, &train, "pretrain")?;
                    run.write_text(&format!("loss_log_seed{s}.csv"), &loss_log_csv(&out.log))?;
                    ("ts-tcc", out.model)
                }
            };
            rows.push(MetricsRow::new(variant, "test", &linear_evaluate(&model, &train, &test, &c)?.report));
        }
        write_metrics(&run, &rows)
    })();
    complete(run, res)
}

fn finetune_cmd(inv: &Invocation, a: &FinetuneArgs) -> CliResult {
    if let Some(f) = a.fraction.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(CliError::config(format!("label fraction {f} outside (0, 1]")));
    }
    let (train, test) = load_pair(&a.data)?;
    let cfg = inv.config_for(&train)?;
    let seeds = inv.seeds(&cfg);
    let loaded = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut inputs = vec![a.data.train.as_path(), a.data.test.as_path()];
    inputs.extend(a.checkpoint.as_deref());
    let run = inv.open(&cfg, &inputs, &seeds)?;
    let res = (|| {
        let mut rows = Vec::new();
        for &s in &seeds {
            let c = seeded(&cfg, s);
            let base = match &loaded {
                Some(m) => m.clone(),
                None => {
                    let out = pretrain_logged(inv, &c, &train, "pretrain")?;
                    run.write_text(&format!("loss_log_seed{s}.csv"), &loss_log_csv(&out.log))?;
                    out.model
                }
            };
            for &f in &a.fraction {
                let pct = percent(f);
                inv.log(format!("[seed {s}] fine-tuning with {pct}% of the labels"));
                let out = finetune_semi_supervised(base.clone(), &train, &test, f, a.stratified, &c)?;
                rows.push(MetricsRow::new(format!("ts-tcc@{pct}%"), "test", &out.report));
                if a.scratch {
                    let fresh = TsTcc::new(c.model.clone(), s)?;
                    let out = finetune_semi_supervised(fresh, &train, &test, f, a.stratified, &c)?;
                    rows.push(MetricsRow::new(format!("supervised@{pct}%"), "test", &out.report));
                }
            }
        }
        write_metrics(&run, &rows)
    })();
    complete(run, res)
}

type CellFn<'a> = dyn Fn(usize) -> CliResult<Vec<MetricsRow>> + 'a;

/// Runs grid cells in order, either here or in `--jobs` worker processes,
/// and concatenates their rows. A worker (`--cell i`) runs only its cell.
fn grid(inv: &Invocation, run: &RunDir, labels: &[String], cell: &CellFn) -> CliResult<Vec<MetricsRow>> {
    let jobs = inv.cli.common.jobs.max(1);
    if jobs == 1 || labels.len() < 2 || inv.config_text.is_some() {
        let mut rows = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            inv.log(format!("cell {}/{}: {label}", i + 1, labels.len()));
            rows.extend(cell(i)?);
        }
        return Ok(rows);
    }
    let exe = match std::env::var_os(WORKER_ENV) {
        Some(p) => PathBuf::from(p),
        None => std::env::current_exe().map_err(|e| CliError::new(EXIT_IO, format!("locating executable: {e}")))?,
    };
    let scratch = std::env::temp_dir().join(format!("tstcc-cells-{}-{}", run.run_id(), std::process::id()));
    fs::create_dir_all(&scratch).map_err(|e| CliError::io(&scratch, e))?;
    let mut results: Vec<Option<Vec<MetricsRow>>> = vec![None; labels.len()];
    let mut next = 0;
    let mut running: Vec<(usize, std::process::Child, PathBuf)> = Vec::new();
    let outcome = loop {
        while running.len() < jobs && next < labels.len() {
            let out = scratch.join(format!("cell-{next}.json"));
            let child = std::process::Command::new(&exe)
                .args(&inv.argv)
                .args(["--cell", &next.to_string(), "--quiet", "--cell-output"])
                .arg(&out)
                .stdout(Stdio::null())
                .spawn()
                .map_err(|e| CliError::new(EXIT_IO, format!("starting worker {}: {e}", exe.display())))?;
            inv.log(format!("cell {}/{} started: {}", next + 1, labels.len(), labels[next]));
            running.push((next, child, out));
            next += 1;
        }
        if running.is_empty() {
            break Ok(());
        }
        let (i, mut child, out) = running.remove(0);
        let status = child.wait().map_err(|e| CliError::new(EXIT_IO, format!("waiting for worker: {e}")))?;
        if !status.success() {
            running.iter_mut().for_each(|(_, c, _)| drop(c.kill()));
            break Err(CliError::new(
                status.code().unwrap_or(EXIT_FAILURE),
                format!("worker for cell {} ({}) failed", i + 1, labels[i]),
            ));
        }
        let text = fs::read_to_string(&out).map_err(|e| CliError::io(&out, e))?;
        results[i] = Some(
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(EXIT_FAILURE, format!("worker output {}: {e}", out.display())))?,
        );
        inv.log(format!("cell {}/{} done", i + 1, labels.len()));
    };
    let _ = fs::remove_dir_all(&scratch);
    outcome?;
    Ok(results.into_iter().flatten().flatten().collect())
}

/// Worker side of [`grid`]: computes one cell and writes its rows as JSON.
fn run_cell(inv: &Invocation, index: usize, count: usize, cell: &CellFn) -> CliResult {
    let out = inv.cli.common.cell_output.as_ref().ok_or_else(|| CliError::usage("--cell needs --cell-output"))?;
    if index >= count {
        return Err(CliError::usage(format!("cell {index} outside 0..{count}")));
    }
    let rows = cell(index)?;
    let text = serde_json::to_string(&rows).expect("rows serialize");
    fs::write(out, text).map_err(|e| CliError::io(out, e))
}

fn grid_command(
    inv: &Invocation,
    cfg: &TrainConfig,
    inputs: &[&Path],
    labels: &[String],
    cell: &CellFn,
) -> CliResult {
    if let Some(i) = inv.cli.common.cell {
        return run_cell(inv, i, labels.len(), cell);
    }
    let run = inv.open(cfg, inputs, &inv.seeds(cfg))?;
    let res = grid(inv, &run, labels, cell).and_then(|rows| write_metrics(&run, &rows));
    complete(run, res)
}

fn transfer(inv: &Invocation, a: &TransferArgs) -> CliResult {
    let mut sources: Vec<(String, Dataset)> = Vec::new();
    let mut targets: Vec<(String, Dataset)> = Vec::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut inputs: Vec<&Path> = Vec::new();
    if a.synthetic {
        let names = ["A", "B", "C", "D"];
        for (i, name) in names.iter().enumerate() {
            let spec = |samples, seed| SynthSpec {
                name: name.to_string(),
                samples,
                length: a.length,
                shift: DomainShift::preset(i).expect("preset in range"),
                seed,
                ..SynthSpec::default()
            };
            sources.push((name.to_string(), synth_generate(&spec(a.samples, 1000 + i as u64))?));
            targets.push((name.to_string(), synth_generate(&spec(a.test_samples, 2000 + i as u64))?));
        }
        for (s, t) in transfer_scenarios(&names, a.limit) {
            let pos = |n: &str| names.iter().position(|x| *x == n).expect("known domain");
            pairs.push((pos(&s), pos(&t)));
        }
    } else {
        if a.source.is_empty() || a.target.is_empty() {
            return Err(CliError::usage("transfer needs --synthetic or both --source and --target"));
        }
        let stem = |p: &Path| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into());
        for p in &a.source {
            sources.push((stem(p), load(p)?));
        }
        for p in &a.target {
            targets.push((stem(p), load(p)?));
        }
        for (i, s) in a.source.iter().enumerate() {
            for (j, t) in a.target.iter().enumerate() {
                if s != t && pairs.len() < a.limit {
                    pairs.push((i, j));
                }
            }
        }
        inputs.extend(a.source.iter().map(PathBuf::as_path));
        inputs.extend(a.target.iter().map(PathBuf::as_path));
    }
    if pairs.is_empty() {
        return Err(CliError::usage("no source/target scenario to run"));
    }
    let cfg = inv.config_for(&sources[0].1)?;
    let seeds = inv.seeds(&cfg);
    let labels: Vec<String> = pairs.iter().map(|&(s, t)| format!("{}->{}", sources[s].0, targets[t].0)).collect();
    let cell = |i: usize| -> CliResult<Vec<MetricsRow>> {
        let (s, t) = pairs[i];
        let mut rows = Vec::new();
        for &seed in &seeds {
            let o = transfer_experiment(&sources[s].1, &targets[t].1, &seeded(&cfg, seed))?;
            rows.push(MetricsRow::new(format!("{} supervised", labels[i]), "target", &o.supervised));
            rows.push(MetricsRow::new(format!("{} ts-tcc", labels[i]), "target", &o.tstcc));
        }
        Ok(rows)
    };
    grid_command(inv, &cfg, &inputs, &labels, &cell)
}

fn ablate(inv: &Invocation, a: &DataArgs) -> CliResult {
    let (train, test) = load_pair(a)?;
    let cfg = inv.config_for(&train)?;
    let seeds = inv.seeds(&cfg);
    let variants = ablation_variants(&cfg);
    let labels: Vec<String> = variants.iter().map(|(n, _)| n.to_string()).collect();
    let cell = |i: usize| -> CliResult<Vec<MetricsRow>> {
        let (name, vcfg) = &variants[i];
        let mut rows = Vec::new();
        for &s in &seeds {
            let c = seeded(vcfg, s);
            let out = pretrain_logged(inv, &c, &train, name)?;
            rows.push(MetricsRow::new(*name, "test", &linear_evaluate(&out.model, &train, &test, &c)?.report));
        }
        Ok(rows)
    };
    grid_command(inv, &cfg, &[&a.train, &a.test], &labels, &cell)
}

/// Configuration key swept by `sensitivity --param`.
pub fn sensitivity_key(param: &str) -> CliResult<String> {
    match param {
        "lambda1" | "lambda2" => Ok(format!("loss.{param}")),
        "k_ratio" => Ok("model.k_ratio".into()),
        p if p.contains('.') => Ok(p.to_string()),
        p => Err(CliError::usage(format!("unknown parameter `{p}`; use lambda1, lambda2, k_ratio or section.key"))),
    }
}

fn default_sweep(param: &str) -> Option<Vec<String>> {
    let v: &[&str] = match param {
        "lambda1" | "lambda2" => &["0.001", "0.01", "0.1", "1", "10", "100", "1000"],
        "k_ratio" => &["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7"],
        _ => return None,
    };
    Some(v.iter().map(|s| s.to_string()).collect())
}

fn sensitivity(inv: &Invocation, a: &SensitivityArgs) -> CliResult {
    let key = sensitivity_key(&a.param)?;
    let values = match &a.values {
        Some(v) if !v.is_empty() => v.clone(),
        _ => default_sweep(&a.param).ok_or_else(|| CliError::usage(format!("--values is required for `{}`", a.param)))?,
    };
    let (train, test) = load_pair(&a.data)?;
    let cfg = inv.config_for(&train)?;
    let seeds = inv.seeds(&cfg);
    let configs: Vec<TrainConfig> =
        values.iter().map(|v| cfg.with_overrides(&[format!("{key}={v}")])).collect::<Result<_, _>>()?;
    let labels: Vec<String> = values.iter().map(|v| format!("{}={v}", a.param)).collect();
    let cell = |i: usize| -> CliResult<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        for &s in &seeds {
            let c = seeded(&configs[i], s);
            let out = pretrain_logged(inv, &c, &train, &labels[i])?;
            rows.push(MetricsRow::new(&labels[i], "test", &linear_evaluate(&out.model, &train, &test, &c)?.report));
        }
        Ok(rows)
    };
    grid_command(inv, &cfg, &[&a.data.train, &a.data.test], &labels, &cell)
}

fn augment_preview(inv: &Invocation, a: &AugmentPreviewArgs) -> CliResult {
    let ds = load(&a.data)?;
    if a.index >= ds.len() {
        return Err(CliError::config(format!("--index {} outside the {} samples", a.index, ds.len())));
    }
    let cfg = inv.config_for(&ds)?;
    let run = inv.open(&cfg, &[&a.data], &[a.seed])?;
    let res = (|| {
        let batch = ds.batch(&[a.index]);
        let rng = Rng::new(a.seed);
        let strong = augment::strong_augment(&batch, &cfg.augment, &rng.split(1))?;
        let weak = augment::weak_augment(&batch, &cfg.augment, &rng.split(2))?;
        let mut csv = String::from("channel,t,original,weak,strong\n");
        for (j, ((o, w), s)) in batch.values.iter().zip(&weak.values).zip(&strong.values).enumerate() {
            writeln!(csv, "{},{},{o},{w},{s}", j / ds.length, j % ds.length).unwrap();
        }
        run.write_text("augment_preview.csv", &csv)?;
        say!("{} rows -> {}", batch.values.len(), run.path("augment_preview.csv").display());
        Ok(())
    })();
    complete(run, res)
}

fn gradcheck(inv: &Invocation, a: &GradcheckArgs) -> CliResult {
    let cfg = inv.base_config()?;
    let run = inv.open(&cfg, &[], &[])?;
    let res = (|| {
        let rows = gradient_suite(a.instances)?;
        let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4);
        let mut csv = String::from("name,group,instances,entries,max_rel_error,passed\n");
        say!("{:<w$}  {:<9}  {:>9}  {:>8}  {:>13}", "name", "group", "instances", "entries", "max rel error");
        for r in &rows {
            writeln!(csv, "{},{},{},{},{},{}", r.name, r.group, r.instances, r.entries, r.max_rel_error, r.passed())
                .unwrap();
            let mark = if r.passed() { "" } else { "  FAIL" };
            say!(
                "{:<w$}  {:<9}  {:>9}  {:>8}  {:>13.3e}{mark}",
                r.name, r.group, r.instances, r.entries, r.max_rel_error
            );
        }
        run.write_text("gradcheck.csv", &csv)?;
        let failed = rows.iter().filter(|r| !r.passed()).count();
        if failed > 0 {
            return Err(CliError::numeric(format!("{failed} gradient checks exceed the tolerance")));
        }
        Ok(())
    })();
    complete(run, res)
}

fn oracle_check(inv: &Invocation, a: &OracleCheckArgs) -> CliResult {
    let cfg = inv.base_config()?;
    let run = inv.open(&cfg, &[], &[a.seed])?;
    let res = (|| {
        let mut all: Vec<(&str, CheckRow)> = Vec::new();
        all.extend(oracle_suite(a.cases, a.seed)?.into_iter().map(|r| ("oracle", r)));
        all.extend(invariance_suite(a.cases, a.seed)?.into_iter().map(|r| ("invariance", r)));
        let w = all.iter().map(|(_, r)| r.name.len()).max().unwrap_or(4);
        let mut csv = String::from("suite,name,cases,max_error,tolerance,passed\n");
        say!("{:<10}  {:<w$}  {:>5}  {:>10}  {:>10}", "suite", "name", "cases", "max error", "tolerance");
        for (suite, r) in &all {
            writeln!(csv, "{suite},{},{},{},{},{}", quote(&r.name), r.cases, r.max_error, r.tolerance, r.passed())
                .unwrap();
            let mark = if r.passed() { "" } else { "  FAIL" };
            say!("{suite:<10}  {:<w$}  {:>5}  {:>10.2e}  {:>10.0e}{mark}", r.name, r.cases, r.max_error, r.tolerance);
        }
        run.write_text("oracle_check.csv", &csv)?;
        let failed = all.iter().filter(|(_, r)| !r.passed()).count();
        if failed > 0 {
            return Err(CliError::numeric(format!("{failed} checks exceed their tolerance")));
        }
        Ok(())
    })();
    complete(run, res)
}

fn replay(inv: &Invocation, a: &ReplayArgs) -> CliResult {
    let m = RunManifest::load(&a.manifest)?;
    let mut args = vec!["tstcc".to_string()];
    args.extend(m.argv.iter().cloned());
    let mut cli = Cli::try_parse_from(&args)
        .map_err(|e| CliError::usage(format!("recorded arguments no longer parse: {}", e.kind())))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::usage("a replay manifest cannot be replayed"));
    }
    for i in &m.inputs {
        let now = sha256_file(Path::new(&i.path))?;
        if now != i.sha256 {
            return Err(CliError::new(EXIT_IO, format!("input {} changed since the recorded run", i.path)));
        }
    }
    let out = inv.cli.common.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}-replay", m.output_dir)));
    cli.common.out = Some(out.clone());
    cli.common.config = None;
    cli.common.set.clear();
    cli.common.jobs = 1;
    cli.common.cell = None;
    cli.common.cell_output = None;
    cli.common.quiet = inv.cli.common.quiet;
    execute(cli, m.argv.clone(), Some(m.config.clone()))?;

    let new = RunManifest::load(&out.join(MANIFEST_FILE))?;
    let mut differ = 0;
    for old in &m.artifacts {
        let verdict = match new.artifacts.iter().find(|n| n.path == old.path) {
            Some(n) if n.sha256 == old.sha256 => "identical",
            Some(_) => "DIFFERS",
            None => "MISSING",
        };
        if verdict != "identical" {
            differ += 1;
        }
        say!("{verdict:<9}  {}", old.path);
    }
    for n in new.artifacts.iter().filter(|n| !m.artifacts.iter().any(|o| o.path == n.path)) {
        differ += 1;
        say!("{:<9}  {}", "EXTRA", n.path);
    }
    if differ > 0 {
        return Err(CliError::new(EXIT_FAILURE, format!("{differ} artifacts differ from the recorded run")));
    }
    say!("all {} artifacts reproduced bit-identically", m.artifacts.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_labels() {
        assert_eq!(percent(0.1), "10");
        assert_eq!(percent(0.01), "1");
        assert_eq!(percent(0.005), "0.5");
        assert_eq!(percent(1.0), "100");
    }

    #[test]
    fn sweep_keys() {
        assert_eq!(sensitivity_key("lambda2").unwrap(), "loss.lambda2");
        assert_eq!(sensitivity_key("k_ratio").unwrap(), "model.k_ratio");
        assert_eq!(sensitivity_key("optim.lr").unwrap(), "optim.lr");
        assert_eq!(sensitivity_key("bogus").unwrap_err().code, crate::EXIT_USAGE);
        assert!(default_sweep("lambda1").unwrap().contains(&"1000".to_string()));
        assert!(default_sweep("k_ratio").unwrap().contains(&"0.4".to_string()));
    }
}
