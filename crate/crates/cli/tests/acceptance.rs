//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any fails. `TSTCC_ACCEPTANCE=1,2,7` restricts the
//! run to the listed criteria.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use tstcc_core::checks::{invariance_suite, oracle_suite};
use tstcc_core::data::{synth_generate, Dataset, SynthSpec};
use tstcc_core::diagnostics::gradient_suite;
use tstcc_core::model::TsTcc;
use tstcc_core::training::{
    ablation_variants, finetune_semi_supervised, linear_evaluate, pretrain_with, TrainConfig,
};

type Verdict = (bool, String);

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("  .. {}", msg.as_ref());
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let rows = gradient_suite(20).expect("gradient suite runs");
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let worst = rows.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("rows");
    let ok = failed.is_empty() && secs < 120.0;
    let detail = format!(
        "{} checks, worst {} at {:.2e} (limit 1e-6), {secs:.1} s (limit 120 s){}",
        rows.len(),
        worst.name,
        worst.max_rel_error,
        if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(" ")) }
    );
    (ok, detail)
}

fn check_rows(rows: Vec<tstcc_core::checks::CheckRow>) -> Verdict {
    let failed: Vec<String> =
        rows.iter().filter(|r| !r.passed()).map(|r| format!("{} ({:.2e})", r.name, r.max_error)).collect();
    let cases: usize = rows.iter().map(|r| r.cases).sum();
    let worst = rows.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let detail = format!("{} checks over {cases} cases, largest deviation {worst:.2e}", rows.len());
    if failed.is_empty() {
        (true, detail)
    } else {
        (false, format!("{detail}, failing: {}", failed.join(", ")))
    }
}

fn criterion_2() -> Verdict {
    check_rows(oracle_suite(100, 2024).expect("oracle suite runs"))
}

fn criterion_3() -> Verdict {
    check_rows(invariance_suite(100, 2025).expect("invariance suite runs"))
}

const TINY: &str = "[model]
conv_widths = 4,6
latent_dim = 8
hidden = 8
layers = 1
heads = 2
proj_hidden = 4
proj_out = 4
[optim]
lr = 0.003
[train]
epochs = 2
eval_epochs = 4
batch_size = 16
finetune_batch_size = 8
";

fn tstcc(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tstcc"))
        .args(args)
        .arg("--quiet")
        .current_dir(dir)
        .output()
        .expect("binary runs");
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".csv"))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn criterion_7() -> Verdict {
    let tmp = tempfile::tempdir().expect("temp dir");
    let d = tmp.path();
    fs::write(d.join("tiny.txt"), TINY).expect("config written");
    let tr = ["--train", "split/train.tsds", "--test", "split/test.tsds"];
    let cfg = ["--config", "tiny.txt"];
    let with = |head: &[&'static str], rest: &[&'static str]| -> Vec<&'static str> {
        head.iter().chain(rest.iter()).copied().collect()
    };
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--samples", "90", "--length", "32", "--csv"]),
        ("split", vec!["split", "--data", "synth/dataset.tsds", "--seed", "3"]),
        ("pretrain", with(&cfg, &[&["pretrain", "--seeds", "0,1"][..], &tr].concat())),
        ("linear", with(&cfg, &[&["linear-eval", "--checkpoint", "pretrain/checkpoint_seed1.ckpt"][..], &tr].concat())),
        ("random", with(&cfg, &[&["linear-eval", "--random-init"][..], &tr].concat())),
        ("finetune", with(&cfg, &[&["finetune", "--fraction", "0.5,1", "--scratch"][..], &tr].concat())),
        ("ablate", with(&cfg, &[&["ablate", "--jobs", "2"][..], &tr].concat())),
        (
            "sensitivity",
            with(&cfg, &[&["sensitivity", "--param", "lambda2", "--values", "0.1,10", "--jobs", "2"][..], &tr].concat()),
        ),
        (
            "transfer",
            with(&cfg, &["transfer", "--synthetic", "--samples", "30", "--test-samples", "15", "--length", "32", "--limit", "2"]),
        ),
        ("augment", with(&cfg, &["augment-preview", "--data", "split/test.tsds", "--index", "3", "--seed", "5"])),
        ("gradcheck", vec!["gradcheck", "--instances", "2"]),
        ("oracle", vec!["oracle-check", "--cases", "20"]),
    ];
    let mut problems = Vec::new();
    let mut compared = 0;
    for (name, args) in &runs {
        let mut a = args.clone();
        a.extend(["--out", name]);
        let (code, text) = tstcc(d, &a);
        if code != 0 {
            problems.push(format!("{name} exited {code}: {}", text.trim()));
            continue;
        }
        let replay_dir = format!("{name}-replay");
        let manifest = format!("{name}/manifest.json");
        let (code, text) = tstcc(d, &["replay", &manifest, "--out", &replay_dir]);
        if code != 0 {
            problems.push(format!("replay of {name} exited {code}: {}", text.trim()));
            continue;
        }
        let files = csv_files(&d.join(name));
        if files.is_empty() || files != csv_files(&d.join(&replay_dir)) {
            problems.push(format!("{name}: csv sets differ or are empty"));
            continue;
        }
        for f in &files {
            let a = fs::read(d.join(name).join(f)).expect("original csv");
            let b = fs::read(d.join(&replay_dir).join(f)).expect("replayed csv");
            if a == b {
                compared += 1;
            } else {
                problems.push(format!("{name}/{f} differs after replay"));
            }
        }
        progress(format!("{name}: {} csv files reproduced", files.len()));
    }
    let detail = format!("{} commands replayed, {compared} csv files compared byte for byte", runs.len());
    if problems.is_empty() {
        (true, detail)
    } else {
        (false, format!("{detail}; {}", problems.join("; ")))
    }
}

fn criterion_8() -> Verdict {
    let published = [
        "lr = 0.0003",
        "weight_decay = 0.0003",
        "beta1 = 0.9",
        "beta2 = 0.99",
        "tau = 0.2",
        "lambda1 = 1",
        "lambda2 = 0.7",
        "layers = 4",
        "heads = 4",
        "dropout = 0.1",
        "epochs = 40",
        "batch_size = 128",
        "k_ratio = 0.4",
    ];
    let tmp = tempfile::tempdir().expect("temp dir");
    let d = tmp.path();
    let mut problems = Vec::new();
    let (code, _) = tstcc(d, &["oracle-check", "--cases", "1", "--out", "defaults"]);
    let snapshot = fs::read_to_string(d.join("defaults/config.txt")).unwrap_or_default();
    let lib_text = TrainConfig::default().to_text();
    for line in published {
        for (what, text) in [("library default", &lib_text), ("run snapshot", &snapshot)] {
            if !text.lines().any(|l| l.trim() == line) {
                problems.push(format!("{what} lacks `{line}`"));
            }
        }
    }
    if code != 0 {
        problems.push(format!("default run exited {code}"));
    }

    let small = "[model]\nconv_widths = 4,6\nlatent_dim = 8\nhidden = 8\nlayers = 1\nheads = 2\nproj_hidden = 4\n\
                 proj_out = 4\n[train]\nepochs = 1\neval_epochs = 2\nbatch_size = 16\n";
    fs::write(d.join("small.txt"), small).expect("config written");
    let (code, text) = tstcc(d, &["synth", "--samples", "48", "--length", "128", "--out", "data"]);
    if code != 0 {
        problems.push(format!("synth exited {code}: {text}"));
    }
    let mut rows = 0;
    for param in ["lambda1", "lambda2", "k_ratio"] {
        let out = format!("sweep-{param}");
        let args = [
            "--config",
            "small.txt",
            "sensitivity",
            "--param",
            param,
            "--train",
            "data/dataset.tsds",
            "--test",
            "data/dataset.tsds",
            "--out",
            &out,
        ];
        let (code, text) = tstcc(d, &args);
        let metrics = fs::read_to_string(d.join(&out).join("metrics.csv")).unwrap_or_default();
        let n = metrics.lines().count().saturating_sub(1);
        if code != 0 || n == 0 {
            problems.push(format!("{param} sweep exited {code} with {n} rows: {}", text.trim()));
        }
        for v in ["0.001", "1000"].iter().filter(|_| param != "k_ratio") {
            if !metrics.contains(&format!("{param}={v}")) {
                problems.push(format!("{param} sweep lacks {v}"));
            }
        }
        if param == "k_ratio" && !metrics.contains("k_ratio=0.4") {
            problems.push("k_ratio sweep lacks 0.4".into());
        }
        rows += n;
        progress(format!("{param} sweep: {n} rows"));
    }
    let detail = format!("{} published defaults in library and run snapshot, {rows} sweep rows", published.len());
    if problems.is_empty() {
        (true, detail)
    } else {
        (false, format!("{detail}; {}", problems.join("; ")))
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];

struct Bench {
    train: Dataset,
    test: Dataset,
    cfg: TrainConfig,
    /// Pretrained full models, one per seed.
    models: Vec<TsTcc>,
    full_mf1: Vec<f64>,
}

fn benchmark_data() -> (Dataset, Dataset) {
    let all = synth_generate(&SynthSpec { samples: 2500, classes: 3, channels: 3, length: 128, seed: 0, ..SynthSpec::default() })
        .expect("synthetic data");
    let train = all.subset(&(0..2000).collect::<Vec<_>>());
    let test = all.subset(&(2000..2500).collect::<Vec<_>>());
    (train, test)
}

fn pretrain_quiet(cfg: &TrainConfig, data: &Dataset, tag: &str) -> TsTcc {
    let start = Instant::now();
    let out = pretrain_with(cfg, data, &mut |e| {
        if e.epoch == 1 || e.epoch % 10 == 0 {
            progress(format!("{tag} seed {} epoch {} total {:.4} ({:.0} s)", cfg.seed, e.epoch, e.total, start.elapsed().as_secs_f64()));
        }
    })
    .expect("pretraining succeeds");
    let (first, last) = (out.log[0].total, out.log[out.log.len() - 1].total);
    progress(format!("{tag} seed {}: objective {first:.4} -> {last:.4}", cfg.seed));
    out.model
}

fn criterion_4() -> (Verdict, Bench) {
    let start = Instant::now();
    let (train, test) = benchmark_data();
    let cfg = TrainConfig::default();
    let (mut rand_acc, mut full_acc, mut full_mf1, mut models) = (vec![], vec![], vec![], vec![]);
    for s in SEEDS {
        let c = TrainConfig { seed: s, ..cfg.clone() };
        let random = TsTcc::new(c.model.clone(), s).expect("model");
        let r = linear_evaluate(&random, &train, &test, &c).expect("linear evaluation").report;
        let model = pretrain_quiet(&c, &train, "TS-TCC");
        let f = linear_evaluate(&model, &train, &test, &c).expect("linear evaluation").report;
        progress(format!(
            "seed {s}: random-init acc {} MF1 {}, TS-TCC acc {} MF1 {}",
            pct(r.accuracy),
            pct(r.macro_f1),
            pct(f.accuracy),
            pct(f.macro_f1)
        ));
        rand_acc.push(r.accuracy);
        full_acc.push(f.accuracy);
        full_mf1.push(f.macro_f1);
        models.push(model);
    }
    let secs = start.elapsed().as_secs_f64();
    let gap = 100.0 * (mean(&full_acc) - mean(&rand_acc));
    let ok = gap >= 10.0 && secs < 1800.0;
    let detail = format!(
        "TS-TCC {}% vs random-init {}% accuracy, gap {gap:.2} points (need 10), {:.1} min (limit 30)",
        pct(mean(&full_acc)),
        pct(mean(&rand_acc)),
        secs / 60.0
    );
    ((ok, detail), Bench { train, test, cfg, models, full_mf1 })
}

fn criterion_5(b: &Bench) -> Verdict {
    let variants = ablation_variants(&b.cfg);
    let mut means = Vec::new();
    for (name, vcfg) in variants.iter().take(2) {
        let mut mf1 = Vec::new();
        for s in SEEDS {
            let c = TrainConfig { seed: s, ..vcfg.clone() };
            let model = pretrain_quiet(&c, &b.train, name);
            mf1.push(linear_evaluate(&model, &b.train, &b.test, &c).expect("linear evaluation").report.macro_f1);
        }
        progress(format!("{name}: MF1 {}", pct(mean(&mf1))));
        means.push(mean(&mf1));
    }
    let (tc, tcx, full) = (means[0], means[1], mean(&b.full_mf1));
    let (g1, g2) = (100.0 * (full - tcx), 100.0 * (tcx - tc));
    let ok = g1 >= -1.0 && g2 >= -1.0;
    let detail = format!(
        "MF1 full {} / TC + X-Aug {} / TC only {}, gaps {g1:+.2} and {g2:+.2} points (need >= -1)",
        pct(full),
        pct(tcx),
        pct(tc)
    );
    (ok, detail)
}

fn criterion_6(b: &Bench) -> Verdict {
    let (mut tuned, mut scratch) = (vec![], vec![]);
    for (i, s) in SEEDS.into_iter().enumerate() {
        let c = TrainConfig { seed: s, ..b.cfg.clone() };
        let t = finetune_semi_supervised(b.models[i].clone(), &b.train, &b.test, 0.1, false, &c).expect("fine-tuning");
        let fresh = TsTcc::new(c.model.clone(), s).expect("model");
        let f = finetune_semi_supervised(fresh, &b.train, &b.test, 0.1, false, &c).expect("training from scratch");
        progress(format!("seed {s}: fine-tuned MF1 {}, scratch MF1 {}", pct(t.report.macro_f1), pct(f.report.macro_f1)));
        tuned.push(t.report.macro_f1);
        scratch.push(f.report.macro_f1);
    }
    let gap = 100.0 * (mean(&tuned) - mean(&scratch));
    let detail = format!(
        "10% labels: fine-tuned MF1 {} vs scratch {}, gap {gap:+.2} points (need >= -1)",
        pct(mean(&tuned)),
        pct(mean(&scratch))
    );
    (gap >= -1.0, detail)
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("TSTCC_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| selected.as_ref().is_none_or(|s| s.contains(&n));
    let mut results: Vec<(u32, Option<Verdict>)> = Vec::new();
    let mut run = |n: u32, f: &mut dyn FnMut() -> Verdict| {
        let verdict = if wanted(n) {
            eprintln!("criterion {n} running");
            let v = f();
            println!("criterion {n}: {} {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
            Some(v)
        } else {
            None
        };
        results.push((n, verdict));
    };
    run(1, &mut criterion_1);
    run(2, &mut criterion_2);
    run(3, &mut criterion_3);
    run(7, &mut criterion_7);
    run(8, &mut criterion_8);
    if wanted(4) || wanted(5) || wanted(6) {
        let mut bench = None;
        run(4, &mut || {
            let (v, b) = criterion_4();
            bench = Some(b);
            v
        });
        let bench = bench.unwrap_or_else(|| {
            progress("pretraining the shared benchmark models");
            let (train, test) = benchmark_data();
            let cfg = TrainConfig::default();
            let mut models = Vec::new();
            let mut full_mf1 = Vec::new();
            for s in SEEDS {
                let c = TrainConfig { seed: s, ..cfg.clone() };
                let m = pretrain_quiet(&c, &train, "TS-TCC");
                full_mf1.push(linear_evaluate(&m, &train, &test, &c).expect("linear evaluation").report.macro_f1);
                models.push(m);
            }
            Bench { train, test, cfg, models, full_mf1 }
        });
        run(6, &mut || criterion_6(&bench));
        run(5, &mut || criterion_5(&bench));
    }
    results.sort_by_key(|r| r.0);
    println!("summary:");
    let mut failed = 0;
    for (n, v) in &results {
        match v {
            Some((true, _)) => println!("  criterion {n}: PASS"),
            Some((false, _)) => {
                failed += 1;
                println!("  criterion {n}: FAIL");
            }
            None => println!("  criterion {n}: SKIPPED"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
