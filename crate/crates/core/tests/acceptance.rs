//! Acceptance runner: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs without the libtest harness so the output is the report itself.
//! Exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;

use common::Verdict;
use prefrank::dataio::{self, InputFormat};

fn criterion_1() -> Verdict {
    let (r, secs) = common::timed(|| common::gradient_check(24, 1000));
    match r {
        Ok(rep) if secs < 120.0 => Verdict::Pass(format!(
            "{} configurations, {} entries, worst relative error {:.1e}, {secs:.1}s",
            rep.cases, rep.entries, rep.worst
        )),
        Ok(_) => Verdict::Fail(format!("took {secs:.1}s (limit 120s)")),
        Err(e) => Verdict::Fail(e),
    }
}

fn criterion_2() -> Verdict {
    let (r, secs) = common::timed(|| common::oracle_check(250, 2000));
    match r {
        Ok(s) if secs < 60.0 => Verdict::Pass(format!("{s}, {secs:.2}s")),
        Ok(_) => Verdict::Fail(format!("took {secs:.1}s (limit 60s)")),
        Err(e) => Verdict::Fail(e),
    }
}

fn criterion_6() -> Verdict {
    let Some(path) = std::env::var_os("PREFRANK_GOWALLA") else {
        return Verdict::Skip("set PREFRANK_GOWALLA to a user/item pairs file of the Gowalla dump".into());
    };
    let format: InputFormat = std::env::var("PREFRANK_GOWALLA_FORMAT")
        .unwrap_or_else(|_| "pairs".into())
        .parse()
        .expect("valid format");
    let run = || -> prefrank::Result<Verdict> {
        let raw = dataio::load_interactions(Path::new(&path), format)?;
        let stats = dataio::kcore_filter(&raw, 10)?.stats();
        let density = format!("{:.3}%", 100.0 * stats.density());
        let got = (stats.users, stats.items, stats.interactions);
        let detail = format!("m={} n={} interactions={} density={density}", got.0, got.1, got.2);
        Ok(if got == (29858, 49081, 1027370) && density == "0.084%" {
            Verdict::Pass(detail)
        } else {
            Verdict::Fail(detail)
        })
    };
    run().unwrap_or_else(|e| Verdict::Fail(e.to_string()))
}

fn prefrank(args: &[&str]) -> Result<String, String> {
    prefrank_in(Path::new("."), args)
}

fn prefrank_in(cwd: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_prefrank"))
        .current_dir(cwd)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("prefrank {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Log rows without the wall-clock column.
fn log_without_seconds(path: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn criterion_7() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| dir.path().join(name).display().to_string();
    std::fs::write(d("raw.tsv"), common::synthetic_pairs(80, 60, 0.15, 3)).map_err(|e| e.to_string())?;
    let read = |name: &str| std::fs::read(d(name)).map_err(|e| e.to_string());

    for out in ["a.corpus", "b.corpus"] {
        prefrank(&[
            "prepare",
            "--raw",
            &d("raw.tsv"),
            "--min-core",
            "3",
            "--seed",
            "5",
            "--out",
            &d(out),
        ])?;
    }
    if read("a.corpus")? != read("b.corpus")? {
        return Err("prepare produced different corpus files".into());
    }
    // Same relative out_dir in two working directories, so the echoed
    // config is identical too.
    for run in ["a", "b"] {
        let cwd = dir.path().join(run);
        std::fs::create_dir_all(&cwd).map_err(|e| e.to_string())?;
        let corpus = format!("corpus={}", d("a.corpus"));
        let sets = [
            "--set",
            &corpus,
            "--set",
            "out_dir=run",
            "--set",
            "max_epochs=1",
            "--set",
            "dim=16",
            "--set",
            "k=3",
        ];
        prefrank_in(&cwd, &[&["train", "--seed", "9"], &sets[..]].concat())?;
    }
    for file in ["best.ckpt", "last.ckpt", "config.txt"] {
        if read(&format!("a/run/{file}"))? != read(&format!("b/run/{file}"))? {
            return Err(format!("train produced different {file}"));
        }
    }
    let log = |run: &str| log_without_seconds(&dir.path().join(run).join("run/train_log.csv"));
    if log("a")? != log("b")? {
        return Err("train logs differ".into());
    }
    for report in ["r1", "r2"] {
        prefrank(&[
            "evaluate",
            "--checkpoint",
            &d("a/run/best.ckpt"),
            "--corpus",
            &d("a.corpus"),
            "--report",
            &d(&format!("{report}.csv")),
            "--per-user",
            &d(&format!("{report}_users.csv")),
        ])?;
    }
    if read("r1.csv")? != read("r2.csv")? || read("r1_users.csv")? != read("r2_users.csv")? {
        return Err("evaluate produced different reports".into());
    }
    Ok("prepare, one training epoch and evaluate byte-identical across reruns with --threads 1".into())
}

fn criterion_8() -> Verdict {
    let (r, secs) = common::timed(common::smoke_convergence);
    match r {
        Ok(s) if secs < 30.0 => Verdict::Pass(format!("{s}, {secs:.2}s")),
        Ok(_) => Verdict::Fail(format!("took {secs:.1}s (limit 30s)")),
        Err(e) => Verdict::Fail(e),
    }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", criterion_1),
        ("oracle equivalence", criterion_2),
        ("formula spot values", || Verdict::from_result(common::spot_values())),
        ("K=1 reduction to MF-BPR", || {
            Verdict::from_result(common::reduction_check(20))
        }),
        ("multi-task trend on ML-100k", || {
            let (v, secs) = common::timed(|| common::multitask_trend(&common::TrendProtocol::default()));
            match v {
                Verdict::Pass(s) => Verdict::Pass(format!("{s}; {secs:.0}s")),
                Verdict::Fail(s) => Verdict::Fail(format!("{s}; {secs:.0}s")),
                skip => skip,
            }
        }),
        ("Gowalla ingestion", criterion_6),
        ("determinism", || Verdict::from_result(criterion_7())),
        ("smoke convergence", criterion_8),
    ];
    let only: Option<Vec<usize>> = std::env::var("PREFRANK_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&number)) {
            continue;
        }
        let (tag, detail) = match check() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {number} {name}: {tag} ({detail})");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
