//! Runs the `peftlab` binary and checks exit codes, output files and error lines.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn peftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peftlab"))
        .args(args)
        .env("PEFTLAB_THREADS", "2")
        .output()
        .expect("spawn peftlab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_error(o: &Output, code: i32, needle: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error:"), "{err}");
    assert!(lines[0].contains(needle), "{err}");
}

fn small_config(dir: &Path, steps: u64) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(
        &p,
        format!(
            "steps = {steps}\nbatch_size = 2\nseq_len = 8\npretrain_steps = 5\nout_dir = \"out\"\n\
             [arch]\nd_model = 8\nn_layers = 1\nn_heads = 2\nmax_seq_len = 16\n"
        ),
    )
    .unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_csv_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 7);
    let out = dir.path().join("elsewhere");
    let o = peftlab(&["train", "--config", s(&cfg), "--method", "qaa", "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("qaa_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
    assert!(csv.starts_with("step,loss,ms,trainable_params,method\n"));
    assert!(out.join("qaa_seed3.ckpt").is_file());
    assert!(!dir.path().join("out").exists());
    assert!(stdout(&o).contains("final_loss="));
}

#[test]
fn train_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_error(&peftlab(&["train", "--config", s(&missing)]), 2, s(&missing));

    let cfg = small_config(dir.path(), 2);
    let o = peftlab(&["train", "--config", s(&cfg), "--method", "unknown"]);
    assert_error(&o, 2, "full, lora, sora, prefix, qaa");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "batch_size = 0\nout_dir = \"made\"\n").unwrap();
    assert_error(&peftlab(&["train", "--config", s(&bad)]), 2, "batch_size");
    assert!(!dir.path().join("made").exists());

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "stepz = 3\n").unwrap();
    assert_error(&peftlab(&["train", "--config", s(&typo)]), 2, "line 1");
}

#[test]
fn grad_check_paths() {
    let o = peftlab(&["grad-check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("max_abs_deviation="));

    let o = peftlab(&["grad-check", "--tol", "0"]);
    assert_error(&o, 1, "theta=");
    assert!(stderr(&o).contains("observable i="));

    assert_error(&peftlab(&["grad-check", "--qubits", "7"]), 2, "qubits");
    assert_error(&peftlab(&["grad-check", "--depth", "5"]), 2, "depth");
}

#[test]
fn count_params_golden_and_errors() {
    let run = |args: &[&str]| {
        let mut all = vec!["count-params"];
        all.extend_from_slice(args);
        peftlab(&all)
    };
    let o = run(&["--arch", "gpt-neo-125m", "--method", "lora", "--rank", "8", "--multiplicity", "1"]);
    assert_eq!(stdout(&o), "147456 (0.12%)\n");
    let o = run(&["--arch", "gpt-neo-125m", "--method", "prefix", "--prefix-len", "60"]);
    assert_eq!(stdout(&o), "552960 (0.44%)\n");
    let o = run(&["--arch", "gpt-neo-125m", "--method", "full"]);
    assert_eq!(stdout(&o), "125198592 (100.00%)\n");
    // SoRA adds one gate entry per rank per site: (2·768·8 + 8)·12.
    let o = run(&["--arch", "gpt-neo-125m", "--method", "sora", "--rank", "8", "--multiplicity", "1"]);
    assert_eq!(stdout(&o), "147552 (0.12%)\n");

    assert_error(&run(&["--arch", "gpt-j", "--method", "lora"]), 2, "gpt-j");
    assert_error(&run(&["--arch", "gpt-neo-125m", "--method", "adalora"]), 2, "adalora");

    let dir = tempfile::tempdir().unwrap();
    let shape = dir.path().join("tiny.toml");
    std::fs::write(&shape, "vocab_size = 10\nd_model = 4\nn_layers = 1\nffn_dim = 8\nmax_positions = 6\n").unwrap();
    // Total: (10 + 6)·4 + (2·4 + 3·16 + 16 + 4 + 2·4 + 32 + 8 + 32 + 4) + 2·4 = 232.
    let o = run(&["--arch", s(&shape), "--method", "full"]);
    assert_eq!(stdout(&o), "232 (100.00%)\n");
}

#[test]
fn bench_cross_product_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 4);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = peftlab(&["bench", "--config", s(&cfg), "--methods", "qaa,lora", "--seeds", "1,2", "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut files: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|f| f.ends_with(".csv"))
        .collect();
    files.sort();
    assert_eq!(
        files,
        ["lora_seed1.csv", "lora_seed2.csv", "qaa_seed1.csv", "qaa_seed2.csv", "summary.csv"]
    );
    let o2 = peftlab(&["bench", "--config", s(&cfg), "--methods", "qaa,lora", "--seeds", "1,2", "--out", s(&b)]);
    assert!(o2.status.success());
    let means = |dir: &Path| -> Vec<String> {
        std::fs::read_to_string(dir.join("summary.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').take(6).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(means(&a), means(&b));
    assert_eq!(means(&a).len(), 2);
}

#[test]
fn bench_validation_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    let out = dir.path().join("never");
    assert_error(
        &peftlab(&["bench", "--config", s(&cfg), "--methods", "", "--out", s(&out)]),
        2,
        "no methods",
    );
    assert_error(
        &peftlab(&["bench", "--config", s(&cfg), "--methods", "qaa,bogus", "--out", s(&out)]),
        2,
        "bogus",
    );
    assert!(!out.exists());

    // A huge learning rate diverges; the run is recorded and the bench exits 1.
    let hot = dir.path().join("hot.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("steps = 2", "steps = 40");
    std::fs::write(&hot, format!("{text}[optimizer]\nkind = \"sgd\"\nlr = 1e300\n")).unwrap();
    let o = peftlab(&["bench", "--config", s(&hot), "--methods", "full", "--seeds", "1", "--out", s(&out)]);
    assert_error(&o, 1, "non-finite loss");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("full,1,1,"), "{summary}");
}

#[test]
fn generate_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 3);
    let out = dir.path().join("out");
    assert!(peftlab(&["train", "--config", s(&cfg), "--method", "lora"]).status.success());
    let ckpt = out.join("lora_seed0.ckpt");
    let o = peftlab(&[
        "generate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--prompt", "ab", "--max-new-tokens", "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.trim_end_matches('\n').len() >= 2);
    let again = peftlab(&[
        "generate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--prompt", "ab", "--max-new-tokens", "5",
    ]);
    assert_eq!(stdout(&again), text);

    let missing = dir.path().join("none.ckpt");
    let o = peftlab(&["generate", "--config", s(&cfg), "--checkpoint", s(&missing), "--prompt", "a"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn usage_errors_are_one_line() {
    let o = peftlab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(stderr(&o).starts_with("error:"));
    let h = peftlab(&["--help"]);
    assert!(h.status.success());
    assert!(stdout(&h).contains("grad-check"));
}
