use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use invsharp_core::lipschitz::LipschitzBudget;
use invsharp_core::net::{Geometry, InvSharpNet};

const TINY: &str = r#"
[dataset]
n_train = 4
n_eval = 2
[dataset.phantom]
size = 16
[dataset.recon]
layers = 3
channels = 4
iterations = 5
batch_size = 2

[train]
max_iterations = 3
log_every = 1
batch_size = 2
[train.geometry]
blocks = 2
layers = 3
channels = 4

[ablate]
seeds = [0, 1]
error_samples = 2
[ablate.small]
blocks = 1
layers = 2
channels = 2
"#;

fn invsharp(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invsharp"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        fs::write(root.join("run.toml"), config).unwrap();
        Self { _tmp: tmp, root }
    }

    fn cmd(&self, out: &str, args: &[&str]) -> Output {
        let mut all = vec!["--config", "run.toml", "--out", out];
        all.extend_from_slice(args);
        invsharp(&self.root, &all)
    }

    fn ok(&self, out: &str, args: &[&str]) -> String {
        let o = self.cmd(out, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.root.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn identity_checkpoint(&self, name: &str, hw: usize) -> String {
        let net = InvSharpNet::identity(Geometry::new(2, 3, 4).unwrap(), LipschitzBudget::default(), 2, (hw, hw));
        net.save(&self.root.join(name)).unwrap();
        name.to_string()
    }
}

fn manifest_hash(stdout: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("manifest sha256 "))
        .expect("hash printed")
        .to_string()
}

#[test]
fn configuration_errors_exit_2() {
    let run = Run::new(TINY);
    assert_eq!(code(&invsharp(&run.root, &["--config", "missing.toml", "gen-data"])), 2);
    fs::write(run.root.join("typo.toml"), "[train]\nlearning_rat = 0.1\n").unwrap();
    assert_eq!(code(&invsharp(&run.root, &["--config", "typo.toml", "gen-data"])), 2);
    assert_eq!(code(&run.cmd("o", &["train", "--mode", "sideways"])), 2);
    assert_eq!(code(&run.cmd("o", &["ablate", "--sweep", "depth"])), 2);
    assert_eq!(code(&invsharp(&run.root, &["frobnicate"])), 2);
    assert_eq!(code(&invsharp(&run.root, &["--help"])), 0);
}

#[test]
fn missing_inputs_exit_3() {
    let run = Run::new(TINY);
    assert_eq!(code(&run.cmd("o", &["train", "--mode", "backward"])), 3);
    let ckpt = run.identity_checkpoint("id.ckpt", 16);
    assert_eq!(code(&run.cmd("o", &["eval", "--checkpoint", &ckpt])), 3);
    run.ok("o", &["gen-data"]);
    assert_eq!(code(&run.cmd("o", &["eval", "--checkpoint", "nope.ckpt"])), 3);
}

#[test]
fn incompatible_inputs_exit_4() {
    let run = Run::new(TINY);
    run.ok("o", &["gen-data"]);
    let wrong = run.identity_checkpoint("wrong.ckpt", 32);
    assert_eq!(code(&run.cmd("o", &["infer", "--checkpoint", &wrong])), 4);
    assert_eq!(code(&run.cmd("o", &["eval", "--checkpoint", &wrong])), 4);
    fs::write(run.root.join("junk.ckpt"), "INVSHARP-CKPT 1\nblocks x\nend\n").unwrap();
    assert_eq!(code(&run.cmd("o", &["eval", "--checkpoint", "junk.ckpt"])), 4);
}

#[test]
fn gen_data_is_deterministic_and_seeded() {
    let run = Run::new(TINY);
    let a = manifest_hash(&run.ok("a", &["gen-data"]));
    let b = manifest_hash(&run.ok("b", &["gen-data"]));
    assert_eq!(a, b);
    assert_eq!(run.read("a/data/manifest"), run.read("b/data/manifest"));
    assert_eq!(fs::read_dir(run.root.join("a/data")).unwrap().count(), 6 * 6 + 2);
    let c = manifest_hash(&run.ok("c", &["--seed", "5", "gen-data"]));
    assert_ne!(a, c);
    assert_eq!(run.read("a/config.toml"), TINY.as_bytes());
}

#[test]
fn train_and_eval_are_bit_identical_across_runs() {
    let run = Run::new(TINY);
    run.ok("o", &["gen-data"]);
    for out in ["t1", "t2"] {
        run.ok(out, &["train", "--mode", "backward", "--data", "o/data"]);
        run.ok(out, &["eval", "--checkpoint", &format!("{out}/backward.ckpt"), "--data", "o/data"]);
    }
    for f in ["backward.ckpt", "backward_log.csv", "eval_recon.csv", "eval_sharp.csv", "eval_undersampled.csv"] {
        assert_eq!(run.read(&format!("t1/{f}")), run.read(&format!("t2/{f}")), "{f}");
    }
    let log = String::from_utf8(run.read("t1/backward_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    let report = String::from_utf8(run.read("t1/eval_sharp.csv")).unwrap();
    assert!(report.starts_with("id,psnr_db,ssim,contrast,mae\n"));
    assert_eq!(report.lines().count(), 1 + 2 + 2);
}

#[test]
fn bidirectional_without_backward_weight_logs_like_forward() {
    let run = Run::new(TINY);
    run.ok("o", &["gen-data"]);
    fs::write(run.root.join("beta0.toml"), TINY.replace("[train]\n", "[train]\nbeta = 0.0\n")).unwrap();
    run.ok("f", &["train", "--mode", "forward", "--data", "o/data"]);
    let o = invsharp(&run.root, &["--config", "beta0.toml", "--out", "b", "train", "--mode", "bidirectional", "--data", "o/data"]);
    assert_eq!(code(&o), 0);
    assert_eq!(run.read("f/forward_log.csv"), run.read("b/bidirectional_log.csv"));
}

#[test]
fn infer_writes_maps_previews_and_profiles() {
    let run = Run::new(TINY);
    run.ok("o", &["gen-data"]);
    let ckpt = run.identity_checkpoint("id.ckpt", 16);
    run.ok("o", &["infer", "--checkpoint", &ckpt]);
    for index in [4, 5] {
        let stem = format!("o/infer/{index:05}");
        // The baseline output is already data-consistent, so the identity keeps it.
        assert_eq!(run.read(&format!("{stem}_R.pgm")), run.read(&format!("{stem}_R_sharp.pgm")));
        let profile = String::from_utf8(run.read(&format!("{stem}_profile.csv"))).unwrap();
        assert_eq!(profile.lines().next(), Some("x,I,R,R_sharp"));
        assert_eq!(profile.lines().count(), 1 + 16);
        let scale = String::from_utf8(run.read(&format!("{stem}_E_inv.pgm.scale"))).unwrap();
        assert!(scale.starts_with("min "));
        assert!(!run.read(&format!("{stem}_R_sharp_kspace.pgm")).is_empty());
        assert!(!run.read(&format!("{stem}_E_inv.ivt")).is_empty());
    }
}

#[test]
fn ablation_sweeps_write_expected_rows() {
    let run = Run::new(TINY);
    run.ok("o", &["gen-data"]);
    run.ok("o", &["ablate", "--sweep", "c", "--data", "o/data"]);
    run.ok("p", &["ablate", "--sweep", "c", "--data", "o/data"]);
    let c = String::from_utf8(run.read("o/ablate_c.csv")).unwrap();
    assert_eq!(c.lines().next(), Some("c,mean_inv_error,final_backward_error"));
    assert_eq!(c.lines().count(), 1 + 3);
    assert_eq!(run.read("o/ablate_c.csv"), run.read("p/ablate_c.csv"));

    run.ok("s", &["ablate", "--sweep", "size"]);
    let size = String::from_utf8(run.read("s/ablate_size.csv")).unwrap();
    assert_eq!(size.lines().next(), Some("geometry,params,final_backward_error"));
    assert_eq!(size.lines().count(), 1 + 2);
    assert!(run.root.join("s/data/manifest").is_file());
}

#[test]
fn outputs_stay_under_out() {
    let run = Run::new(TINY);
    run.ok("o", &["gen-data"]);
    run.ok("o", &["train", "--mode", "backward"]);
    let mut top: Vec<String> = fs::read_dir(&run.root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["o", "run.toml"]);
}
