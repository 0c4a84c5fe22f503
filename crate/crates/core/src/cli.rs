//! The `invsharp` command line.
//!
//! Exit codes: 0 success, 1 runtime failure (including an aborted training
//! run), 2 configuration error, 3 missing input, 4 incompatible inputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::Error;
use crate::fft::fft2;
use crate::io::write_ivt1;
use crate::mri_sim::{build_dataset, Dataset, Sample, MANIFEST};
use crate::net::InvSharpNet;
use crate::pgm;
use crate::tensor::Tensor;
use crate::train::{self, ablate_lipschitz, ablate_size, evaluate, lipschitz_csv, size_csv, Mode};

#[derive(Debug, Parser)]
#[command(name = "invsharp", version, about = "Invertible sharpening of blurry MRI reconstructions")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; every artifact is written below it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the phantom, mask, baseline and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and train the baseline reconstructor.
    GenData,
    /// Train a sharpener on the dataset's training split.
    Train {
        #[arg(long)]
        mode: Option<Mode>,
        /// Dataset directory; defaults to `<out>/data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write sharpened images, inversion-error maps and previews.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Eval)]
        split: Split,
        /// Process only the first N samples of the split.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write metric reports for the evaluation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a Lipschitz-constant or network-size sweep.
    Ablate {
        #[arg(long, value_enum)]
        sweep: Sweep,
        /// Dataset directory; generated under `<out>/data` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    C,
    Size,
}

/// A failed command: the process exit code and a message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const RUNTIME: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const MISSING: u8 = 3;
    pub const INCOMPATIBLE: u8 = 4;

    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn missing(what: &str, path: &Path) -> Self {
        Self::new(Self::MISSING, format!("{what} not found: {}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidArgument(_) => Self::CONFIG,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Self::MISSING,
            Error::Incompatible(_) | Error::ShapeMismatch { .. } | Error::Format { .. } => Self::INCOMPATIBLE,
            Error::Io { .. } | Error::NonFinite(_) => Self::RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parse `args` (including the program name) and run the command.
pub fn run_from<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return std::process::ExitCode::from(if e.use_stderr() { Failure::CONFIG } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            std::process::ExitCode::from(f.code)
        }
    }
}

pub fn run(cli: &Cli) -> CmdResult {
    let (cfg, text) = load_config(cli)?;
    let out = cfg.out_dir(cli.out.as_deref());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    echo_config(&out, text.as_deref(), &cfg)?;
    match &cli.command {
        Command::GenData => gen_data(&cfg, &cfg.data_dir(None, &out)),
        Command::Train { mode, data } => {
            let mut cfg = cfg.clone();
            if let Some(m) = mode {
                cfg.train.mode = *m;
                cfg.train.validate()?;
            }
            train_cmd(&cfg, &load_dataset(&cfg.data_dir(data.as_deref(), &out))?, &out)
        }
        Command::Infer {
            checkpoint,
            data,
            split,
            limit,
        } => {
            let ds = load_dataset(&cfg.data_dir(data.as_deref(), &out))?;
            infer(&load_checkpoint(checkpoint)?, &ds, *split, *limit, &out)
        }
        Command::Eval { checkpoint, data } => {
            let ds = load_dataset(&cfg.data_dir(data.as_deref(), &out))?;
            eval_cmd(&load_checkpoint(checkpoint)?, &ds, &out)
        }
        Command::Ablate { sweep, data } => {
            let dir = cfg.data_dir(data.as_deref(), &out);
            if data.is_none() && !dir.join(MANIFEST).exists() {
                gen_data(&cfg, &dir)?;
            }
            ablate(&cfg, &load_dataset(&dir)?, *sweep, &out)
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<(RunConfig, Option<String>), Failure> {
    let (mut cfg, text) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::new(Failure::CONFIG, format!("{}: {e}", path.display())))?;
            (RunConfig::from_path(path)?, Some(text))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok((cfg, text))
}

/// `config.toml` holds the file exactly as given; `config.resolved.toml` the
/// effective settings after defaults and overrides.
fn echo_config(out: &Path, text: Option<&str>, cfg: &RunConfig) -> CmdResult {
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Failure::from(Error::io(&p, e)))
    };
    write("config.toml", text.unwrap_or(""))?;
    write("config.resolved.toml", &cfg.to_toml())
}

fn load_dataset(dir: &Path) -> std::result::Result<Dataset, Failure> {
    if !dir.join(MANIFEST).is_file() {
        return Err(Failure::missing("dataset", dir));
    }
    Ok(Dataset::load(dir)?)
}

fn load_checkpoint(path: &Path) -> std::result::Result<InvSharpNet, Failure> {
    if !path.is_file() {
        return Err(Failure::missing("checkpoint", path));
    }
    Ok(InvSharpNet::load(path)?)
}

fn write_text(path: &Path, body: &str) -> CmdResult {
    fs::write(path, body).map_err(|e| Error::io(path, e).into())
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let manifest = build_dataset(&cfg.dataset, dir)?;
    println!("dataset {} ({} train, {} eval)", dir.display(), cfg.dataset.n_train, cfg.dataset.n_eval);
    println!("manifest sha256 {}", manifest.sha256);
    Ok(())
}

fn train_cmd(cfg: &RunConfig, ds: &Dataset, out: &Path) -> CmdResult {
    if ds.train.is_empty() {
        return Err(Failure::new(Failure::MISSING, format!("dataset {} has no training samples", ds.dir.display())));
    }
    let mode = cfg.train.mode;
    let outcome = train::train(&cfg.train, &ds.train, ds.image_hw())?;
    let ckpt = out.join(format!("{mode}.ckpt"));
    outcome.net.save(&ckpt)?;
    write_text(&out.join(format!("{mode}_log.csv")), &outcome.log_csv())?;
    if let Some((step, loss)) = outcome.log.last() {
        println!("{mode}: step {step} loss {loss:.6}");
    }
    match outcome.aborted {
        Some(msg) => Err(Failure::new(
            Failure::RUNTIME,
            format!("training aborted ({msg}); last good checkpoint written to {}", ckpt.display()),
        )),
        None => {
            println!("checkpoint {}", ckpt.display());
            Ok(())
        }
    }
}

fn check_compatible(net: &InvSharpNet, ds: &Dataset) -> CmdResult {
    if net.image_hw != ds.image_hw() {
        return Err(Failure::new(
            Failure::INCOMPATIBLE,
            format!(
                "checkpoint expects {}x{} images, dataset has {}x{}",
                net.image_hw.0,
                net.image_hw.1,
                ds.image_hw().0,
                ds.image_hw().1
            ),
        ));
    }
    Ok(())
}

/// Swap quadrants so the zero frequency sits at the grid center.
fn fftshift(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[((y + h / 2) % h) * w + (x + w / 2) % w] = values[y * w + x];
        }
    }
    out
}

fn kspace_log_magnitude(img: &Tensor) -> crate::Result<Vec<f64>> {
    let k = fft2(img)?;
    let (h, w) = k.hw();
    let mag: Vec<f64> = k.re.data().iter().zip(k.im.data()).map(|(a, b)| (1.0 + a.hypot(*b)).ln()).collect();
    Ok(fftshift(&mag, h, w))
}

/// `x,I,R,R_sharp` along the middle row.
fn profile_csv(s: &Sample, sharp: &Tensor) -> crate::Result<String> {
    let (h, w) = s.truth.hw()?;
    let row = h / 2;
    let mut csv = String::from("x,I,R,R_sharp\n");
    for x in 0..w {
        let at = |t: &Tensor| t.data()[row * w + x];
        csv.push_str(&format!("{x},{:e},{:e},{:e}\n", at(&s.truth), at(&s.recon), at(sharp)));
    }
    Ok(csv)
}

fn infer(net: &InvSharpNet, ds: &Dataset, split: Split, limit: Option<usize>, out: &Path) -> CmdResult {
    check_compatible(net, ds)?;
    let samples = match split {
        Split::Train => &ds.train,
        Split::Eval => &ds.eval,
    };
    let samples = &samples[..limit.unwrap_or(samples.len()).min(samples.len())];
    let dir = out.join("infer");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for s in samples {
        let sharp = net.sharpen(&s.recon, &s.dc()?)?;
        let e_inv = net.inversion_error_map(&s.truth, &s.undersampled)?;
        let stem = |name: &str, ext: &str| dir.join(format!("{:05}_{name}.{ext}", s.index));
        write_ivt1(&stem("R_sharp", "ivt"), &sharp)?;
        write_ivt1(&stem("E_inv", "ivt"), &e_inv)?;
        pgm::write_preview(&stem("R", "pgm"), &s.recon)?;
        pgm::write_preview(&stem("R_sharp", "pgm"), &sharp)?;
        pgm::write_preview(&stem("E_inv", "pgm"), &e_inv)?;
        let (h, w) = sharp.hw()?;
        pgm::write_grid(&stem("R_sharp_kspace", "pgm"), &kspace_log_magnitude(&sharp)?, h, w)?;
        write_text(&stem("profile", "csv"), &profile_csv(s, &sharp)?)?;
    }
    println!("{} samples written to {}", samples.len(), dir.display());
    Ok(())
}

fn eval_cmd(net: &InvSharpNet, ds: &Dataset, out: &Path) -> CmdResult {
    check_compatible(net, ds)?;
    let reports = evaluate(net, &ds.eval)?;
    for (name, r) in [("recon", &reports.recon), ("sharp", &reports.sharp), ("undersampled", &reports.undersampled)] {
        write_text(&out.join(format!("eval_{name}.csv")), &r.to_csv())?;
        println!(
            "{name:>12}: psnr {:.3} dB  ssim {:.4}  contrast {:.4}  mae {:.5}",
            r.mean_psnr(),
            r.mean_ssim(),
            r.mean_contrast(),
            r.mean_mae()
        );
    }
    Ok(())
}

fn ablate(cfg: &RunConfig, ds: &Dataset, sweep: Sweep, out: &Path) -> CmdResult {
    if ds.train.is_empty() {
        return Err(Failure::new(Failure::MISSING, format!("dataset {} has no training samples", ds.dir.display())));
    }
    let (name, csv) = match sweep {
        Sweep::C => {
            let rows = ablate_lipschitz(&cfg.train, &cfg.ablate, &ds.train, &ds.eval, ds.image_hw())?;
            ("ablate_c.csv", lipschitz_csv(&rows))
        }
        Sweep::Size => {
            let rows = ablate_size(&cfg.train, &cfg.ablate, &ds.train, ds.image_hw())?;
            ("ablate_size.csv", size_csv(&rows))
        }
    };
    write_text(&out.join(name), &csv)?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fftshift_moves_dc_to_center() {
        let mut v = vec![0.0; 16];
        v[0] = 1.0;
        let s = fftshift(&v, 4, 4);
        assert_eq!(s[2 * 4 + 2], 1.0);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        let code = |e: Error| Failure::from(e).code;
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::io("p", std::io::Error::from(std::io::ErrorKind::NotFound))), 3);
        assert_eq!(code(Error::Incompatible("x".into())), 4);
        assert_eq!(code(Error::NonFinite("x".into())), 1);
    }

    #[test]
    fn parses_verbs_and_global_flags() {
        let cli = Cli::try_parse_from(["invsharp", "train", "--mode", "forward", "--out", "o", "--seed", "3"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        assert!(matches!(cli.command, Command::Train { mode: Some(Mode::Forward), .. }));
        assert!(Cli::try_parse_from(["invsharp", "train", "--mode", "sideways"]).is_err());
        assert!(Cli::try_parse_from(["invsharp", "ablate", "--sweep", "depth"]).is_err());
    }
}
