//! Command-line entry point. Each subcommand prints a reproducibility
//! header (the flags and seed it will act on, plus the resolved config for
//! training) before doing any work, then drives the library. Exit codes:
//! 0 success, 1 usage, 2 data error, 3 numeric failure, 4 I/O.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};

use freqdehaze::checkpoint::{load_checkpoint, save_checkpoint};
use freqdehaze::config::load_config;
use freqdehaze::dataset::{index_dataset, load_dataset};
use freqdehaze::error::{Error, Result};
use freqdehaze::fsutil::{create_dir_all, read_bytes};
use freqdehaze::gradsuite::gradient_suite;
use freqdehaze::image_io::{list_images, load_image, save_image, Rgb8Image};
use freqdehaze::report::{
    write_dc_csv, write_eval_csv, write_hist2_csv, write_hist_csv, write_loss_csv,
    write_swap_csv, EvalRow, SwapRow,
};
use freqdehaze::synth::make_toy_dataset;
use freqdehaze::trainer::{infer_restored, restore_nets, train_stage1, train_stage2};
use freqdehaze_core::metrics::{
    below_fraction, dark_channel, histogram16, psnr, ssim, swap_experiment, DARK_LEVEL,
};
use freqdehaze_core::nn::clamp01;
use freqdehaze_core::spectral::swap_amplitude;
use freqdehaze_core::Tensor3;

#[derive(Parser)]
#[command(
    name = "freqdehaze",
    version,
    about = "Unpaired image dehazing in the frequency domain: toy data synthesis, \
             two-stage training, inference and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic toy hazy/clear dataset.
    Synth {
        /// Dataset root to create (hazy/, clear/, gt/, manifest.csv).
        #[arg(long)]
        out: PathBuf,
        /// Scenes per split; the tool renders twice this many in total.
        #[arg(long)]
        scenes: usize,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Rebuild one image from its own phase and another's amplitude.
    Swap {
        /// Image contributing phase (content).
        #[arg(long)]
        content: PathBuf,
        /// Image contributing the amplitude spectrum.
        #[arg(long)]
        donor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dark-channel statistics over a hazy/clear corpus, optionally with
    /// the amplitude-swapped synthesis as a third population.
    Dcstats {
        #[arg(long)]
        hazy: PathBuf,
        #[arg(long)]
        clear: PathBuf,
        /// Include the synthesized population (hazy content, clear
        /// amplitude) and the closeness verdict per pair.
        #[arg(long, default_value = "on")]
        synclear: OnOff,
        /// Output CSV; a histogram lands next to it as <stem>_hist.csv.
        #[arg(long)]
        out: PathBuf,
        /// Dark-channel window side (odd).
        #[arg(long, default_value_t = 15)]
        patch: usize,
    },
    /// Train one stage of the model.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the config.
        #[arg(long)]
        seed: u64,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 checkpoint (required for --stage 2).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Loss CSV path; defaults to the checkpoint path with extension
        /// loss.csv.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a stage-2 checkpoint over a directory of hazy images.
    Dehaze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// PSNR and SSIM of predictions against references with equal file names.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify every backward pass against finite differences (double
    /// precision); nonzero exit on any failure.
    Gradcheck,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { out, scenes, size, seed } => cmd_synth(&out, scenes, size, seed),
        Cmd::Swap { content, donor, out } => cmd_swap(&content, &donor, &out),
        Cmd::Dcstats { hazy, clear, synclear, out, patch } => {
            cmd_dcstats(&hazy, &clear, synclear, &out, patch)
        }
        Cmd::Train { stage, config, seed, out, init, log } => {
            cmd_train(stage, &config, seed, &out, init.as_deref(), log.as_deref())
        }
        Cmd::Dehaze { ckpt, input, out, seed } => cmd_dehaze(&ckpt, &input, &out, seed),
        Cmd::Eval { pred, reference, out } => cmd_eval(&pred, &reference, &out),
        Cmd::Gradcheck => cmd_gradcheck(),
    }
}

fn cmd_synth(out: &Path, scenes: usize, size: usize, seed: u64) -> Result<()> {
    println!(
        "# synth out={} scenes={scenes} size={size} seed={seed}",
        out.display()
    );
    make_toy_dataset(out, seed, scenes, size)?;
    let manifest = read_bytes(&out.join("manifest.csv"))?;
    print!("{}", String::from_utf8_lossy(&manifest));
    Ok(())
}

fn cmd_swap(content: &Path, donor: &Path, out: &Path) -> Result<()> {
    println!(
        "# swap content={} donor={} out={}",
        content.display(),
        donor.display(),
        out.display()
    );
    let content_t = load_image(content)?.to_tensor::<f64>();
    let donor_t = load_image(donor)?.to_tensor::<f64>();
    let swapped = clamp01(&swap_amplitude(&content_t, &donor_t)?);
    save_image(&Rgb8Image::from_tensor(&swapped)?, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn load_dir(dir: &Path) -> Result<(Vec<Tensor3<f32>>, Vec<String>)> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::data(format!("no images in {}", dir.display())));
    }
    let mut tensors = Vec::with_capacity(paths.len());
    let mut names = Vec::with_capacity(paths.len());
    for p in &paths {
        tensors.push(load_image(p)?.to_tensor::<f32>());
        names.push(
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    Ok((tensors, names))
}

fn cmd_dcstats(
    hazy_dir: &Path,
    clear_dir: &Path,
    synclear: OnOff,
    out: &Path,
    patch: usize,
) -> Result<()> {
    println!(
        "# dcstats hazy={} clear={} synclear={} out={} patch={patch}",
        hazy_dir.display(),
        clear_dir.display(),
        if synclear == OnOff::On { "on" } else { "off" },
        out.display()
    );
    let (hazy, names) = load_dir(hazy_dir)?;
    let (clear, _) = load_dir(clear_dir)?;
    if hazy.len() != clear.len() {
        return Err(Error::data(format!(
            "need equally many images, got {} hazy vs {} clear",
            hazy.len(),
            clear.len()
        )));
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dcstats".into());
    let hist_path = out.with_file_name(format!("{stem}_hist.csv"));

    match synclear {
        OnOff::On => {
            let report = swap_experiment(&hazy, &clear, patch)?;
            let rows: Vec<SwapRow> = (0..report.pairs())
                .map(|i| {
                    let (h, c, s) = (
                        report.hazy_mean_dc[i] as f64,
                        report.clear_mean_dc[i] as f64,
                        report.syn_mean_dc[i] as f64,
                    );
                    SwapRow {
                        name: names[i].clone(),
                        hazy_dc: h,
                        clear_dc: c,
                        syn_dc: s,
                        closer: if (s - c).abs() <= (h - c).abs() { "syn" } else { "hazy" },
                    }
                })
                .collect();
            write_swap_csv(out, &rows)?;
            write_hist_csv(&hist_path, &report.hazy_hist, &report.clear_hist, &report.syn_hist)?;
            println!(
                "pairs={} closeness_fraction={} below{}: hazy={} clear={} syn={}",
                report.pairs(),
                report.closeness_fraction,
                DARK_LEVEL,
                report.hazy_below,
                report.clear_below,
                report.syn_below
            );
        }
        OnOff::Off => {
            let mut rows = Vec::with_capacity(hazy.len());
            let (mut pool_h, mut pool_c) = (Vec::new(), Vec::new());
            for (i, (h, c)) in hazy.iter().zip(&clear).enumerate() {
                let dc_h = dark_channel(h, patch)?;
                let dc_c = dark_channel(c, patch)?;
                rows.push((names[i].clone(), dc_h.mean() as f64, dc_c.mean() as f64));
                pool_h.extend_from_slice(dc_h.as_slice());
                pool_c.extend_from_slice(dc_c.as_slice());
            }
            write_dc_csv(out, &rows)?;
            write_hist2_csv(&hist_path, &histogram16(&pool_h), &histogram16(&pool_c))?;
            println!(
                "pairs={} below{}: hazy={} clear={}",
                rows.len(),
                DARK_LEVEL,
                below_fraction(&pool_h, DARK_LEVEL),
                below_fraction(&pool_c, DARK_LEVEL)
            );
        }
    }
    println!("wrote {} and {}", out.display(), hist_path.display());
    Ok(())
}

fn cmd_train(
    stage: u8,
    config: &Path,
    seed: u64,
    out: &Path,
    init: Option<&Path>,
    log: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.stage = stage;
    cfg.seed = seed;
    cfg.validate()?;
    let init_ckpt = match (stage, init) {
        (2, None) => {
            return Err(Error::Usage {
                detail: "--stage 2 requires --init with a stage-1 checkpoint".into(),
            })
        }
        (2, Some(path)) => {
            let ckpt = load_checkpoint(path)?;
            let got = ckpt.stage()?;
            if got != 1 {
                return Err(Error::data(format!(
                    "--init checkpoint is stage {got}, expected a stage-1 checkpoint"
                )));
            }
            Some(ckpt)
        }
        _ => None,
    };
    println!("# train config={} out={}", config.display(), out.display());
    for line in cfg.resolved_text().lines() {
        println!("# {line}");
    }

    let data = load_dataset(&index_dataset(&cfg.data_root, seed)?)?;
    let result = match &init_ckpt {
        Some(ckpt) => train_stage2(&cfg, &data, ckpt),
        None => train_stage1(&cfg, &data),
    };
    match result {
        Ok(outcome) => {
            save_checkpoint(&outcome.checkpoint, out)?;
            let log_path = log
                .map(Path::to_path_buf)
                .unwrap_or_else(|| out.with_extension("loss.csv"));
            write_loss_csv(&log_path, &outcome.log)?;
            if let Some(last) = outcome.log.last() {
                println!(
                    "done: epochs={} steps/epoch={} final total={}",
                    cfg.epochs,
                    last.step + 1,
                    last.total
                );
            } else {
                println!("done: epochs=0 (checkpoint holds the initialization)");
            }
            println!("wrote {} and {}", out.display(), log_path.display());
            Ok(())
        }
        Err(Error::NumericAbort { epoch, step, last_good }) => {
            save_checkpoint(&last_good, out)?;
            Err(Error::Numeric {
                detail: format!(
                    "non-finite loss at epoch {epoch}, step {step}; \
                     last good checkpoint saved to {}",
                    out.display()
                ),
            })
        }
        Err(e) => Err(e),
    }
}

/// Applies `f` to every index in parallel, preserving order in the result.
fn parallel_map<T, F>(n: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1)
        .min(n.max(1));
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for w in 0..workers {
            let slots = &slots;
            let f = &f;
            scope.spawn(move || {
                for i in (w..n).step_by(workers) {
                    *slots[i].lock().unwrap() = Some(f(i));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

fn cmd_dehaze(ckpt_path: &Path, input: &Path, out: &Path, seed: u64) -> Result<()> {
    println!(
        "# dehaze ckpt={} in={} out={} seed={seed}",
        ckpt_path.display(),
        input.display(),
        out.display()
    );
    let ckpt = load_checkpoint(ckpt_path)?;
    let (cfg, nets) = restore_nets(&ckpt)?;
    let paths = list_images(input)?;
    if paths.is_empty() {
        return Err(Error::data(format!("no images in {}", input.display())));
    }
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(load_image(p)?.to_tensor::<f32>());
    }
    create_dir_all(out)?;
    let results = parallel_map(images.len(), |i| infer_restored(&cfg, &nets, &images[i], seed));
    for (path, result) in paths.iter().zip(results) {
        let restored = result?;
        let name = path.file_name().expect("listed files have names");
        save_image(&Rgb8Image::from_tensor(&restored)?, &out.join(name))?;
    }
    println!("wrote {} images to {}", paths.len(), out.display());
    Ok(())
}

fn cmd_eval(pred: &Path, reference: &Path, out: &Path) -> Result<()> {
    println!(
        "# eval pred={} ref={} out={}",
        pred.display(),
        reference.display(),
        out.display()
    );
    let pred_paths = list_images(pred)?;
    let ref_paths = list_images(reference)?;
    if pred_paths.is_empty() {
        return Err(Error::data(format!("no images in {}", pred.display())));
    }
    let file_names = |paths: &[PathBuf]| -> Vec<String> {
        paths
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect()
    };
    let names = file_names(&pred_paths);
    if names != file_names(&ref_paths) {
        return Err(Error::data(format!(
            "pred and ref hold different file sets ({} vs {} images); \
             evaluation pairs files by identical names",
            pred_paths.len(),
            ref_paths.len()
        )));
    }
    let scored = parallel_map(pred_paths.len(), |i| {
        let p = load_image(&pred_paths[i])?.to_tensor::<f64>();
        let r = load_image(&ref_paths[i])?.to_tensor::<f64>();
        let psnr_db = psnr(&p, &r, 1.0)?;
        let ssim_val = ssim(&p, &r, 1.0)?;
        Ok((psnr_db, ssim_val))
    });
    let mut rows = Vec::with_capacity(names.len());
    for (name, result) in names.into_iter().zip(scored) {
        let (psnr_db, ssim_val) = result?;
        rows.push(EvalRow { name, psnr: psnr_db, ssim: ssim_val });
    }
    write_eval_csv(out, &rows)?;
    let n = rows.len() as f64;
    println!(
        "pairs={} mean_psnr={} mean_ssim={}",
        rows.len(),
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n
    );
    Ok(())
}

fn cmd_gradcheck() -> Result<()> {
    println!("# gradcheck");
    let checks = gradient_suite()?;
    let mut failed = Vec::new();
    for check in &checks {
        println!(
            "{:<18} max_err {:>9.3e}  tol {:>7.0e}  {}",
            check.name,
            check.max_err,
            check.tol,
            if check.pass() { "ok" } else { "FAIL" }
        );
        if !check.pass() {
            failed.push(check.name);
        }
    }
    if failed.is_empty() {
        println!("all {} gradient checks passed", checks.len());
        Ok(())
    } else {
        Err(Error::Numeric {
            detail: format!("gradient checks failed: {}", failed.join(", ")),
        })
    }
}
