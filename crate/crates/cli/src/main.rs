//! `edms`: dataset generation, training, coding and evaluation.

mod io;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use edms_core::codec::QuantSpec;
use edms_core::container::Container;
use edms_core::nets::{infer_config, init_weights, NetConfig, NetName};
use edms_core::pipeline::{self, EncodeOptions};
use edms_core::train::{self, Stage, TrainConfig};
use edms_core::{Error, WeightSet};

use report::{RdPoint, Row, Variant, RD_HEADER, ROW_HEADER};

const EXIT_USAGE: u8 = 1;
const EXIT_FORMAT: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "edms",
    version,
    about = "Layered image codec with matched semantic segmentation"
)]
struct Cli {
    /// Worker threads for eval and rd-curve (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Widths {
    Toy,
    Reference,
}

impl Widths {
    fn config(self, classes: usize) -> NetConfig {
        match self {
            Widths::Toy => NetConfig::toy(classes),
            Widths::Reference => NetConfig::reference(classes),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Segmenter,
    Base,
    Smapnet,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Segmenter => Stage::Segmenter,
            StageArg::Base => Stage::Base,
            StageArg::Smapnet => Stage::SMapNet,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variants {
    With,
    Without,
    Both,
}

impl Variants {
    fn list(self) -> Vec<Variant> {
        match self {
            Variants::With => vec![Variant::WithEnhancement],
            Variants::Without => vec![Variant::WithoutEnhancement],
            Variants::Both => vec![Variant::WithEnhancement, Variant::WithoutEnhancement],
        }
    }
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Directory of NNNN.ppm images.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Comma-separated quantizer steps.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    q_list: Vec<u16>,
    #[arg(long, value_enum, default_value = "both")]
    variants: Variants,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a seeded synthetic dataset as NNNN.ppm / NNNN.pgm pairs.
    GenData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write seeded untrained weights for all four networks.
    InitWeights {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "toy")]
        config: Widths,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage; stages run in the order segmenter, base, smapnet.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f32,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Previously trained stages; required for base and smapnet.
        #[arg(long)]
        weights_in: Option<PathBuf>,
        #[arg(long)]
        weights_out: PathBuf,
        /// Network widths when no input weights fix them.
        #[arg(long, value_enum, default_value = "toy")]
        config: Widths,
        /// Class count when no input weights fix it.
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Loss log (default: next to the output weights).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Compress a PPM image into an EDMS container.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 1)]
        q: u16,
        #[arg(long)]
        out: PathBuf,
        /// Feed the raw segment to FineNet (ablation mode).
        #[arg(long)]
        no_enhance: bool,
        #[arg(long)]
        embed_synth_hash: bool,
    },
    /// Reconstruct a PPM image from an EDMS container.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the decoder synthesis and compare it with the embedded hash.
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Per-image encode/decode results as CSV.
    Eval(EvalArgs),
    /// Per-(variant, q) means as CSV.
    RdCurve(EvalArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::SynthesisMismatch { .. }) => EXIT_MISMATCH,
        Some(
            Error::Format { .. }
            | Error::Truncated
            | Error::DigestMismatch { .. }
            | Error::MissingWeight(_)
            | Error::Io(_),
        ) => EXIT_FORMAT,
        Some(_) => EXIT_USAGE,
        None if e.downcast_ref::<std::io::Error>().is_some() => EXIT_FORMAT,
        None => EXIT_USAGE,
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::GenData {
            seed,
            count,
            size,
            classes,
            out,
        } => {
            let data = train::gen_dataset(seed, count, size, classes)?;
            train::write_dataset(&out, &data)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::InitWeights {
            seed,
            config,
            classes,
            out,
        } => {
            let w = init_weights(&config.config(classes), seed)?;
            io::write_weights(&out, &w)?;
            println!("{}", w.digest_hex());
        }
        Command::Train {
            stage,
            data,
            epochs,
            lr,
            batch,
            seed,
            weights_in,
            weights_out,
            config,
            classes,
            loss_csv,
        } => {
            let stage = Stage::from(stage);
            let prior = weights_in.as_deref().map(io::read_weights).transpose()?;
            let w = cmd_train(
                stage,
                &data,
                epochs,
                lr,
                batch,
                seed,
                prior,
                config,
                classes,
                &weights_out,
                loss_csv,
            )?;
            println!("{}", w.digest_hex());
        }
        Command::Encode {
            input,
            weights,
            q,
            out,
            no_enhance,
            embed_synth_hash,
        } => {
            let img = io::read_image(&input)?;
            let w = io::read_weights(&weights)?;
            let mut opts = EncodeOptions::new(QuantSpec::new(q)?);
            opts.enhance = !no_enhance;
            opts.embed_synth_hash = embed_synth_hash;
            let start = Instant::now();
            let enc = pipeline::encode(&img, &w, opts)?;
            let enc_s = start.elapsed().as_secs_f64();
            io::write_bytes(&out, &enc.bytes)?;
            let row = Row {
                image: stem(&input),
                variant: Some(if no_enhance {
                    Variant::WithoutEnhancement
                } else {
                    Variant::WithEnhancement
                }),
                q,
                bpp: Some(enc.stats.bpp),
                psnr_db: enc.stats.psnr_db,
                ms_ssim: enc.stats.ms_ssim,
                enc_s: Some(enc_s),
                dec_s: None,
                synth_hash8: Some(enc.stats.synth_hash8()),
            };
            println!("{ROW_HEADER}\n{}", row.csv());
        }
        Command::Decode {
            input,
            weights,
            out,
        } => {
            let bytes = std::fs::read(&input)
                .with_context(|| format!("cannot read {}", input.display()))?;
            let w = io::read_weights(&weights)?;
            let start = Instant::now();
            let (img, stats) = pipeline::decode(&bytes, &w)?;
            let dec_s = start.elapsed().as_secs_f64();
            io::write_image(&out, &img)?;
            let c = Container::parse(&bytes)?;
            let row = Row {
                image: stem(&input),
                variant: Some(
                    if c.flags.contains(edms_core::container::Flags::NO_ENHANCE) {
                        Variant::WithoutEnhancement
                    } else {
                        Variant::WithEnhancement
                    },
                ),
                q: c.q.step(),
                bpp: Some(stats.bpp),
                dec_s: Some(dec_s),
                synth_hash8: Some(stats.synth_hash8()),
                ..Row::default()
            };
            println!("{ROW_HEADER}\n{}", row.csv());
        }
        Command::Verify { input, weights } => {
            let bytes = std::fs::read(&input)
                .with_context(|| format!("cannot read {}", input.display()))?;
            let w = io::read_weights(&weights)?;
            let r = pipeline::verify_matched(&bytes, &w)?;
            let actual = r
                .actual
                .map_or_else(|| "none".to_string(), |h| edms_core::weights::hex(&h));
            println!("{}", if r.matched { "match" } else { "mismatch" });
            println!(
                "expected {} actual {actual}",
                edms_core::weights::hex(&r.expected)
            );
            if let Some(d) = &r.detail {
                println!("detail {d}");
            }
            println!(
                "bytes header {} compact {} residual {} hash {} total {} bpp {:.6}",
                r.header_bytes,
                r.compact_bytes,
                r.residual_bytes,
                r.hash_bytes,
                r.total_bytes,
                r.bpp
            );
            if !r.matched {
                return Ok(EXIT_MISMATCH);
            }
        }
        Command::Eval(args) => {
            let (rows, failed) = evaluate(&args)?;
            io::write_atomic(&args.csv, |w| {
                report::write_lines(w, ROW_HEADER, rows.iter().map(Row::csv))
            })?;
            if failed > 0 {
                eprintln!("{failed} encode/decode runs failed");
                return Ok(EXIT_USAGE);
            }
        }
        Command::RdCurve(args) => {
            let (rows, failed) = evaluate(&args)?;
            let mut points = Vec::new();
            for v in args.variants.list() {
                let mut qs = args.q_list.clone();
                qs.sort_unstable();
                qs.dedup();
                for q in qs {
                    let group: Vec<&Row> = rows
                        .iter()
                        .filter(|r| r.variant == Some(v) && r.q == q)
                        .collect();
                    points.extend(RdPoint::from_rows(v, q, &group));
                }
            }
            io::write_atomic(&args.csv, |w| {
                report::write_lines(w, RD_HEADER, points.iter().map(RdPoint::csv))
            })?;
            if failed > 0 {
                eprintln!("{failed} encode/decode runs failed");
                return Ok(EXIT_USAGE);
            }
        }
    }
    Ok(0)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    stage: Stage,
    data_dir: &Path,
    epochs: usize,
    lr: f32,
    batch: usize,
    seed: u64,
    prior: Option<WeightSet>,
    widths: Widths,
    classes: usize,
    weights_out: &Path,
    loss_csv: Option<PathBuf>,
) -> Result<WeightSet> {
    // Enforce segmenter -> base -> smapnet.
    let needed: &[NetName] = match stage {
        Stage::Segmenter => &[],
        Stage::Base => &[NetName::Segmenter],
        Stage::SMapNet => &[NetName::CompNet, NetName::FineNet, NetName::Segmenter],
    };
    let prior = prior.unwrap_or_else(WeightSet::empty);
    let missing: Vec<&str> = needed
        .iter()
        .filter(|n| !prior.contains_prefix(n.prefix()))
        .map(|n| n.prefix())
        .collect();
    if !missing.is_empty() {
        bail!(
            "stage {stage} needs trained {} in --weights-in",
            missing.join(", ")
        );
    }
    let data = train::read_dataset(data_dir)?;
    let Some(first) = data.first() else {
        bail!("no images in {}", data_dir.display());
    };
    let net = if prior.is_empty() {
        widths.config(classes)
    } else {
        let mut n = infer_config(&prior)?;
        let fallback = widths.config(classes);
        if n.base == 0 {
            n.base = fallback.base;
        }
        if n.smap_width == 0 {
            n.smap_width = fallback.smap_width;
        }
        if n.classes == 0 {
            n.classes = fallback.classes;
        }
        n
    };
    let mut cfg = TrainConfig::new(stage, net);
    cfg.epochs = epochs;
    cfg.lr = lr;
    cfg.batch = batch;
    cfg.seed = seed;
    cfg.size = first.image.width();
    let out = match stage {
        Stage::Segmenter => train::train_segmenter(&cfg, &data, None)?,
        Stage::Base => train::train_base(&cfg, &data, None)?,
        Stage::SMapNet => train::train_smapnet(&cfg, &data, &prior, None)?,
    };
    let merged = prior.merged(&out.weights)?;
    io::write_weights(weights_out, &merged)?;
    let log_path = loss_csv.unwrap_or_else(|| weights_out.with_extension("loss.csv"));
    io::write_atomic(&log_path, |w| Ok(train::write_loss_csv(w, &out.log)?))?;
    Ok(merged)
}

/// Encodes and decodes every (image, q, variant) job; rows come back
/// sorted by (image, q, variant) whatever the scheduling.
fn evaluate(args: &EvalArgs) -> Result<(Vec<Row>, usize)> {
    let w = io::read_weights(&args.weights)?;
    pipeline::check_weights(&w)?;
    let paths = train::list_images(&args.data)?;
    let mut qs = Vec::with_capacity(args.q_list.len());
    for &q in &args.q_list {
        qs.push(QuantSpec::new(q)?);
    }
    let mut jobs = Vec::new();
    for p in &paths {
        for &q in &qs {
            for v in args.variants.list() {
                jobs.push((p.clone(), q, v));
            }
        }
    }
    let mut rows: Vec<(Row, bool)> = jobs
        .par_iter()
        .map(|(path, q, v)| {
            let mut row = Row {
                image: stem(path),
                variant: Some(*v),
                q: q.step(),
                ..Row::default()
            };
            match eval_one(path, &w, *q, *v, &mut row) {
                Ok(()) => (row, true),
                Err(e) => {
                    eprintln!("{} q={} {}: {e:#}", path.display(), q.step(), v.name());
                    (row, false)
                }
            }
        })
        .collect();
    rows.sort_by(|(a, _), (b, _)| (&a.image, a.q, a.variant).cmp(&(&b.image, b.q, b.variant)));
    let failed = rows.iter().filter(|(_, ok)| !ok).count();
    Ok((rows.into_iter().map(|(r, _)| r).collect(), failed))
}

fn eval_one(path: &Path, w: &WeightSet, q: QuantSpec, v: Variant, row: &mut Row) -> Result<()> {
    let img = io::read_image(path)?;
    let mut opts = EncodeOptions::new(q);
    opts.enhance = v.enhance();
    let start = Instant::now();
    let enc = pipeline::encode(&img, w, opts)?;
    let enc_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (dec, stats) = pipeline::decode(&enc.bytes, w)?;
    let dec_s = start.elapsed().as_secs_f64();
    if stats.synth_hash != enc.stats.synth_hash {
        return Err(Error::SynthesisMismatch {
            expected: enc.stats.synth_hash8(),
            actual: stats.synth_hash8(),
        }
        .into());
    }
    row.bpp = Some(enc.stats.bpp);
    row.psnr_db = Some(edms_core::metrics::psnr(&img, &dec)?);
    row.ms_ssim = edms_core::metrics::ms_ssim(&img, &dec, &Default::default()).ok();
    row.enc_s = Some(enc_s);
    row.dec_s = Some(dec_s);
    row.synth_hash8 = Some(stats.synth_hash8());
    Ok(())
}
