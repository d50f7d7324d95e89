//! Command-line interface: compress tensors into the multiresolution
//! format, reconstruct, inspect archives, benchmark against a plain
//! TT/SVD baseline, and run the built-in demo experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mrtensor::cp::{cp_als, CpInit, CpOptions};
use mrtensor::decompose::{
    alternating_decompose, closedness_sequence, multiscale_test_tensor,
    multiscale_terms, prescribed_ms_approximation, restructured_decompose, coarse_grid_error_bound,
    DecomposeConfig, Init, TensorInput,
};
use mrtensor::dense::{DenseTensor, GridSpec};
use mrtensor::error::Error;
use mrtensor::io;
use mrtensor::ms::{BaseFormat, LevelRank, MsTensor, Payload, RankVector};
use mrtensor::rng::Rng;
use mrtensor::tt::{Truncation, TtRanks, TtTensor};

#[derive(Parser)]
#[command(
    name = "mrtensor",
    version,
    about = "Multiresolution tensor compression",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Tt,
    Cp,
}

impl From<FormatArg> for BaseFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tt => BaseFormat::Tt,
            FormatArg::Cp => BaseFormat::Cp,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress a tensor (MRT0 file or binary PGM image) into an MRTC archive.
    Compress(CompressArgs),
    /// Reconstruct the dense tensor stored in an MRTC archive.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print grid, ranks, parameter counts, compression ratio, and
    /// stability margin of an archive.
    Info {
        #[arg(long)]
        input: PathBuf,
    },
    /// Relative Frobenius error between an original tensor and an archive.
    Error {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        compressed: PathBuf,
    },
    /// Rank sweep producing a CSV with a TT/SVD baseline row per rank.
    Bench(BenchArgs),
    /// Built-in experiments on synthetic data.
    Demo {
        #[command(subcommand)]
        which: DemoCmd,
    },
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    base_format: FormatArg,
    /// Grid refinement factor between levels.
    #[arg(long)]
    bs: usize,
    /// Level count; defaults to the largest the shape divides.
    #[arg(long)]
    levels: Option<usize>,
    /// Comma-separated per-level ranks r0,...,rL (coarsest first).
    #[arg(long, value_delimiter = ',', conflicts_with = "rank")]
    ranks: Option<Vec<usize>>,
    /// Shorthand for the uniform rank vector (r, ..., r).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    max_iter: usize,
    /// Use the scale-by-scale restructured sweep order.
    #[arg(long)]
    restructured: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Center-crop image inputs to the largest grid-divisible size.
    #[arg(long, conflicts_with = "pad")]
    crop: bool,
    /// Zero-pad image inputs around the center to a grid-divisible size.
    #[arg(long)]
    pad: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    base_format: FormatArg,
    #[arg(long)]
    bs: usize,
    #[arg(long)]
    levels: Option<usize>,
    /// Inclusive uniform-rank sweep "a:b".
    #[arg(long)]
    rank_sweep: String,
    #[arg(long)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report zero in the seconds column, making the CSV byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Output CSV path.
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Multiple-length-scale example: rank-2 CP versus the
    /// multiresolution CP representation with rank vector (0,..,0,1,1,1).
    Multiscale {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        /// Emit CSV rows to stdout instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// The 2x2 sequence with exact rank-(1,1) representations whose
    /// limit leaves the format while the coarse component diverges.
    Closedness {
        /// Largest sequence index, e.g. 1e6 (powers of ten are shown).
        #[arg(long)]
        n_max: String,
    },
    /// Local convergence of the restructured sweep from a perturbed
    /// exact decomposition (n = 64 or 128 match the reference setup).
    Convergence {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: bool,
    },
    /// Coarse-grid approximation bound versus the measured error.
    Bound {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Compress(args) => compress(args),
        Cmd::Decompress { input, output } => {
            let ms = io::read_archive(&input)?;
            let dense = ms.reconstruct()?;
            io::write_tensor(&output, &dense)?;
            println!("wrote {} ({} elements)", output.display(), dense.len());
            Ok(())
        }
        Cmd::Info { input } => info(&input),
        Cmd::Error {
            original,
            compressed,
        } => {
            let t = io::read_tensor(&original)?;
            let ms = io::read_archive(&compressed)?;
            let recon = ms.reconstruct()?;
            let err = recon.sub(&t)?.frobenius_norm() / t.frobenius_norm().max(f64::MIN_POSITIVE);
            println!("relative_error: {err:.15e}");
            Ok(())
        }
        Cmd::Bench(args) => bench(args),
        Cmd::Demo { which } => demo(which),
    }
}

/// Tensor files are recognized by magic, images by the PGM signature.
fn load_input(path: &Path) -> Result<DenseTensor, Error> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"MRT0") {
        io::decode_tensor(&bytes)
    } else if bytes.starts_with(b"P5") {
        io::decode_pgm(&bytes)
    } else {
        Err(Error::MalformedHeader(format!(
            "{} is neither an MRT0 tensor nor a P5 image",
            path.display()
        )))
    }
}

fn rank_vector_for(
    levels: usize,
    ranks: &Option<Vec<usize>>,
    rank: &Option<usize>,
) -> Result<RankVector, Error> {
    match (ranks, rank) {
        (Some(rs), None) => {
            if rs.len() != levels + 1 {
                return Err(Error::RankVectorLength {
                    got: rs.len(),
                    expected: levels + 1,
                });
            }
            Ok(RankVector::from_scalars(rs))
        }
        (None, Some(r)) => Ok(RankVector::uniform(levels, *r)),
        _ => Err(Error::InvalidConfig(
            "pass exactly one of --ranks or --rank".into(),
        )),
    }
}

fn compress(args: CompressArgs) -> Result<(), Error> {
    let mut dense = load_input(&args.input)?;
    let levels = args
        .levels
        .unwrap_or_else(|| GridSpec::max_levels(dense.shape(), args.bs));
    if args.crop {
        let before = dense.shape().to_vec();
        dense = io::center_crop_divisible(&dense, args.bs, levels)?;
        if dense.shape() != before.as_slice() {
            println!("cropped {:?} -> {:?}", before, dense.shape());
        }
    } else if args.pad {
        let before = dense.shape().to_vec();
        dense = io::center_pad_divisible(&dense, args.bs, levels)?;
        if dense.shape() != before.as_slice() {
            println!("padded {:?} -> {:?}", before, dense.shape());
        }
    }
    let rank_vector = rank_vector_for(levels, &args.ranks, &args.rank)?;
    let mut cfg =
        DecomposeConfig::new(args.bs, args.base_format.into(), rank_vector, args.max_iter);
    cfg.levels = Some(levels);
    cfg.seed = args.seed;

    let start = Instant::now();
    let (ms, trace) = if args.restructured {
        restructured_decompose(TensorInput::Dense(&dense), &cfg)?
    } else {
        alternating_decompose(TensorInput::Dense(&dense), &cfg)?
    };
    let seconds = start.elapsed().as_secs_f64();

    io::write_archive(&args.output, &ms)?;
    let report = ms.storage();
    let residual = trace.residuals.last().copied().unwrap_or(f64::NAN);
    println!("wrote {}", args.output.display());
    println!("levels: {levels} (batch size {})", args.bs);
    println!(
        "relative_error: {:.6e}",
        residual / dense.frobenius_norm().max(f64::MIN_POSITIVE)
    );
    println!("parameters: {}", report.total_parameters);
    println!("compression_ratio: {:.4}", report.compression_ratio);
    println!("seconds: {seconds:.3}");
    for clip in &trace.rank_clips {
        println!("note: level {} rank clipped to {:?}", clip.level, clip.used);
    }
    Ok(())
}

fn rank_label(p: &Payload) -> String {
    match p {
        Payload::Tt(t) => match t.ranks() {
            TtRanks::Zero => "zero".to_string(),
            TtRanks::Chain(c) => format!(
                "tt({})",
                c.iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            ),
        },
        Payload::Cp(c) => {
            if c.is_zero() {
                "zero".to_string()
            } else {
                format!("cp({})", c.rank())
            }
        }
    }
}

fn info(path: &Path) -> Result<(), Error> {
    let ms = io::read_archive(path)?;
    let grid = ms.grid();
    let report = ms.storage();
    println!("base_shape: {:?}", grid.base_shape());
    println!("batch_size: {}", grid.batch_size());
    println!("levels: {}", grid.levels());
    println!("base_format: {}", ms.format().name());
    for (k, payload) in ms.levels().iter().enumerate() {
        println!(
            "level {k}: shape {:?} ranks {} parameters {}",
            grid.scale_shape(k),
            rank_label(payload),
            report.per_level[k]
        );
    }
    println!("total_parameters: {}", report.total_parameters);
    println!("dense_elements: {}", report.dense_elements);
    println!("compression_ratio: {:.4}", report.compression_ratio);
    println!("stability_margin: {:.4}", ms.stability_margin()?);
    Ok(())
}

fn parse_sweep(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::InvalidConfig(format!("rank sweep must be a:b, got {s}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a = a.parse::<usize>().map_err(|_| bad())?;
    let b = b.parse::<usize>().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a, b))
}

fn bench(args: BenchArgs) -> Result<(), Error> {
    let dense = load_input(&args.input)?;
    let levels = args
        .levels
        .unwrap_or_else(|| GridSpec::max_levels(dense.shape(), args.bs));
    let (lo, hi) = parse_sweep(&args.rank_sweep)?;
    let norm = dense.frobenius_norm().max(f64::MIN_POSITIVE);
    let dense_elements: usize = dense.shape().iter().product();

    let mut csv = String::from("method,rank,relative_error,compression_ratio,seconds\n");
    for r in lo..=hi {
        let mut cfg = DecomposeConfig::new(
            args.bs,
            args.base_format.into(),
            RankVector::uniform(levels, r),
            args.max_iter,
        );
        cfg.levels = Some(levels);
        cfg.seed = args.seed;
        let start = Instant::now();
        let (ms, _) = alternating_decompose(TensorInput::Dense(&dense), &cfg)?;
        let ms_seconds = if args.no_timing {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        };
        let ms_err = ms.reconstruct()?.sub(&dense)?.frobenius_norm() / norm;
        let ms_ratio = ms.storage().compression_ratio;
        csv.push_str(&format!(
            "ms,{r},{ms_err:.12e},{ms_ratio:.12e},{ms_seconds:.6}\n"
        ));

        // Baseline: plain TT-SVD at the same uniform rank (truncated
        // SVD when the input is a matrix).
        let (chain, _) = LevelRank::Uniform(r).tt_chain(dense.shape())?;
        let start = Instant::now();
        let tt = TtTensor::svd(&dense, &Truncation::Ranks(chain))?;
        let tt_seconds = if args.no_timing {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        };
        let tt_err = tt.to_dense()?.sub(&dense)?.frobenius_norm() / norm;
        let tt_ratio = dense_elements as f64 / tt.param_count().max(1) as f64;
        csv.push_str(&format!(
            "tt_svd,{r},{tt_err:.12e},{tt_ratio:.12e},{tt_seconds:.6}\n"
        ));
    }
    io::atomic_write(&args.csv, csv.as_bytes())?;
    println!("wrote {}", args.csv.display());
    Ok(())
}

fn demo(which: DemoCmd) -> Result<(), Error> {
    match which {
        DemoCmd::Multiscale { d, n, csv } => demo_multiscale(d, n, csv),
        DemoCmd::Closedness { n_max } => demo_closedness(&n_max),
        DemoCmd::Convergence { n, seed, csv } => demo_convergence(n, seed, csv),
        DemoCmd::Bound { d, n } => demo_bound(d, n),
    }
}

fn demo_multiscale(d: usize, n: usize, csv: bool) -> Result<(), Error> {
    let (t, _) = multiscale_test_tensor(n, d, 2)?;
    let norm = t.frobenius_norm();
    let levels = GridSpec::max_levels(t.shape(), 2);

    // Rank-2 canonical fit.
    let fit = cp_als(&t, 2, CpInit::Hosvd { seed: 0 }, CpOptions::default())?;
    let cp_err = fit.tensor.to_dense()?.sub(&t)?.frobenius_norm() / norm;
    let cp_params = fit.tensor.param_count();

    // Multiresolution canonical run, one iteration, ranks (0,..,0,1,1,1).
    let mut ranks = vec![0usize; levels + 1];
    for r in ranks.iter_mut().rev().take(3) {
        *r = 1;
    }
    let mut cfg = DecomposeConfig::new(2, BaseFormat::Cp, RankVector::from_scalars(&ranks), 1);
    cfg.levels = Some(levels);
    let (ms, _) = alternating_decompose(TensorInput::Dense(&t), &cfg)?;
    let ms_err = ms.reconstruct()?.sub(&t)?.frobenius_norm() / norm;
    let ms_params = ms.storage().total_parameters;

    if csv {
        println!("n,d,cp_rank2_error,cp_rank2_parameters,ms_error,ms_parameters");
        println!("{n},{d},{cp_err:.12e},{cp_params},{ms_err:.12e},{ms_params}");
    } else {
        println!("tensor: {d}-way, {n} points per mode, |T| = {norm:.4e}");
        println!("rank-2 canonical:        error {cp_err:.6e}  parameters {cp_params}");
        println!("multiresolution (1,1,1): error {ms_err:.6e}  parameters {ms_params}");
        println!("error ratio: {:.2}", cp_err / ms_err);
    }
    Ok(())
}

fn demo_closedness(n_max: &str) -> Result<(), Error> {
    let limit = n_max
        .parse::<f64>()
        .map_err(|_| Error::InvalidConfig(format!("bad --n-max {n_max}")))?;
    if limit < 10.0 || !limit.is_finite() {
        return Err(Error::InvalidConfig("need --n-max >= 10".into()));
    }
    let limit = limit as u64;
    println!(
        "{:>12} {:>16} {:>16} {:>16}",
        "n", "error_closed", "error_numeric", "coarse_norm"
    );
    let mut n = 10u64;
    loop {
        let inst = closedness_sequence(n)?;
        let numeric = inst
            .witness
            .reconstruct()?
            .sub(&inst.limit)?
            .frobenius_norm();
        println!(
            "{n:>12} {:>16.6e} {numeric:>16.6e} {:>16.6e}",
            inst.error_closed_form, inst.coarse_component_norm
        );
        match n.checked_mul(10) {
            Some(next) if next <= limit => n = next,
            _ => break,
        }
    }
    Ok(())
}

fn convergence_rank_vector(n: usize) -> Result<Vec<usize>, Error> {
    match n {
        64 => Ok(vec![0, 0, 0, 4, 0, 5, 5]),
        128 => Ok(vec![0, 0, 0, 8, 0, 10, 10, 10]),
        _ => {
            if n < 64 || !n.is_power_of_two() {
                return Err(Error::InvalidConfig(
                    "convergence demo needs n a power of two, at least 64".into(),
                ));
            }
            let l = n.trailing_zeros() as usize;
            let mut ranks = vec![0usize; l + 1];
            ranks[3] = 4;
            for r in ranks.iter_mut().skip(5) {
                *r = 5;
            }
            Ok(ranks)
        }
    }
}

fn demo_convergence(n: usize, seed: u64, csv: bool) -> Result<(), Error> {
    let ranks = convergence_rank_vector(n)?;
    let l = ranks.len() - 1;
    let grid = GridSpec::new(2, l, vec![n, n])?;
    let mut rng = Rng::new(seed);
    let target = MsTensor::random(
        &grid,
        BaseFormat::Tt,
        &RankVector::from_scalars(&ranks),
        &mut rng,
    )?;
    let t = target.reconstruct()?;

    // Perturb every nonzero level by 0.1 in Frobenius norm.
    let mut warm_levels = Vec::new();
    for (k, p) in target.levels().iter().enumerate() {
        if p.is_zero() {
            warm_levels.push(p.clone());
            continue;
        }
        let noise = DenseTensor::random_normal(grid.scale_shape(k), &mut rng)?;
        let noise = noise.scale(0.1 / noise.frobenius_norm());
        let noise_tt = TtTensor::svd(&noise, &Truncation::Tolerance(0.0))?;
        let Payload::Tt(pt) = p else { unreachable!() };
        warm_levels.push(Payload::Tt(pt.add(&noise_tt)?));
    }
    let warm = MsTensor::new(grid.clone(), BaseFormat::Tt, warm_levels)?;

    let mut cfg = DecomposeConfig::new(2, BaseFormat::Tt, RankVector::from_scalars(&ranks), 150);
    cfg.levels = Some(l);
    cfg.early_stop = None;
    cfg.init = Init::Warm(warm);
    cfg.reference = Some(target.clone());
    let (_, trace) = restructured_decompose(TensorInput::Dense(&t), &cfg)?;

    if csv {
        println!("level,iteration,error");
        for (k, stage) in trace.stages.iter().enumerate() {
            for (i, row) in stage.reference_errors.iter().enumerate() {
                println!("{k},{},{:.12e}", i + 1, row[k]);
            }
        }
    } else {
        println!("n = {n}, rank vector {ranks:?}, perturbation 0.1, seed {seed}");
        for (k, stage) in trace.stages.iter().enumerate() {
            if stage.reference_errors.is_empty() {
                continue;
            }
            let errs: Vec<f64> = stage.reference_errors.iter().map(|row| row[k]).collect();
            let first = errs[0];
            let last = *errs.last().unwrap();
            println!(
                "level {k}: error {first:.3e} -> {last:.3e} over {} iterations",
                errs.len()
            );
        }
    }
    Ok(())
}

fn demo_bound(d: usize, n: usize) -> Result<(), Error> {
    // Work with the separable terms directly; no dense tensor needed.
    let pi = std::f64::consts::PI;
    let terms = multiscale_terms(n, d, 2)?;
    let bound = coarse_grid_error_bound(&terms, 2, n, 0.0, pi)?;
    let ms = prescribed_ms_approximation(&terms, 2)?;

    // Exact error through canonical inner products.
    let mut exact = terms[0].to_cp(1.0)?;
    for term in &terms[1..] {
        exact = exact.add(&term.to_cp(1.0)?)?;
    }
    let l = ms.grid().levels();
    let mut approx = mrtensor::cp::CpTensor::zero(vec![n; d]);
    for (k, p) in ms.levels().iter().enumerate() {
        if p.is_zero() {
            continue;
        }
        let Payload::Cp(c) = p else { unreachable!() };
        approx = approx.add(&c.ext(l - k, 2)?)?;
    }
    let diff = exact.add(&approx.scale(-1.0))?;
    let err = diff.norm();
    let tnorm = exact.norm();

    println!("terms (increasing scale): omegas {:?}", [0.25, 0.5, 1.0]);
    for (k, delta) in bound.deltas.iter().enumerate() {
        println!(
            "term {}: delta {delta:.6e}  |T_k| {:.6e}",
            k + 1,
            bound.term_norms[k]
        );
    }
    println!("bound (sum delta_k |T_k|): {:.6e}", bound.total);
    println!("measured error:            {err:.6e}");
    println!(
        "relative: bound {:.6e} vs error {:.6e}",
        bound.total / tnorm,
        err / tnorm
    );
    let constant = bound.asymptotic_total * n as f64 / (pi * bound.term_norms[0]);
    println!("large-n constant (x pi/n x |T_1|): {constant:.4}");
    Ok(())
}
