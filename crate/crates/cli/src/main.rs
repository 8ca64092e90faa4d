//! `labelfuse`: desk-scale label-fusion experiments.
//!
//! Exit codes: 0 success, 1 usage or validation failure, 2 numerical
//! failure (training divergence, failed gradient check).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use labelfuse::fusion::{count_attention_macs, merge, Exec, LabelBinding, MergerConfig, MergerParams, Variant};
use labelfuse::gradcheck::{check_case, param_group, preset, GradCheckConfig};
use labelfuse::labels::{apply_masks, generate_sparse_masks, random_label_set, synth_scene, InstanceMap};
use labelfuse::manifest::{load_label_set, save_label_set};
use labelfuse::pca::pca_project_3;
use labelfuse::ppm::write_ppm;
use labelfuse::store::{load_params_dir, save_params_dir};
use labelfuse::train::{train_toy, TrainConfig, TrainMode};
use labelfuse::{tlt, ConceptTensor};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

/// Failures that map to exit code 2.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

#[derive(Parser)]
#[command(name = "labelfuse", version, about = "Pixel-wise label fusion experiments")]
#[command(after_help = "Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads for pixel-parallel merges (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge a label manifest into a concept tensor.
    Merge(MergeArgs),
    /// Drop whole regions of each label at random.
    Sparsify(SparsifyArgs),
    /// Check tape gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train the toy merger and heads on a synthetic scene.
    TrainToy(TrainArgs),
    /// Time TLAM and verify the attention MAC counter.
    Bench(BenchArgs),
    /// Project a concept tensor to RGB with PCA.
    Visualize(VisualizeArgs),
    /// Write a synthetic scene as a manifest, instance map and target.
    Synth(SynthArgs),
    /// Write freshly initialized merger parameters for a manifest.
    InitParams(InitArgs),
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Parameter directory; not used by the naive merger.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value = "tlam")]
    variant: Variant,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SparsifyArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// u8 TLT1 region map.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    sparsity: f64,
    #[arg(long)]
    out_manifest: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// small or full.
    #[arg(long, default_value = "small")]
    preset: String,
    /// Scale analytic gradients by this factor (negative control).
    #[arg(long, hide = true, default_value_t = 1.0)]
    corrupt_gradient: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "16x16")]
    size: String,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    /// l2 or adv.
    #[arg(long, default_value = "l2")]
    mode: TrainMode,
    /// Merger and generator step size (default depends on the mode).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long)]
    out: PathBuf,
    /// Final parameters (default: `<out>.params/`).
    #[arg(long)]
    params_out: Option<PathBuf>,
    /// PCA image of the final concept tensor (default: `<out>.ppm`).
    #[arg(long)]
    ppm: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    labels: usize,
    #[arg(long, default_value = "64x64")]
    size: String,
    #[arg(long, default_value_t = 96)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 3)]
    heads: usize,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

#[derive(Args)]
struct VisualizeArgs {
    #[arg(long)]
    concept: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the PCA basis to this directory.
    #[arg(long)]
    basis_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "16x16")]
    size: String,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    /// Receives manifest.json, instances.tlt and target.tlt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "tlam")]
    variant: Variant,
    #[arg(long, default_value_t = 96)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 3)]
    heads: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("size `{s}` is not of the form HxW"))?;
    let h = h.trim().parse().with_context(|| format!("bad height in `{s}`"))?;
    let w = w.trim().parse().with_context(|| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{} does not exist or is not a file", path.display());
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            bail!("output directory {} does not exist", p.display())
        }
        _ => Ok(()),
    }
}

fn exec(threads: Option<usize>) -> Exec {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Exec::with_threads(n.max(1))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_merge(a: &MergeArgs, exec: Exec) -> Result<()> {
    require_file(&a.manifest)?;
    require_parent(&a.out)?;
    let set = load_label_set(&a.manifest)?;
    let params = match (a.variant, &a.params) {
        (Variant::Naive, _) => MergerParams::init(
            MergerConfig { variant: Variant::Naive, ..MergerConfig::default() },
            LabelBinding::from_set(&set),
            0,
        )?,
        (_, None) => bail!("--params is required for the {} merger", a.variant),
        (v, Some(dir)) => {
            let p = load_params_dir(dir)?;
            if p.config.variant != v {
                bail!("{} holds {} parameters, not {}", dir.display(), p.config.variant, v);
            }
            p
        }
    };
    let merged = merge(&set, &params, exec)?;
    tlt::save(merged.concept.tensor(), &a.out)?;
    let dims = merged.concept.tensor().dims().to_vec();
    println!("wrote {} {:?}", a.out.display(), dims);
    println!("attention MACs: {}", merged.attention_macs);
    Ok(())
}

fn cmd_sparsify(a: &SparsifyArgs, seed: u64) -> Result<()> {
    require_file(&a.manifest)?;
    require_file(&a.instances)?;
    require_parent(&a.out_manifest)?;
    let set = load_label_set(&a.manifest)?;
    let inst = InstanceMap::from_tensor(&tlt::load(&a.instances)?)?;
    let masks = generate_sparse_masks(&inst, &set, a.sparsity, seed)?;
    let out = apply_masks(&set, &masks)?;
    save_label_set(&out, &a.out_manifest)?;
    println!(
        "wrote {} (absent fraction {:.4})",
        a.out_manifest.display(),
        masks.absent_fraction()
    );
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64) -> Result<()> {
    let cases = preset(&a.preset)?;
    let cfg = GradCheckConfig {
        seed,
        corrupt_scale: a.corrupt_gradient,
        ..GradCheckConfig::default()
    };
    let mut all_pass = true;
    let mut groups = std::collections::BTreeMap::<String, f64>::new();
    for (i, case) in cases.iter().enumerate() {
        let report = check_case(case, seed.wrapping_add(i as u64), &cfg)?;
        println!(
            "case {i}: {} N={} d={} l={} h={} {}x{}  checked {:>4}  max rel err {:.3e}  {}",
            case.variant,
            case.labels,
            case.width,
            case.depth,
            case.heads,
            case.size,
            case.size,
            report.checked,
            report.max_rel_err,
            if report.passed() { "ok" } else { "FAIL" }
        );
        all_pass &= report.passed();
        for (g, e) in report.by_group(param_group) {
            let slot = groups.entry(g).or_insert(0.0);
            *slot = slot.max(e);
        }
    }
    println!("\n{:<8} {:>12}", "group", "max rel err");
    for (g, e) in &groups {
        println!("{g:<8} {e:>12.3e}");
    }
    if !all_pass {
        return Err(NumericalFailure(format!("gradient check failed at tol {:e}", cfg.tol)).into());
    }
    println!("all {} cases within tol {:e}", cases.len(), cfg.tol);
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: u64, exec: Exec) -> Result<()> {
    require_parent(&a.out)?;
    let (height, width) = parse_size(&a.size)?;
    let defaults = TrainConfig::for_mode(a.mode);
    let cfg = TrainConfig {
        height,
        width,
        regions: a.regions,
        seed,
        iters: a.iters,
        sparsity: a.sparsity,
        d: a.d,
        depth: a.blocks,
        heads: a.heads,
        lr: a.lr.unwrap_or(defaults.lr),
        ..defaults
    };
    let outcome = train_toy(&cfg, exec)?;
    let report = &outcome.report;
    fs::write(&a.out, report.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    if let Some(f) = &report.failure {
        return Err(NumericalFailure(format!("training diverged at iteration {} (loss {})", f.iteration, f.loss)).into());
    }
    if let (Some(first), Some(last)) = (report.loss.first(), report.loss.last()) {
        println!("loss {first:.6} -> {last:.6} over {} iterations", report.loss.len());
    }
    for (k, v) in &report.eval {
        println!("eval {k}: {v:.6}");
    }

    let params_dir = a.params_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".params"));
    save_params_dir(&params_dir, &outcome.merger, Some(&outcome.heads.to_store()))?;
    println!("wrote {}", params_dir.display());
    let ppm = a.ppm.clone().unwrap_or_else(|| with_suffix(&a.out, ".ppm"));
    let (_, img) = pca_project_3(&outcome.concept)?;
    let file = fs::File::create(&ppm).with_context(|| format!("creating {}", ppm.display()))?;
    write_ppm(&img, std::io::BufWriter::new(file))?;
    println!("wrote {}", ppm.display());
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cmd_bench(a: &BenchArgs, seed: u64, exec: Exec) -> Result<()> {
    let (h, w) = parse_size(&a.size)?;
    if a.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let config = MergerConfig {
        variant: Variant::Tlam,
        width: a.d,
        depth: a.blocks,
        heads: a.heads,
    };
    let run = |n: usize, h: usize, w: usize| -> Result<(u64, f64)> {
        let set = random_label_set(n, h, w, 0.0, seed)?;
        let p = MergerParams::init(config, LabelBinding::from_set(&set), seed)?;
        let start = Instant::now();
        let merged = merge(&set, &p, exec)?;
        Ok((merged.attention_macs, start.elapsed().as_secs_f64()))
    };

    let mut times = Vec::with_capacity(a.repeat);
    let mut macs = 0;
    for _ in 0..a.repeat {
        let (m, t) = run(a.labels, h, w)?;
        macs = m;
        times.push(t);
    }
    let expected = count_attention_macs(a.labels, a.d, a.heads, a.blocks, h * w);
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let med = median(&mut times);
    let pixels = (h * w) as f64;
    println!("TLAM N={} {}x{} d={} l={} h={}", a.labels, h, w, a.d, a.blocks, a.heads);
    println!("time      min {:.4}s  median {:.4}s  ({} runs)", min, med, a.repeat);
    println!("pixels/s  {:.0}", pixels / med);
    println!("MACs      {macs}  (formula {expected})");
    println!("MACs/s    {:.3e}", macs as f64 / med);
    if macs != expected {
        return Err(NumericalFailure(format!("MAC counter {macs} differs from formula {expected}")).into());
    }
    let (macs_2n, _) = run(2 * a.labels, h, w)?;
    let (macs_2hw, _) = run(a.labels, 2 * h, w)?;
    println!("ratio 2N/N    {}", macs_2n as f64 / macs as f64);
    println!("ratio 2HW/HW  {}", macs_2hw as f64 / macs as f64);
    Ok(())
}

fn cmd_visualize(a: &VisualizeArgs) -> Result<()> {
    require_file(&a.concept)?;
    require_parent(&a.out)?;
    let z = ConceptTensor::new(tlt::load(&a.concept)?.cast(labelfuse::DType::F64))?;
    let (basis, img) = pca_project_3(&z)?;
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let bytes = write_ppm(&img, std::io::BufWriter::new(file))?;
    println!("wrote {} ({bytes} bytes)", a.out.display());
    let total: f64 = basis.spectrum.iter().sum();
    println!(
        "explained variance {:.4?} of {:.4}",
        basis.explained, total
    );
    if let Some(dir) = &a.basis_out {
        basis.save(dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let (h, w) = parse_size(&a.size)?;
    let scene = synth_scene(h, w, a.regions, seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    save_label_set(&scene.labels, a.out_dir.join("manifest.json"))?;
    tlt::save(&scene.instances.to_tensor()?, a.out_dir.join("instances.tlt"))?;
    tlt::save(&scene.target, a.out_dir.join("target.tlt"))?;
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn cmd_init(a: &InitArgs, seed: u64) -> Result<()> {
    require_file(&a.manifest)?;
    let set = load_label_set(&a.manifest)?;
    let config = MergerConfig {
        variant: a.variant,
        width: a.d,
        depth: a.blocks,
        heads: a.heads,
    };
    let p = MergerParams::init(config, LabelBinding::from_set(&set), seed)?;
    save_params_dir(&a.out, &p, None)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let exec = exec(cli.threads);
    match &cli.command {
        Command::Merge(a) => cmd_merge(a, exec),
        Command::Sparsify(a) => cmd_sparsify(a, cli.seed),
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.seed),
        Command::TrainToy(a) => cmd_train(a, cli.seed, exec),
        Command::Bench(a) => cmd_bench(a, cli.seed, exec),
        Command::Visualize(a) => cmd_visualize(a),
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::InitParams(a) => cmd_init(a, cli.seed),
    }
}

/// The error chain joined with `: `, skipping causes already quoted by an
/// outer message.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            let numerical = e.downcast_ref::<NumericalFailure>().is_some()
                || matches!(e.downcast_ref::<labelfuse::Error>(), Some(labelfuse::Error::Diverged { .. }));
            ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
