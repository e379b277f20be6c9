//! Command-line front end for the `combnet` crate.

pub mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{CommandFactory, Parser, ValueEnum};
use combnet::analysis::{lower_to_sparse, receptive_field, FlopReport};
use combnet::mask::MaskConfig;
use combnet::network::{build, load_checkpoint, Network};
use combnet::ops::{CombConvLayer, ConvMode};
use combnet::training::{
    evaluate, init_rng, load_cifar10_subset, train, TrainConfig, FINAL_CHECKPOINT,
};
use combnet::{Kernel4, RunConfig};
use rand_distr::{Distribution, Normal};

pub const DATA_ENV: &str = "COMBNET_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verb {
    Train,
    Eval,
    Flops,
    Rf,
    Lower,
    Verify,
}

#[derive(Debug, Parser)]
#[command(name = "combnet", about = "Comb convolution toolkit")]
pub struct Cli {
    pub verb: Verb,
    /// `key=value` overrides applied after the config file.
    pub overrides: Vec<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full protocol: whole dataset, 300 epochs.
    #[arg(long)]
    pub full: bool,
    /// CIFAR-10 binary directory (falls back to $COMBNET_DATA).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// eval: checkpoint to load (default OUT/checkpoint_final.bin).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// flops: report FLOPs (2 per MAC) instead of MACs.
    #[arg(long)]
    pub double: bool,
    /// rf: number of stacked comb layers.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// rf/lower: channels per layer (lower: output channels).
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    /// rf/lower: spatial input size.
    #[arg(long, default_value_t = 12)]
    pub size: usize,
    /// rf: output unit `p,q` (default: centre).
    #[arg(long)]
    pub pos: Option<String>,
    /// rf: output channel.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    /// lower: kernel size.
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// lower: padding (default kernel/2).
    #[arg(long)]
    pub pad: Option<usize>,
    /// lower: input channels.
    #[arg(long, default_value_t = 1)]
    pub in_channels: usize,
    #[arg(long, default_value_t = 1)]
    pub groups: usize,
    #[arg(long, default_value_t = 0)]
    pub phase: u8,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if cli.full {
        cfg.train = TrainConfig {
            seed: cfg.train.seed,
            ..TrainConfig::full()
        };
    }
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(cli: &Cli) -> anyhow::Result<PathBuf> {
    match &cli.data {
        Some(p) => Ok(p.clone()),
        None => match std::env::var_os(DATA_ENV) {
            Some(p) => Ok(PathBuf::from(p)),
            None => bail!("no dataset: pass --data DIR or set {DATA_ENV}"),
        },
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn fresh_network(cfg: &RunConfig) -> anyhow::Result<Network> {
    let mut net = build(&cfg.network)?;
    net.initialize(&mut init_rng(cfg.train.seed));
    Ok(net)
}

fn cmd_train(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_config(cli)?;
    let dir = data_dir(cli)?;
    let (train_set, test_set) =
        load_cifar10_subset(&dir, cfg.train.train_subset, cfg.train.test_subset)?;
    let mut net = fresh_network(&cfg)?;
    let run_dir = out_dir(cli);
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.txt"), cfg.to_text())?;
    let history = train(&mut net, &train_set, &test_set, &cfg.train, Some(&run_dir))?;
    if let Some(last) = history.last() {
        writeln!(
            out,
            "epochs {} train_loss {:.4} test_acc {:.4}",
            history.epochs.len(),
            last.train_loss,
            last.test_acc
        )?;
    }
    writeln!(out, "wrote {}", run_dir.display())?;
    Ok(0)
}

fn cmd_eval(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_config(cli)?;
    let ckpt = cli
        .checkpoint
        .clone()
        .unwrap_or_else(|| out_dir(cli).join(FINAL_CHECKPOINT));
    let mut net = build(&cfg.network)?;
    load_checkpoint(&mut net, &ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let (_, test_set) = load_cifar10_subset(&data_dir(cli)?, cfg.train.train_subset, cfg.train.test_subset)?;
    let acc = evaluate(&net, &test_set, cfg.train.batch_size)?;
    writeln!(out, "accuracy {acc:.4} ({} images)", test_set.len())?;
    Ok(0)
}

/// FLOP report of the configured network (both modes per row).
pub fn flop_report(cfg: &RunConfig) -> anyhow::Result<FlopReport> {
    Ok(build(&cfg.network)?.flop_report()?)
}

fn mega(v: u64) -> f64 {
    v as f64 / 1e6
}

fn cmd_flops(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_config(cli)?;
    let mut report = flop_report(&cfg)?;
    if cli.double {
        report = report.doubled();
    }
    let unit = if cli.double { "FLOPs" } else { "MACs" };
    writeln!(
        out,
        "{} depth {} width {}: {unit} per {:?} image",
        cfg.network.arch, cfg.network.depth, cfg.network.width, cfg.network.input_shape
    )?;
    writeln!(out, "{:<8} {:>14} {:>14} {:>8}", "layer", "standard", "comb", "ratio")?;
    for l in &report.per_layer {
        writeln!(
            out,
            "{:<8} {:>14} {:>14} {:>8.4}",
            l.name, l.macs_standard, l.macs_comb, l.ratio
        )?;
    }
    let t = report.total();
    writeln!(
        out,
        "total standard {:.2} M  comb {:.2} M  ratio {:.4}",
        mega(t.macs_standard),
        mega(t.macs_comb),
        t.ratio
    )?;
    if let Some(path) = &cli.out {
        fs::write(path, report.to_csv())?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(0)
}

fn parse_pos(s: &str) -> anyhow::Result<(usize, usize)> {
    let (p, q) = s
        .split_once(',')
        .with_context(|| format!("--pos expects p,q, got {s:?}"))?;
    Ok((p.trim().parse()?, q.trim().parse()?))
}

fn rf_stack(cli: &Cli, cfg: &RunConfig, mode: ConvMode) -> anyhow::Result<Vec<CombConvLayer>> {
    (0..cli.layers)
        .map(|i| {
            let mask = MaskConfig::new(3, 1, 1, cfg.network.interleave, (i % 2) as u8)?;
            Ok(CombConvLayer::new(cli.channels, cli.channels, 1, mask, mode)?
                .with_norm(cfg.network.norm))
        })
        .collect()
}

fn cmd_rf(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_config(cli)?;
    if cli.layers == 0 {
        bail!("--layers must be at least 1");
    }
    let shape = [cli.channels, cli.size, cli.size];
    let last = cli.layers - 1;
    let net = rf_stack(cli, &cfg, cfg.network.mode)?;
    let (p, q) = match &cli.pos {
        Some(s) => parse_pos(s)?,
        // centre, nudged left onto a convolution site
        None => {
            let c = cli.size / 2;
            if net[last].is_conv_site(c, c, cli.channel) {
                (c, c)
            } else {
                (c, c.saturating_sub(1))
            }
        }
    };
    let reference = rf_stack(cli, &cfg, ConvMode::Standard)?;
    let rf = receptive_field(&net, shape, last, cli.channel, p, q)?;
    let std_rf = receptive_field(&reference, shape, last, cli.channel, p, q)?;
    let site = if net[last].is_conv_site(p, q, cli.channel) {
        "conv"
    } else {
        "uniform"
    };
    writeln!(
        out,
        "unit (channel {}, {p}, {q}) of layer {last}, {site} site, {} mode",
        cli.channel, cfg.network.mode
    )?;
    let coords: Vec<String> = rf.input_coords.iter().map(|(r, c)| format!("({r},{c})")).collect();
    writeln!(out, "points {}: {}", rf.len(), coords.join(" "))?;
    match rf.bounding_box() {
        Some((r0, c0, r1, c1)) => writeln!(
            out,
            "bounding box rows {r0}..={r1} cols {c0}..={c1} ({}x{})",
            r1 - r0 + 1,
            c1 - c0 + 1
        )?,
        None => writeln!(out, "bounding box empty")?,
    }
    writeln!(
        out,
        "standard stack: {} points, {}",
        std_rf.len(),
        if std_rf.input_coords == rf.input_coords {
            "identical"
        } else {
            "different"
        }
    )?;
    Ok(0)
}

fn cmd_lower(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_config(cli)?;
    let pad = cli.pad.unwrap_or(cli.kernel / 2);
    let mask = MaskConfig::new(cli.kernel, cli.stride, pad, cfg.network.interleave, cli.phase)?;
    let cin_g = cli.in_channels / cli.groups.max(1);
    let k = cli.kernel;
    let normal = Normal::new(0.0, (2.0 / (k * k * cin_g.max(1)) as f64).sqrt())?;
    let mut rng = init_rng(cfg.train.seed);
    let weights: Vec<f64> = (0..cli.channels * cin_g * k * k)
        .map(|_| normal.sample(&mut rng))
        .collect();
    let layer = CombConvLayer::new(cli.in_channels, cli.channels, cli.groups, mask, cfg.network.mode)?
        .with_weights(Kernel4::from_vec(cli.channels, cin_g, k, weights)?)?
        .with_norm(cfg.network.norm);
    let m = lower_to_sparse(&layer, [cli.in_channels, cli.size, cli.size])?;
    let path = cli.out.clone().unwrap_or_else(|| PathBuf::from("lowered.txt"));
    m.write_triplets(std::io::BufWriter::new(fs::File::create(&path)?))?;
    writeln!(
        out,
        "{}x{} operator, {} nonzeros -> {}",
        m.rows,
        m.cols,
        m.nnz(),
        path.display()
    )?;
    Ok(0)
}

fn cmd_verify(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let seed = cli.seed.unwrap_or(0);
    for o in verify::run_all(seed) {
        let status = if o.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {}: {}", o.name, o.detail)?;
        if !o.passed {
            writeln!(out, "verification failed: {}", o.name)?;
            return Ok(1);
        }
    }
    writeln!(out, "all properties hold (seed {seed})")?;
    Ok(0)
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cli.verb {
        Verb::Train => cmd_train(cli, out),
        Verb::Eval => cmd_eval(cli, out),
        Verb::Flops => cmd_flops(cli, out),
        Verb::Rf => cmd_rf(cli, out),
        Verb::Lower => cmd_lower(cli, out),
        Verb::Verify => cmd_verify(cli, out),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit
/// status: 2 for usage errors, 1 for failures.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    if let Some(bad) = cli.overrides.iter().find(|o| {
        o.split_once('=')
            .is_none_or(|(k, _)| !combnet::config::KEYS.contains(&k.trim()))
    }) {
        let _ = writeln!(
            err,
            "error: override {bad:?} must be key=value with key one of: {}\n\n{}",
            combnet::config::KEYS.join(", "),
            Cli::command().render_usage()
        );
        return 2;
    }
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

/// Directory holding the checked-in run configs.
pub fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("combnet").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn verify_passes_on_default_seed() {
        let (code, out, _) = run_args(&["verify"]);
        assert_eq!(code, 0, "{out}");
        assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 5);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_args(&["frobnicate"]).0, 2);
        assert_eq!(run_args(&["flops", "--bogus"]).0, 2);
        let (code, _, err) = run_args(&["flops", "colour=red"]);
        assert_eq!(code, 2);
        assert!(err.contains("colour=red"));
        assert_eq!(run_args(&["flops", "depth"]).0, 2);
    }

    #[test]
    fn runtime_errors_exit_one() {
        let (code, _, err) = run_args(&["flops", "depth=12"]);
        assert_eq!(code, 1);
        assert!(err.contains("depth"));
        let (code, _, err) = run_args(&["train", "--data", "/nonexistent/cifar"]);
        assert_eq!(code, 1);
        assert!(err.contains("data_batch_1.bin"), "{err}");
    }

    #[test]
    fn flops_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flops.csv");
        let (code, out, _) = run_args(&["flops", "--out", path.to_str().unwrap(), "width=64"]);
        assert_eq!(code, 0);
        assert!(out.contains("total standard 64.29 M"));
        let report = FlopReport::from_csv(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(report.per_layer.len(), 9);
        let (_, doubled, _) = run_args(&["flops", "--double", "width=64"]);
        assert!(doubled.contains("total standard 128.58 M"));
    }

    #[test]
    fn rf_matches_standard_for_centre_unit() {
        let (code, out, _) = run_args(&["rf"]);
        assert_eq!(code, 0);
        assert!(out.contains("conv site"));
        assert!(out.contains("(5x5)"));
        assert!(out.contains("identical"));
        let (_, single, _) = run_args(&["rf", "--channels", "1", "interleave=false"]);
        assert!(single.contains("points 21"));
    }

    #[test]
    fn lower_reproduces_four_by_sixteen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let args = ["lower", "--channels", "1", "--size", "4", "--pad", "0", "interleave=false"];
        let mut all: Vec<&str> = args.to_vec();
        all.extend(["--out", path.to_str().unwrap()]);
        assert_eq!(run_args(&all).0, 0);
        let text = fs::read_to_string(&path).unwrap();
        let m = combnet::analysis::SparseMatrix::read_triplets(text.as_bytes()).unwrap();
        assert_eq!((m.rows, m.cols, m.nnz()), (4, 16, 20));
        assert_eq!(m.row(1).collect::<Vec<_>>(), vec![(6, 1.0)]);
        assert_eq!(m.row(2).collect::<Vec<_>>(), vec![(9, 1.0)]);
        // same seed, same file
        let path2 = dir.path().join("m2.txt");
        all.truncate(args.len());
        all.extend(["--out", path2.to_str().unwrap()]);
        run_args(&all);
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn checked_in_configs_parse() {
        let mut n = 0;
        for entry in fs::read_dir(configs_dir()).unwrap() {
            let path = entry.unwrap().path();
            let cfg = RunConfig::load(&path).unwrap();
            build(&cfg.network).unwrap();
            n += 1;
        }
        assert_eq!(n, 20);
    }
}
