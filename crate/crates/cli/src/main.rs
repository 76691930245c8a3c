// SPDX-License-Identifier: Apache-2.0

//! `iostack-sim`: generate workloads, simulate stacks, analyse traces and
//! compare the filesystem path against an object drive.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use iostack::analysis::{
    build_heatmap, compute_cdf, detect_chains, detect_chains_completion_order, layer_breakdown, per_tag,
    ChainStats, Filter, Heatmap, LayerBreakdown, PerTag, SizeCdf,
};
use iostack::blkparse::parse_blkparse_text;
use iostack::config::SimConfig;
use iostack::device::DeviceRegistry;
use iostack::replay::{replay, ReplayOptions};
use iostack::run::{compare, run, ComparisonReport, RunResult, RunSpec};
use iostack::stack::StackRegistry;
use iostack::study::calibrate;
use iostack::trace::{parse_trace, IoTag, Op, Trace};
use iostack::workload::{emit_ops, generate_workload};

#[derive(Parser, Debug)]
#[command(name = "iostack-sim", version, about = "Object-store IO stack simulator")]
struct Cli {
    /// INI config file; defaults to $IOSTACK_SIM_CONFIG, then built-in values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the object-level op stream.
    Generate(WorkloadArgs),
    /// Run one workload through one stack and device.
    Simulate(SimArgs),
    /// Analyse an existing native or blkparse trace.
    Analyze(AnalyzeArgs),
    /// Compare a filesystem run with an object-drive run.
    Compare(CompareArgs),
    /// Report which calibration targets the current constants hit.
    Calibrate,
    /// Show the effective configuration.
    Config(ConfigArgs),
}

#[derive(Args, Debug, Default)]
struct WorkloadArgs {
    /// w-o, r-o, r-w or enum.
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    objects: Option<u64>,
    #[arg(long)]
    object_size: Option<u64>,
    #[arg(long)]
    threads: Option<u32>,
    /// uniform, zipfian or zipfian:THETA.
    #[arg(long)]
    distribution: Option<String>,
    #[arg(long)]
    osd: Option<u32>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// raw-block, os-fs, os-fs:ag-extent, os-fs:simple-extent or object-drive.
    #[arg(long)]
    stack: Option<String>,
    /// Filesystem profile for an os-fs stack.
    #[arg(long)]
    fs: Option<String>,
    #[arg(long)]
    device: Option<String>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Native trace CSV.
    #[arg(long, conflicts_with = "blkparse", required_unless_present = "blkparse")]
    trace: Option<PathBuf>,
    /// blkparse text output.
    #[arg(long)]
    blkparse: Option<PathBuf>,
    /// Device capacity in sectors for blkparse input.
    #[arg(long, requires = "blkparse")]
    capacity: Option<u64>,
    /// Per-line tag overrides for blkparse input.
    #[arg(long, requires = "blkparse")]
    tags: Option<PathBuf>,
    /// Replay the trace on this device before analysing.
    #[arg(long)]
    device: Option<String>,
    #[arg(long, default_value_t = 64)]
    time_bins: usize,
    #[arg(long, default_value_t = 64)]
    lba_bins: usize,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Filesystem run result (JSON from `simulate`).
    #[arg(long, requires = "od")]
    os: Option<PathBuf>,
    /// Object-drive run result (JSON from `simulate`).
    #[arg(long, requires = "os")]
    od: Option<PathBuf>,
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value = "os-fs:ag-extent")]
    os_stack: String,
    #[arg(long, default_value = "object-drive")]
    od_stack: String,
    #[arg(long)]
    device: Option<String>,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Print every key with its effective value.
    #[arg(long)]
    dump: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<iostack::Error> for Failure {
    fn from(e: iostack::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Generate(w) => cmd_generate(cli, w),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Analyze(a) => cmd_analyze(cli, a),
        Command::Compare(a) => cmd_compare(cli, a),
        Command::Calibrate => cmd_calibrate(cli),
        Command::Config(a) => cmd_config(cli, a),
    }
}

/// Config file plus whether one was actually read.
fn load_config(cli: &Cli) -> CliResult<(SimConfig, bool)> {
    let from_env = std::env::var_os(iostack::config::CONFIG_ENV).is_some_and(|v| !v.is_empty());
    let has_file = cli.config.is_some() || from_env;
    let mut cfg = SimConfig::resolve(cli.config.as_deref()).map_err(|e| match e {
        iostack::Error::Io { .. } => Failure::Runtime(e.to_string()),
        other => usage(other.to_string()),
    })?;
    if let Some(seed) = cli.seed {
        cfg.workload.seed = seed;
    }
    Ok((cfg, has_file))
}

fn apply_workload(cfg: &mut SimConfig, w: &WorkloadArgs) -> CliResult {
    fn set(cfg: &mut SimConfig, key: &str, v: Option<String>) -> CliResult {
        if let Some(v) = v {
            cfg.set("workload", key, &v).map_err(|e| usage(e.to_string()))?;
        }
        Ok(())
    }
    if let Some(kind) = &w.workload {
        let before = cfg.workload.kind;
        set(cfg, "kind", Some(kind.clone()))?;
        if cfg.workload.kind != before && w.distribution.is_none() {
            cfg.workload.key_distribution = cfg.workload.kind.default_distribution();
        }
    }
    set(cfg, "object_count", w.objects.map(|v| v.to_string()))?;
    set(cfg, "object_size", w.object_size.map(|v| v.to_string()))?;
    set(cfg, "threads", w.threads.map(|v| v.to_string()))?;
    set(cfg, "distribution", w.distribution.clone())?;
    if let Some(osd) = w.osd {
        cfg.set("sim", "osd_index", &osd.to_string()).map_err(|e| usage(e.to_string()))?;
    }
    cfg.workload.validate().map_err(|e| usage(e.to_string()))?;
    cfg.validate().map_err(|e| usage(e.to_string()))
}

/// Resolves `--stack` and `--fs` into one registered stack name.
fn stack_name(cfg_stack: &str, stack: Option<&str>, fs: Option<&str>) -> CliResult<String> {
    let name = stack.unwrap_or(cfg_stack);
    let (base, profile) = match name.split_once(':') {
        Some((b, p)) => (b, Some(p)),
        None => (name, None),
    };
    let resolved = match (base, profile, fs) {
        ("os-fs", Some(p), Some(f)) if p != f => {
            return Err(usage(format!("--stack {name} conflicts with --fs {f}")));
        }
        ("os-fs", p, f) => format!("os-fs:{}", f.or(p).unwrap_or("ag-extent")),
        (_, _, Some(f)) => {
            return Err(usage(format!("stack `{name}` has no filesystem profile; drop --fs {f}")));
        }
        _ => name.to_string(),
    };
    let names = StackRegistry::default().names();
    if !names.contains(&resolved.as_str()) {
        return Err(usage(format!("unknown stack `{resolved}` (known: {})", names.join(", "))));
    }
    Ok(resolved)
}

fn device_name(cfg_device: &str, device: Option<&str>) -> CliResult<String> {
    let name = device.unwrap_or(cfg_device);
    let names = DeviceRegistry::default().names();
    if !names.contains(&name) {
        return Err(usage(format!("unknown device `{name}` (known: {})", names.join(", "))));
    }
    Ok(name.to_string())
}

/// Writes `name` inside the output directory; `name` is always a bare file name.
fn write_out(cli: &Cli, name: &str, contents: &str) -> CliResult<PathBuf> {
    debug_assert!(!name.contains('/') && !name.contains(".."));
    fs::create_dir_all(&cli.out).map_err(|e| Failure::Runtime(format!("{}: {e}", cli.out.display())))?;
    let path = cli.out.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_generate(cli: &Cli, w: &WorkloadArgs) -> CliResult {
    let (mut cfg, has_file) = load_config(cli)?;
    if w.objects.is_none() && !has_file {
        return Err(usage("generate needs --objects or a config file setting [workload] object_count"));
    }
    apply_workload(&mut cfg, w)?;
    let ops = generate_workload(&cfg.workload, &cfg.cluster)?;
    let path = write_out(cli, "ops.csv", &emit_ops(&cfg.workload, &ops))?;
    println!("{} ops -> {}", ops.len(), path.display());
    Ok(())
}

fn summary_csv(rows: &[(&str, String)]) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

fn result_rows(r: &RunResult) -> Vec<(&'static str, String)> {
    let l = &r.analysis.layers;
    vec![
        ("stack", r.stack.clone()),
        ("device", r.device.clone()),
        ("workload", r.workload.clone()),
        ("seed", r.seed.to_string()),
        ("total_time_us", format!("{:.3}", r.total_time_us)),
        ("makespan_us", format!("{:.3}", r.makespan_us)),
        ("device_busy_us", format!("{:.3}", r.device_busy_us)),
        ("throughput_mbps", format!("{:.3}", r.throughput_mbps)),
        ("od_count", r.per_tag.od.count.to_string()),
        ("om_count", r.per_tag.om.count.to_string()),
        ("fsm_count", r.per_tag.fsm.count.to_string()),
        ("fsm_bytes", r.fsm_bytes.to_string()),
        ("kernel_share", format!("{:.6}", l.kernel_share())),
        ("od_chains_ge_nts_fraction", format!("{:.6}", r.analysis.chains_od.count_ge_nts_fraction)),
    ]
}

fn cmd_simulate(cli: &Cli, a: &SimArgs) -> CliResult {
    let (mut cfg, _) = load_config(cli)?;
    apply_workload(&mut cfg, &a.workload)?;
    cfg.stack_name = stack_name(&cfg.stack_name, a.stack.as_deref(), a.fs.as_deref())?;
    cfg.device_name = device_name(&cfg.device_name, a.device.as_deref())?;
    let result = run(&RunSpec::from_config(&cfg), &cfg)?;
    write_out(cli, "trace.csv", &result.trace.emit())?;
    let name = match cli.format {
        Format::Json => write_out(cli, "result.json", &to_json(&result)?)?,
        Format::Csv => write_out(cli, "result.csv", &summary_csv(&result_rows(&result)))?,
    };
    if let Some(cdf) = &result.analysis.cdf_all {
        write_out(cli, "cdf_all.csv", &cdf.to_csv())?;
    }
    println!(
        "{} on {} ({}): total {:.0} us, {} IOs -> {}",
        result.stack,
        result.device,
        result.workload,
        result.total_time_us,
        result.trace.len(),
        name.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct AnalyzeReport {
    events: usize,
    bytes: u64,
    per_tag: PerTag,
    chains_all: ChainStats,
    chains_od: ChainStats,
    chains_completion_order: Option<ChainStats>,
    cdf_all: SizeCdf,
    cdf_od_read: Option<SizeCdf>,
    cdf_od_write: Option<SizeCdf>,
    heatmap: Heatmap,
    fsm_heatmap_bands: usize,
    layers: Option<LayerBreakdown>,
}

fn cmd_analyze(cli: &Cli, a: &AnalyzeArgs) -> CliResult {
    let (cfg, _) = load_config(cli)?;
    let mut trace: Trace = match (&a.trace, &a.blkparse) {
        (Some(p), _) => parse_trace(p)?,
        (None, Some(p)) => {
            let cap = a.capacity.ok_or_else(|| usage("--blkparse needs --capacity"))?;
            parse_blkparse_text(p, cap, a.tags.as_deref())?
        }
        (None, None) => return Err(usage("give --trace or --blkparse")),
    };
    if let Some(dev) = &a.device {
        let name = device_name(&cfg.device_name, Some(dev))?;
        let mut device = DeviceRegistry::default().create(&name, &cfg.device)?;
        trace = replay(&trace, device.as_mut(), &ReplayOptions::default())?.0;
    }
    let cdf = |tag, op| {
        compute_cdf(
            &trace,
            Filter {
                tag: Some(tag),
                op: Some(op),
            },
        )
        .ok()
    };
    let replayed = trace.is_replayed() && !trace.is_empty();
    let fsm_only = {
        let events = trace.events().iter().filter(|e| e.tag == IoTag::Fsm).cloned().collect();
        Trace::from_events(events, trace.capacity_sectors(), trace.meta.clone())?
    };
    let report = AnalyzeReport {
        events: trace.len(),
        bytes: trace.total_bytes(),
        per_tag: per_tag(&trace),
        chains_all: detect_chains(&trace, None, None),
        chains_od: detect_chains(&trace, Some(IoTag::Od), None),
        chains_completion_order: replayed.then(|| detect_chains_completion_order(&trace, None, None)),
        cdf_all: compute_cdf(&trace, Filter::default())?,
        cdf_od_read: cdf(IoTag::Od, Op::Read),
        cdf_od_write: cdf(IoTag::Od, Op::Write),
        heatmap: build_heatmap(&trace, a.time_bins, a.lba_bins)?,
        fsm_heatmap_bands: build_heatmap(&fsm_only, 1, a.lba_bins)?.lba_bands(),
        layers: if replayed { Some(layer_breakdown(&trace)?) } else { None },
    };
    write_out(cli, "heatmap.csv", &report.heatmap.to_csv())?;
    write_out(cli, "cdf_all.csv", &report.cdf_all.to_csv())?;
    let mut chains = String::from("index,bytes\n");
    for (i, c) in report.chains_all.chains.iter().enumerate() {
        let _ = writeln!(chains, "{i},{c}");
    }
    write_out(cli, "chains.csv", &chains)?;
    let path = match cli.format {
        Format::Json => write_out(cli, "analysis.json", &to_json(&report)?)?,
        Format::Csv => {
            let mut rows = vec![
                ("events", report.events.to_string()),
                ("bytes", report.bytes.to_string()),
                ("chains", report.chains_all.chains.len().to_string()),
                ("chains_ge_nts_fraction", format!("{:.6}", report.chains_all.count_ge_nts_fraction)),
                ("od_chains_ge_nts_fraction", format!("{:.6}", report.chains_od.count_ge_nts_fraction)),
                ("fsm_heatmap_bands", report.fsm_heatmap_bands.to_string()),
            ];
            if let Some(l) = &report.layers {
                rows.push(("kernel_share", format!("{:.6}", l.kernel_share())));
            }
            write_out(cli, "analysis.csv", &summary_csv(&rows))?
        }
    };
    println!("{} events analysed -> {}", report.events, path.display());
    Ok(())
}

fn read_result(path: &Path) -> CliResult<RunResult> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn comparison_rows(c: &ComparisonReport) -> Vec<(&'static str, String)> {
    vec![
        ("workload", c.workload.clone()),
        ("device", c.device.clone()),
        ("seed", c.seed.to_string()),
        ("os_stack", c.os_stack.clone()),
        ("od_stack", c.od_stack.clone()),
        ("os_total_us", format!("{:.3}", c.os_total_us)),
        ("od_total_us", format!("{:.3}", c.od_total_us)),
        ("savings_fraction", format!("{:.6}", c.savings_fraction)),
        ("makespan_savings_fraction", format!("{:.6}", c.makespan_savings_fraction)),
        ("delta_od_us", format!("{:.3}", c.tag_deltas.od_us)),
        ("delta_om_us", format!("{:.3}", c.tag_deltas.om_us)),
        ("delta_fsm_us", format!("{:.3}", c.tag_deltas.fsm_us)),
    ]
}

fn cmd_compare(cli: &Cli, a: &CompareArgs) -> CliResult {
    let report = match (&a.os, &a.od) {
        (Some(os), Some(od)) => compare(&read_result(os)?, &read_result(od)?)?,
        _ => {
            let (mut cfg, _) = load_config(cli)?;
            apply_workload(&mut cfg, &a.workload)?;
            let device = device_name(&cfg.device_name, a.device.as_deref())?;
            let os_stack = stack_name(&cfg.stack_name, Some(&a.os_stack), None)?;
            let od_stack = stack_name(&cfg.stack_name, Some(&a.od_stack), None)?;
            let mut spec = RunSpec::from_config(&cfg);
            spec.device = device;
            let cells = vec![os_stack, od_stack];
            let mut results = iostack::run::run_parallel(cells, cli.jobs, |s| {
                let mut sp = spec.clone();
                sp.stack = s;
                run(&sp, &cfg)
            })
            .into_iter();
            let os = results.next().expect("two runs")?;
            let od = results.next().expect("two runs")?;
            compare(&os, &od)?
        }
    };
    write_out(cli, "shares.csv", &report.shares_csv())?;
    match cli.format {
        Format::Json => write_out(cli, "comparison.json", &to_json(&report)?)?,
        Format::Csv => write_out(cli, "comparison.csv", &summary_csv(&comparison_rows(&report)))?,
    };
    println!(
        "savings {:.1}% ({} on {}, {} vs {})",
        report.savings_fraction * 100.0,
        report.workload,
        report.device,
        report.os_stack,
        report.od_stack
    );
    Ok(())
}

fn cmd_calibrate(cli: &Cli) -> CliResult {
    let (cfg, _) = load_config(cli)?;
    let report = calibrate(&cfg, cli.jobs)?;
    print!("{}", report.to_text());
    match cli.format {
        Format::Json => write_out(cli, "calibration.json", &to_json(&report)?)?,
        Format::Csv => {
            let mut out = String::from("target,value,low,high,hit\n");
            for t in &report.targets {
                let _ = writeln!(out, "\"{}\",{:.6},{},{},{}", t.name, t.value, t.low, t.high, t.hit);
            }
            write_out(cli, "calibration.csv", &out)?
        }
    };
    let hit = report.targets.iter().filter(|t| t.hit).count();
    println!("{hit}/{} targets hit", report.targets.len());
    Ok(())
}

fn cmd_config(cli: &Cli, a: &ConfigArgs) -> CliResult {
    let (cfg, _) = load_config(cli)?;
    if !a.dump {
        return Err(usage("config needs --dump"));
    }
    print!("{}", cfg.dump());
    Ok(())
}
