//! `agenda`: synthetic corpora, adversarial attribute suppression, baselines
//! and verification-bias evaluation from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 missing file or other I/O failure,
//! 4 invalid data, format or numeric failure.

mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use agenda_core::corrpca::{self, DEFAULT_DELTA};
use agenda_core::dataio::{
    fmt_f64, read_dataset, read_key_values, read_pairs, write_dataset, write_pairs, CsvReport, KeyValueReader,
};
use agenda_core::eval::{
    ablation_sweep, compare_methods, compare_report, evaluate, experiment_splits, generate_pairs, sweep_report,
    PairConfig, PairProtocol, SweepParam,
};
use agenda_core::nets::{read_checkpoint, write_checkpoint};
use agenda_core::probe::{probe_accuracy, ProbeConfig};
use agenda_core::synthgen::{generate, write_metadata, SynthSpec, SYNTH_KEYS};
use agenda_core::tpe::{read_tpe, tpe_apply, tpe_train, write_tpe, TpeConfig, TPE_KEYS, TPE_LOSS};
use agenda_core::trainer::{train, transform, TrainConfig, TRAIN_KEYS};
use agenda_core::{Dataset, Error};

use manifest::{write_manifest, RunManifest};

#[derive(Parser)]
#[command(name = "agenda", version, about = "Attribute suppression and verification-bias toolkit")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true, env = "AGENDA_THREADS")]
    threads: Option<usize>,

    /// Root seed; overrides any seed key in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic descriptor corpus.
    #[command(after_help = synth_help())]
    Synth {
        /// key=value spec file (see keys below).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into two identity-disjoint parts.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Share of identities (per attribute) sent to the second part.
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
    },
    /// Train the generator, identity classifier and discriminator ensemble.
    #[command(after_help = keys_help("config keys", TRAIN_KEYS))]
    Train {
        #[arg(long)]
        data: PathBuf,
        /// key=value config file (see keys below).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-step training log CSV.
        #[arg(long)]
        log: PathBuf,
    },
    /// Map descriptors through a trained generator.
    Transform {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit, apply or inspect the correlation-filtered PCA baseline.
    Corrpca(CorrpcaArgs),
    /// Train a logistic-regression attribute probe and report its test accuracy.
    Probe {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = ProbeConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = ProbeConfig::default().rate)]
        rate: f64,
        #[arg(long, default_value_t = ProbeConfig::default().l2)]
        l2: f64,
    },
    /// Group-wise verification TPR at fixed FPRs and the bias between groups.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Pair CSV (index_a,index_b,genuine); generated when absent.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1e-6,1e-5,1e-4,1e-3")]
        fprs: Vec<f64>,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        pair_gen: PairGenArgs,
        /// Also write the protocol that was used.
        #[arg(long)]
        write_pairs: Option<PathBuf>,
    },
    /// Train or apply a triplet probabilistic embedding.
    #[command(after_help = keys_help("config keys", TPE_KEYS))]
    Tpe(TpeArgs),
    /// Lambda/K ablations, or original vs CorrPCA vs AGENDA in one run.
    #[command(after_help = keys_help("train config keys", TRAIN_KEYS))]
    Sweep(SweepArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["fit", "apply", "spectrum"]))]
struct CorrpcaArgs {
    /// Fit a subspace on this dataset; writes --out.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Project this dataset with --subspace; writes --out.
    #[arg(long)]
    apply: Option<PathBuf>,
    /// Write the per-eigenvector correlation table for this dataset to --report.
    #[arg(long)]
    spectrum: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    subspace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["train", "apply"]))]
struct TpeArgs {
    /// Train on this dataset; writes the matrix to --out.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Transform this dataset with --matrix; writes it to --out.
    #[arg(long)]
    apply: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairGenArgs {
    /// Impostor pairs drawn per genuine pair, per group.
    #[arg(long, default_value_t = 10.0)]
    impostor_ratio: f64,
    /// Cap on genuine pairs per identity.
    #[arg(long)]
    max_genuine: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Lambda,
    K,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["param", "compare"]))]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Train config applied to every run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter to sweep.
    #[arg(long, value_enum, requires = "values")]
    param: Option<Param>,
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Compare original, CorrPCA and AGENDA descriptors instead.
    #[arg(long)]
    compare: bool,
    /// FPR for parameter sweeps.
    #[arg(long, default_value_t = 1e-5)]
    fpr: f64,
    /// FPRs for --compare.
    #[arg(long, value_delimiter = ',', default_value = "1e-6,1e-5,1e-4,1e-3")]
    fprs: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Share of identities held out from fitting for evaluation.
    #[arg(long, default_value_t = 0.5)]
    eval_fraction: f64,
    /// Share of held-out identities used as the probe test set.
    #[arg(long, default_value_t = 0.3)]
    probe_fraction: f64,
    #[command(flatten)]
    pair_gen: PairGenArgs,
    #[arg(long)]
    report: PathBuf,
}

fn keys_help(title: &str, keys: &[(&str, &str, &str)]) -> String {
    let mut s = format!("{title} (default, meaning):\n");
    for (k, d, m) in keys {
        s.push_str(&format!("  {k:<22} {d:<10} {m}\n"));
    }
    s
}

fn synth_help() -> String {
    let mut s = String::from("spec keys (default):\n");
    for (k, d) in SYNTH_KEYS {
        s.push_str(&format!("  {k:<22} {d}\n"));
    }
    s
}

enum Failure {
    Usage(String),
    Core(Error),
    Io(PathBuf, std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(..) | Failure::Core(Error::Io { .. }) => 3,
            Failure::Core(_) => 4,
        }
    }

    fn line(&self) -> String {
        let flat = |s: String| s.replace('\n', " ");
        match self {
            Failure::Usage(m) => format!("error: code=usage msg={}", flat(m.clone())),
            Failure::Core(e) => format!("error: code={} msg={}", e.code(), flat(e.to_string())),
            Failure::Io(p, e) => format!("error: code=io msg=i/o error on {}: {}", p.display(), flat(e.to_string())),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn need<'a>(v: &'a Option<PathBuf>, flag: &str, mode: &str) -> Outcome<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Failure::Usage(format!("{mode} requires --{flag}")))
}

fn kv_reader(path: Option<&Path>) -> Outcome<KeyValueReader> {
    let map = match path {
        Some(p) => read_key_values(p)?,
        None => BTreeMap::new(),
    };
    Ok(KeyValueReader::new(map))
}

fn load(path: &Path, m: &mut RunManifest) -> Outcome<Dataset> {
    m.input(path);
    Ok(read_dataset(path)?)
}

fn finish(mut m: RunManifest, primary: &Path, start: Instant) -> Outcome {
    m.wall_time_s = start.elapsed().as_secs_f64();
    write_manifest(&m, primary).map_err(|e| Failure::Io(primary.to_path_buf(), e))?;
    Ok(())
}

fn pair_config(args: &PairGenArgs, seed: u64) -> PairConfig {
    PairConfig { impostor_ratio: args.impostor_ratio, max_genuine_per_identity: args.max_genuine, seed }
}

fn pair_meta(m: &mut RunManifest, pc: &PairConfig) {
    m.config([
        ("impostor_ratio".into(), pc.impostor_ratio.to_string()),
        ("max_genuine".into(), pc.max_genuine_per_identity.map(|v| v.to_string()).unwrap_or_default()),
        ("pair_seed".into(), pc.seed.to_string()),
    ]);
}

fn warn_coverage(report: &agenda_core::EvalReport) {
    for (name, pts, n_imp) in [
        ("male", &report.male, report.pair_counts[0].1),
        ("female", &report.female, report.pair_counts[1].1),
    ] {
        for p in pts.iter().filter(|p| p.coverage_warning) {
            eprintln!(
                "warning: code=fpr_coverage group={name} target={:e} impostors={n_imp} achieved_fpr=0",
                p.target_fpr
            );
        }
    }
    if report.zero_norm_pairs > 0 {
        eprintln!("warning: code=zero_norm pairs={}", report.zero_norm_pairs);
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let start = Instant::now();
    let seed = cli.seed;
    match cli.command {
        Command::Synth { spec, out } => {
            let mut m = RunManifest::new("synth");
            if let Some(p) = &spec {
                m.input(p);
            }
            let mut s = SynthSpec::from_key_values(kv_reader(spec.as_deref())?)?;
            if let Some(v) = seed {
                s.seed = v;
            }
            let (ds, meta) = generate(&s)?;
            write_dataset(&ds, &out)?;
            let meta_path = sidecar(&out, ".meta.json");
            write_metadata(&meta, &meta_path)?;
            m.seed = Some(s.seed);
            m.config(s.to_key_values());
            m.output(&out);
            m.output(&meta_path);
            println!("records={} dim={} identities={}", ds.len(), ds.dim(), s.n_identities);
            finish(m, &out, start)
        }
        Command::Split { data, fraction, out_a, out_b } => {
            let mut m = RunManifest::new("split");
            let ds = load(&data, &mut m)?;
            let seed = seed.unwrap_or(0);
            let (a, b) = ds.split_by_identity(fraction, seed)?;
            write_dataset(&a, &out_a)?;
            write_dataset(&b, &out_b)?;
            m.seed = Some(seed);
            m.config([("fraction".into(), fraction.to_string())]);
            m.output(&out_a);
            m.output(&out_b);
            println!("a={} b={}", a.len(), b.len());
            finish(m, &out_a, start)
        }
        Command::Train { data, config, out, log } => {
            let mut m = RunManifest::new("train");
            let ds = load(&data, &mut m)?;
            if let Some(p) = &config {
                m.input(p);
            }
            let mut cfg = TrainConfig::from_key_values(kv_reader(config.as_deref())?)?;
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let trained = train(&ds, &cfg)?;
            write_checkpoint(&trained.checkpoint, &out)?;
            trained.log.to_report(&cfg).write(&log)?;
            m.seed = Some(cfg.seed);
            m.config(cfg.to_key_values());
            m.output(&out);
            m.output(&log);
            println!("records={} log_rows={}", ds.len(), trained.log.records.len());
            finish(m, &out, start)
        }
        Command::Transform { checkpoint, data, out } => {
            let mut m = RunManifest::new("transform");
            m.input(&checkpoint);
            let ckpt = read_checkpoint(&checkpoint)?;
            let ds = load(&data, &mut m)?;
            let t = transform(&ckpt.generator, &ds)?;
            write_dataset(&t, &out)?;
            m.output(&out);
            println!("records={} dim={}", t.len(), t.dim());
            finish(m, &out, start)
        }
        Command::Corrpca(a) => run_corrpca(a, start),
        Command::Probe { train, test, report, epochs, rate, l2 } => {
            let mut m = RunManifest::new("probe");
            let tr = load(&train, &mut m)?;
            let te = load(&test, &mut m)?;
            let cfg = ProbeConfig { epochs, rate, l2 };
            let r = probe_accuracy(&tr, &te, &cfg)?;
            r.to_report(&cfg).write(&report)?;
            m.config([
                ("epochs".into(), epochs.to_string()),
                ("rate".into(), rate.to_string()),
                ("l2".into(), l2.to_string()),
            ]);
            m.output(&report);
            println!("accuracy={}", fmt_f64(r.accuracy));
            finish(m, &report, start)
        }
        Command::Eval { data, pairs, fprs, report, pair_gen, write_pairs: wp } => {
            let mut m = RunManifest::new("eval");
            let ds = load(&data, &mut m)?;
            let protocol = match &pairs {
                Some(p) => {
                    m.input(p);
                    PairProtocol::from_rows(&ds, &read_pairs(p)?)?
                }
                None => {
                    let pc = pair_config(&pair_gen, seed.unwrap_or(0));
                    pair_meta(&mut m, &pc);
                    m.seed = Some(pc.seed);
                    generate_pairs(&ds, &pc)?
                }
            };
            if let Some(p) = &wp {
                write_pairs(&protocol.to_rows(), p)?;
                m.output(p);
            }
            let r = evaluate(&ds, &protocol, &fprs)?;
            warn_coverage(&r);
            let mut csv = r.to_report();
            if pairs.is_none() {
                csv.meta("pairs", "generated")
                    .meta("impostor_ratio", pair_gen.impostor_ratio)
                    .meta("pair_seed", seed.unwrap_or(0));
            }
            csv.write(&report)?;
            m.config([(
                "fprs".into(),
                fprs.iter().map(|f| format!("{f:e}")).collect::<Vec<_>>().join(","),
            )]);
            m.output(&report);
            for (f, b) in fprs.iter().zip(r.bias()) {
                println!("fpr={f:e} bias={}", fmt_f64(b));
            }
            finish(m, &report, start)
        }
        Command::Tpe(a) => run_tpe(a, seed, start),
        Command::Sweep(a) => run_sweep(a, seed, start),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_corrpca(a: CorrpcaArgs, start: Instant) -> Outcome {
    let mut m = RunManifest::new("corrpca");
    m.config([("delta".into(), a.delta.to_string())]);
    if let Some(data) = &a.fit {
        let out = need(&a.out, "out", "--fit")?;
        let ds = load(data, &mut m)?;
        let s = corrpca::fit(&ds, a.delta)?;
        corrpca::write_subspace(&s, out)?;
        m.output(out);
        if let Some(rep) = &a.report {
            let mut r = CsvReport::new(["index", "eigenvalue", "spearman", "retained"]);
            r.meta("delta", a.delta);
            for (i, e) in s.records.iter().enumerate() {
                r.push_row([i.to_string(), fmt_f64(e.eigenvalue), fmt_f64(e.correlation), u8::from(e.retained).to_string()]);
            }
            r.write(rep)?;
            m.output(rep);
        }
        println!("retained={} removed={}", s.retained_count(), s.removed_count());
        finish(m, out, start)
    } else if let Some(data) = &a.apply {
        let out = need(&a.out, "out", "--apply")?;
        let sub = need(&a.subspace, "subspace", "--apply")?;
        m.input(sub);
        let s = corrpca::read_subspace(sub)?;
        let ds = load(data, &mut m)?;
        let p = corrpca::project(&s, &ds)?;
        write_dataset(&p, out)?;
        m.output(out);
        println!("records={} dim={}", p.len(), p.dim());
        finish(m, out, start)
    } else {
        let data = need(&a.spectrum, "spectrum", "spectrum")?;
        let rep = need(&a.report, "report", "--spectrum")?;
        let ds = load(data, &mut m)?;
        let rows = corrpca::correlation_spectrum(&ds)?;
        corrpca::spectrum_report(&rows).write(rep)?;
        m.output(rep);
        println!("eigenvectors={}", rows.len());
        finish(m, rep, start)
    }
}

fn run_tpe(a: TpeArgs, seed: Option<u64>, start: Instant) -> Outcome {
    let mut m = RunManifest::new("tpe");
    if let Some(data) = &a.train {
        let ds = load(data, &mut m)?;
        if let Some(p) = &a.config {
            m.input(p);
        }
        let mut cfg = TpeConfig::from_key_values(kv_reader(a.config.as_deref())?)?;
        if let Some(v) = seed {
            cfg.seed = v;
        }
        let w = tpe_train(&ds, &cfg)?;
        write_tpe(&w, &a.out)?;
        m.seed = Some(cfg.seed);
        m.config(cfg.to_key_values());
        m.config([("loss".into(), TPE_LOSS.into())]);
        m.output(&a.out);
        println!("in_dim={} out_dim={} repeats={}", w.in_dim(), w.out_dim(), w.repeats);
    } else {
        let data = need(&a.apply, "apply", "apply")?;
        let mat = need(&a.matrix, "matrix", "--apply")?;
        m.input(mat);
        let w = read_tpe(mat)?;
        let ds = load(data, &mut m)?;
        let t = tpe_apply(&w, &ds)?;
        write_dataset(&t, &a.out)?;
        m.output(&a.out);
        println!("records={} dim={}", t.len(), t.dim());
    }
    finish(m, &a.out, start)
}

fn run_sweep(a: SweepArgs, seed: Option<u64>, start: Instant) -> Outcome {
    let mut m = RunManifest::new("sweep");
    let ds = load(&a.data, &mut m)?;
    if let Some(p) = &a.config {
        m.input(p);
    }
    let mut cfg = TrainConfig::from_key_values(kv_reader(a.config.as_deref())?)?;
    if let Some(v) = seed {
        cfg.seed = v;
    }
    let splits = experiment_splits(&ds, a.eval_fraction, a.probe_fraction, cfg.seed)?;
    let pc = pair_config(&a.pair_gen, cfg.seed);
    let protocol = generate_pairs(&splits.eval, &pc)?;
    let data = splits.sweep_data(&protocol);
    let probe = ProbeConfig::default();
    m.seed = Some(cfg.seed);
    m.config(cfg.to_key_values());
    pair_meta(&mut m, &pc);
    m.config([
        ("eval_fraction".into(), a.eval_fraction.to_string()),
        ("probe_fraction".into(), a.probe_fraction.to_string()),
    ]);
    let mut report = if a.compare {
        let results = compare_methods(&data, &cfg, a.delta, &a.fprs, &probe)?;
        for r in &results {
            warn_coverage(&r.report);
            println!("method={} probe_accuracy={}", r.method, fmt_f64(r.probe_accuracy));
        }
        m.config([("delta".into(), a.delta.to_string())]);
        compare_report(&results)
    } else {
        let param = match a.param.expect("clap enforces the mode group") {
            Param::Lambda => SweepParam::Lambda,
            Param::K => SweepParam::K,
        };
        let rows = ablation_sweep(&data, &cfg, param, &a.values, a.fpr, &probe)?;
        for r in &rows {
            println!("{}={} bias={} probe_accuracy={}", param.name(), r.value, fmt_f64(r.bias), fmt_f64(r.probe_accuracy));
        }
        sweep_report(param, a.fpr, &rows)
    };
    for (k, v) in cfg.to_key_values() {
        report.meta(k, v);
    }
    report.write(&a.report)?;
    m.output(&a.report);
    finish(m, &a.report, start)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.exit_code())
        }
    }
}
