//! `polysemous`: train, optimize, build, calibrate, search, benchmark and
//! build neighbor graphs from the command line.
//!
//! Every configuration key is also a flag (`--key-name value`); flags
//! override values from `--config FILE`.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{value_parser, Arg, ArgMatches, Command};

use polysemous::coarseindex::{knn_graph, CoarseSearchParams, GraphWriter, NeighborSearch};
use polysemous::config::{RunConfig, DATA_DIR_ENV, KEYS};
use polysemous::dataio::{load_index, save_index, write_ivecs_rows, write_vectors, IndexMeta, StoredIndex, VecFormat};
use polysemous::eval::{exact_knn, recall_at, render_table, run_benchmark, GroundTruth};
use polysemous::flatindex::SearchParams;
use polysemous::{coarseindex, pipeline, synthetic, ResultList};

/// `println!` that returns write errors instead of panicking, so a closed
/// pipe (`polysemous bench | head`) ends the program quietly.
macro_rules! say {
    () => { writeln!(std::io::stdout().lock())? };
    ($($arg:tt)*) => { writeln!(std::io::stdout().lock(), $($arg)*)? };
}

fn cli() -> Command {
    let mut cmd = Command::new("polysemous")
        .about("Polysemous product-quantization codes: Hamming filtering and ADC re-ranking over the same bytes")
        .after_help(format!(
            "Relative dataset paths are resolved against --data-dir, then ${DATA_DIR_ENV}.\n\
             Logging goes to standard error; set RUST_LOG=debug for more detail."
        ))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .global(true)
                .help("key = value configuration file; flags override it"),
        );
    for (key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .global(true)
                .help(*help),
        );
    }
    cmd.subcommand(Command::new("train").about("Train codebooks (and the coarse level); anneal when optimize = true"))
        .subcommand(Command::new("optimize").about("Anneal the index assignment of a stored model or index"))
        .subcommand(Command::new("build").about("Encode the database into a trained model"))
        .subcommand(Command::new("calibrate").about("Pick the Hamming threshold for the configured filter rate"))
        .subcommand(Command::new("search").about("Search queries and write result ids as ivecs"))
        .subcommand(Command::new("bench").about("Run a benchmark and print its report"))
        .subcommand(Command::new("knn-graph").about("Build an approximate k-nearest-neighbor graph of the database"))
        .subcommand(Command::new("inspect").about("Print index metadata"))
        .subcommand(
            Command::new("gen-synthetic")
                .about("Write a seeded Gaussian-mixture dataset (learn/base/query .fvecs)")
                .arg(num_arg("dim", "32", "dimension"))
                .arg(num_arg("clusters", "20", "mixture components"))
                .arg(num_arg("n-base", "10000", "database vectors"))
                .arg(num_arg("n-query", "200", "queries"))
                .arg(num_arg("n-learn", "5000", "training vectors"))
                .arg(num_arg("seed", "1", "sampling seed"))
                .arg(
                    Arg::new("out-dir")
                        .long("out-dir")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf))
                        .help("output directory"),
                ),
        )
}

fn num_arg(name: &'static str, default: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("N")
        .default_value(default)
        .value_parser(value_parser!(u64))
        .help(help)
}

fn config_from(m: &ArgMatches) -> Result<RunConfig> {
    let mut config = match m.get_one::<PathBuf>("config") {
        Some(p) => RunConfig::from_file(p).with_context(|| format!("reading configuration {}", p.display()))?,
        None => RunConfig::default(),
    };
    for (key, _) in KEYS {
        if m.value_source(key) == Some(ValueSource::CommandLine) {
            let v = m.get_one::<String>(key).expect("string flag");
            config
                .set(key, v)
                .with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!("--{} is required for this command", key.replace('_', "-")),
    }
}

fn load(path: &Path) -> Result<(StoredIndex, IndexMeta)> {
    load_index(path).with_context(|| format!("loading index {}", path.display()))
}

fn save(path: &Path, index: &StoredIndex, meta: &IndexMeta) -> Result<()> {
    save_index(path, index, meta).with_context(|| format!("writing index {}", path.display()))?;
    log::info!("wrote {} index to {}", index.kind_name(), path.display());
    Ok(())
}

/// Output path of commands that rewrite an index: `output`, else in place.
fn target(config: &RunConfig) -> Result<PathBuf> {
    match (&config.output, &config.index) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(i)) => Ok(i.clone()),
        (None, None) => bail!("--index is required for this command"),
    }
}

fn flat_tau(config: &RunConfig, meta: &IndexMeta, bits: usize) -> Result<u32> {
    if let Some(t) = config.tau {
        return Ok(t);
    }
    match meta.get("calibrated_tau") {
        Some(t) => Ok(t.parse().context("stored calibrated_tau")?),
        None => {
            log::warn!("no calibrated threshold stored and no --tau given; filtering disabled");
            Ok(bits as u32)
        }
    }
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let out = required(&config.index, "index")?;
    let learn = pipeline::load(config, "learn")?;
    let stored = pipeline::train(config, &learn)?;
    save(out, &stored, &pipeline::meta_for(config))
}

fn cmd_optimize(config: &RunConfig) -> Result<()> {
    let (stored, mut meta) = load(required(&config.index, "index")?)?;
    let learn = match (&stored, &config.learn) {
        (StoredIndex::Coarse(_), Some(_)) => Some(pipeline::load(config, "learn")?),
        (StoredIndex::Coarse(_), None) => {
            log::warn!("no learn set given: the stored in-list threshold is kept");
            None
        }
        _ => None,
    };
    let stored = pipeline::optimize_stored(config, stored, learn.as_ref())?;
    for key in ["loss", "alpha", "n_iter", "t0", "t_decay", "accept", "anneal_seed"] {
        meta.set(key, config.get(key).unwrap_or_default());
    }
    meta.set("optimize", true);
    save(&target(config)?, &stored, &meta)
}

fn cmd_build(config: &RunConfig) -> Result<()> {
    let (stored, mut meta) = load(required(&config.index, "index")?)?;
    let built = pipeline::build(config, stored)?;
    meta.set("base", config.get("base").unwrap_or_default());
    save(&target(config)?, &built, &meta)
}

fn cmd_calibrate(config: &RunConfig) -> Result<()> {
    let (stored, mut meta) = load(required(&config.index, "index")?)?;
    let learn = pipeline::load(config, "learn")?;
    let (stored, cal) = match stored {
        StoredIndex::Flat(f) => {
            let cal = pipeline::calibrate_flat(config, &f, &learn)?;
            (StoredIndex::Flat(f), cal)
        }
        StoredIndex::Coarse(mut c) => {
            let cal = coarseindex::calibrate_residuals(c.coarse(), c.pq(), &learn, config.filter_rate)?;
            c.set_tau(cal.tau)?;
            (StoredIndex::Coarse(c), cal)
        }
        StoredIndex::Quantizer(_) => bail!("calibrate needs a built index (run build first)"),
    };
    if !cal.attainable {
        log::warn!("filter rate {} is not attainable; tau = 0", config.filter_rate);
    }
    meta.set("calibrated_tau", cal.tau);
    meta.set("filter_rate", config.filter_rate);
    say!("tau = {}", cal.tau);
    say!("survivor_fraction = {:.6}", cal.survivor_fraction);
    say!("attainable = {}", cal.attainable);
    save(&target(config)?, &stored, &meta)
}

fn write_results(path: &Path, results: &[ResultList], k: usize) -> Result<()> {
    let rows: Vec<Vec<i32>> = results
        .iter()
        .map(|r| {
            let mut ids: Vec<i32> = r.hits.iter().map(|h| h.id as i32).collect();
            ids.resize(k, -1);
            ids
        })
        .collect();
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_ivecs_rows(BufWriter::new(file), &rows)?;
    log::info!("wrote {} result rows to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_search(config: &RunConfig) -> Result<()> {
    let (stored, meta) = load(required(&config.index, "index")?)?;
    let queries = pipeline::load(config, "query")?;
    let results = match &stored {
        StoredIndex::Flat(f) => {
            let tau = flat_tau(config, &meta, f.pq().code_bits())?;
            f.search_batch(&queries, &SearchParams::new(config.k, tau, config.strategy))?
        }
        StoredIndex::Coarse(c) => {
            let mut c = c.clone();
            if config.precomputed_tables {
                c.precompute_tables()?;
            }
            let params = CoarseSearchParams {
                k: config.k,
                nprobe: config.nprobe,
                cap: config.cap,
                tau: config.tau.unwrap_or(c.tau()),
                tables: config.table_mode(),
            };
            c.search_batch(&queries, &params)?
        }
        StoredIndex::Quantizer(_) => bail!("search needs a built index (run build first)"),
    };
    let n = results.len().max(1) as f64;
    let survivors = results.iter().map(|r| r.survivors as f64).sum::<f64>() / n;
    let scanned = results.iter().map(|r| r.scanned as f64).sum::<f64>() / n;
    say!("queries = {}", results.len());
    say!("mean_scanned = {scanned:.1}");
    say!("mean_survivors = {survivors:.1}");
    if config.groundtruth.is_some() {
        config.validate_recall()?;
        let path = config.dataset("groundtruth")?;
        let gt = GroundTruth::from_ivecs(polysemous::dataio::read_ivecs_rows(&path, config.query_limit)?)?;
        for &r in &config.r_list {
            say!("recall@{r} = {:.4}", recall_at(&results, &gt, r));
        }
    }
    if let Some(out) = &config.output {
        write_results(out, &results, config.k)?;
    }
    Ok(())
}

fn cmd_bench(config: &RunConfig) -> Result<()> {
    let reports = run_benchmark(config)?;
    write!(std::io::stdout().lock(), "{}", render_table(&reports))?;
    say!();
    for r in &reports {
        say!("{}", r.to_record());
    }
    if let Some(path) = &config.report {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening report {}", path.display()))?;
        for r in &reports {
            writeln!(f, "{}", r.to_record())?;
        }
        log::info!("appended {} records to {}", reports.len(), path.display());
    }
    Ok(())
}

fn cmd_knn_graph(config: &RunConfig) -> Result<()> {
    let (stored, meta) = load(required(&config.index, "index")?)?;
    let out = required(&config.output, "output")?;
    let coarse;
    let search: Box<dyn NeighborSearch + '_> = match &stored {
        StoredIndex::Flat(f) => {
            let tau = flat_tau(config, &meta, f.pq().code_bits())?;
            Box::new((f, SearchParams::new(config.k, tau, config.strategy)))
        }
        StoredIndex::Coarse(c) => {
            let mut c = c.clone();
            if config.precomputed_tables {
                c.precompute_tables()?;
            }
            coarse = c;
            Box::new((
                &coarse,
                CoarseSearchParams {
                    k: config.k,
                    nprobe: config.nprobe,
                    cap: config.cap,
                    tau: config.tau.unwrap_or(coarse.tau()),
                    tables: config.table_mode(),
                },
            ))
        }
        StoredIndex::Quantizer(_) => bail!("knn-graph needs a built index (run build first)"),
    };
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut writer = GraphWriter::new(BufWriter::new(file), config.k)?;
    let mut first_neighbor = Vec::new();
    let rows = pipeline::stream_base(config, |chunk| {
        let rows = knn_graph(search.as_ref(), chunk, config.k)?;
        if config.check_exact {
            first_neighbor.extend(rows.iter().map(|r| (r.id, r.neighbors.first().map(|h| h.id))));
        }
        writer.write_rows(&rows)
    })?;
    writer.finish()?;
    log::info!("wrote neighbor graph of {rows} vectors to {}", out.display());
    say!("rows = {rows}");
    if config.check_exact {
        let base = pipeline::load(config, "base")?;
        let exact = exact_knn(&base, &base, 2)?;
        let mut agree = 0usize;
        for ((id, approx), truth) in first_neighbor.iter().zip(&exact.neighbors) {
            let nn = truth.iter().find(|&&t| t != *id);
            if approx.is_some() && nn == approx.as_ref() {
                agree += 1;
            }
        }
        say!("exact_1nn_agreement = {:.4}", agree as f64 / rows.max(1) as f64);
    }
    Ok(())
}

fn cmd_inspect(config: &RunConfig) -> Result<()> {
    let (stored, meta) = load(required(&config.index, "index")?)?;
    write!(std::io::stdout().lock(), "{}", pipeline::describe(&stored, &meta))?;
    Ok(())
}

fn cmd_gen_synthetic(m: &ArgMatches) -> Result<()> {
    let get = |k: &str| *m.get_one::<u64>(k).expect("defaulted") as usize;
    let dir = m.get_one::<PathBuf>("out-dir").expect("required");
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (dim, clusters, seed) = (get("dim"), get("clusters"), get("seed") as u64);
    if dim == 0 || clusters == 0 {
        bail!("dim and clusters must be positive");
    }
    for (name, n, s) in [
        ("learn", get("n-learn"), seed.wrapping_mul(3)),
        ("base", get("n-base"), seed.wrapping_mul(3) + 1),
        ("query", get("n-query"), seed.wrapping_mul(3) + 2),
    ] {
        let set = synthetic::clustered(n, dim, clusters, s);
        let path = dir.join(format!("{name}.fvecs"));
        write_vectors(&path, VecFormat::Fvecs, &set)?;
        say!("{name} = {}", path.display());
    }
    Ok(())
}

fn run() -> Result<()> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    if name == "gen-synthetic" {
        return cmd_gen_synthetic(sub);
    }
    let config = config_from(sub)?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match name {
        "train" => cmd_train(&config),
        "optimize" => cmd_optimize(&config),
        "build" => cmd_build(&config),
        "calibrate" => cmd_calibrate(&config),
        "search" => cmd_search(&config),
        "bench" => cmd_bench(&config),
        "knn-graph" => cmd_knn_graph(&config),
        "inspect" => cmd_inspect(&config),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
