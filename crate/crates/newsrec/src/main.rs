use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use newsrec::ab::{ab_replay, Arm};
use newsrec::bench::{run_bench, BenchParams};
use newsrec::config::RunConfig;
use newsrec::datagen::{export_segments, generate_world, load_world_dir, simulate_logs, write_world_files, WorldSpec};
use newsrec::eval::{run_experiment, EvalData, Method, Mode};
use newsrec::formats::{read_ctr, read_model, write_ctr, write_model};
use newsrec::http::{self, Clock};
use newsrec::pipeline::{Attribution, Pipeline};
use newsrec::service::RecService;
use newsrec::store::{FileStore, MemoryStore, ProfileStore};
use newsrec_core::cluster::{kmeans_fit, minhash_fit, nmf_fit, KMeansParams, MinHashParams, NmfParams, SparseCounts};
use newsrec_core::{ClusterModel, HistoryPolicy, Horizon, Timestamp};

#[derive(Parser)]
#[command(name = "newsrec", version, about = "Cluster-CTR news recommendation: data, models, serving and evaluation")]
struct Cli {
    /// TOML config; defaults to $RECS_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Kmeans,
    Minhash,
    Nmf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world with logs and hourly segments.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        articles: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
    },
    /// Fit a cluster model on profiles built from the world's log.
    Cluster {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, value_enum, default_value = "kmeans")]
        algo: Algo,
        #[arg(long)]
        out: PathBuf,
        /// Only events before this time are used; also the model version. Defaults to the end of the log.
        #[arg(long)]
        now: Option<Timestamp>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a CTR snapshot from the world's log under a model.
    Aggregate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        now: Option<Timestamp>,
    },
    /// Start the HTTP recommendation service.
    Serve {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        ctr: Option<PathBuf>,
        /// Persist profiles in this directory instead of memory.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        /// Fixed request time; the wall clock otherwise.
        #[arg(long)]
        now: Option<Timestamp>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Replay the world's log (up to `now`) before serving.
        #[arg(long)]
        replay: bool,
    },
    /// Offline evaluation over the world's hourly segments.
    Eval {
        #[arg(long)]
        world: PathBuf,
        /// all, user or both.
        #[arg(long, default_value = "both")]
        mode: String,
        /// `all` or a comma-separated list such as kmeans-ctr,nmf-clicks,content.
        #[arg(long, default_value = "all")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Counterfactual A/B replay with the world's click model.
    Ab {
        /// World directory; generated from the config's [world] table when absent.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value = "control,tdf,utdf")]
        arms: String,
        /// Arm assignment seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay an event log into a persistent profile store.
    Replay {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Attribute impressions and clicks to clusters of this model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Recommend latency on a synthetic snapshot.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        candidates: usize,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        requests: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    eprint!("{}", cfg.banner());
    match run(cli.cmd, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn history_policy(cfg: &RunConfig) -> HistoryPolicy {
    HistoryPolicy {
        capacity: cfg.n,
        dedup: false,
    }
}

fn load_model(path: &Path) -> Result<ClusterModel> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_model(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn run(cmd: Cmd, cfg: RunConfig) -> Result<()> {
    match cmd {
        Cmd::Gen {
            out,
            seed,
            users,
            articles,
            days,
        } => {
            let spec = WorldSpec {
                seed: seed.unwrap_or(cfg.world.seed),
                num_users: users.unwrap_or(cfg.world.num_users),
                num_articles: articles.unwrap_or(cfg.world.num_articles),
                days: days.unwrap_or(cfg.world.days),
                ..cfg.world.clone()
            };
            let world = generate_world(&spec)?;
            let events = simulate_logs(&world);
            let segments = export_segments(&events, &world);
            write_world_files(&out, &world, &events, &segments)?;
            println!(
                "wrote {}: {} articles, {} users, {} events, {} segments",
                out.display(),
                world.articles.len(),
                world.users.len(),
                events.len(),
                segments.len()
            );
        }
        Cmd::Cluster {
            world,
            algo,
            out,
            now,
            seed,
        } => {
            let w = load_world_dir(&world)?;
            let now = now.unwrap_or_else(|| w.spec.end_ts());
            let store = Arc::new(MemoryStore::new());
            let pipeline = Pipeline::new(Arc::clone(&store), Arc::new(w.catalog), history_policy(&cfg));
            pipeline.replay_events(w.events.iter().filter(|e| e.ts < now))?;
            let profiles = store.snapshot();
            let seed = seed.unwrap_or(cfg.eval.seed);
            let model = match algo {
                Algo::Kmeans => {
                    let users: BTreeMap<String, Vec<f64>> = profiles
                        .iter()
                        .filter_map(|(u, p)| Some((u.clone(), p.vector.clone()?)))
                        .collect();
                    let params = KMeansParams {
                        k: cfg.k,
                        seed,
                        ..KMeansParams::default()
                    };
                    let fit = kmeans_fit(&users, &params)?;
                    eprintln!("k-means: {} iterations, inertia {:.6}", fit.iterations, fit.inertia());
                    fit.model
                }
                Algo::Minhash => {
                    let sets = profiles
                        .iter()
                        .filter(|(_, p)| !p.history.is_empty())
                        .map(|(u, p)| (u.clone(), p.click_set()))
                        .collect();
                    let params = MinHashParams {
                        num_hashes: cfg.eval.minhash_hashes,
                        key_len: cfg.eval.minhash_key_len,
                        seed,
                    };
                    minhash_fit(&sets, &params)?.model
                }
                Algo::Nmf => {
                    let rows = profiles
                        .iter()
                        .filter(|(_, p)| !p.history.is_empty())
                        .map(|(u, p)| (u.as_str(), p.history.iter().map(String::as_str)));
                    let matrix = SparseCounts::from_clicks(rows);
                    let params = NmfParams {
                        k: cfg.k,
                        seed,
                        iters: cfg.eval.nmf_iters,
                    };
                    nmf_fit(&matrix, &params)?.model
                }
            };
            let model = model.with_version(now as u64);
            let mut w = create(&out)?;
            write_model(&mut w, &model)?;
            w.flush()?;
            println!("wrote {} (k = {}, version = {})", out.display(), model.k, model.version);
        }
        Cmd::Aggregate { world, model, out, now } => {
            let w = load_world_dir(&world)?;
            let now = now.unwrap_or_else(|| w.spec.end_ts());
            let model = Arc::new(load_model(&model)?);
            let pipeline = Pipeline::new(Arc::new(MemoryStore::new()), Arc::new(w.catalog), history_policy(&cfg));
            let first = w.events.first().map_or(now, |e| e.ts);
            let start = first.div_euclid(cfg.window_len) * cfg.window_len;
            pipeline.set_attribution(Attribution::new(
                model,
                start,
                cfg.window_len,
                Horizon::Windows(cfg.merge_windows),
            )?);
            let report = pipeline.replay_events(w.events.iter().filter(|e| e.ts < now))?;
            let (_, table) = pipeline.ctr_snapshot(now).context("attribution was set")?;
            let mut f = create(&out)?;
            write_ctr(&mut f, &table)?;
            f.flush()?;
            println!(
                "wrote {}: window [{}, {}), {} cells, {} anomalies, {} unattributed, {} late",
                out.display(),
                table.window_start,
                table.window_end,
                table.len(),
                table.anomalies(),
                report.unattributed,
                report.late
            );
        }
        Cmd::Serve {
            world,
            model,
            ctr,
            store,
            listen,
            now,
            workers,
            replay,
        } => {
            let opts = ServeOpts {
                world,
                model,
                ctr,
                listen: listen.unwrap_or_else(|| cfg.listen.clone()),
                clock: now.map_or(Clock::Wall, Clock::Fixed),
                workers,
                replay,
            };
            match store {
                Some(dir) => serve(Arc::new(FileStore::open(&dir)?), opts, &cfg)?,
                None => serve(Arc::new(MemoryStore::new()), opts, &cfg)?,
            }
        }
        Cmd::Eval {
            world,
            mode,
            methods,
            out,
            seed,
        } => {
            let modes = Mode::parse_list(&mode).with_context(|| format!("unknown mode {mode:?}"))?;
            let methods = Method::parse_list(&methods).with_context(|| format!("unknown methods {methods:?}"))?;
            let w = load_world_dir(&world)?;
            let mut params = cfg.eval.clone();
            params.seed = seed.unwrap_or(params.seed);
            params.history_capacity = cfg.n;
            params.k = cfg.k;
            params.weight_exponent = cfg.weight_exponent;
            params.eps = cfg.eps;
            let started = Instant::now();
            let data = EvalData {
                catalog: &w.catalog,
                events: &w.events,
                segments: &w.segments,
            };
            let report = run_experiment(&data, &methods, &modes, &params)?;
            fs::create_dir_all(&out)?;
            let mut f = create(&out.join("report.csv"))?;
            report.write_csv(&mut f)?;
            f.flush()?;
            let summary = report.summary(&methods);
            fs::write(out.join("summary.txt"), &summary)?;
            print!("{summary}");
            eprintln!("eval took {:.1}s", started.elapsed().as_secs_f64());
        }
        Cmd::Ab { world, arms, seed, out } => {
            let arms = Arm::parse_list(&arms).with_context(|| format!("unknown arms {arms:?}"))?;
            let (spec, log) = match world {
                Some(dir) => {
                    let w = load_world_dir(&dir)?;
                    (w.spec, Some(w.events))
                }
                None => (cfg.world.clone(), None),
            };
            let world = generate_world(&spec)?;
            let log = log.unwrap_or_else(|| simulate_logs(&world));
            let mut params = cfg.ab.clone();
            params.assignment_seed = seed.unwrap_or(params.assignment_seed);
            let report = ab_replay(&world, &log, &arms, &params)?;
            print!("{}", report.table());
            if let Some(path) = out {
                let mut f = create(&path)?;
                serde_json::to_writer_pretty(&mut f, &report)?;
                writeln!(f)?;
                f.flush()?;
            }
        }
        Cmd::Replay {
            world,
            events,
            store,
            model,
        } => {
            let w = load_world_dir(&world)?;
            let store = Arc::new(FileStore::open(&store)?);
            let pipeline = Pipeline::new(Arc::clone(&store), Arc::new(w.catalog), history_policy(&cfg));
            let file = File::open(&events).with_context(|| format!("opening {}", events.display()))?;
            if let Some(m) = model {
                let m = Arc::new(load_model(&m)?);
                let start = w.spec.start_ts.div_euclid(cfg.window_len) * cfg.window_len;
                pipeline.set_attribution(Attribution::new(
                    m,
                    start,
                    cfg.window_len,
                    Horizon::Windows(cfg.merge_windows),
                )?);
            }
            let report = pipeline.replay(BufReader::new(file))?;
            store.compact()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Bench {
            candidates,
            k,
            d,
            requests,
            seed,
            out,
        } => {
            let params = BenchParams {
                candidates,
                k: k.unwrap_or(cfg.k),
                d: d.unwrap_or(cfg.d),
                requests,
                m: cfg.m,
                seed,
                ..BenchParams::default()
            };
            let report = run_bench(&params);
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

struct ServeOpts {
    world: PathBuf,
    model: Option<PathBuf>,
    ctr: Option<PathBuf>,
    listen: String,
    clock: Clock,
    workers: usize,
    replay: bool,
}

fn fit_kmeans<S: ProfileStore>(store: &S, cfg: &RunConfig, version: Timestamp) -> Result<ClusterModel> {
    let users: BTreeMap<String, Vec<f64>> = store
        .snapshot()
        .into_iter()
        .filter_map(|(u, p)| Some((u, p.vector.clone()?)))
        .collect();
    let params = KMeansParams {
        k: cfg.k.min(users.len()).max(1),
        seed: cfg.eval.seed,
        ..KMeansParams::default()
    };
    Ok(kmeans_fit(&users, &params)?.model.with_version(version as u64))
}

fn serve<S: ProfileStore + 'static>(store: Arc<S>, opts: ServeOpts, cfg: &RunConfig) -> Result<()> {
    let w = load_world_dir(&opts.world)?;
    let now = opts.clock.now();
    let pipeline = Arc::new(Pipeline::new(Arc::clone(&store), Arc::new(w.catalog), history_policy(cfg)));
    let align = |t: Timestamp| t.div_euclid(cfg.window_len) * cfg.window_len;

    let model = match &opts.model {
        Some(p) => Some(Arc::new(load_model(p)?)),
        None => None,
    };
    if opts.replay {
        if let Some(m) = &model {
            let start = align(w.events.first().map_or(now, |e| e.ts));
            let horizon = Horizon::Windows(cfg.merge_windows);
            pipeline.set_attribution(Attribution::new(Arc::clone(m), start, cfg.window_len, horizon)?);
        }
        let report = pipeline.replay_events(w.events.iter().filter(|e| e.ts < now))?;
        eprintln!("replayed {} events", report.lines);
    }
    let model = match model {
        Some(m) => m,
        None => Arc::new(fit_kmeans(&*store, cfg, now)?),
    };
    if pipeline.attribution_model().is_none() {
        let horizon = Horizon::Windows(cfg.merge_windows);
        pipeline.set_attribution(Attribution::new(Arc::clone(&model), align(now), cfg.window_len, horizon)?);
    }

    let service = Arc::new(RecService::new(Arc::clone(&pipeline), cfg.service()));
    match &opts.ctr {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let table = read_ctr(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?;
            service.refresh(Arc::clone(&model), Arc::new(table), now)?;
        }
        None => {
            if !service.refresh_from_pipeline(now)? {
                eprintln!("warning: no closed CTR window yet; /v1/recommend answers 503 until the first refresh");
            }
        }
    }

    let server = Arc::new(tiny_http::Server::http(&opts.listen).map_err(|e| anyhow::anyhow!("binding {}: {e}", opts.listen))?);
    eprintln!("listening on {}", opts.listen);
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed)).context("installing the interrupt handler")?;
    }

    let refresher = {
        let service = Arc::clone(&service);
        let pipeline = Arc::clone(&pipeline);
        let stop = Arc::clone(&stop);
        let cfg = cfg.clone();
        let clock = opts.clock;
        std::thread::spawn(move || {
            let mut last_ctr = Instant::now();
            let mut last_model = Instant::now();
            while !stop.load(Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(200));
                if last_model.elapsed() >= Duration::from_secs(cfg.model_refresh as u64) {
                    last_model = Instant::now();
                    let now = clock.now();
                    match fit_kmeans(&**pipeline.store(), &cfg, now) {
                        Ok(m) => match Attribution::new(
                            Arc::new(m),
                            now.div_euclid(cfg.window_len) * cfg.window_len,
                            cfg.window_len,
                            Horizon::Windows(cfg.merge_windows),
                        ) {
                            Ok(a) => pipeline.set_attribution(a),
                            Err(e) => eprintln!("model refresh: {e}"),
                        },
                        Err(e) => eprintln!("model refresh: {e:#}"),
                    }
                }
                if last_ctr.elapsed() >= Duration::from_secs(cfg.ctr_refresh as u64) {
                    last_ctr = Instant::now();
                    if let Err(e) = service.refresh_from_pipeline(clock.now()) {
                        eprintln!("ctr refresh: {e}");
                    }
                }
            }
        })
    };

    http::serve(Arc::clone(&server), Arc::clone(&service), opts.workers, cfg.m, opts.clock, Arc::clone(&stop));
    let _ = refresher.join();
    eprintln!("shut down after {} requests", service.metrics().requests);
    Ok(())
}
