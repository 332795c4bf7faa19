use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use vecpage::cache::CacheConfig;
use vecpage::diskstore::{page_capacity, write_index, DiskIndex};
use vecpage::graphbuild::{build_graph, BuildParams, GraphIndex};
use vecpage::layout::{default_cluster_count, insertion_layout, similarity_layout, LayoutKind, LayoutMap};
use vecpage::pqcodec;
use vecpage::search::{calibrate_theta, SearchIndex, SearchParams, DEFAULT_THETA};
use vecpage::synth::{gaussian_blobs_with_queries, BlobParams};
use vecpage::vecdata::{load_fvecs, write_fvecs, GroundTruth, VectorDataset};
use vecpage::workload::{run_workload, WorkloadParams};

use crate::report::{Report, TIMING_PREFIX};
use crate::{
    BenchArgs, BuildArgs, CacheArgs, CalibrateArgs, Command, CompareArgs, Failure, GtArgs, LayoutArgs, QueryArgs,
    SearchArgs, SynthArgs,
};

const VECTORS_FILE: &str = "vectors.fvecs";
const GRAPH_FILE: &str = "graph.bin";
const PQ_FILE: &str = "pq.bin";
const MANIFEST_FILE: &str = "manifest.txt";
const CALIBRATION_FILE: &str = "calibration.txt";
const MAX_DEFAULT_WORKERS: usize = 32;

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Build(a) => build(a),
        Command::Layout(a) => layout(a),
        Command::Gt(a) => gt(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
        Command::Compare(a) => compare(a),
    }
}

/// Paths inside an index directory.
struct IndexDir<'a>(&'a Path);

impl IndexDir<'_> {
    fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn index_file(&self, kind: LayoutKind) -> PathBuf {
        self.0.join(format!("index.{kind}.bin"))
    }

    fn layout_file(&self, kind: LayoutKind) -> PathBuf {
        self.0.join(format!("layout.{kind}.bin"))
    }

    fn require(&self, path: PathBuf, hint: &str) -> Result<PathBuf, Failure> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Failure::usage(format!("{} not found ({hint})", path.display())))
        }
    }

    fn vectors(&self) -> Result<VectorDataset, Failure> {
        let path = self.require(self.file(VECTORS_FILE), "run `vecpage build` first")?;
        Ok(load_fvecs(path)?)
    }

    fn graph(&self) -> Result<GraphIndex, Failure> {
        let path = self.require(self.file(GRAPH_FILE), "run `vecpage build` first")?;
        Ok(GraphIndex::read(path)?)
    }

    /// Theta from the calibration sidecar, if present.
    fn calibrated_theta(&self) -> Result<Option<f64>, Failure> {
        let path = self.file(CALIBRATION_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;
        let report = Report::parse(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let theta = report
            .get("theta")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|t| *t > 0.0 && *t < 1.0)
            .ok_or_else(|| Failure::data(format!("{}: missing or invalid theta", path.display())))?;
        Ok(Some(theta))
    }

    fn open(&self, kind: LayoutKind, cache: CacheConfig, direct_io: bool) -> Result<SearchIndex, Failure> {
        let hint = format!("run `vecpage layout --kind {kind}` first");
        let index_path = self.require(self.index_file(kind), &hint)?;
        let layout_path = self.require(self.layout_file(kind), &hint)?;
        let pq_path = self.require(self.file(PQ_FILE), "run `vecpage build` first")?;
        let disk = DiskIndex::open_with(index_path, direct_io)?;
        let layout = LayoutMap::read(layout_path)?;
        let (codebook, codes) = pqcodec::read_sidecar(pq_path)?;
        Ok(SearchIndex::new(disk, Arc::new(layout), codebook, codes, cache)?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let params = BlobParams {
        n: a.n,
        dim: a.dim,
        blobs: a.blobs,
        spread: a.spread,
        center_range: a.center_range,
        seed: a.seed,
    };
    let queries_out = match (a.queries, &a.queries_out) {
        (0, _) => None,
        (_, Some(p)) => Some(p),
        (_, None) => return Err(Failure::usage("--queries-out is required when --queries > 0")),
    };
    let (base, queries) = gaussian_blobs_with_queries(&params, a.queries)?;
    write_fvecs(&a.out, &base)?;
    if let (Some(q), Some(path)) = (&queries, queries_out) {
        write_fvecs(path, q)?;
    }
    let mut r = Report::new("synth");
    r.push("n", a.n);
    r.push("dim", a.dim);
    r.push("blobs", a.blobs);
    r.push("spread", a.spread);
    r.push("center_range", a.center_range);
    r.push("seed", a.seed);
    r.push("queries", a.queries);
    r.push("out", a.out.display());
    r.push(
        "queries_out",
        queries_out.map_or("none".into(), |p| p.display().to_string()),
    );
    r.emit(None)
}

fn build(a: BuildArgs) -> Result<(), Failure> {
    let stage =
        |name: &'static str| move |e: vecpage::Error| Failure::from(e).during(&format!("build failed at {name}"));
    let dataset = load_fvecs(&a.data).map_err(stage("load"))?;
    let params = BuildParams {
        max_degree: a.max_degree,
        build_list: a.build_list,
        alpha: a.alpha,
        seed: a.seed,
    };
    let subspaces = a
        .pq_subspaces
        .unwrap_or_else(|| pqcodec::default_subspaces(dataset.dim()));
    let graph = build_graph(&dataset, &params).map_err(stage("graph"))?;
    graph.validate().map_err(stage("graph validation"))?;
    let codebook =
        pqcodec::train(&dataset, subspaces, a.pq_centroids, a.pq_iters, a.seed).map_err(stage("pq training"))?;
    let codes = codebook.encode_all(&dataset).map_err(stage("pq encoding"))?;

    fs::create_dir_all(&a.out).map_err(|e| Failure::io(&a.out, e).during("build failed at output"))?;
    let dir = IndexDir(&a.out);
    write_fvecs(dir.file(VECTORS_FILE), &dataset).map_err(stage("output"))?;
    graph.write(dir.file(GRAPH_FILE)).map_err(stage("output"))?;
    pqcodec::write_sidecar(dir.file(PQ_FILE), &codebook, &codes).map_err(stage("output"))?;

    let mut r = Report::new("build");
    r.push("n", dataset.len());
    r.push("dim", dataset.dim());
    r.push("max_degree", a.max_degree);
    r.push("build_list", a.build_list);
    r.push("alpha", a.alpha);
    r.push("seed", a.seed);
    r.push("pq_subspaces", subspaces);
    r.push("pq_centroids", a.pq_centroids);
    r.push("pq_iters", a.pq_iters);
    r.push("entry", graph.entry());
    let edges: usize = (0..graph.len() as u32).map(|v| graph.neighbors(v).len()).sum();
    r.float("mean_degree", edges as f64 / graph.len() as f64);
    write_text(&dir.file(MANIFEST_FILE), &r.render())?;
    r.push("out", a.out.display());
    r.emit(None)
}

fn layout(a: LayoutArgs) -> Result<(), Failure> {
    let dir = IndexDir(&a.index);
    let dataset = dir.vectors()?;
    let graph = dir.graph()?;
    let cap = page_capacity(a.page_size, dataset.dim(), graph.max_degree())?;
    let clusters = match a.kind {
        LayoutKind::Insertion => 1,
        LayoutKind::Similarity => a.clusters.unwrap_or_else(|| default_cluster_count(dataset.len(), cap)),
    };
    let map = match a.kind {
        LayoutKind::Insertion => insertion_layout(&dataset, cap)?,
        LayoutKind::Similarity => similarity_layout(&dataset, clusters, cap, a.kmeans_iters, a.seed)?,
    };
    let index_path = dir.index_file(a.kind);
    write_index(&index_path, &dataset, &graph, &map, a.page_size)?;
    map.write(dir.layout_file(a.kind))?;

    let mut r = Report::new("layout");
    r.push("layout_kind", a.kind);
    r.push("clusters", map.clusters().len());
    r.push("kmeans_iters", a.kmeans_iters);
    r.push("seed", a.seed);
    r.push("page_size", a.page_size);
    r.push("page_capacity", cap);
    r.push("total_pages", map.total_pages());
    r.push("index_bytes", (map.total_pages() + 1) * a.page_size as u64);
    r.float("mean_intra_page_distance", map.mean_intra_page_distance(&dataset));
    r.emit(None)
}

fn gt(a: GtArgs) -> Result<(), Failure> {
    let dataset = load_fvecs(&a.data)?;
    let queries = load_fvecs(&a.queries)?;
    let truth = GroundTruth::compute(&dataset, &queries, a.k)?;
    truth.write(&a.out)?;
    let mut r = Report::new("gt");
    r.push("k", a.k);
    r.push("queries", queries.len());
    r.push("out", a.out.display());
    r.emit(None)
}

fn search_params(s: &SearchArgs, theta: f64) -> Result<SearchParams, Failure> {
    let p = SearchParams {
        k: s.k,
        l: s.l.unwrap_or(s.k.max(100)),
        beam_width: s.beam_width,
        theta,
        window_pages: s.window_pages,
    };
    p.validate()?;
    Ok(p)
}

fn echo_search(r: &mut Report, p: &SearchParams) {
    r.push("k", p.k);
    r.push("l", p.l);
    r.push("beam_width", p.beam_width);
    r.float("theta", p.theta);
    r.push("window_pages", p.window_pages);
}

fn calibrate(a: CalibrateArgs) -> Result<(), Failure> {
    let dir = IndexDir(&a.index);
    let dataset = dir.vectors()?;
    let index = dir.open(a.kind, CacheConfig::disabled(), false)?;
    let params = search_params(&a.search, DEFAULT_THETA)?;
    let cal = calibrate_theta(&index, &dataset, a.fraction, &params, a.seed)?;

    let mut r = Report::new("calibrate");
    r.float("theta", cal.theta);
    r.push("layout_kind", a.kind);
    r.push("k", params.k);
    r.push("l", params.l);
    r.push("beam_width", params.beam_width);
    r.float("fraction", a.fraction);
    r.push("seed", a.seed);
    r.push("samples", cal.sample.len());
    r.push("samples_with_transitions", cal.transitions.len());
    r.push("fallback", cal.used_fallback);
    let mean = |f: fn(&(u32, u32)) -> u32| {
        cal.transitions.iter().map(|t| f64::from(f(t))).sum::<f64>() / cal.transitions.len() as f64
    };
    r.float("mean_truth_iter", mean(|t| t.0));
    r.float("mean_panns_iter", mean(|t| t.1));
    write_text(&dir.file(CALIBRATION_FILE), &r.render())?;
    r.emit(a.out.as_deref())
}

/// Resolves the cache flags against the index file that will be searched.
fn cache_config(dir: &IndexDir, kind: LayoutKind, c: &CacheArgs) -> Result<(CacheConfig, String), Failure> {
    let budget = c.cache_budget.trim();
    let nodes = if let Some(pct) = budget.strip_suffix('%') {
        let pct: f64 = pct
            .trim()
            .parse()
            .ok()
            .filter(|p: &f64| (0.0..=100.0).contains(p))
            .ok_or_else(|| Failure::usage(format!("invalid cache budget {budget:?}")))?;
        let path = dir.require(
            dir.index_file(kind),
            &format!("run `vecpage layout --kind {kind}` first"),
        )?;
        let disk = DiskIndex::open(path)?;
        let h = disk.header();
        (h.file_size() as f64 * pct / 100.0 / h.slot_size() as f64).floor() as usize
    } else {
        budget
            .parse()
            .map_err(|_| Failure::usage(format!("invalid cache budget {budget:?} (nodes or a percentage)")))?
    };
    let config = CacheConfig {
        total_budget_nodes: nodes,
        static_fraction: c.static_frac,
        policy: c.policy,
        seed: c.cache_seed,
    };
    config.validate()?;
    Ok((config, budget.to_string()))
}

fn echo_cache(r: &mut Report, index: &SearchIndex, c: &CacheArgs, spec: &str) {
    let cache = index.cache();
    let cfg = cache.config();
    r.push("cache_budget", spec);
    r.push("cache_budget_nodes", cfg.total_budget_nodes);
    r.float("cache_static_frac", cfg.static_fraction);
    r.push("cache_static_nodes", cache.static_cache().len());
    r.push("cache_dynamic_pages", cache.dynamic().capacity());
    r.push("cache_policy", cfg.policy);
    r.push("cache_seed", cfg.seed);
    r.push("cache_reset", c.reset.as_str());
    r.push("os_cache_bypass", index.disk().os_cache_bypass());
}

fn resolve_theta(dir: &IndexDir, flag: Option<f64>) -> Result<(f64, &'static str), Failure> {
    Ok(match flag {
        Some(t) => (t, "flag"),
        None => match dir.calibrated_theta()? {
            Some(t) => (t, "calibration"),
            None => (DEFAULT_THETA, "default"),
        },
    })
}

fn query(a: QueryArgs) -> Result<(), Failure> {
    let dir = IndexDir(&a.index);
    let (theta, theta_source) = resolve_theta(&dir, a.theta)?;
    let params = search_params(&a.search, theta)?;
    let (cache, budget) = cache_config(&dir, a.kind, &a.cache)?;
    let index = dir.open(a.kind, cache, a.cache.direct_io)?;
    let queries = load_fvecs(&a.queries)?;
    let count = a.count.unwrap_or(queries.len()).min(queries.len());

    let mut r = Report::new("query");
    r.push("layout_kind", a.kind);
    echo_search(&mut r, &params);
    r.push("theta_source", theta_source);
    echo_cache(&mut r, &index, &a.cache, &budget);
    r.push("query_count", count);

    let mut trace = String::from("query,iter,expanded_id,exact_dist,phase,hit_kind\n");
    for qi in 0..count {
        if a.cache.reset == vecpage::workload::DynamicReset::PerQuery {
            index.cache().reset_dynamic();
        }
        let out = index.beam_search(queries.get(qi as u32), &params, None)?;
        let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(",");
        r.push(
            format!("q{qi}.ids"),
            join(&mut out.neighbors.iter().map(|n| n.0.to_string())),
        );
        r.push(
            format!("q{qi}.dists"),
            join(&mut out.neighbors.iter().map(|n| format!("{:.6}", n.1))),
        );
        r.push(format!("q{qi}.iterations"), out.stats.iterations);
        r.push(format!("q{qi}.io_ops"), out.stats.io.io_ops);
        r.push(format!("q{qi}.pages_read"), out.stats.io.pages_read);
        r.push(
            format!("q{qi}.transition_iter"),
            out.stats.transition_iter_theta.map_or("none".into(), |t| t.to_string()),
        );
        for t in &out.stats.trace {
            trace.push_str(&format!(
                "{qi},{},{},{:.6},{},{}\n",
                t.iter,
                t.id,
                t.dist,
                t.phase,
                t.hit.as_str()
            ));
        }
    }
    if let Some(path) = &a.trace {
        write_text(path, &trace)?;
    }
    r.emit(a.out.as_deref())
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let dir = IndexDir(&a.index);
    let (theta, theta_source) = resolve_theta(&dir, a.theta)?;
    let params = search_params(&a.search, theta)?;
    let (cache, budget) = cache_config(&dir, a.kind, &a.cache)?;
    let index = dir.open(a.kind, cache, a.cache.direct_io)?;
    let queries = load_fvecs(&a.queries)?;
    let truth = a.gt.as_ref().map(GroundTruth::load).transpose()?;
    let workers = a.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(MAX_DEFAULT_WORKERS)
    });
    let wl = WorkloadParams {
        search: params,
        repetitions: a.repetitions,
        workers,
        reset: a.cache.reset,
    };
    let rep = run_workload(&index, &queries, truth.as_ref(), &wl)?;

    let mut r = Report::new("bench");
    r.push("index", a.index.display());
    r.push("layout_kind", a.kind);
    r.push("queries", a.queries.display());
    r.push("gt", a.gt.as_ref().map_or("none".into(), |p| p.display().to_string()));
    r.push("query_count", rep.queries);
    echo_search(&mut r, &params);
    r.push("theta_source", theta_source);
    echo_cache(&mut r, &index, &a.cache, &budget);
    r.push("page_size", index.disk().header().page_size);
    r.push("page_capacity", index.disk().header().page_capacity);
    r.push("workers", workers);
    r.push("repetitions", a.repetitions);
    r.push("executions", rep.executions);
    r.opt_float("recall_at_k", rep.recall);
    r.float("mean_io_ops", rep.mean_io_ops);
    r.float("mean_pages_read", rep.mean_pages_read);
    for phase in [1u8, 2] {
        let h = rep.hits.phase(phase);
        r.push(format!("lookups_phase{phase}"), h.lookups());
        r.float(format!("hit_rate_phase{phase}"), h.hit_rate());
        r.float(format!("static_hit_rate_phase{phase}"), h.static_hit_rate());
        r.float(format!("dynamic_hit_rate_phase{phase}"), h.dynamic_hit_rate());
    }
    r.float("hit_rate_total", rep.hits.total().hit_rate());
    r.float("mean_iterations", rep.mean_iterations);
    r.opt_float("mean_transition_iter_theta", rep.mean_transition_theta);
    r.opt_float("mean_transition_iter_panns", rep.mean_transition_panns);
    r.opt_float("mean_transition_iter_truth", rep.mean_transition_truth);
    let per_iter = |f: fn(&vecpage::cache::HitCounts) -> f64| {
        rep.hits_by_iteration
            .iter()
            .map(|h| format!("{:.4}", f(h)))
            .collect::<Vec<_>>()
            .join(",")
    };
    r.push("static_hit_rate_by_iter", per_iter(|h| h.static_hit_rate()));
    r.push("hit_rate_by_iter", per_iter(|h| h.hit_rate()));
    r.float(format!("{TIMING_PREFIX}wall_seconds"), rep.wall.as_secs_f64());
    r.float(format!("{TIMING_PREFIX}qps"), rep.qps);
    r.float(format!("{TIMING_PREFIX}latency_mean_ms"), rep.latency_mean_ms);
    r.float(format!("{TIMING_PREFIX}latency_p50_ms"), rep.latency_p50_ms);
    r.float(format!("{TIMING_PREFIX}latency_p95_ms"), rep.latency_p95_ms);
    r.float(format!("{TIMING_PREFIX}latency_p99_ms"), rep.latency_p99_ms);
    r.emit(a.out.as_deref())
}

fn read_report(path: &Path) -> Result<Report, Failure> {
    if !path.exists() {
        return Err(Failure::usage(format!("{} not found", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let r = Report::parse(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    if r.get("report") != Some("bench") {
        return Err(Failure::data(format!("{} is not a bench report", path.display())));
    }
    Ok(r)
}

const COMPARED_METRICS: &[&str] = &[
    "recall_at_k",
    "mean_io_ops",
    "mean_pages_read",
    "hit_rate_phase1",
    "hit_rate_phase2",
    "mean_transition_iter_theta",
];

const CONFIG_KEYS: &[&str] = &[
    "layout_kind",
    "query_count",
    "k",
    "l",
    "beam_width",
    "theta",
    "window_pages",
    "cache_budget_nodes",
    "cache_static_frac",
    "cache_policy",
    "cache_reset",
    "workers",
    "repetitions",
];

fn compare(a: CompareArgs) -> Result<(), Failure> {
    let ra = read_report(&a.a)?;
    let rb = read_report(&a.b)?;
    let num = |r: &Report, key: &str| -> Option<f64> { r.get(key).and_then(|v| v.parse().ok()) };

    let mut r = Report::new("compare");
    r.push("a", a.a.display());
    r.push("b", a.b.display());
    let differing: Vec<&str> = CONFIG_KEYS.iter().copied().filter(|k| ra.get(k) != rb.get(k)).collect();
    r.push(
        "differing_config",
        if differing.is_empty() {
            "none".into()
        } else {
            differing.join(",")
        },
    );
    for key in CONFIG_KEYS {
        if differing.contains(key) {
            r.push(format!("a.{key}"), ra.get(key).unwrap_or("missing"));
            r.push(format!("b.{key}"), rb.get(key).unwrap_or("missing"));
        }
    }
    for key in COMPARED_METRICS {
        r.push(format!("a.{key}"), ra.get(key).unwrap_or("missing"));
        r.push(format!("b.{key}"), rb.get(key).unwrap_or("missing"));
    }
    let ratio = |key: &str| match (num(&ra, key), num(&rb, key)) {
        (Some(x), Some(y)) if x > 0.0 => Some(y / x),
        _ => None,
    };
    let io = ratio("mean_io_ops");
    r.opt_float("io_ops_ratio", io);
    r.opt_float("io_ops_reduction", io.map(|x| 1.0 - x));
    r.opt_float("pages_read_ratio", ratio("mean_pages_read"));
    r.opt_float(
        format!("{TIMING_PREFIX}qps_ratio"),
        ratio(&format!("{TIMING_PREFIX}qps")),
    );
    r.emit(a.out.as_deref())
}
