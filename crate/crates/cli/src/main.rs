//! `reloc`: build intensity-panorama map databases and relocalize camera
//! images against them.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use intensity_reloc::config::{env_seed, ConfigError};
use intensity_reloc::eval::{align_results, format_result, parse_results, recall_at_k, reloc_recall, EvalReport, DEFAULT_RECALL_KS, RECALL_DIST_M, RR_THRESHOLDS};
use intensity_reloc::harness::{generate_dataset, write_dataset, SynthConfig};
use intensity_reloc::io::{load_image, load_intrinsics, load_point_cloud, load_trajectory, sample_trajectory, save_pgm};
use intensity_reloc::mapdb::{build_database, build_map_image, covis_histogram, load_database, prepare_cloud, save_database};
use intensity_reloc::pipeline::{dump_matches, Relocalizer};
use intensity_reloc::pose::RelocalizationResult;
use intensity_reloc::{Database, PipelineConfig};

#[derive(Parser)]
#[command(name = "reloc", version, about = "Camera relocalization in LiDAR intensity maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Build a map database from a point cloud and trajectory.
    BuildDb(BuildArgs),
    /// Print retrieval candidates for query images.
    Retrieve(QueryArgs),
    /// Estimate camera poses for query images.
    Relocalize(RelocArgs),
    /// Score relocalization results against ground truth.
    Evaluate(EvalArgs),
    /// Render the intensity panorama at one trajectory pose.
    RenderPano(PanoArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set ransac.max_iters=500`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Render panoramas as a plain cube map.
    #[arg(long)]
    no_hec: bool,
    /// Linear intensity scaling instead of equalization, no CLAHE.
    #[arg(long)]
    no_equalization: bool,
    /// Keep the plain top-K′ retrieval candidates.
    #[arg(long)]
    no_covis_cluster: bool,
    /// First-stage matching only.
    #[arg(long, alias = "single-stage")]
    no_two_stage: bool,
    /// Keep correspondences regardless of covisibility.
    #[arg(long)]
    no_covis_filter: bool,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<&PipelineConfig>) -> Result<PipelineConfig, CliError> {
        let cfg = match (&self.config, base) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, Some(b)) => b.clone(),
            (None, None) => PipelineConfig::default(),
        };
        let mut cfg = cfg.with_overrides(&self.overrides)?;
        let a = &mut cfg.ablation;
        a.use_hec &= !self.no_hec;
        a.use_equalization &= !self.no_equalization;
        a.use_covis_cluster &= !self.no_covis_cluster;
        a.use_two_stage &= !self.no_two_stage;
        a.use_covis_filter &= !self.no_covis_filter;
        Ok(cfg.with_env_seed()?)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Synthesis configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    poses: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    /// Query position jitter sigma in meters.
    #[arg(long)]
    trans_sigma: Option<f64>,
    /// Query rotation jitter sigma in degrees.
    #[arg(long)]
    rot_sigma: Option<f64>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    bias: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    /// Output database directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct QueryArgs {
    /// Database directory.
    #[arg(long)]
    db: PathBuf,
    /// Query intrinsics (TOML).
    #[arg(long)]
    intrinsics: PathBuf,
    /// Query images, or directories of images.
    #[arg(required = true)]
    queries: Vec<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct RelocArgs {
    #[command(flatten)]
    q: QueryArgs,
    /// Write match visualizations and correspondences per query here.
    #[arg(long)]
    dump_matches: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Output of `relocalize`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Output of `retrieve`, for Recall@K (needs `--db`).
    #[arg(long, requires = "db")]
    retrieval: Option<PathBuf>,
    #[arg(long)]
    db: Option<PathBuf>,
    /// Where to write `report.tsv`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PanoArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    /// Index into the sampled projecting poses.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Output PGM.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

/// Input problems exit with 2, everything else with 1.
enum CliError {
    Input(String),
    Internal(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Synth(a) => synth(a),
        Command::BuildDb(a) => build_db(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Relocalize(a) => relocalize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::RenderPano(a) => render_pano(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| input(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.scene.seed = s;
    }
    if let Some(s) = env_seed()? {
        cfg.scene.seed = s;
    }
    if let Some(n) = a.poses {
        cfg.n_poses = n;
    }
    if let Some(n) = a.queries {
        cfg.n_queries = n;
    }
    let q = &mut cfg.query;
    q.trans_sigma_m = a.trans_sigma.unwrap_or(q.trans_sigma_m);
    q.rot_sigma_deg = a.rot_sigma.unwrap_or(q.rot_sigma_deg);
    q.gain = a.gain.unwrap_or(q.gain);
    q.bias = a.bias.unwrap_or(q.bias);
    let ds = generate_dataset(&cfg).map_err(input)?;
    write_dataset(&ds, &a.out).map_err(internal)?;
    println!(
        "wrote {}: {} points, {} poses, {} queries",
        a.out.display(),
        ds.cloud.len(),
        ds.trajectory.len(),
        ds.queries.len()
    );
    Ok(())
}

fn build_db(a: BuildArgs) -> Result<(), CliError> {
    let cfg = a.cfg.resolve(None)?;
    let cloud = load_point_cloud(&a.map).map_err(input)?;
    let traj = load_trajectory(&a.traj).map_err(input)?;
    let db = build_database(&cloud, &traj, &cfg).map_err(input)?;
    save_database(&db, &a.out).map_err(internal)?;
    println!("images {}", db.len());
    println!("points {}", db.cloud.len());
    let hist = covis_histogram(&db.covis);
    let summary: Vec<String> = hist.iter().map(|(c, n)| format!("{c}:{n}")).collect();
    println!("covis {}", summary.join(" "));
    Ok(())
}

/// Expands directories into their image files, sorted by name.
fn collect_queries(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let rd = std::fs::read_dir(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            let mut files: Vec<PathBuf> = rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "pgm" | "png"))
                })
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Numeric file stem, else the position in the query list.
fn query_id(path: &Path, index: usize) -> i64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(index as i64)
}

/// Database plus the online configuration. Map-side switches always follow
/// the database.
fn open_db(q: &QueryArgs) -> Result<(Database, PipelineConfig), CliError> {
    let db = load_database(&q.db).map_err(input)?;
    let mut cfg = q.cfg.resolve(Some(&db.config))?;
    for (name, want, have) in [
        ("use_hec", cfg.ablation.use_hec, db.config.ablation.use_hec),
        ("use_equalization", cfg.ablation.use_equalization, db.config.ablation.use_equalization),
    ] {
        if want != have {
            log::warn!("ablation.{name}={want} ignored: the database was built with {have}");
        }
    }
    cfg.ablation.use_hec = db.config.ablation.use_hec;
    cfg.ablation.use_equalization = db.config.ablation.use_equalization;
    Ok((db, cfg))
}

fn retrieve(a: QueryArgs) -> Result<(), CliError> {
    let (db, cfg) = open_db(&a)?;
    let k = load_intrinsics(&a.intrinsics).map_err(input)?;
    let reloc = Relocalizer::new(&db, cfg).map_err(input)?;
    let stdout = std::io::stdout();
    for (i, path) in collect_queries(&a.queries)?.iter().enumerate() {
        let mut out = stdout.lock();
        let id = query_id(path, i);
        let img = match load_image(path) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("query {id}: {e}");
                let _ = writeln!(out, "# query {id}\n# failed: {e}");
                continue;
            }
        };
        let r = reloc.retrieve(&reloc.preprocess(&img), &k);
        let _ = writeln!(out, "# query {id}");
        for c in &r.topk {
            let label = c.cluster_label.map_or(-1, |l| l as i64);
            let _ = writeln!(out, "{} {} {:.6} {}", c.image_id, c.best_patch.index(), c.score, label);
        }
        let sel: Vec<String> = r.selected.iter().map(|c| c.image_id.to_string()).collect();
        let _ = writeln!(out, "# selected {}", sel.join(" "));
    }
    Ok(())
}

fn relocalize(a: RelocArgs) -> Result<(), CliError> {
    let (db, cfg) = open_db(&a.q)?;
    let k = load_intrinsics(&a.q.intrinsics).map_err(input)?;
    let reloc = Relocalizer::new(&db, cfg).map_err(input)?;
    let stdout = std::io::stdout();
    for (i, path) in collect_queries(&a.q.queries)?.iter().enumerate() {
        let id = query_id(path, i);
        let res = match load_image(path) {
            Err(e) => RelocalizationResult::failed(format!("unreadable query: {e}"), 0),
            Ok(img) => match reloc.relocalize(&img, &k) {
                Err(e) => RelocalizationResult::failed(e.to_string(), 0),
                Ok(out) => {
                    if let Some(dir) = &a.dump_matches {
                        dump_matches(&dir.join(format!("{id:04}")), &img, &db, &out).map_err(internal)?;
                    }
                    let s = out.result.stats;
                    log::info!(
                        "query {id}: {} candidates ({} rejected), {} matches, {} lifted, {} after filtering",
                        s.candidates,
                        s.rejected_candidates,
                        s.matches,
                        s.lifted,
                        s.filtered
                    );
                    out.result
                }
            },
        };
        let mut out = stdout.lock();
        let _ = writeln!(out, "{}", format_result(id, &res));
        let _ = out.flush();
    }
    Ok(())
}

/// Ranked image ids per query id from `retrieve` output.
fn parse_retrieval(text: &str) -> Result<Vec<(i64, Vec<usize>)>, CliError> {
    let mut out: Vec<(i64, Vec<usize>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# query") {
            let id = rest.trim().parse().map_err(|_| input(format!("retrieval line {}: bad query id", n + 1)))?;
            out.push((id, Vec::new()));
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split_whitespace().next().unwrap_or("");
        let img = first.parse().map_err(|_| input(format!("retrieval line {}: bad image id '{first}'", n + 1)))?;
        match out.last_mut() {
            Some((_, list)) => list.push(img),
            None => return Err(input(format!("retrieval line {}: candidate before '# query'", n + 1))),
        }
    }
    Ok(out)
}

fn evaluate(a: EvalArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.results).map_err(|e| input(format!("{}: {e}", a.results.display())))?;
    let results = parse_results(&text).map_err(input)?;
    let gt = load_trajectory(&a.gt).map_err(input)?;
    let (preds, gt_poses) = align_results(&results, &gt).map_err(input)?;
    let reloc = reloc_recall(&preds, &gt_poses, &RR_THRESHOLDS).map_err(input)?;
    let recall = match (&a.retrieval, &a.db) {
        (Some(rp), Some(dbp)) => {
            let text = std::fs::read_to_string(rp).map_err(|e| input(format!("{}: {e}", rp.display())))?;
            let lists = parse_retrieval(&text)?;
            let db = load_database(dbp).map_err(input)?;
            let mut positions = Vec::with_capacity(lists.len());
            let mut truth = Vec::with_capacity(lists.len());
            for (id, list) in &lists {
                let (_, g) = gt
                    .entries()
                    .iter()
                    .find(|(gid, _)| gid == id)
                    .ok_or_else(|| input(format!("retrieval query {id} has no ground truth")))?;
                let mut pos = Vec::with_capacity(list.len());
                for &img in list {
                    if img >= db.len() {
                        return Err(input(format!("retrieval references image {img}, database has {}", db.len())));
                    }
                    pos.push(db.pose(img).translation());
                }
                positions.push(pos);
                truth.push(*g);
            }
            Some(recall_at_k(&positions, &truth, &DEFAULT_RECALL_KS, RECALL_DIST_M).map_err(input)?)
        }
        _ => None,
    };
    let report = EvalReport {
        recall_at_k: recall,
        reloc,
    };
    print!("{}", report.to_text());
    std::fs::create_dir_all(&a.out).map_err(|e| internal(format!("{}: {e}", a.out.display())))?;
    let tsv = a.out.join("report.tsv");
    std::fs::write(&tsv, report.to_tsv()).map_err(|e| internal(format!("{}: {e}", tsv.display())))?;
    Ok(())
}

fn render_pano(a: PanoArgs) -> Result<(), CliError> {
    let cfg = a.cfg.resolve(None)?;
    let cloud = load_point_cloud(&a.map).map_err(input)?;
    let traj = load_trajectory(&a.traj).map_err(input)?;
    let poses = sample_trajectory(&traj, cfg.mapping.interval_m);
    let pose = poses
        .get(a.index)
        .ok_or_else(|| input(format!("pose index {} out of range ({} projecting poses)", a.index, poses.len())))?;
    let eq = prepare_cloud(&cloud, &cfg);
    let img = build_map_image(&eq, pose, a.index as u32, &cfg).map_err(input)?;
    save_pgm(&a.out, &img.intensity).map_err(internal)?;
    println!("{}x{} panorama, {} visible points", img.width(), img.height(), img.visible_points().len());
    Ok(())
}
