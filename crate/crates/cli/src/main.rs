use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lfid_client::Client;
use lfid_core::compressor::{TrainConfig, MIN_CORPUS};
use lfid_core::config::Config;
use lfid_core::extract::{train_models, Extractor, LatentArtifacts, Models};
use lfid_core::gallery::GalleryIndex;
use lfid_core::image::Gray;
use lfid_core::model::CandidateList;
use lfid_core::pq::DEFAULT_SUBQUANTIZERS;
use lfid_core::search::{evaluate_cmc, score_gallery, search_gallery_detailed, ScoreMatrix};
use lfid_core::synthetic::{synthetic_print, PrintParams};

#[derive(Debug, Parser)]
#[command(name = "lfid", version, about = "Latent fingerprint identification")]
struct Cli {
    /// TOML file overriding default thresholds.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build reference templates for every image in a directory.
    Enroll(EnrollArgs),
    /// Search one latent image against a gallery.
    Search(SearchArgs),
    /// Search a directory of probes and write a CMC curve.
    Eval(EvalArgs),
    /// Descriptor compressor and texture codebook.
    #[command(subcommand)]
    Codebook(CodebookCommand),
    /// Run the HTTP service over a gallery.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct EnrollArgs {
    dir: PathBuf,
    /// Gallery directory to create or extend.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trained models; required unless extending an existing gallery.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Enroll through a running service instead.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    latent: PathBuf,
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    topk: usize,
    /// Print the candidate list as JSON.
    #[arg(long)]
    json: bool,
    /// Search through a running service instead of a local gallery.
    #[arg(long)]
    server: Option<String>,
    /// Write intermediate images, fields and correspondences here.
    #[arg(long)]
    debug: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    probes: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    cmc: PathBuf,
    /// CSV of `probe,mate` pairs; by default a probe's mate shares its file stem.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    max_rank: usize,
}

#[derive(Debug, Subcommand)]
enum CodebookCommand {
    /// Train from a directory of print images or from synthetic prints.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    corpus: Option<PathBuf>,
    /// Use this many synthetic prints instead of a corpus directory.
    #[arg(long, conflicts_with = "corpus")]
    synthetic: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Random ROI points sampled per image on top of detected minutiae.
    #[arg(long, default_value_t = 300)]
    per_image: usize,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = DEFAULT_SUBQUANTIZERS)]
    subquantizers: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Refuse to train on fewer descriptors than this.
    #[arg(long, default_value_t = MIN_CORPUS)]
    min_corpus: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm" | "pnm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> Result<String> {
    Ok(path.file_stem().and_then(|s| s.to_str()).with_context(|| format!("no file name in {}", path.display()))?.to_string())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn enroll(args: EnrollArgs, config: Config) -> Result<()> {
    let files = image_files(&args.dir)?;
    if let Some(server) = args.server {
        let client = Client::new(server);
        return runtime()?.block_on(async {
            for f in &files {
                let r = client.enroll(&stem(f)?, std::fs::read(f)?).await?;
                println!("{}\t{} minutiae\t{} virtual", r.id, r.minutiae, r.virtual_minutiae);
            }
            Ok(())
        });
    }
    let out = args.out.context("--out is required without --server")?;
    let mut gallery = if out.join(lfid_core::gallery::MANIFEST_FILE).exists() {
        GalleryIndex::load(&out)?
    } else {
        let models = args.models.context("--models is required for a new gallery")?;
        GalleryIndex::new(Arc::new(Models::load(&models)?))
    };
    let extractor = Extractor::new(config, gallery.models().clone());
    for f in &files {
        let id = stem(f)?;
        let templates = extractor.reference(&Gray::load(f)?).with_context(|| format!("enrolling {}", f.display()))?;
        println!("{id}\t{} minutiae\t{} virtual", templates.minutiae.len(), templates.texture.len());
        gallery.insert(id, templates, Some(std::path::absolute(f)?))?;
    }
    gallery.save(&out)?;
    println!("gallery {} holds {} references", out.display(), gallery.len());
    Ok(())
}

fn print_candidates(list: &CandidateList) {
    println!("rank\tid\tfused\tm1\tm2\tm3\ttexture");
    for (i, c) in list.entries().iter().enumerate() {
        let s = &c.scores;
        println!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            i + 1,
            c.reference_id,
            c.fused_score,
            s.minutiae[0],
            s.minutiae[1],
            s.minutiae[2],
            s.texture
        );
    }
}

fn write_debug(dir: &Path, name: &str, image: &Gray, art: &LatentArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for p in &art.processed {
        p.pixels.save_pgm(&dir.join(format!("{name}_{}.pgm", p.tag.as_str())))?;
    }
    art.fields.write_planes(std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}_fields.bin")))?))?;
    art.fields.render_overlay(image).save(dir.join(format!("{name}_overlay.png")))?;
    let mut sets = String::new();
    for (k, set) in art.sets.iter().enumerate() {
        for m in set {
            sets.push_str(&format!("{}\t{:.2}\t{:.2}\t{:.4}\n", k + 1, m.x, m.y, m.theta));
        }
    }
    std::fs::write(dir.join(format!("{name}_minutiae.tsv")), sets)?;
    Ok(())
}

fn search(args: SearchArgs, config: Config) -> Result<()> {
    if let Some(server) = args.server {
        let bytes = std::fs::read(&args.latent)?;
        let resp = runtime()?.block_on(Client::new(server).search_image(bytes, args.topk))?;
        if args.json {
            println!("{}", serde_json::to_string_pretty(&resp.candidates)?);
        } else {
            print_candidates(&resp.candidates);
        }
        return Ok(());
    }
    let gallery = GalleryIndex::load(&args.gallery.context("--gallery is required without --server")?)?;
    let extractor = Extractor::new(config, gallery.models().clone());
    let image = Gray::load(&args.latent)?;
    let (probe, art) = extractor.latent_with_artifacts(&image)?;
    let detailed = search_gallery_detailed(&probe, &gallery, args.topk, &config)?;
    if let Some(dir) = &args.debug {
        let name = stem(&args.latent)?;
        write_debug(dir, &name, &image, &art)?;
        std::fs::write(dir.join(format!("{name}_candidates.json")), serde_json::to_string_pretty(&detailed)?)?;
    }
    let list = CandidateList::from_unsorted(detailed.into_iter().map(|d| d.candidate).collect(), args.topk);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&list)?);
    } else {
        print_candidates(&list);
    }
    Ok(())
}

fn read_truth(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (n, line) in std::fs::read_to_string(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("probe")) {
            continue;
        }
        let (p, m) = line.split_once(',').with_context(|| format!("{}:{}: expected probe,mate", path.display(), n + 1))?;
        out.insert(p.trim().to_string(), m.trim().to_string());
    }
    Ok(out)
}

fn eval(args: EvalArgs, config: Config) -> Result<()> {
    let gallery = GalleryIndex::load(&args.gallery)?;
    let extractor = Extractor::new(config, gallery.models().clone());
    let probes = image_files(&args.probes)?;
    if probes.is_empty() {
        bail!("no probe images in {}", args.probes.display());
    }
    let mut matrix = ScoreMatrix {
        probe_ids: Vec::new(),
        gallery_ids: gallery.entries().iter().map(|e| e.id.clone()).collect(),
        scores: Vec::new(),
    };
    for p in &probes {
        let probe = extractor.latent(&Gray::load(p)?)?;
        let row = score_gallery(&probe, &gallery, &config)?;
        matrix.probe_ids.push(stem(p)?);
        matrix.scores.push(row.into_iter().map(|c| c.fused_score).collect());
    }
    let truth = match &args.truth {
        Some(t) => read_truth(t)?,
        None => matrix.probe_ids.iter().map(|p| (p.clone(), p.clone())).collect(),
    };
    let cmc = evaluate_cmc(&matrix, &truth, args.max_rank)?;
    std::fs::write(&args.cmc, cmc.to_csv())?;
    println!("probes {}  rank-1 {:.4}  rank-5 {:.4}", probes.len(), cmc.rate(1), cmc.rate(5));
    Ok(())
}

fn train(args: TrainArgs, config: Config) -> Result<()> {
    let bootstrap = Extractor::new(config, Arc::new(Models::untrained(args.seed)?));
    let images: Vec<Gray> = match (&args.corpus, args.synthetic) {
        (Some(dir), None) => image_files(dir)?.iter().map(|f| Gray::load(f)).collect::<lfid_core::Result<_>>()?,
        (None, Some(n)) => (0..n as u64).map(|s| synthetic_print(&PrintParams { seed: args.seed.wrapping_add(s), ..PrintParams::default() }).image).collect(),
        _ => bail!("give a corpus directory or --synthetic N"),
    };
    let mut corpus = Vec::new();
    for (i, img) in images.iter().enumerate() {
        corpus.extend(bootstrap.training_descriptors(img, args.per_image, args.seed.wrapping_add(i as u64))?);
    }
    println!("{} descriptors from {} images", corpus.len(), images.len());
    let cfg = TrainConfig { epochs: args.epochs, steps_per_epoch: args.steps_per_epoch, seed: args.seed, min_corpus: args.min_corpus, ..TrainConfig::default() };
    let (models, report, _) = train_models(&corpus, &cfg, args.subquantizers)?;
    if let Some(loss) = report.epoch_loss.last() {
        println!("final epoch loss {loss:.6}");
    }
    println!("texture threshold {:.4}", models.codebook.d0());
    models.save(&args.out)?;
    Ok(())
}

fn serve(args: ServeArgs, config: Config) -> Result<()> {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).init();
    let gallery = GalleryIndex::load(&args.gallery)?;
    let extractor = Extractor::new(config, gallery.models().clone());
    let state = Arc::new(lfid_service::AppState::new(extractor, gallery));
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr).await?;
        println!("listening on {}", listener.local_addr()?);
        lfid_service::serve(listener, state).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    match cli.command {
        Command::Enroll(a) => enroll(a, config),
        Command::Search(a) => search(a, config),
        Command::Eval(a) => eval(a, config),
        Command::Codebook(CodebookCommand::Train(a)) => train(a, config),
        Command::Serve(a) => serve(a, config),
    }
}
