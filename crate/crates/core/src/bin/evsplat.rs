use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evsplat::bench::{bench_render, BenchConfig};
use evsplat::dataset::load_dataset;
use evsplat::edi::reconstruct_latents;
use evsplat::eval::{evaluate, EvalMode};
use evsplat::raster::{render, RasterSettings};
use evsplat::splat::{Camera, Scene};
use evsplat::synthetic::{generate_synthetic, SyntheticSpec};
use evsplat::train::{init_scene_from_points, train, TrainConfig};
use evsplat::{Error, Result};

#[derive(Parser)]
#[command(name = "evsplat", version, about = "Event-enhanced Gaussian splatting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key = value configuration file (training options).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed-order gradient reduction; pass `false` to allow faster unordered sums.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    w_event: Option<f64>,
    #[arg(long, global = true)]
    n_latents: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with simulated events.
    Simulate {
        /// `standard` (64x64, ~200 Gaussians) or `two-gaussians` (32x32).
        #[arg(long, default_value = "standard")]
        harness: String,
    },
    /// Reconstruct latent sharp frames of each view with the event double integral.
    Deblur {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Optimize a scene from a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Start from this scene instead of the dataset's points.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Render a scene at every mid-exposure and held-out pose.
    Render {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
    /// Score a scene against the dataset's sharp images.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// `deblur` or `novel-view`.
        #[arg(long, default_value = "deblur")]
        mode: String,
    },
    /// Time rendering of a fixed scene.
    Bench {
        /// Scene to render; defaults to the standard synthetic scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
    },
}

fn output_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn raster_settings(common: &Common) -> RasterSettings {
    RasterSettings {
        deterministic: common.deterministic.unwrap_or(true),
        ..RasterSettings::default()
    }
}

fn train_config(common: &Common, background: [f64; 3], thresholds: evsplat::event::Thresholds) -> Result<TrainConfig> {
    let mut config = TrainConfig {
        background,
        ..TrainConfig::default()
    };
    config.weights.thresholds = thresholds;
    if let Some(path) = &common.config {
        if !path.exists() {
            return Err(Error::MissingFile(path.clone()));
        }
        config.apply_kv(&fs::read_to_string(path)?, path)?;
    }
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(v) = common.deterministic {
        config.deterministic = v;
    }
    if let Some(v) = common.iterations {
        config.iterations = v;
    }
    if let Some(v) = common.w_event {
        config.weights.w_event = v;
    }
    if let Some(v) = common.n_latents {
        config.weights.n = v;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate { harness } => {
            let seed = common.seed.unwrap_or(0);
            let mut spec = match harness.as_str() {
                "standard" => SyntheticSpec::standard(seed),
                "two-gaussians" => SyntheticSpec::two_gaussians(seed),
                other => return Err(Error::InvalidArgument(format!("unknown harness `{other}`"))),
            };
            if let Some(n) = common.n_latents {
                spec.n_latents = n;
            }
            let dir = output_dir(common)?;
            let m = generate_synthetic(&spec, &dir)?;
            println!(
                "wrote {} views and {} test poses to {}",
                m.views.len(),
                m.test_views.len(),
                dir.display()
            );
        }
        Command::Deblur { dataset } => {
            let data = load_dataset(dataset)?;
            let n = common.n_latents.unwrap_or(data.n_latents());
            let dir = output_dir(common)?;
            for view in &data.views {
                let set = reconstruct_latents(&view.blurry, &view.stream, n, data.thresholds)?;
                let vdir = dir.join(&view.name);
                fs::create_dir_all(&vdir)?;
                for (i, img) in set.images.iter().enumerate() {
                    img.write_png(vdir.join(format!("edi_{i}.png")))?;
                    img.write_dump(vdir.join(format!("edi_{i}.f32")))?;
                }
                println!("{}: {} latents, {} events", view.name, n, view.stream.len());
            }
        }
        Command::Train { dataset, init } => {
            let data = load_dataset(dataset)?;
            let config = train_config(common, data.background(), data.thresholds)?;
            let scene = match init {
                Some(p) => Scene::read(p)?,
                None => init_scene_from_points(&data.points)?,
            };
            let dir = output_dir(common)?;
            let out = train(&data.views, scene, &config, Some(&dir))?;
            let last = out.log.last().expect("at least one iteration");
            println!(
                "trained {} iterations, final loss {:.6}; scene written to {}",
                out.log.len(),
                last.total,
                dir.join("scene.txt").display()
            );
        }
        Command::Render { dataset, scene } => {
            let data = load_dataset(dataset)?;
            let scene = Scene::read(scene)?;
            let settings = raster_settings(common);
            let dir = output_dir(common)?;
            let targets = data
                .views
                .iter()
                .map(|v| (v.name.clone(), v.poses[v.mid_index()]))
                .chain(data.test_views.iter().map(|t| (t.name.clone(), t.pose)));
            for (name, pose) in targets {
                let cam = Camera::new(&pose, data.intrinsics())?;
                let img = render(&scene, &cam, data.background(), &settings)?.image;
                img.write_png(dir.join(format!("{name}.png")))?;
                img.write_dump(dir.join(format!("{name}.f32")))?;
            }
            println!("rendered to {}", dir.display());
        }
        Command::Eval { dataset, scene, mode } => {
            let data = load_dataset(dataset)?;
            let scene = Scene::read(scene)?;
            let mode: EvalMode = mode.parse()?;
            let table = evaluate(&scene, &data, mode, &raster_settings(common))?;
            if let Some(dir) = &common.output_dir {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(format!("metrics_{}.csv", mode.name())), table.to_csv())?;
            }
            print!("{}", table.to_text());
        }
        Command::Bench {
            scene,
            repeats,
            frames,
            warmup,
        } => {
            let spec = SyntheticSpec::standard(common.seed.unwrap_or(0));
            let scene = match scene {
                Some(p) => Scene::read(p)?,
                None => spec.scene.clone(),
            };
            let cam = Camera::new(&spec.test_poses[0], spec.intrinsics)?;
            let config = BenchConfig {
                warmup_frames: *warmup,
                repeats: *repeats,
                frames_per_repeat: *frames,
            };
            let report = bench_render(&scene, &cam, spec.background, &raster_settings(common), &config)?;
            println!("{}", report.summary());
        }
    }
    Ok(())
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
