use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phystalk_core::gaussian::GaussianSet;
use phystalk_core::io::preview::save_png;
use phystalk_core::io::{read_anim, render_preview, Camera};
use phystalk_session::pipeline::{base_path, load_scene, prepare, run_offline};
use phystalk_session::{serve, ServeOptions, Session, SessionOptions};
use phystalk_translate::llm::DEFAULT_MAX_RETRIES;
use phystalk_translate::{
    offline_translate, parse_spec, translate, GroundingBundle, HttpLlm, LlmConfig, SceneSummary,
    SimSpec,
};

#[derive(Parser)]
#[command(
    name = "phystalk",
    version,
    about = "Physics animation for Gaussian splat scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a spec offline and write a .gsanim file.
    Simulate {
        /// Scene PLY; defaults to the spec's scene.ply.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the frame count from duration × fps.
        #[arg(long)]
        frames: Option<u64>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn a natural-language request into a spec file.
    Prompt {
        #[arg(long)]
        prompt: String,
        /// Scene PLY, described to the model for scale.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out_spec: PathBuf,
        /// Use the built-in keyword translator instead of a model.
        #[arg(long)]
        offline: bool,
        #[arg(long)]
        llm_config: Option<PathBuf>,
        /// Directory with instructions.txt, api.txt and exemplars/.
        #[arg(long)]
        grounding: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
        max_attempts: u32,
    },
    /// Stream a live simulation over WebSocket.
    Serve {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Step as fast as possible instead of at the spec's frame rate.
        #[arg(long)]
        no_pace: bool,
        /// N·s per unit of push magnitude; default makes it m/s.
        #[arg(long)]
        push_gain: Option<f64>,
    },
    /// Render preview PNGs of an animation.
    Render {
        #[arg(long)]
        anim: PathBuf,
        /// Camera JSON file.
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Base scene; defaults to the sidecar written next to the animation.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Render every n-th frame.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

type CliResult<T> = Result<T, String>;

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::Simulate {
            scene,
            spec,
            out,
            frames,
            fps,
            seed,
        } => {
            let mut spec = read_spec(&spec)?;
            if fps.is_some() || seed.is_some() {
                if let Some(f) = fps {
                    spec.world.fps = f;
                }
                if let Some(s) = seed {
                    spec.world.seed = s;
                }
                // Re-check: a new fps changes frame count and substep limits.
                spec = parse_spec(&spec.to_toml()).map_err(|e| format!("spec: {e}"))?;
            }
            let base = scene_for(&spec, scene.as_deref())?;
            let seq = run_offline(&spec, base, &out, frames).map_err(|e| e.to_string())?;
            log::info!("wrote {} frames to {}", seq.frames.len(), out.display());
            Ok(())
        }
        Cmd::Prompt {
            prompt,
            scene,
            out_spec,
            offline,
            llm_config,
            grounding,
            max_attempts,
        } => {
            let summary = match &scene {
                Some(p) => Some(summarize(&load_scene(p).map_err(|e| e.to_string())?)),
                None => None,
            };
            let spec = if offline {
                offline_translate(&prompt)
            } else {
                let bundle = match &grounding {
                    Some(dir) => {
                        GroundingBundle::load(dir).map_err(|e| format!("grounding: {e}"))?
                    }
                    None => GroundingBundle::builtin(),
                };
                let cfg = LlmConfig::load(llm_config.as_deref()).map_err(|e| e.to_string())?;
                let llm = HttpLlm::new(cfg);
                translate(&prompt, &bundle, &llm, summary.as_ref(), max_attempts)
                    .map_err(|e| e.to_string())?
            };
            let mut spec = spec;
            if let Some(p) = &scene {
                spec.scene.ply = Some(p.display().to_string());
            }
            fs::write(&out_spec, spec.to_toml())
                .map_err(|e| format!("write {}: {e}", out_spec.display()))?;
            log::info!("wrote {}", out_spec.display());
            Ok(())
        }
        Cmd::Serve {
            scene,
            spec,
            host,
            port,
            no_pace,
            push_gain,
        } => {
            let spec = read_spec(&spec)?;
            let base = scene_for(&spec, scene.as_deref())?;
            let prepared = prepare(&spec, base).map_err(|e| e.to_string())?;
            let session =
                Session::new(prepared, SessionOptions { push_gain }).map_err(|e| e.to_string())?;
            let options = ServeOptions {
                pace: !no_pace,
                ..ServeOptions::default()
            };
            serve(session, (host.as_str(), port), options).map_err(|e| format!("serve: {e}"))
        }
        Cmd::Render {
            anim,
            camera,
            out_dir,
            scene,
            every,
        } => {
            let seq = read_anim(&anim).map_err(|e| format!("load: {e}"))?;
            let scene = scene.unwrap_or_else(|| base_path(&anim));
            let base = load_scene(&scene).map_err(|e| e.to_string())?;
            if base.len() != seq.gaussian_count {
                return Err(format!(
                    "load: scene has {} Gaussians, animation expects {}",
                    base.len(),
                    seq.gaussian_count
                ));
            }
            let text = fs::read_to_string(&camera)
                .map_err(|e| format!("camera {}: {e}", camera.display()))?;
            let cam = Camera::from_json(&text).map_err(|e| e.to_string())?;
            fs::create_dir_all(&out_dir)
                .map_err(|e| format!("write {}: {e}", out_dir.display()))?;
            for (k, frame) in seq.frames.iter().enumerate().step_by(every.max(1)) {
                let img = render_preview(frame, &base, &cam).map_err(|e| format!("render: {e}"))?;
                save_png(&img, out_dir.join(format!("frame_{k:04}.png")))
                    .map_err(|e| format!("write: {e}"))?;
            }
            Ok(())
        }
    }
}

fn read_spec(path: &Path) -> CliResult<SimSpec> {
    let text = fs::read_to_string(path).map_err(|e| format!("spec {}: {e}", path.display()))?;
    parse_spec(&text).map_err(|e| format!("spec {}:\n{e}", path.display()))
}

fn scene_for(spec: &SimSpec, scene: Option<&Path>) -> CliResult<GaussianSet> {
    let path = match (scene, &spec.scene.ply) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err("load: no scene given (use --scene or scene.ply in the spec)".into())
        }
    };
    load_scene(&path).map_err(|e| e.to_string())
}

fn summarize(set: &GaussianSet) -> SceneSummary {
    let centers = set.object_centers();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &centers {
        for i in 0..3 {
            lo[i] = lo[i].min(c[i]);
            hi[i] = hi[i].max(c[i]);
        }
    }
    SceneSummary {
        gaussian_count: set.len(),
        object_count: centers.len(),
        bbox_min: lo,
        bbox_max: hi,
    }
}
