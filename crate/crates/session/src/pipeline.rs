//! Scene + spec → animation: select, prune, hull, sample, simulate, skin.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use phystalk_core::gaussian::GaussianSet;
use phystalk_core::io::{load_ply, save_ply, write_anim, AnimFrame, AnimSequence};
use phystalk_core::proxy::{
    assign_regions, bounds, build_hull, default_prune_radius, prune_outliers, sample_particles,
    spacing_for_count, DEFAULT_MIN_NEIGHBORS, DEFAULT_PARTICLE_TARGET,
};
use phystalk_core::sim::{init_sim, ExternalForce, MaterialKind, Simulation};
use phystalk_core::skinning::{
    bind, default_epsilon, skin_fluid_frame, skin_frame_with, Binding, CenterMode, HoleFiller,
};
use phystalk_translate::dsl::Selection;
use phystalk_translate::SimSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Load,
    Select,
    Prune,
    Hull,
    Sample,
    Init,
    Bind,
    Simulate,
    Skin,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Select => "select",
            Stage::Prune => "prune",
            Stage::Hull => "hull",
            Stage::Sample => "sample",
            Stage::Init => "init",
            Stage::Bind => "bind",
            Stage::Simulate => "simulate",
            Stage::Skin => "skin",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: phystalk_core::Error,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> AtStage<T> for phystalk_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

fn fail<T>(stage: Stage, msg: impl Into<String>) -> Result<T> {
    Err(PipelineError {
        stage,
        source: phystalk_core::Error::InvalidInput(msg.into()),
    })
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianSet> {
    load_ply(path).at(Stage::Load)
}

/// Everything needed to produce frames for one run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: SimSpec,
    pub base: GaussianSet,
    /// Simulation at frame 0 (after the initial lift).
    pub sim: Simulation,
    pub binding: Binding,
    pub rest: AnimFrame,
    /// Scheduled forces in scene units.
    pub forces: Vec<ExternalForce>,
    pub filler: Option<HoleFiller>,
    pub center_mode: CenterMode,
    pub fluid: bool,
    /// Object bounds at rest, before the lift.
    pub rest_bounds: (Vector3<f64>, Vector3<f64>),
}

/// Apply the spec's object selection to `base`.
pub fn select(spec: &SimSpec, mut base: GaussianSet) -> Result<GaussianSet> {
    match &spec.scene.select {
        Selection::Auto => {}
        Selection::All => base
            .set_object_mask((0..base.len()).collect())
            .at(Stage::Select)?,
        Selection::Bbox { min, max } => {
            let inside = |c: &Vector3<f64>| (0..3).all(|i| c[i] >= min[i] && c[i] <= max[i]);
            let mask: Vec<usize> = (0..base.len())
                .filter(|&i| inside(&base.gaussians[i].center))
                .collect();
            if mask.is_empty() {
                return fail(
                    Stage::Select,
                    "no gaussian centers inside the selection box",
                );
            }
            base.set_object_mask(mask).at(Stage::Select)?;
        }
    }
    if base.object_mask.is_empty() {
        return fail(Stage::Select, "the scene has no object gaussians");
    }
    Ok(base)
}

/// Build the particle proxy, the simulation and the skinning binding.
pub fn prepare(spec: &SimSpec, base: GaussianSet) -> Result<Prepared> {
    let mut base = select(spec, base)?;
    base.normalize_rotations().at(Stage::Load)?;

    let centers = base.object_centers();
    let radius = default_prune_radius(&centers);
    let kept = if radius.is_finite() {
        prune_outliers(&base, radius, DEFAULT_MIN_NEIGHBORS).at(Stage::Prune)?
    } else {
        base.object_mask.clone()
    };
    log::debug!(
        "pruning kept {} of {} object gaussians",
        kept.len(),
        centers.len()
    );
    let kept_centers: Vec<Vector3<f64>> = kept.iter().map(|&i| base.gaussians[i].center).collect();
    let hull = build_hull(&kept_centers).at(Stage::Hull)?;
    let (lo, hi) = bounds(&hull.vertices);

    let spacing = spec
        .world
        .particle_spacing_m
        .unwrap_or_else(|| spacing_for_count(&hull, DEFAULT_PARTICLE_TARGET));
    let seed = sample_particles(&hull, spacing, spec.world.seed).at(Stage::Sample)?;
    let seed = assign_regions(seed, &spec.region_predicates(&lo, &hi));
    log::debug!("{} particles at spacing {spacing:.4}", seed.len());

    let world = spec.world_config(&lo, &hi);
    let mut sim = init_sim(&seed, &spec.materials(), &world).at(Stage::Init)?;
    let lift = spec.up() * spec.initial.lift_m;
    sim.translate(&lift);

    let k = spec.skinning.k as usize;
    let eps = spec
        .skinning
        .epsilon_m2
        .unwrap_or_else(|| default_epsilon((hi - lo).norm()));
    let binding = bind(&base, &seed.positions, k, eps).at(Stage::Bind)?;
    let rest = AnimFrame::rest(&base).at(Stage::Skin)?;

    let forces = spec.forces(&(lo + lift), &(hi + lift), sim.state().total_mass());
    let filler = spec
        .hole_fill_config()
        .map(HoleFiller::new)
        .transpose()
        .at(Stage::Init)?;
    let fluid = sim
        .materials()
        .iter()
        .any(|m| m.kind == MaterialKind::Fluid);
    Ok(Prepared {
        spec: spec.clone(),
        base,
        sim,
        binding,
        rest,
        forces,
        filler,
        center_mode: spec.center_mode(),
        fluid,
        rest_bounds: (lo, hi),
    })
}

/// Steps a prepared run and skins each state into a frame.
#[derive(Clone, Debug)]
pub struct Runner {
    pub prepared: Prepared,
    pub sim: Simulation,
    filler: Option<HoleFiller>,
}

impl Runner {
    pub fn new(prepared: Prepared) -> Self {
        Runner {
            sim: prepared.sim.clone(),
            filler: prepared.filler.clone(),
            prepared,
        }
    }

    /// Back to frame 0.
    pub fn reset(&mut self) {
        self.sim = self.prepared.sim.clone();
        self.filler = self.prepared.filler.clone();
    }

    /// Frame for the current simulation state.
    pub fn frame(&mut self) -> Result<AnimFrame> {
        let p = &self.prepared;
        let snap = self.sim.snapshot();
        let mut frame = if p.fluid {
            skin_fluid_frame(&p.binding, &p.rest, &snap.displacements).at(Stage::Skin)?
        } else {
            skin_frame_with(
                &p.binding,
                &p.rest,
                &snap.displacements,
                &snap.gradients,
                p.center_mode,
            )
            .at(Stage::Skin)?
        };
        if let Some(filler) = &mut self.filler {
            frame = filler
                .apply(&frame, &p.binding, &p.base, &self.sim.state().positions)
                .at(Stage::Skin)?;
        }
        frame.timestamp = self.sim.time();
        Ok(frame)
    }

    pub fn step(&mut self) -> Result<()> {
        self.sim.step(&self.prepared.forces).at(Stage::Simulate)
    }

    /// Frames 0..`count`, frame k at t = k / fps.
    pub fn run(&mut self, count: u64) -> Result<Vec<AnimFrame>> {
        let mut frames = Vec::with_capacity(count as usize);
        for k in 0..count {
            if k > 0 {
                self.step()?;
            }
            frames.push(self.frame()?);
        }
        Ok(frames)
    }
}

/// Sidecar path holding the base scene next to an animation.
pub fn base_path(anim: &Path) -> PathBuf {
    let mut s = anim.as_os_str().to_owned();
    s.push(".base.ply");
    PathBuf::from(s)
}

/// Run the whole pipeline and write `out` plus its base-scene sidecar.
/// `frames` overrides the spec's `duration_s × fps`.
pub fn run_offline(
    spec: &SimSpec,
    base: GaussianSet,
    out: &Path,
    frames: Option<u64>,
) -> Result<AnimSequence> {
    let seq = simulate(spec, base.clone(), frames)?;
    write_anim(&seq, out).at(Stage::Write)?;
    save_ply(&base, base_path(out)).at(Stage::Write)?;
    Ok(seq)
}

/// The pipeline without file output.
pub fn simulate(spec: &SimSpec, base: GaussianSet, frames: Option<u64>) -> Result<AnimSequence> {
    let prepared = prepare(spec, base)?;
    let gaussian_count = prepared.base.len();
    let mut runner = Runner::new(prepared);
    let count = frames.unwrap_or_else(|| spec.frame_count());
    let frames = runner.run(count)?;
    Ok(AnimSequence {
        gaussian_count,
        fps: spec.world.fps,
        frames,
    })
}
