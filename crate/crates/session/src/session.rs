//! Interactive session: the single stepping agent, its command set and the
//! wire encoding of what it produces.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use phystalk_core::io::anim::{RECORD_BYTES, SPAWNED_RECORD_BYTES};
use phystalk_core::sim::{ExternalForce, MaterialKind};

use crate::pipeline::{Prepared, Result, Runner};

pub const PROTOCOL_VERSION: u32 = 1;
/// Bytes before the frame block in a FRAME message.
pub const FRAME_ID_BYTES: usize = 8;

/// Client → server messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Command {
    /// `mag` is scaled by the session's push gain into N·s.
    Push {
        dir: [f64; 3],
        mag: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        point: Option<[f64; 3]>,
    },
    Set {
        path: String,
        value: serde_json::Value,
    },
    Reset,
    Pause,
    Resume,
}

impl Command {
    pub fn parse(text: &str) -> std::result::Result<Command, CommandError> {
        serde_json::from_str(text).map_err(|e| CommandError(format!("bad command: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct CommandError(pub String);

/// First server message, sent as text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: u32,
    pub gaussian_count: usize,
    pub fps: f64,
    pub layout: FrameLayout,
}

/// Description of the binary FRAME message, all little-endian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub frame_id: String,
    pub timestamp: String,
    pub record_bytes: usize,
    pub record: String,
    pub alive: String,
    pub spawned_count: String,
    pub spawned_record_bytes: usize,
    pub spawned_record: String,
}

impl FrameLayout {
    pub fn current() -> Self {
        FrameLayout {
            frame_id: "u64".into(),
            timestamp: "f32 seconds".into(),
            record_bytes: RECORD_BYTES,
            record: "center f32x3, covariance f32x6 (xx, xy, xz, yy, yz, zz)".into(),
            alive: "ceil(gaussian_count / 8) bytes, bit i in byte i/8 at bit i%8".into(),
            spawned_count: "u32".into(),
            spawned_record_bytes: SPAWNED_RECORD_BYTES,
            spawned_record: "center f32x3, covariance f32x6, rgb u8x3, opacity f32".into(),
        }
    }
}

/// Status and error messages to clients, sent as text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Notice {
    Error { message: String },
}

#[derive(Clone, Debug, Default)]
pub struct SessionOptions {
    /// N·s per unit of push `mag`. Defaults to the object mass, which makes
    /// `mag` a velocity change in m/s.
    pub push_gain: Option<f64>,
}

/// One running scene. Only `apply` and `tick` mutate it.
pub struct Session {
    runner: Runner,
    paused: bool,
    /// The next tick shows the current state without stepping.
    show_current: bool,
    next_id: u64,
    push_gain: f64,
    frame0: Vec<u8>,
}

impl Session {
    pub fn new(prepared: Prepared, options: SessionOptions) -> Result<Self> {
        let mut runner = Runner::new(prepared);
        let mut frame0 = Vec::new();
        runner.frame()?.encode(&mut frame0);
        let push_gain = options
            .push_gain
            .unwrap_or_else(|| runner.sim.state().total_mass());
        Ok(Session {
            runner,
            paused: false,
            show_current: true,
            next_id: 0,
            push_gain,
            frame0,
        })
    }

    pub fn hello(&self) -> Hello {
        Hello {
            kind: "hello".into(),
            version: PROTOCOL_VERSION,
            gaussian_count: self.runner.prepared.base.len(),
            fps: self.runner.prepared.spec.world.fps,
            layout: FrameLayout::current(),
        }
    }

    pub fn fps(&self) -> f64 {
        self.runner.prepared.spec.world.fps
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn runner(&self) -> &Runner {
        &self.runner
    }

    /// Encoded frame block of frame 0.
    pub fn frame0(&self) -> &[u8] {
        &self.frame0
    }

    pub fn apply(&mut self, cmd: Command) -> std::result::Result<(), CommandError> {
        match cmd {
            Command::Push { dir, mag, point } => {
                let d = Vector3::from(dir);
                let n = d.norm();
                if !(n.is_finite() && n > 0.0) {
                    return Err(CommandError(
                        "push direction must be a non-zero vector".into(),
                    ));
                }
                if !(mag.is_finite() && mag >= 0.0) {
                    return Err(CommandError(format!("push magnitude {mag} must be >= 0")));
                }
                if point.is_some_and(|p| p.iter().any(|v| !v.is_finite())) {
                    return Err(CommandError("push point must be finite".into()));
                }
                let mut f =
                    ExternalForce::impulse(d / n, mag * self.push_gain, self.runner.sim.time());
                f.point = point.map(Vector3::from);
                self.runner
                    .sim
                    .apply_user_push(f)
                    .map_err(|e| CommandError(e.to_string()))
            }
            Command::Set { path, value } => self.set(&path, &value),
            Command::Reset => {
                self.runner.reset();
                self.show_current = true;
                Ok(())
            }
            Command::Pause => {
                self.paused = true;
                Ok(())
            }
            Command::Resume => {
                self.paused = false;
                Ok(())
            }
        }
    }

    /// Whitelisted live parameters. `regions[i].material.<field>` targets
    /// one region; `material.<field>` every region the field applies to.
    fn set(
        &mut self,
        path: &str,
        value: &serde_json::Value,
    ) -> std::result::Result<(), CommandError> {
        let err = |m: String| CommandError(m);
        if matches!(path, "world.gravity" | "world.gravity_mps2" | "gravity") {
            let g: [f64; 3] = serde_json::from_value(value.clone())
                .map_err(|_| err(format!("{path} takes [x, y, z], got {value}")))?;
            return self
                .runner
                .sim
                .set_gravity(Vector3::from(g))
                .map_err(|e| err(e.to_string()));
        }
        let (region, field) = match path.strip_prefix("regions[") {
            Some(rest) => {
                let (idx, field) = rest
                    .split_once("].material.")
                    .ok_or_else(|| err(format!("unsupported path `{path}`")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| err(format!("bad region index in `{path}`")))?;
                (Some(idx), field)
            }
            None => (
                None,
                path.strip_prefix("material.").ok_or_else(|| {
                    err(format!(
                        "`{path}` cannot be changed live; use reset with a new spec"
                    ))
                })?,
            ),
        };
        let v = value
            .as_f64()
            .ok_or_else(|| err(format!("{path} takes a number, got {value}")))?;
        let (kind, apply): (MaterialKind, fn(&mut phystalk_core::sim::Material, f64)) = match field {
            "surface_tension" => (MaterialKind::Fluid, |m, v| m.surface_tension = v),
            "youngs_modulus" | "youngs_modulus_pa" | "youngs_E" => {
                (MaterialKind::Elastic, |m, v| m.youngs_modulus = v)
            }
            "restitution" => (MaterialKind::Rigid, |m, v| m.restitution = v),
            _ => {
                return Err(err(format!(
                    "`{field}` cannot be changed live (allowed: gravity, surface_tension, youngs_modulus, restitution)"
                )))
            }
        };
        let materials = self.runner.sim.materials().to_vec();
        let targets: Vec<usize> = match region {
            Some(i) if i < materials.len() && materials[i].kind == kind => vec![i],
            Some(i) if i < materials.len() => {
                return Err(err(format!(
                    "region {i} is not {kind:?}; `{field}` does not apply"
                )))
            }
            Some(i) => return Err(err(format!("no region {i}"))),
            None => (0..materials.len())
                .filter(|&i| materials[i].kind == kind)
                .collect(),
        };
        if targets.is_empty() {
            return Err(err(format!("no {kind:?} region for `{field}`")));
        }
        // All regions or none: check every update before committing.
        let mut trial = self.runner.sim.clone();
        for &i in &targets {
            let mut m = materials[i].clone();
            apply(&mut m, v);
            trial.set_material(i, m).map_err(|e| err(e.to_string()))?;
        }
        self.runner.sim = trial;
        Ok(())
    }

    /// Advance one frame and return the FRAME message, or `None` while paused.
    pub fn tick(&mut self) -> Result<Option<(u64, Vec<u8>)>> {
        if self.paused {
            return Ok(None);
        }
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = Vec::with_capacity(FRAME_ID_BYTES + self.frame0.len());
        msg.extend_from_slice(&id.to_le_bytes());
        if std::mem::take(&mut self.show_current) && self.runner.sim.frame() == 0 {
            msg.extend_from_slice(&self.frame0);
        } else {
            self.runner.step()?;
            self.runner.frame()?.encode(&mut msg);
        }
        Ok(Some((id, msg)))
    }
}

/// Split a FRAME message into its id and frame block.
pub fn split_frame_message(msg: &[u8]) -> Option<(u64, &[u8])> {
    let id = u64::from_le_bytes(msg.get(..FRAME_ID_BYTES)?.try_into().ok()?);
    Some((id, &msg[FRAME_ID_BYTES..]))
}
