//! The simulation spec language: a TOML document with units in field names.
//!
//! Parsing is total. A document either becomes a fully validated [`SimSpec`]
//! with every default filled in, or a [`SpecError`] listing each problem with
//! its field path and line.

use serde::{Deserialize, Serialize};

use phystalk_core::sim::{stable_dt, Material, MaterialKind, CELL_SPACINGS, RIGID_DT};

use crate::diag::{line_of, locate, Diagnostic, DiagnosticKind, SpecError};

pub const SPEC_VERSION: u32 = 1;
/// Upper bound on `duration_s × fps`.
pub const FRAME_CAP: u64 = 600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub spec_version: u32,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub regions: Vec<RegionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forces: Vec<ForceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole_fill: Option<HoleFillSpec>,
    #[serde(default)]
    pub skinning: SkinningSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Scene file; the CLI `--scene` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ply: Option<String>,
    #[serde(default)]
    pub select: Selection,
    #[serde(default)]
    pub up_axis: UpAxis,
}

/// Which Gaussians form the simulated object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SelectionRepr", into = "SelectionRepr")]
pub enum Selection {
    /// The object mask stored in the scene file, or everything without one.
    #[default]
    Auto,
    All,
    /// Gaussians whose centers lie in this box, scene units.
    Bbox {
        min: [f64; 3],
        max: [f64; 3],
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SelectionRepr {
    Keyword(String),
    Box { bbox: BoxRepr },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRepr {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<SelectionRepr> for Selection {
    type Error = String;
    fn try_from(r: SelectionRepr) -> Result<Self, String> {
        match r {
            SelectionRepr::Keyword(k) if k == "auto" => Ok(Selection::Auto),
            SelectionRepr::Keyword(k) if k == "all" => Ok(Selection::All),
            SelectionRepr::Keyword(k) => Err(format!("unknown selection `{k}`")),
            SelectionRepr::Box { bbox } => Ok(Selection::Bbox {
                min: bbox.min,
                max: bbox.max,
            }),
        }
    }
}

impl From<Selection> for SelectionRepr {
    fn from(s: Selection) -> Self {
        match s {
            Selection::Auto => SelectionRepr::Keyword("auto".into()),
            Selection::All => SelectionRepr::Keyword("all".into()),
            Selection::Bbox { min, max } => SelectionRepr::Box {
                bbox: BoxRepr { min, max },
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpAxis {
    #[serde(rename = "x")]
    PosX,
    #[serde(rename = "y")]
    PosY,
    #[default]
    #[serde(rename = "z")]
    PosZ,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "-z")]
    NegZ,
}

impl UpAxis {
    pub fn vector(self) -> [f64; 3] {
        match self {
            UpAxis::PosX => [1.0, 0.0, 0.0],
            UpAxis::PosY => [0.0, 1.0, 0.0],
            UpAxis::PosZ => [0.0, 0.0, 1.0],
            UpAxis::NegX => [-1.0, 0.0, 0.0],
            UpAxis::NegY => [0.0, -1.0, 0.0],
            UpAxis::NegZ => [0.0, 0.0, -1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Defaults to 9.81 m/s² against the up axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity_mps2: Option<[f64; 3]>,
    #[serde(default = "yes")]
    pub ground: bool,
    /// Ground sits this far below the object's lowest point.
    #[serde(default)]
    pub ground_offset_m: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<u32>,
    /// Derived from the object volume when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particle_spacing_m: Option<f64>,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: u32,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}
fn default_duration() -> f64 {
    2.0
}
fn default_fps() -> f64 {
    30.0
}
fn default_grid_resolution() -> u32 {
    64
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            gravity_mps2: None,
            ground: true,
            ground_offset_m: 0.0,
            duration_s: default_duration(),
            fps: default_fps(),
            dt_s: None,
            substeps: None,
            particle_spacing_m: None,
            grid_resolution: default_grid_resolution(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Raise the object along the up axis before frame 0.
    #[serde(default)]
    pub lift_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(rename = "where")]
    pub predicate: Where,
    pub material: MaterialSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Above,
    Below,
}

/// Region predicate in fractions of the object's bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WhereRepr", into = "WhereRepr")]
pub enum Where {
    All,
    HalfSpace {
        axis: Axis,
        side: Side,
        at_fraction: f64,
    },
    /// Radius is a fraction of the bounding-box diagonal.
    Sphere {
        center_fraction: [f64; 3],
        radius_fraction: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WhereRepr {
    Keyword(String),
    Shape(Shape),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Shape {
    Halfspace(HalfSpaceRepr),
    Sphere(SphereRepr),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HalfSpaceRepr {
    axis: Axis,
    side: Side,
    at_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereRepr {
    center_fraction: [f64; 3],
    radius_fraction: f64,
}

impl TryFrom<WhereRepr> for Where {
    type Error = String;
    fn try_from(r: WhereRepr) -> Result<Self, String> {
        match r {
            WhereRepr::Keyword(k) if k == "all" => Ok(Where::All),
            WhereRepr::Keyword(k) => Err(format!("unknown region keyword `{k}`")),
            WhereRepr::Shape(Shape::Halfspace(h)) => Ok(Where::HalfSpace {
                axis: h.axis,
                side: h.side,
                at_fraction: h.at_fraction,
            }),
            WhereRepr::Shape(Shape::Sphere(s)) => Ok(Where::Sphere {
                center_fraction: s.center_fraction,
                radius_fraction: s.radius_fraction,
            }),
        }
    }
}

impl From<Where> for WhereRepr {
    fn from(w: Where) -> Self {
        match w {
            Where::All => WhereRepr::Keyword("all".into()),
            Where::HalfSpace {
                axis,
                side,
                at_fraction,
            } => WhereRepr::Shape(Shape::Halfspace(HalfSpaceRepr {
                axis,
                side,
                at_fraction,
            })),
            Where::Sphere {
                center_fraction,
                radius_fraction,
            } => WhereRepr::Shape(Shape::Sphere(SphereRepr {
                center_fraction,
                radius_fraction,
            })),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    Rigid,
    Elastic,
    Fluid,
}

impl From<KindSpec> for MaterialKind {
    fn from(k: KindSpec) -> Self {
        match k {
            KindSpec::Rigid => MaterialKind::Rigid,
            KindSpec::Elastic => MaterialKind::Elastic,
            KindSpec::Fluid => MaterialKind::Fluid,
        }
    }
}

/// Fields that do not apply to `kind` are rejected; the ones that do are
/// filled with defaults by validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub kind: KindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_kgpm3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub youngs_modulus_pa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness_pa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface_tension: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viscosity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restitution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction: Option<f64>,
}

impl MaterialSpec {
    /// A material of `kind` with nothing set.
    pub fn bare(kind: KindSpec) -> Self {
        MaterialSpec {
            kind,
            density_kgpm3: None,
            youngs_modulus_pa: None,
            poisson_ratio: None,
            stiffness_pa: None,
            eos_exponent: None,
            surface_tension: None,
            viscosity: None,
            restitution: None,
            friction: None,
        }
    }

    /// Field names that apply to this kind.
    pub fn relevant_fields(kind: KindSpec) -> &'static [&'static str] {
        match kind {
            KindSpec::Rigid => &["density_kgpm3", "restitution", "friction"],
            KindSpec::Elastic => &[
                "density_kgpm3",
                "youngs_modulus_pa",
                "poisson_ratio",
                "friction",
            ],
            KindSpec::Fluid => &[
                "density_kgpm3",
                "stiffness_pa",
                "eos_exponent",
                "surface_tension",
                "viscosity",
            ],
        }
    }

    fn slots(&mut self) -> [(&'static str, &mut Option<f64>); 9] {
        [
            ("density_kgpm3", &mut self.density_kgpm3),
            ("youngs_modulus_pa", &mut self.youngs_modulus_pa),
            ("poisson_ratio", &mut self.poisson_ratio),
            ("stiffness_pa", &mut self.stiffness_pa),
            ("eos_exponent", &mut self.eos_exponent),
            ("surface_tension", &mut self.surface_tension),
            ("viscosity", &mut self.viscosity),
            ("restitution", &mut self.restitution),
            ("friction", &mut self.friction),
        ]
    }

    /// The engine material, with engine defaults for anything unset.
    pub fn to_material(&self) -> Material {
        let mut m = Material::of_kind(self.kind.into());
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut m.density, self.density_kgpm3);
        set(&mut m.youngs_modulus, self.youngs_modulus_pa);
        set(&mut m.poisson_ratio, self.poisson_ratio);
        set(&mut m.stiffness, self.stiffness_pa);
        set(&mut m.eos_exponent, self.eos_exponent);
        set(&mut m.surface_tension, self.surface_tension);
        set(&mut m.viscosity, self.viscosity);
        set(&mut m.restitution, self.restitution);
        set(&mut m.friction, self.friction);
        m
    }

    fn default_value(kind: KindSpec, field: &str) -> f64 {
        let m = Material::of_kind(kind.into());
        match field {
            "density_kgpm3" => m.density,
            "youngs_modulus_pa" => m.youngs_modulus,
            "poisson_ratio" => m.poisson_ratio,
            "stiffness_pa" => m.stiffness,
            "eos_exponent" => m.eos_exponent,
            "surface_tension" => m.surface_tension,
            "viscosity" => m.viscosity,
            "restitution" => m.restitution,
            "friction" => m.friction,
            _ => unreachable!("unknown material field {field}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceKindSpec {
    Impulse,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSpec {
    pub kind: ForceKindSpec,
    /// Unit vector.
    pub direction: [f64; 3],
    /// Impulse momentum in N·s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude_ns: Option<f64>,
    /// Impulse given as the velocity change of the whole object; converted
    /// to momentum with the simulated mass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_change_mps: Option<f64>,
    /// Continuous force in N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude_n: Option<f64>,
    #[serde(default)]
    pub at_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_s: Option<f64>,
    /// Application point in bounding-box fractions; whole object when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_fraction: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleFillSpec {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_shells")]
    pub shell_radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson_radius_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_spawn_per_frame: Option<u32>,
}

fn default_threshold() -> f64 {
    1.6
}
fn default_shells() -> Vec<f64> {
    vec![1.0, 2.0]
}

impl Default for HoleFillSpec {
    fn default() -> Self {
        HoleFillSpec {
            threshold: default_threshold(),
            shell_radii: default_shells(),
            poisson_radius_m: None,
            max_spawn_per_frame: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterModeSpec {
    #[default]
    Affine,
    Displacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkinningSpec {
    #[serde(default = "default_k")]
    pub k: u32,
    /// Distance regularizer; scales with the scene when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_m2: Option<f64>,
    #[serde(default)]
    pub center_mode: CenterModeSpec,
}

fn default_k() -> u32 {
    8
}

impl Default for SkinningSpec {
    fn default() -> Self {
        SkinningSpec {
            k: default_k(),
            epsilon_m2: None,
            center_mode: CenterModeSpec::Affine,
        }
    }
}

impl SimSpec {
    /// A minimal spec: one region of `kind`, everything else default.
    pub fn single(kind: KindSpec) -> Self {
        SimSpec {
            spec_version: SPEC_VERSION,
            scene: SceneSpec::default(),
            world: WorldSpec::default(),
            initial: InitialSpec::default(),
            regions: vec![RegionSpec {
                name: None,
                predicate: Where::All,
                material: MaterialSpec::bare(kind),
            }],
            forces: Vec::new(),
            hole_fill: None,
            skinning: SkinningSpec::default(),
        }
    }

    pub fn frame_count(&self) -> u64 {
        (self.world.duration_s * self.world.fps).round() as u64
    }

    pub fn has_fluid(&self) -> bool {
        self.regions
            .iter()
            .any(|r| r.material.kind == KindSpec::Fluid)
    }

    /// Serialize to the document form; parsing it yields `self` back.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec fields are always representable")
    }

    /// Validate a programmatically built spec, filling defaults.
    pub fn validated(self) -> Result<SimSpec, SpecError> {
        let text = self.to_toml();
        parse_spec(&text)
    }
}

/// Parse and validate a spec document.
pub fn parse_spec(text: &str) -> Result<SimSpec, SpecError> {
    let table: toml::Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            let e: toml::de::Error = e;
            return Err(SpecError {
                diagnostics: vec![Diagnostic {
                    kind: DiagnosticKind::Syntax,
                    path: String::new(),
                    line: e.span().map(|s| line_of(text, s.start)),
                    message: e.message().trim().to_string(),
                }],
            });
        }
    };
    let mut diags = Vec::new();
    schema::check(&table, text, &mut diags);
    if !diags.is_empty() {
        return Err(SpecError { diagnostics: diags });
    }
    let spec: SimSpec = match toml::from_str(text) {
        Ok(s) => s,
        Err(e) => {
            return Err(SpecError {
                diagnostics: vec![Diagnostic {
                    kind: DiagnosticKind::InvalidValue,
                    path: String::new(),
                    line: e.span().map(|s| line_of(text, s.start)),
                    message: e.message().trim().to_string(),
                }],
            })
        }
    };
    validate(spec, text)
}

struct Checker<'a> {
    text: &'a str,
    diags: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn push(&mut self, kind: DiagnosticKind, path: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            kind,
            path: path.to_string(),
            line: locate(self.text, path),
            message: message.into(),
        });
    }

    fn invalid(&mut self, path: &str, message: impl Into<String>) {
        self.push(DiagnosticKind::InvalidValue, path, message);
    }

    fn finite(&mut self, path: &str, v: f64) -> bool {
        if !v.is_finite() {
            self.invalid(path, format!("{v} is not a finite number"));
            return false;
        }
        true
    }

    fn positive(&mut self, path: &str, v: f64) {
        if self.finite(path, v) && v <= 0.0 {
            self.invalid(path, format!("must be > 0, got {v}"));
        }
    }

    fn non_negative(&mut self, path: &str, v: f64) {
        if self.finite(path, v) && v < 0.0 {
            self.invalid(path, format!("must be >= 0, got {v}"));
        }
    }
}

fn validate(mut spec: SimSpec, text: &str) -> Result<SimSpec, SpecError> {
    let mut c = Checker {
        text,
        diags: Vec::new(),
    };
    if spec.spec_version != SPEC_VERSION {
        c.invalid(
            "spec_version",
            format!(
                "unsupported version {} (expected {SPEC_VERSION})",
                spec.spec_version
            ),
        );
    }
    if let Selection::Bbox { min, max } = &spec.scene.select {
        if min.iter().chain(max).any(|v| !v.is_finite()) || (0..3).any(|i| min[i] >= max[i]) {
            c.invalid("scene.select", "bbox min must be below max on every axis");
        }
    }

    let w = &mut spec.world;
    let up = spec.scene.up_axis.vector();
    let g = *w
        .gravity_mps2
        .get_or_insert(up.map(|u| if u == 0.0 { 0.0 } else { -9.81 * u }));
    for v in g {
        c.finite("world.gravity_mps2", v);
    }
    c.non_negative("world.ground_offset_m", w.ground_offset_m);
    c.positive("world.duration_s", w.duration_s);
    c.positive("world.fps", w.fps);
    let frames = (w.duration_s * w.fps).round() as u64;
    if w.duration_s.is_finite() && w.fps.is_finite() && w.duration_s > 0.0 && w.fps > 0.0 {
        if frames == 0 {
            c.invalid("world.duration_s", "duration × fps rounds to zero frames");
        } else if frames > FRAME_CAP {
            c.invalid(
                "world.duration_s",
                format!("duration × fps = {frames} frames exceeds the cap of {FRAME_CAP}"),
            );
        }
    }
    if let Some(dt) = w.dt_s {
        c.positive("world.dt_s", dt);
    }
    if w.substeps == Some(0) {
        c.invalid("world.substeps", "must be >= 1");
    }
    if let Some(s) = w.particle_spacing_m {
        c.positive("world.particle_spacing_m", s);
    }
    if w.grid_resolution == 0 {
        c.invalid("world.grid_resolution", "must be >= 1");
    }
    if w.seed > i64::MAX as u64 {
        c.invalid("world.seed", format!("must be <= {}", i64::MAX));
    }
    c.finite("initial.lift_m", spec.initial.lift_m);

    validate_regions(&mut spec, &mut c);
    validate_forces(&spec, &mut c);

    if let Some(h) = &spec.hole_fill {
        if !spec.has_fluid() {
            c.invalid("hole_fill", "hole filling needs at least one fluid region");
        }
        if !(h.threshold.is_finite() && h.threshold > 1.0) {
            c.invalid(
                "hole_fill.threshold",
                format!("must be > 1, got {}", h.threshold),
            );
        }
        if h.shell_radii.is_empty() {
            c.invalid("hole_fill.shell_radii", "needs at least one radius");
        }
        for &r in &h.shell_radii {
            c.positive("hole_fill.shell_radii", r);
        }
        if let Some(r) = h.poisson_radius_m {
            c.positive("hole_fill.poisson_radius_m", r);
        }
    }
    if spec.skinning.k == 0 {
        c.invalid("skinning.k", "must be >= 1");
    }
    if let Some(e) = spec.skinning.epsilon_m2 {
        c.positive("skinning.epsilon_m2", e);
    }

    if c.diags.is_empty() {
        check_stability(&spec, &mut c);
    }
    if c.diags.is_empty() {
        Ok(spec)
    } else {
        Err(SpecError {
            diagnostics: c.diags,
        })
    }
}

fn validate_regions(spec: &mut SimSpec, c: &mut Checker) {
    if spec.regions.is_empty() {
        c.push(
            DiagnosticKind::MissingField,
            "regions",
            "at least one region is required",
        );
        return;
    }
    let all: Vec<usize> = spec
        .regions
        .iter()
        .enumerate()
        .filter(|(_, r)| r.predicate == Where::All)
        .map(|(i, _)| i)
        .collect();
    let last = spec.regions.len() - 1;
    match all.as_slice() {
        [i] if *i == last => {}
        [i] => c.push(
            DiagnosticKind::MalformedPredicate,
            &format!("regions[{i}].where"),
            "the catch-all region (where = \"all\") must be the last region",
        ),
        [] => c.push(
            DiagnosticKind::MalformedPredicate,
            &format!("regions[{last}].where"),
            "exactly one catch-all region (where = \"all\") is required, as the last region",
        ),
        [_, extra @ ..] => {
            for i in extra {
                c.push(
                    DiagnosticKind::MalformedPredicate,
                    &format!("regions[{i}].where"),
                    "only one catch-all region (where = \"all\") is allowed",
                );
            }
        }
    }

    for (i, r) in spec.regions.iter_mut().enumerate() {
        let p = format!("regions[{i}].where");
        match &r.predicate {
            Where::All => {}
            Where::HalfSpace { at_fraction, .. } => {
                if !(at_fraction.is_finite() && (0.0..=1.0).contains(at_fraction)) {
                    c.push(
                        DiagnosticKind::MalformedPredicate,
                        &p,
                        format!("at_fraction must be in [0, 1], got {at_fraction}"),
                    );
                }
            }
            Where::Sphere {
                center_fraction,
                radius_fraction,
            } => {
                if center_fraction.iter().any(|v| !v.is_finite()) {
                    c.push(
                        DiagnosticKind::MalformedPredicate,
                        &p,
                        "center_fraction must be finite",
                    );
                }
                if !(radius_fraction.is_finite() && *radius_fraction > 0.0) {
                    c.push(
                        DiagnosticKind::MalformedPredicate,
                        &p,
                        format!("radius_fraction must be > 0, got {radius_fraction}"),
                    );
                }
            }
        }

        let kind = r.material.kind;
        let relevant = MaterialSpec::relevant_fields(kind);
        let base = format!("regions[{i}].material");
        for (name, slot) in r.material.slots() {
            let path = format!("{base}.{name}");
            if !relevant.contains(&name) {
                if slot.is_some() {
                    c.invalid(
                        &path,
                        format!(
                            "not used by {kind:?} materials (allowed: {})",
                            relevant.join(", ")
                        )
                        .to_lowercase(),
                    );
                }
                continue;
            }
            let v = *slot.get_or_insert_with(|| MaterialSpec::default_value(kind, name));
            if !c.finite(&path, v) {
                continue;
            }
            match name {
                "density_kgpm3" | "youngs_modulus_pa" | "stiffness_pa" if v <= 0.0 => {
                    c.invalid(&path, format!("must be > 0, got {v}"))
                }
                "poisson_ratio" if !(0.0..0.5).contains(&v) => c.invalid(
                    &path,
                    format!("poisson ratio must be in [0, 0.5) for a stable solid, got {v}"),
                ),
                "eos_exponent" if v < 1.0 => c.invalid(&path, format!("must be >= 1, got {v}")),
                "restitution" if !(0.0..=1.0).contains(&v) => {
                    c.invalid(&path, format!("must be in [0, 1], got {v}"))
                }
                "surface_tension" | "viscosity" | "friction" if v < 0.0 => {
                    c.invalid(&path, format!("must be >= 0, got {v}"))
                }
                _ => {}
            }
        }
    }

    let fluid = spec.has_fluid();
    if fluid {
        if let Some(i) = spec
            .regions
            .iter()
            .position(|r| r.material.kind != KindSpec::Fluid)
        {
            c.invalid(
                &format!("regions[{i}].material.kind"),
                "fluid regions cannot be combined with rigid or elastic regions",
            );
        }
    }
}

fn validate_forces(spec: &SimSpec, c: &mut Checker) {
    let duration = spec.world.duration_s;
    for (i, f) in spec.forces.iter().enumerate() {
        let p = |field: &str| format!("forces[{i}].{field}");
        let norm = f.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-6) {
            c.invalid(
                &p("direction"),
                format!("must be a unit vector (length {norm})"),
            );
        }
        if c.finite(&p("at_s"), f.at_s) && !(0.0..=duration).contains(&f.at_s) {
            c.invalid(&p("at_s"), format!("must be within [0, {duration}] s"));
        }
        let forbid = |c: &mut Checker, field: &str, v: bool, why: &str| {
            if v {
                c.invalid(&p(field), why.to_string());
            }
        };
        match f.kind {
            ForceKindSpec::Impulse => {
                match (f.magnitude_ns, f.velocity_change_mps) {
                    (Some(m), None) => c.non_negative(&p("magnitude_ns"), m),
                    (None, Some(v)) => c.non_negative(&p("velocity_change_mps"), v),
                    (None, None) => c.push(
                        DiagnosticKind::MissingField,
                        &format!("forces[{i}]"),
                        "an impulse needs magnitude_ns or velocity_change_mps",
                    ),
                    (Some(_), Some(_)) => c.invalid(
                        &p("velocity_change_mps"),
                        "give either magnitude_ns or velocity_change_mps, not both",
                    ),
                }
                forbid(
                    c,
                    "magnitude_n",
                    f.magnitude_n.is_some(),
                    "impulses take magnitude_ns (N·s), not magnitude_n",
                );
                forbid(
                    c,
                    "until_s",
                    f.until_s.is_some(),
                    "impulses are instantaneous; until_s applies to continuous forces",
                );
            }
            ForceKindSpec::Continuous => {
                match f.magnitude_n {
                    Some(m) => c.non_negative(&p("magnitude_n"), m),
                    None => c.push(
                        DiagnosticKind::MissingField,
                        &p("magnitude_n"),
                        "a continuous force needs magnitude_n (N)",
                    ),
                }
                match f.until_s {
                    Some(t1) if t1.is_finite() && t1 > f.at_s => {}
                    Some(t1) => c.invalid(&p("until_s"), format!("must be after at_s, got {t1}")),
                    None => c.push(
                        DiagnosticKind::MissingField,
                        &p("until_s"),
                        "a continuous force needs until_s",
                    ),
                }
                forbid(
                    c,
                    "magnitude_ns",
                    f.magnitude_ns.is_some(),
                    "continuous forces take magnitude_n (N)",
                );
                forbid(
                    c,
                    "velocity_change_mps",
                    f.velocity_change_mps.is_some(),
                    "velocity_change_mps applies to impulses only",
                );
            }
        }
        if let Some(pt) = f.point_fraction {
            for v in pt {
                c.finite(&p("point_fraction"), v);
            }
        }
        if let Some(r) = f.radius_m {
            c.positive(&p("radius_m"), r);
            if f.point_fraction.is_none() {
                c.invalid(&p("radius_m"), "radius_m needs point_fraction");
            }
        }
    }
}

/// Explicit step sizes are checked against the stability bound with the
/// finest grid the engine can pick, so an accepted spec always initializes.
fn check_stability(spec: &SimSpec, c: &mut Checker) {
    let w = &spec.world;
    if w.dt_s.is_none() && w.substeps.is_none() {
        return;
    }
    let frame_dt = 1.0 / w.fps;
    let dt = match (w.dt_s, w.substeps) {
        (Some(dt), None) => {
            let n = (frame_dt / dt).round().max(1.0);
            if (n * dt - frame_dt).abs() > 1e-9 * frame_dt {
                c.invalid(
                    "world.dt_s",
                    format!("dt {dt} s does not divide the frame time {frame_dt} s"),
                );
                return;
            }
            frame_dt / n
        }
        (None, Some(n)) => frame_dt / n as f64,
        (Some(dt), Some(n)) => {
            if (n as f64 * dt - frame_dt).abs() > 1e-9 * frame_dt {
                c.invalid(
                    "world.substeps",
                    format!(
                        "dt_s × substeps = {} s differs from the frame time {frame_dt} s",
                        n as f64 * dt
                    ),
                );
                return;
            }
            frame_dt / n as f64
        }
        (None, None) => unreachable!(),
    };
    let Some(spacing) = w.particle_spacing_m else {
        c.push(
            DiagnosticKind::MissingField,
            "world.particle_spacing_m",
            "particle_spacing_m is required when dt_s or substeps is set, so the step can be checked for stability",
        );
        return;
    };
    let materials: Vec<Material> = spec
        .regions
        .iter()
        .map(|r| r.material.to_material())
        .collect();
    let used = vec![true; materials.len()];
    let mut bound = stable_dt(&materials, &used, spacing, CELL_SPACINGS * spacing);
    // A region may end up without particles; rigid-only runs use the rigid step.
    if materials.iter().any(|m| m.kind == MaterialKind::Rigid) {
        bound = bound.min(RIGID_DT);
    }
    if dt > bound * (1.0 + 1e-12) {
        let path = if w.dt_s.is_some() {
            "world.dt_s"
        } else {
            "world.substeps"
        };
        c.push(
            DiagnosticKind::Unstable,
            path,
            format!(
                "substep {dt:.3e} s exceeds the stability limit {bound:.3e} s for these materials and spacing; use dt_s <= {bound:.3e} or more substeps (>= {})",
                (frame_dt / bound).ceil()
            ),
        );
    }
}

/// Structural checks on the raw document: unknown keys, unit mistakes and
/// malformed predicates, before any typed decoding.
mod schema {
    use toml::{Table, Value};

    use crate::diag::{locate, Diagnostic, DiagnosticKind};

    const TOP: &[&str] = &[
        "spec_version",
        "scene",
        "world",
        "initial",
        "regions",
        "forces",
        "hole_fill",
        "skinning",
    ];
    const SCENE: &[&str] = &["ply", "select", "up_axis"];
    const WORLD: &[&str] = &[
        "gravity_mps2",
        "ground",
        "ground_offset_m",
        "duration_s",
        "fps",
        "dt_s",
        "substeps",
        "particle_spacing_m",
        "grid_resolution",
        "seed",
    ];
    const INITIAL: &[&str] = &["lift_m"];
    const REGION: &[&str] = &["name", "where", "material"];
    const MATERIAL: &[&str] = &[
        "kind",
        "density_kgpm3",
        "youngs_modulus_pa",
        "poisson_ratio",
        "stiffness_pa",
        "eos_exponent",
        "surface_tension",
        "viscosity",
        "restitution",
        "friction",
    ];
    const FORCE: &[&str] = &[
        "kind",
        "direction",
        "magnitude_ns",
        "velocity_change_mps",
        "magnitude_n",
        "at_s",
        "until_s",
        "point_fraction",
        "radius_m",
    ];
    const HOLE_FILL: &[&str] = &[
        "threshold",
        "shell_radii",
        "poisson_radius_m",
        "max_spawn_per_frame",
    ];
    const SKINNING: &[&str] = &["k", "epsilon_m2", "center_mode"];

    /// Unit suffixes, longest first so `_mps2` wins over `_s`.
    const UNITS: &[(&str, &str)] = &[
        ("_kgpm3", "kg/m³"),
        ("_gpcm3", "g/cm³"),
        ("_mps2", "m/s²"),
        ("_mps", "m/s"),
        ("_kpa", "kPa"),
        ("_mpa", "MPa"),
        ("_gpa", "GPa"),
        ("_pa", "Pa"),
        ("_ns", "N·s"),
        ("_kn", "kN"),
        ("_n", "N"),
        ("_ms", "ms"),
        ("_mm", "mm"),
        ("_cm", "cm"),
        ("_m2", "m²"),
        ("_m", "m"),
        ("_s", "s"),
        ("_kg", "kg"),
        ("_g", "g"),
        ("_hz", "Hz"),
    ];

    fn stem(key: &str) -> &str {
        UNITS
            .iter()
            .find_map(|(suffix, _)| key.strip_suffix(suffix))
            .unwrap_or(key)
    }

    fn unit_of(key: &str) -> Option<&'static str> {
        UNITS
            .iter()
            .find(|(suffix, _)| key.ends_with(suffix))
            .map(|(_, u)| *u)
    }

    struct Ctx<'a> {
        text: &'a str,
        out: &'a mut Vec<Diagnostic>,
    }

    impl Ctx<'_> {
        fn push(&mut self, kind: DiagnosticKind, path: String, message: String) {
            let line = locate(self.text, &path);
            self.out.push(Diagnostic {
                kind,
                path,
                line,
                message,
            });
        }

        fn keys(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
            for key in table.keys() {
                if allowed.contains(&key.as_str()) {
                    continue;
                }
                let path = join(prefix, key);
                let s = stem(key);
                match allowed.iter().find(|a| stem(a) == s && !s.is_empty()) {
                    Some(expected) => {
                        let unit = unit_of(expected)
                            .map(|u| format!(" in {u}"))
                            .unwrap_or_default();
                        self.push(
                            DiagnosticKind::UnitMismatch,
                            path,
                            format!("unit mismatch: `{key}` should be `{expected}`{unit}"),
                        );
                    }
                    None => self.push(
                        DiagnosticKind::UnknownField,
                        path,
                        format!(
                            "unknown field `{key}` (expected one of: {})",
                            allowed.join(", ")
                        ),
                    ),
                }
            }
        }

        fn section<'t>(&mut self, parent: &'t Table, key: &str, prefix: &str) -> Option<&'t Table> {
            match parent.get(key)? {
                Value::Table(t) => Some(t),
                _ => {
                    self.push(
                        DiagnosticKind::InvalidValue,
                        join(prefix, key),
                        format!("`{key}` must be a table"),
                    );
                    None
                }
            }
        }

        fn array_of_tables<'t>(
            &mut self,
            parent: &'t Table,
            key: &str,
        ) -> Vec<(String, &'t Table)> {
            match parent.get(key) {
                None => Vec::new(),
                Some(Value::Array(items)) => items
                    .iter()
                    .enumerate()
                    .filter_map(|(i, v)| {
                        let path = format!("{key}[{i}]");
                        match v {
                            Value::Table(t) => Some((path, t)),
                            _ => {
                                self.push(
                                    DiagnosticKind::InvalidValue,
                                    path,
                                    format!("each `{key}` entry must be a table"),
                                );
                                None
                            }
                        }
                    })
                    .collect(),
                Some(_) => {
                    self.push(
                        DiagnosticKind::InvalidValue,
                        key.to_string(),
                        format!("`{key}` must be an array of tables ([[{key}]])"),
                    );
                    Vec::new()
                }
            }
        }

        fn predicate(&mut self, value: &Value, path: String) {
            let problem = match value {
                Value::String(s) if s == "all" => None,
                Value::String(s) => Some(format!(
                    "unknown predicate `{s}`; use \"all\", {{halfspace = {{...}}}} or {{sphere = {{...}}}}"
                )),
                Value::Table(t) if t.len() == 1 => {
                    let (shape, body) = t.iter().next().expect("one entry");
                    let (fields, example): (&[&str], &str) = match shape.as_str() {
                        "halfspace" => (
                            &["axis", "side", "at_fraction"],
                            "{halfspace = {axis = \"z\", side = \"above\", at_fraction = 0.5}}",
                        ),
                        "sphere" => (
                            &["center_fraction", "radius_fraction"],
                            "{sphere = {center_fraction = [0.5, 0.5, 0.5], radius_fraction = 0.25}}",
                        ),
                        other => {
                            return self.push(
                                DiagnosticKind::MalformedPredicate,
                                path,
                                format!("unknown predicate shape `{other}`; use halfspace or sphere"),
                            )
                        }
                    };
                    match body {
                        Value::Table(b) => {
                            let mut keys: Vec<&str> = b.keys().map(String::as_str).collect();
                            keys.sort_unstable();
                            let mut want = fields.to_vec();
                            want.sort_unstable();
                            let typed = match shape.as_str() {
                                "halfspace" => {
                                    matches!(b.get("axis"), Some(Value::String(a)) if ["x", "y", "z"].contains(&a.as_str()))
                                        && matches!(b.get("side"), Some(Value::String(s)) if s == "above" || s == "below")
                                        && is_number(b.get("at_fraction"))
                                }
                                _ => {
                                    matches!(b.get("center_fraction"), Some(Value::Array(a)) if a.len() == 3 && a.iter().all(|v| is_number(Some(v))))
                                        && is_number(b.get("radius_fraction"))
                                }
                            };
                            (keys != want || !typed)
                                .then(|| format!("malformed {shape} predicate; expected {example}"))
                        }
                        _ => Some(format!("malformed {shape} predicate; expected {example}")),
                    }
                }
                _ => Some(
                    "a region predicate is \"all\" or a table with exactly one of halfspace / sphere"
                        .to_string(),
                ),
            };
            if let Some(message) = problem {
                self.push(DiagnosticKind::MalformedPredicate, path, message);
            }
        }
    }

    fn is_number(v: Option<&Value>) -> bool {
        matches!(v, Some(Value::Float(_)) | Some(Value::Integer(_)))
    }

    fn join(prefix: &str, key: &str) -> String {
        if prefix.is_empty() {
            key.to_string()
        } else {
            format!("{prefix}.{key}")
        }
    }

    pub(super) fn check(doc: &Table, text: &str, out: &mut Vec<Diagnostic>) {
        let mut c = Ctx { text, out };
        c.keys(doc, "", TOP);
        if !doc.contains_key("spec_version") {
            c.push(
                DiagnosticKind::MissingField,
                "spec_version".into(),
                "spec_version = 1 is required".into(),
            );
        }
        if let Some(t) = c.section(doc, "scene", "") {
            c.keys(t, "scene", SCENE);
        }
        if let Some(t) = c.section(doc, "world", "") {
            c.keys(t, "world", WORLD);
        }
        if let Some(t) = c.section(doc, "initial", "") {
            c.keys(t, "initial", INITIAL);
        }
        if let Some(t) = c.section(doc, "hole_fill", "") {
            c.keys(t, "hole_fill", HOLE_FILL);
        }
        if let Some(t) = c.section(doc, "skinning", "") {
            c.keys(t, "skinning", SKINNING);
        }
        if !doc.contains_key("regions") {
            c.push(
                DiagnosticKind::MissingField,
                "regions".into(),
                "at least one [[regions]] entry is required".into(),
            );
        }
        for (path, region) in c.array_of_tables(doc, "regions") {
            c.keys(region, &path, REGION);
            match region.get("where") {
                Some(w) => c.predicate(w, format!("{path}.where")),
                None => c.push(
                    DiagnosticKind::MissingField,
                    format!("{path}.where"),
                    "every region needs a `where` predicate".into(),
                ),
            }
            let mpath = format!("{path}.material");
            match c.section(region, "material", &path) {
                Some(m) => {
                    c.keys(m, &mpath, MATERIAL);
                    match m.get("kind") {
                        Some(Value::String(k)) if ["rigid", "elastic", "fluid"].contains(&k.as_str()) => {}
                        Some(other) => c.push(
                            DiagnosticKind::InvalidValue,
                            format!("{mpath}.kind"),
                            format!("unknown material kind {other}; use \"rigid\", \"elastic\" or \"fluid\""),
                        ),
                        None => c.push(
                            DiagnosticKind::MissingField,
                            format!("{mpath}.kind"),
                            "material kind is required".into(),
                        ),
                    }
                }
                None if !region.contains_key("material") => c.push(
                    DiagnosticKind::MissingField,
                    mpath,
                    "every region needs a material".into(),
                ),
                None => {}
            }
        }
        for (path, force) in c.array_of_tables(doc, "forces") {
            c.keys(force, &path, FORCE);
        }
    }
}
