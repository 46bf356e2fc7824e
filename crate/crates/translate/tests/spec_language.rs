use nalgebra::Vector3;
use proptest::prelude::*;

use phystalk_core::proxy::{assign_regions, bounds, ParticleSeed};
use phystalk_core::sim::{grid_dx, init_sim, stable_dt};
use phystalk_translate::dsl::{
    Axis, CenterModeSpec, ForceKindSpec, ForceSpec, HoleFillSpec, KindSpec, MaterialSpec,
    RegionSpec, Side, UpAxis, Where,
};
use phystalk_translate::{parse_spec, DiagnosticKind, GroundingBundle, SimSpec};

#[test]
fn minimal_spec_parses_and_echoes_defaults() {
    let text =
        "spec_version = 1\n\n[[regions]]\nwhere = \"all\"\nmaterial = { kind = \"elastic\" }\n";
    let spec = parse_spec(text).unwrap();
    assert_eq!(spec.world.gravity_mps2, Some([0.0, 0.0, -9.81]));
    assert_eq!((spec.world.duration_s, spec.world.fps), (2.0, 30.0));
    let echoed = spec.to_toml();
    for field in [
        "gravity_mps2",
        "duration_s",
        "fps",
        "youngs_modulus_pa",
        "poisson_ratio",
        "density_kgpm3",
    ] {
        assert!(echoed.contains(field), "{field} missing from\n{echoed}");
    }
}

#[test]
fn poisson_ratio_above_bound_is_rejected() {
    let text = "spec_version = 1\n[[regions]]\nwhere = \"all\"\n[regions.material]\nkind = \"elastic\"\npoisson_ratio = 0.7\n";
    let err = parse_spec(text).unwrap_err();
    assert_eq!(err.diagnostics.len(), 1);
    let d = &err.diagnostics[0];
    assert_eq!(d.kind, DiagnosticKind::InvalidValue);
    assert!(d.path.ends_with("poisson_ratio"));
    assert!(d.message.contains("[0, 0.5)"), "{}", d.message);
    assert_eq!(d.line, Some(6));
}

#[test]
fn bundled_exemplars_parse_without_diagnostics() {
    let bundle = GroundingBundle::builtin();
    let names: Vec<&str> = bundle.exemplars.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "rigid_drop",
            "fluid_conversion",
            "multi_material",
            "elastic_jump"
        ]
    );
    for (name, text) in &bundle.exemplars {
        parse_spec(text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn bundle_on_disk_matches_builtin() {
    let dir = std::env::temp_dir().join(format!("grounding-{}", std::process::id()));
    let builtin = GroundingBundle::builtin();
    builtin.save(&dir).unwrap();
    let loaded = GroundingBundle::load(&dir).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(loaded.instructions, builtin.instructions);
    assert_eq!(loaded.api_reference, builtin.api_reference);
    let mut sorted = builtin.exemplars.clone();
    sorted.sort();
    assert_eq!(loaded.exemplars, sorted);
}

#[test]
fn distinct_diagnostics_per_error_class() {
    let base =
        "spec_version = 1\n[[regions]]\nwhere = \"all\"\nmaterial = { kind = \"elastic\" }\n";
    let cases = [
        (
            format!("{base}[world]\nwind = 3\n"),
            DiagnosticKind::UnknownField,
        ),
        (
            format!("{base}[world]\nduration_ms = 300\n"),
            DiagnosticKind::UnitMismatch,
        ),
        (
            base.replace("where = \"all\"", "where = { box = 1 }"),
            DiagnosticKind::MalformedPredicate,
        ),
        (
            format!("{base}[world]\nsubsteps = 1\nparticle_spacing_m = 0.001\n"),
            DiagnosticKind::Unstable,
        ),
    ];
    for (text, kind) in cases {
        let err = parse_spec(&text).unwrap_err();
        assert!(err.has(kind), "{kind:?} not reported for\n{text}\n{err}");
        assert!(err.diagnostics.iter().all(|d| d.line.is_some()), "{err}");
    }
}

fn material(kind: KindSpec) -> impl Strategy<Value = MaterialSpec> {
    (
        prop::option::of(100.0..5000.0f64),
        prop::option::of(1e3..1e7f64),
        prop::option::of(0.0..0.49f64),
        prop::option::of(1e3..1e5f64),
        prop::option::of(1.0..7.0f64),
        prop::option::of(0.0..1.0f64),
        prop::option::of(0.0..1.0f64),
    )
        .prop_map(move |(rho, e, nu, k, gamma, a, b)| {
            let mut m = MaterialSpec::bare(kind);
            m.density_kgpm3 = rho;
            match kind {
                KindSpec::Rigid => {
                    m.restitution = a;
                    m.friction = b;
                }
                KindSpec::Elastic => {
                    m.youngs_modulus_pa = e;
                    m.poisson_ratio = nu;
                    m.friction = b;
                }
                KindSpec::Fluid => {
                    m.stiffness_pa = k;
                    m.eos_exponent = gamma;
                    m.surface_tension = a;
                    m.viscosity = b;
                }
            }
            m
        })
}

fn predicate() -> impl Strategy<Value = Where> {
    prop_oneof![
        (0usize..3, any::<bool>(), 0.0..=1.0f64).prop_map(|(a, above, f)| Where::HalfSpace {
            axis: [Axis::X, Axis::Y, Axis::Z][a],
            side: if above { Side::Above } else { Side::Below },
            at_fraction: f,
        }),
        ([0.0..1.0f64, 0.0..1.0, 0.0..1.0], 0.01..1.0f64).prop_map(|(c, r)| Where::Sphere {
            center_fraction: c,
            radius_fraction: r,
        }),
    ]
}

fn force(duration: f64) -> impl Strategy<Value = ForceSpec> {
    (
        any::<bool>(),
        [-1.0..1.0f64, -1.0..1.0, 0.1..1.0],
        0.0..10.0f64,
        0.0..1.0f64,
        any::<bool>(),
    )
        .prop_map(move |(impulse, d, mag, t, at_point)| {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let at_s = t * duration * 0.5;
            ForceSpec {
                kind: if impulse {
                    ForceKindSpec::Impulse
                } else {
                    ForceKindSpec::Continuous
                },
                direction: d.map(|v| v / n),
                magnitude_ns: impulse.then_some(mag),
                velocity_change_mps: None,
                magnitude_n: (!impulse).then_some(mag),
                at_s,
                until_s: (!impulse).then_some(at_s + 0.1),
                point_fraction: at_point.then_some([0.5, 0.5, 1.0]),
                radius_m: None,
            }
        })
}

/// Random specs that satisfy every rule of the language.
fn valid_spec() -> impl Strategy<Value = SimSpec> {
    let kinds = prop_oneof![
        Just(vec![KindSpec::Fluid]),
        Just(vec![KindSpec::Fluid, KindSpec::Fluid]),
        prop::collection::vec(
            prop_oneof![Just(KindSpec::Rigid), Just(KindSpec::Elastic)],
            1..4
        ),
    ];
    kinds
        .prop_flat_map(|kinds| {
            let mats: Vec<_> = kinds.iter().map(|&k| material(k)).collect();
            let preds = prop::collection::vec(predicate(), kinds.len() - 1);
            (
                Just(kinds),
                mats,
                preds,
                (0.5..3.0f64, prop_oneof![Just(24.0), Just(30.0), Just(60.0)]),
                prop::option::of(0.005..0.05f64),
                0u32..4,
                any::<u32>(),
                (0.0..1.0f64, any::<bool>(), 0usize..3),
            )
        })
        .prop_flat_map(
            |(
                kinds,
                mats,
                preds,
                (duration, fps),
                spacing,
                extra_sub,
                seed,
                (lift, ground, up),
            )| {
                let forces = prop::collection::vec(force(duration), 0..3);
                (
                    Just((
                        kinds, mats, preds, duration, fps, spacing, extra_sub, seed, lift, ground,
                        up,
                    )),
                    forces,
                )
            },
        )
        .prop_map(
            |(
                (kinds, mats, preds, duration, fps, spacing, extra_sub, seed, lift, ground, up),
                forces,
            )| {
                let n = kinds.len();
                let regions = mats
                    .into_iter()
                    .enumerate()
                    .map(|(i, material)| RegionSpec {
                        name: Some(format!("r{i}")),
                        predicate: if i + 1 == n {
                            Where::All
                        } else {
                            preds[i].clone()
                        },
                        material,
                    })
                    .collect();
                let mut s = SimSpec::single(KindSpec::Elastic);
                s.regions = regions;
                s.forces = forces;
                s.world.duration_s = duration;
                s.world.fps = fps;
                s.world.seed = seed as u64;
                s.world.ground = ground;
                s.initial.lift_m = lift;
                s.scene.up_axis = [UpAxis::PosZ, UpAxis::PosY, UpAxis::NegY][up];
                if kinds.contains(&KindSpec::Fluid) {
                    s.hole_fill = Some(HoleFillSpec::default());
                }
                if extra_sub % 2 == 1 {
                    s.skinning.center_mode = CenterModeSpec::Displacement;
                }
                if let Some(h) = spacing {
                    s.world.particle_spacing_m = Some(h);
                    if extra_sub > 0 {
                        // Explicit substeps at or above the stable count.
                        let mats: Vec<_> =
                            s.regions.iter().map(|r| r.material.to_material()).collect();
                        let mut bound = stable_dt(&mats, &vec![true; mats.len()], h, 2.0 * h);
                        if kinds.contains(&KindSpec::Rigid) {
                            bound = bound.min(1e-3);
                        }
                        let needed = (1.0 / fps / bound).ceil() as u32;
                        s.world.substeps = Some(needed + extra_sub);
                    }
                }
                s
            },
        )
}

/// Grid-filled box of 8³ particles at the spec's spacing.
fn box_seed(spacing: f64) -> ParticleSeed {
    let mut pts = Vec::new();
    for i in 0..8 {
        for j in 0..8 {
            for k in 0..8 {
                pts.push(Vector3::new(i as f64, j as f64, k as f64) * spacing);
            }
        }
    }
    ParticleSeed::from_positions(pts, spacing)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_identity(spec in valid_spec()) {
        let parsed = spec.validated().expect("generator emits valid specs");
        let again = parse_spec(&parsed.to_toml()).expect("serialized spec reparses");
        prop_assert_eq!(again, parsed);
    }

    #[test]
    fn accepted_specs_initialize(spec in valid_spec()) {
        let spec = spec.validated().expect("generator emits valid specs");
        let spacing = spec.world.particle_spacing_m.unwrap_or(0.02);
        let seed = box_seed(spacing);
        let (lo, hi) = bounds(&seed.positions);
        let seed = assign_regions(seed, &spec.region_predicates(&lo, &hi));
        let world = spec.world_config(&lo, &hi);
        prop_assert!(grid_dx(spacing, (hi - lo).max(), world.grid_resolution) >= 2.0 * spacing);
        let sim = init_sim(&seed, &spec.materials(), &world);
        prop_assert!(sim.is_ok(), "{:?}\n{}", sim.err(), spec.to_toml());
        let total = sim.unwrap().state().total_mass();
        for f in spec.forces(&lo, &hi, total) {
            prop_assert!(f.validate().is_ok());
        }
    }
}
