use nalgebra::Vector3;

use phystalk_core::io::{read_anim, AnimFrame};
use phystalk_session::pipeline::{base_path, prepare, run_offline, simulate, Runner, Stage};
use phystalk_session::synthetic::cube_scene;
use phystalk_translate::dsl::Selection;
use phystalk_translate::{parse_spec, GroundingBundle, SimSpec};

fn exemplar(name: &str) -> SimSpec {
    parse_spec(GroundingBundle::builtin().exemplar(name).unwrap()).unwrap()
}

fn mean_center(f: &AnimFrame) -> Vector3<f64> {
    f.centers.iter().sum::<Vector3<f64>>() / f.len() as f64
}

fn com_and_velocity(r: &Runner) -> (f64, f64) {
    let s = r.sim.state();
    let m = s.total_mass();
    let z: f64 = s
        .positions
        .iter()
        .zip(&s.masses)
        .map(|(x, w)| x.z * w)
        .sum();
    let vz: f64 = s
        .velocities
        .iter()
        .zip(&s.masses)
        .map(|(v, w)| v.z * w)
        .sum();
    (z / m, vz / m)
}

#[test]
fn jump_follows_the_kick() {
    let spec = exemplar("elastic_jump");
    let seq = simulate(&spec, cube_scene(2000, 1), Some(60)).unwrap();
    assert_eq!(seq.frames.len(), 60);
    for (k, f) in seq.frames.iter().enumerate() {
        assert!(
            (f.timestamp - k as f64 / 30.0).abs() < 1e-9,
            "frame {k} at {}",
            f.timestamp
        );
    }

    let g = 9.81;
    let h = 1.0 / 30.0;
    let mut r = Runner::new(prepare(&spec, cube_scene(2000, 1)).unwrap());
    let states: Vec<(f64, f64)> = (0..20)
        .map(|_| {
            let s = com_and_velocity(&r);
            r.step().unwrap();
            s
        })
        .collect();
    // The kick lands at t = 0.1 (frame 3 → 4): +2.5 m/s on top of one frame of gravity.
    let dv = states[4].1 - states[3].1;
    assert!((dv - (2.5 - g * h)).abs() < 0.05, "kick changed vz by {dv}");
    // Airborne, the centre of mass only feels gravity.
    for k in 5..8 {
        let a = (states[k + 1].1 - states[k].1) / h;
        assert!((a + g).abs() < 0.05 * g, "frame {k}: acceleration {a}");
    }
    let (z4, v4) = states[4];
    let apex = states.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let ballistic = z4 + v4 * v4 / (2.0 * g);
    assert!(
        (apex - ballistic).abs() < 0.02,
        "apex {apex}, ballistic {ballistic}"
    );

    // The rendered Gaussians follow the particles up and back down.
    let z0 = mean_center(&seq.frames[0]).z;
    let heights: Vec<f64> = seq.frames.iter().map(|f| mean_center(f).z - z0).collect();
    let peak = heights[..15]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(peak > 0.5 * (apex - states[0].0), "skinned peak {peak}");
    assert!(
        heights[15..20].iter().any(|&dz| dz < peak - 0.1),
        "never came down"
    );
}

#[test]
fn rigid_drop_settles() {
    let spec = exemplar("rigid_drop");
    let seq = simulate(&spec, cube_scene(1500, 2), None).unwrap();
    assert_eq!(seq.frames.len(), 60);
    let tail = &seq.frames[50..];
    for w in tail.windows(2) {
        let d = w[0]
            .centers
            .iter()
            .zip(&w[1].centers)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(d < 1e-4, "still moving at t = {}: {d}", w[1].timestamp);
    }
    // Resting on the ground, which sits at the cube's lowest point.
    let min_z = tail[tail.len() - 1]
        .centers
        .iter()
        .map(|c| c.z)
        .fold(f64::INFINITY, f64::min);
    let rest_min = seq.frames[0]
        .centers
        .iter()
        .map(|c| c.z)
        .fold(f64::INFINITY, f64::min)
        - 0.5;
    assert!(
        (min_z - rest_min).abs() < 0.05,
        "rests at {min_z}, expected {rest_min}"
    );
}

#[test]
fn offline_runs_are_byte_identical() {
    let spec = exemplar("multi_material");
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.gsanim");
    let b = dir.path().join("b.gsanim");
    run_offline(&spec, cube_scene(1000, 3), &a, Some(12)).unwrap();
    run_offline(&spec, cube_scene(1000, 3), &b, Some(12)).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let seq = read_anim(&a).unwrap();
    assert_eq!(seq.frames.len(), 12);
    assert_eq!(seq.gaussian_count, 1000);
    assert!(base_path(&a).exists());
}

#[test]
fn errors_name_their_stage() {
    let mut spec = exemplar("rigid_drop");
    spec.scene.select = Selection::Bbox {
        min: [5.0, 5.0, 5.0],
        max: [6.0, 6.0, 6.0],
    };
    let err = prepare(&spec, cube_scene(200, 4)).unwrap_err();
    assert_eq!(err.stage, Stage::Select);
    assert!(err.to_string().starts_with("select: "), "{err}");
}

#[test]
fn bbox_selection_keeps_outside_static() {
    let mut spec = exemplar("rigid_drop");
    spec.scene.select = Selection::Bbox {
        min: [-1.0, -1.0, -1.0],
        max: [1.0, 0.0, 2.0],
    };
    let base = cube_scene(1500, 5);
    let seq = simulate(&spec, base.clone(), Some(10)).unwrap();
    let last = seq.frames.last().unwrap();
    let mut moved = 0;
    for (g, c) in base.gaussians.iter().zip(&last.centers) {
        if g.center.y > 0.0 {
            assert_eq!(*c, g.center, "background moved");
        } else if (c - g.center).norm() > 1e-3 {
            moved += 1;
        }
    }
    assert!(moved > 0);
}
