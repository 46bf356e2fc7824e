use std::path::Path;
use std::process::{Command, Output};

use phystalk_core::io::{read_anim, save_ply};
use phystalk_session::synthetic::cube_scene;
use phystalk_translate::{parse_spec, GroundingBundle};

fn phystalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phystalk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(dir: &Path) -> (String, String) {
    let scene = dir.join("cube.ply");
    save_ply(&cube_scene(600, 9), &scene).unwrap();
    let spec = dir.join("drop.spec");
    std::fs::write(
        &spec,
        GroundingBundle::builtin().exemplar("rigid_drop").unwrap(),
    )
    .unwrap();
    (scene.display().to_string(), spec.display().to_string())
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(phystalk(&[]).status.code(), Some(2));
    assert_eq!(
        phystalk(&["simulate", "--spec", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(phystalk(&["fly"]).status.code(), Some(2));
}

#[test]
fn simulate_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, spec) = setup(dir.path());
    let out = dir.path().join("drop.gsanim");
    let o = phystalk(&[
        "simulate",
        "--scene",
        &scene,
        "--spec",
        &spec,
        "--out",
        out.to_str().unwrap(),
        "--frames",
        "6",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seq = read_anim(&out).unwrap();
    assert_eq!(seq.frames.len(), 6);
    assert_eq!(seq.gaussian_count, 600);

    let cam = dir.path().join("cam.json");
    std::fs::write(
        &cam,
        r#"{"position":[3,-3,2],"look_at":[0,0,0.5],"width":64,"height":48}"#,
    )
    .unwrap();
    let pngs = dir.path().join("png");
    let o = phystalk(&[
        "render",
        "--anim",
        out.to_str().unwrap(),
        "--camera",
        cam.to_str().unwrap(),
        "--out-dir",
        pngs.to_str().unwrap(),
        "--every",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<_> = std::fs::read_dir(&pngs)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["frame_0000.png", "frame_0002.png", "frame_0004.png"]
    );
}

#[test]
fn simulate_fps_override_is_revalidated() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, spec) = setup(dir.path());
    let out = dir.path().join("a.gsanim");
    let o = phystalk(&[
        "simulate",
        "--scene",
        &scene,
        "--spec",
        &spec,
        "--out",
        out.to_str().unwrap(),
        "--fps",
        "10",
        "--frames",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_anim(&out).unwrap().fps, 10.0);
    let o = phystalk(&[
        "simulate",
        "--scene",
        &scene,
        "--spec",
        &spec,
        "--out",
        out.to_str().unwrap(),
        "--fps",
        "1000",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("frames"), "{}", stderr(&o));
}

#[test]
fn failures_exit_1_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, spec) = setup(dir.path());
    let out = dir.path().join("x.gsanim");
    let out = out.to_str().unwrap();

    let o = phystalk(&[
        "simulate",
        "--scene",
        "/nonexistent.ply",
        "--spec",
        &spec,
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error: load:"), "{}", stderr(&o));

    let bad = dir.path().join("bad.spec");
    std::fs::write(&bad, "spec_version = 1\n[[regions]]\nwhere = \"all\"\nmaterial = { kind = \"elastic\", poisson_ratio = 0.7 }\n").unwrap();
    let o = phystalk(&[
        "simulate",
        "--scene",
        &scene,
        "--spec",
        bad.to_str().unwrap(),
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("line 4") && err.contains("poisson_ratio"),
        "{err}"
    );

    // No scene anywhere.
    let o = phystalk(&["simulate", "--spec", &spec, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no scene"), "{}", stderr(&o));
}

#[test]
fn offline_prompt_writes_a_valid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = setup(dir.path());
    let out = dir.path().join("p.spec");
    let o = phystalk(&[
        "prompt",
        "--offline",
        "--prompt",
        "make it jump like jelly",
        "--scene",
        &scene,
        "--out-spec",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let spec = parse_spec(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(spec.scene.ply.as_deref(), Some(scene.as_str()));
    assert!(!spec.forces.is_empty());

    // The written spec runs without --scene.
    let anim = dir.path().join("p.gsanim");
    let o = phystalk(&[
        "simulate",
        "--spec",
        out.to_str().unwrap(),
        "--out",
        anim.to_str().unwrap(),
        "--frames",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unreachable_model_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("llm.toml");
    std::fs::write(
        &cfg,
        "url = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"m\"\ntimeout_s = 2\n",
    )
    .unwrap();
    let out = dir.path().join("p.spec");
    let o = Command::new(env!("CARGO_BIN_EXE_phystalk"))
        .args([
            "prompt",
            "--prompt",
            "drop it",
            "--llm-config",
            cfg.to_str().unwrap(),
            "--out-spec",
            out.to_str().unwrap(),
        ])
        .env_remove("PHYSTALK_LLM_URL")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!out.exists());
}
