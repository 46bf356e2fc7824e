//! Deterministic keyword translation for use without a language model.
//!
//! The material comes from material words, the template from action words,
//! and gravity and push directions from modifier words. Anything
//! unrecognised falls back to a plain elastic object.

use crate::dsl::{parse_spec, ForceKindSpec, ForceSpec, KindSpec, SimSpec};
use crate::grounding::GroundingBundle;

pub const MOON_GRAVITY: f64 = 1.62;
pub const MARS_GRAVITY: f64 = 3.71;
/// Velocity change of a keyword push, m/s.
pub const PUSH_SPEED: f64 = 1.5;
/// When keyword forces fire, s.
pub const FORCE_TIME: f64 = 0.1;
/// Drop height for "drop"/"fall" prompts, m.
pub const DROP_LIFT: f64 = 0.5;

const FLUID_WORDS: &[&str] = &[
    "lava", "water", "liquid", "liquify", "liquefy", "melt", "melts", "melting", "melted", "fluid",
    "pour", "pours", "slime", "goo", "honey", "flood", "splash",
];
const RIGID_WORDS: &[&str] = &[
    "rigid",
    "stone",
    "rock",
    "metal",
    "steel",
    "iron",
    "wood",
    "wooden",
    "hard",
    "solid",
    "marble",
    "ceramic",
    "porcelain",
];
const SOFT_WORDS: &[&str] = &[
    "soft", "squishy", "jelly", "rubber", "rubbery", "elastic", "bouncy", "wobbly", "jiggle",
];
const JUMP_WORDS: &[&str] = &[
    "jump", "jumps", "jumping", "hop", "hops", "leap", "leaps", "launch",
];
const PUSH_WORDS: &[&str] = &[
    "push", "pushes", "shove", "kick", "nudge", "hit", "poke", "throw", "toss", "knock", "slide",
];
const DROP_WORDS: &[&str] = &["drop", "drops", "fall", "falls", "falling", "fell"];

/// (keyword, direction) with +z up and +y forward.
const DIRECTIONS: &[(&str, [f64; 3])] = &[
    ("forward", [0.0, 1.0, 0.0]),
    ("forwards", [0.0, 1.0, 0.0]),
    ("ahead", [0.0, 1.0, 0.0]),
    ("back", [0.0, -1.0, 0.0]),
    ("backward", [0.0, -1.0, 0.0]),
    ("backwards", [0.0, -1.0, 0.0]),
    ("right", [1.0, 0.0, 0.0]),
    ("left", [-1.0, 0.0, 0.0]),
    ("up", [0.0, 0.0, 1.0]),
    ("upward", [0.0, 0.0, 1.0]),
    ("upwards", [0.0, 0.0, 1.0]),
    ("down", [0.0, 0.0, -1.0]),
    ("downward", [0.0, 0.0, -1.0]),
    ("downwards", [0.0, 0.0, -1.0]),
];

fn words(prompt: &str) -> Vec<String> {
    prompt
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn exemplar(name: &str) -> SimSpec {
    let bundle = GroundingBundle::builtin();
    let text = bundle.exemplar(name).expect("bundled exemplar");
    parse_spec(text).expect("bundled exemplars are valid")
}

/// Translate without a model. Same prompt, same spec.
pub fn offline_translate(prompt: &str) -> SimSpec {
    let w = words(prompt);
    let any = |set: &[&str]| w.iter().any(|x| set.contains(&x.as_str()));

    let fluid = any(FLUID_WORDS);
    let rigid = any(RIGID_WORDS);
    let soft = any(SOFT_WORDS);
    let jump = any(JUMP_WORDS);
    let push = any(PUSH_WORDS);
    let drop = any(DROP_WORDS);

    let mut spec = if fluid {
        exemplar("fluid_conversion")
    } else if rigid && soft {
        exemplar("multi_material")
    } else if jump {
        let mut s = exemplar("elastic_jump");
        if rigid {
            s.regions[0].material = crate::dsl::MaterialSpec::bare(KindSpec::Rigid);
        }
        s
    } else if rigid && (drop || !push) {
        exemplar("rigid_drop")
    } else {
        let mut s = SimSpec::single(if rigid {
            KindSpec::Rigid
        } else {
            KindSpec::Elastic
        });
        s.regions[0].name = Some("body".into());
        if drop {
            s.initial.lift_m = DROP_LIFT;
        }
        s
    };

    if push {
        let mut dir = [0.0; 3];
        for x in &w {
            if let Some((_, d)) = DIRECTIONS.iter().find(|(k, _)| k == x) {
                for i in 0..3 {
                    dir[i] += d[i];
                }
            }
        }
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dir = if n > 0.0 {
            dir.map(|v| v / n)
        } else {
            [0.0, 1.0, 0.0]
        };
        spec.forces.push(ForceSpec {
            kind: ForceKindSpec::Impulse,
            direction: dir,
            magnitude_ns: None,
            velocity_change_mps: Some(PUSH_SPEED),
            magnitude_n: None,
            at_s: FORCE_TIME,
            until_s: None,
            point_fraction: None,
            radius_m: None,
        });
    }

    if any(&["moon", "lunar"]) {
        spec.world.gravity_mps2 = Some([0.0, 0.0, -MOON_GRAVITY]);
    } else if any(&["mars", "martian"]) {
        spec.world.gravity_mps2 = Some([0.0, 0.0, -MARS_GRAVITY]);
    }

    spec.validated().expect("keyword templates are valid")
}
