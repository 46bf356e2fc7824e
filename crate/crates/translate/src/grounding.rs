//! Text given to the language model: steering instructions, the spec
//! language reference and worked example specs.

use std::fs;
use std::io;
use std::path::Path;

/// Names of the bundled example specs.
pub const EXEMPLAR_NAMES: [&str; 4] = [
    "rigid_drop",
    "fluid_conversion",
    "multi_material",
    "elastic_jump",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GroundingBundle {
    pub instructions: String,
    pub api_reference: String,
    /// (name, spec text), sorted by name when loaded from disk.
    pub exemplars: Vec<(String, String)>,
}

impl Default for GroundingBundle {
    fn default() -> Self {
        GroundingBundle::builtin()
    }
}

impl GroundingBundle {
    /// The bundle compiled into the binary.
    pub fn builtin() -> Self {
        let exemplars = [
            include_str!("../grounding/exemplars/rigid_drop.spec"),
            include_str!("../grounding/exemplars/fluid_conversion.spec"),
            include_str!("../grounding/exemplars/multi_material.spec"),
            include_str!("../grounding/exemplars/elastic_jump.spec"),
        ];
        GroundingBundle {
            instructions: include_str!("../grounding/instructions.txt").to_string(),
            api_reference: include_str!("../grounding/api.txt").to_string(),
            exemplars: EXEMPLAR_NAMES
                .iter()
                .zip(exemplars)
                .map(|(n, t)| (n.to_string(), t.to_string()))
                .collect(),
        }
    }

    /// Load `instructions.txt`, `api.txt` and `exemplars/*.spec` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref();
        let mut exemplars = Vec::new();
        for entry in fs::read_dir(dir.join("exemplars"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "spec") {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                exemplars.push((name, fs::read_to_string(&path)?));
            }
        }
        exemplars.sort();
        Ok(GroundingBundle {
            instructions: fs::read_to_string(dir.join("instructions.txt"))?,
            api_reference: fs::read_to_string(dir.join("api.txt"))?,
            exemplars,
        })
    }

    /// Write the bundle in the layout `load` reads.
    pub fn save(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("exemplars"))?;
        fs::write(dir.join("instructions.txt"), &self.instructions)?;
        fs::write(dir.join("api.txt"), &self.api_reference)?;
        for (name, text) in &self.exemplars {
            fs::write(dir.join("exemplars").join(format!("{name}.spec")), text)?;
        }
        Ok(())
    }

    pub fn exemplar(&self, name: &str) -> Option<&str> {
        self.exemplars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }

    /// Instructions, then the language reference, then each example.
    pub fn system_message(&self) -> String {
        let mut out = String::new();
        out.push_str(self.instructions.trim_end());
        out.push_str("\n\n# Spec language reference\n\n");
        out.push_str(self.api_reference.trim_end());
        out.push_str("\n\n# Examples\n");
        for (name, text) in &self.exemplars {
            out.push_str(&format!("\n## {name}\n```spec\n{}\n```\n", text.trim_end()));
        }
        out
    }
}
