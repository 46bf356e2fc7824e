use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate object: {0}")]
    DegenerateObject(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("too few particles: spacing {spacing} yields {count} particles (need at least {min}); use a smaller spacing")]
    TooFewParticles {
        spacing: f64,
        count: usize,
        min: usize,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("unstable config: {reason}; suggested dt <= {suggested_dt:.3e} s")]
    UnstableConfig { reason: String, suggested_dt: f64 },
    #[error("numerical blow-up at frame {frame}: {detail}")]
    NumericalBlowup { frame: u64, detail: String },
    #[error("ply schema error: missing required property `{0}`")]
    MissingProperty(String),
    #[error("unsupported ply format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed ply: {0}")]
    MalformedPly(String),
    #[error("anim magic mismatch: found {found:?}")]
    MagicMismatch { found: [u8; 4] },
    #[error("anim version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("anim length mismatch: {0}")]
    LengthMismatch(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image encoding failed: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
