//! Animation frames and the `.gsanim` container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header   "GSAN" | version u32 = 1 | gaussian_count u32 | frame_count u32 | fps f32
//! frame    timestamp f32
//!          gaussian_count x (center f32x3, covariance upper triangle f32x6)   36 bytes each
//!          alive bitset, ceil(gaussian_count / 8) bytes, bit i = byte i/8, bit (i % 8) LSB-first
//!          spawned_count u32
//!          spawned_count x (center f32x3, covariance f32x6, rgb u8x3, opacity f32)   43 bytes each
//! ```
//!
//! A frame block on its own (without the header) is also the payload of a
//! streamed frame message.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, SymCov};

pub const MAGIC: [u8; 4] = *b"GSAN";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 20;
pub const RECORD_BYTES: usize = 36;
pub const SPAWNED_RECORD_BYTES: usize = 43;

/// A Gaussian inserted by hole filling. Appearance is baked because it has no
/// entry in the base set.
#[derive(Clone, Debug, PartialEq)]
pub struct SpawnedGaussian {
    pub center: Vector3<f64>,
    pub covariance: SymCov,
    pub rgb: [u8; 3],
    pub opacity: f32,
}

/// One posed timestep of the whole scene.
#[derive(Clone, Debug, PartialEq)]
pub struct AnimFrame {
    pub timestamp: f64,
    pub centers: Vec<Vector3<f64>>,
    pub covariances: Vec<SymCov>,
    pub alive: Vec<bool>,
    pub spawned: Vec<SpawnedGaussian>,
}

impl AnimFrame {
    /// The undeformed pose of `base` at time zero.
    pub fn rest(base: &GaussianSet) -> Result<Self> {
        let covariances = base
            .gaussians
            .iter()
            .map(|g| g.covariance())
            .collect::<Result<Vec<_>>>()?;
        Ok(AnimFrame {
            timestamp: 0.0,
            centers: base.gaussians.iter().map(|g| g.center).collect(),
            covariances,
            alive: vec![true; base.len()],
            spawned: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn check_lengths(&self, gaussian_count: usize) -> Result<()> {
        if self.centers.len() != gaussian_count
            || self.covariances.len() != gaussian_count
            || self.alive.len() != gaussian_count
        {
            return Err(Error::LengthMismatch(format!(
                "frame has {} centers, {} covariances, {} alive flags; expected {gaussian_count}",
                self.centers.len(),
                self.covariances.len(),
                self.alive.len()
            )));
        }
        Ok(())
    }

    /// Encoded size of this frame block.
    pub fn encoded_len(&self) -> usize {
        4 + self.len() * RECORD_BYTES
            + self.len().div_ceil(8)
            + 4
            + self.spawned.len() * SPAWNED_RECORD_BYTES
    }

    /// Append the frame block to `out`.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        put_f32(out, self.timestamp);
        for (c, s) in self.centers.iter().zip(&self.covariances) {
            put_record(out, c, s);
        }
        let mut bits = vec![0u8; self.len().div_ceil(8)];
        for (i, _) in self.alive.iter().enumerate().filter(|(_, a)| **a) {
            bits[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&bits);
        out.extend_from_slice(&(self.spawned.len() as u32).to_le_bytes());
        for s in &self.spawned {
            put_record(out, &s.center, &s.covariance);
            out.extend_from_slice(&s.rgb);
            out.extend_from_slice(&s.opacity.to_le_bytes());
        }
    }

    /// Decode one frame block for `gaussian_count` Gaussians from the front of
    /// `bytes`. Returns the frame and the number of bytes consumed.
    pub fn decode(bytes: &[u8], gaussian_count: usize) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        let timestamp = r.f32()? as f64;
        let mut centers = Vec::with_capacity(gaussian_count);
        let mut covariances = Vec::with_capacity(gaussian_count);
        for _ in 0..gaussian_count {
            let (c, s) = r.record()?;
            centers.push(c);
            covariances.push(s);
        }
        let bits = r.take(gaussian_count.div_ceil(8))?;
        let alive = (0..gaussian_count)
            .map(|i| bits[i / 8] & (1 << (i % 8)) != 0)
            .collect();
        let spawned_count = r.u32()? as usize;
        let mut spawned = Vec::with_capacity(spawned_count.min(1 << 20));
        for _ in 0..spawned_count {
            let (center, covariance) = r.record()?;
            let rgb = r.take(3)?;
            spawned.push(SpawnedGaussian {
                center,
                covariance,
                rgb: [rgb[0], rgb[1], rgb[2]],
                opacity: r.f32()?,
            });
        }
        Ok((
            AnimFrame {
                timestamp,
                centers,
                covariances,
                alive,
                spawned,
            },
            r.pos,
        ))
    }
}

/// A sequence of frames over a fixed Gaussian count. The base appearance
/// (colours, opacities) lives in the scene PLY, not in the container.
#[derive(Clone, Debug, PartialEq)]
pub struct AnimSequence {
    pub gaussian_count: usize,
    pub fps: f64,
    pub frames: Vec<AnimFrame>,
}

impl AnimSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::LengthMismatch("sequence has no frames".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        for f in &self.frames {
            f.check_lengths(self.gaussian_count)?;
        }
        for w in self.frames.windows(2) {
            if (w[1].timestamp as f32) <= (w[0].timestamp as f32) {
                return Err(Error::InvalidInput(format!(
                    "timestamps must strictly increase ({} then {})",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let body: usize = self.frames.iter().map(AnimFrame::encoded_len).sum();
        let mut out = Vec::with_capacity(HEADER_BYTES + body);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.gaussian_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        put_f32(&mut out, self.fps);
        for f in &self.frames {
            f.encode(&mut out);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            let mut found = [0u8; 4];
            for (d, s) in found.iter_mut().zip(bytes) {
                *d = *s;
            }
            return Err(Error::MagicMismatch { found });
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let gaussian_count = r.u32()? as usize;
        let frame_count = r.u32()? as usize;
        let fps = r.f32()? as f64;
        let mut frames = Vec::with_capacity(frame_count.min(1 << 16));
        for _ in 0..frame_count {
            let (frame, used) = AnimFrame::decode(&bytes[r.pos..], gaussian_count)?;
            r.pos += used;
            frames.push(frame);
        }
        if r.pos != bytes.len() {
            return Err(Error::LengthMismatch(format!(
                "{} trailing bytes after {frame_count} frames",
                bytes.len() - r.pos
            )));
        }
        Ok(AnimSequence {
            gaussian_count,
            fps,
            frames,
        })
    }
}

pub fn write_anim(seq: &AnimSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = seq.encode()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_anim(path: impl AsRef<Path>) -> Result<AnimSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    AnimSequence::decode(&bytes)
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, c: &Vector3<f64>, s: &SymCov) {
    for v in c.iter().chain(s.0.iter()) {
        put_f32(out, *v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| {
            Error::LengthMismatch(format!(
                "unexpected end of data: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len().saturating_sub(self.pos)
            ))
        })?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn record(&mut self) -> Result<(Vector3<f64>, SymCov)> {
        let mut v = [0.0f64; 9];
        for x in v.iter_mut() {
            *x = self.f32()? as f64;
        }
        Ok((
            Vector3::new(v[0], v[1], v[2]),
            SymCov([v[3], v[4], v[5], v[6], v[7], v[8]]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_frame(n: usize, t: f64) -> AnimFrame {
        AnimFrame {
            timestamp: t,
            centers: vec![Vector3::zeros(); n],
            covariances: vec![SymCov::identity(); n],
            alive: vec![true; n],
            spawned: Vec::new(),
        }
    }

    fn random_sequence(frames: usize, n: usize, seed: u64) -> AnimSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || rng.gen_range(-5.0..5.0f64);
        let frames = (0..frames)
            .map(|k| {
                let mut f = identity_frame(n, k as f64 / 30.0);
                for c in f.centers.iter_mut() {
                    *c = Vector3::new(v(), v(), v());
                }
                for s in f.covariances.iter_mut() {
                    *s = SymCov([v(), v(), v(), v(), v(), v()]);
                }
                for (i, a) in f.alive.iter_mut().enumerate() {
                    *a = (i + k) % 3 != 0;
                }
                for j in 0..(k % 4) {
                    f.spawned.push(SpawnedGaussian {
                        center: Vector3::new(v(), v(), v()),
                        covariance: SymCov([v(), 0.0, 0.0, v(), 0.0, v()]),
                        rgb: [j as u8, 200, 7],
                        opacity: 0.5,
                    });
                }
                f
            })
            .collect();
        AnimSequence {
            gaussian_count: n,
            fps: 30.0,
            frames,
        }
    }

    #[test]
    fn identity_sequence_round_trips() {
        let seq = AnimSequence {
            gaussian_count: 3,
            fps: 24.0,
            frames: vec![identity_frame(3, 0.0), identity_frame(3, 1.0 / 24.0)],
        };
        let bytes = seq.encode().unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + 2 * (4 + 3 * 36 + 1 + 4));
        let back = AnimSequence::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.frames[1].covariances, seq.frames[1].covariances);
    }

    #[test]
    fn long_random_sequence_is_bit_exact() {
        let seq = random_sequence(120, 37, 5);
        let bytes = seq.encode().unwrap();
        let back = AnimSequence::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.frames.len(), 120);
        assert_eq!(back.frames[7].alive, seq.frames[7].alive);
        assert_eq!(back.frames[3].spawned.len(), 3);
        // Decoded values are the f32-rounded originals.
        let c = seq.frames[50].centers[11];
        let d = back.frames[50].centers[11];
        for k in 0..3 {
            assert_eq!(d[k], c[k] as f32 as f64);
        }
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = random_sequence(2, 4, 1).encode().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            AnimSequence::decode(&bytes),
            Err(Error::MagicMismatch { .. })
        ));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = random_sequence(2, 4, 1).encode().unwrap();
        bytes[4] = 9;
        assert!(matches!(
            AnimSequence::decode(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn length_errors() {
        let mut bytes = random_sequence(2, 4, 1).encode().unwrap();
        bytes.pop();
        assert!(matches!(
            AnimSequence::decode(&bytes),
            Err(Error::LengthMismatch(_))
        ));
        let mut bytes = random_sequence(2, 4, 1).encode().unwrap();
        bytes.push(0);
        assert!(matches!(
            AnimSequence::decode(&bytes),
            Err(Error::LengthMismatch(_))
        ));

        let mut seq = random_sequence(2, 4, 1);
        seq.frames[1].centers.pop();
        assert!(matches!(seq.encode(), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn timestamps_must_increase() {
        let mut seq = random_sequence(3, 2, 1);
        seq.frames[2].timestamp = seq.frames[1].timestamp;
        assert!(seq.encode().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gsanim");
        let seq = random_sequence(5, 9, 2);
        write_anim(&seq, &path).unwrap();
        let back = read_anim(&path).unwrap();
        assert_eq!(back.encode().unwrap(), seq.encode().unwrap());
    }
}
