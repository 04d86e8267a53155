//! Feature files, caption manifests, tokenization, fixed-length padding and
//! the synthetic order-sensitive captioning task.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Vector};
use crate::wire::{put_f32s, put_u32, ByteReader};

pub const FEATURE_MAGIC: &[u8; 4] = b"HRNF";
pub const FEATURE_VERSION: u32 = 1;
/// Frames kept per clip after padding/truncation.
pub const DEFAULT_FRAMES: usize = 160;
pub const FEATURE_EXT: &str = "feat";

/// `T` frames of dimension `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<Vector>,
    dim: usize,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Vector>) -> Result<Self> {
        let dim = frames.first().map(Vec::len).ok_or_else(|| Error::Input("feature sequence has no frames".into()))?;
        if dim == 0 {
            return Err(Error::Input("feature dimension must be at least 1".into()));
        }
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::Input("frames have inconsistent dimensions".into()));
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature values must be finite".into()));
        }
        Ok(FeatureSequence { frames, dim })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[Vector] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Vector> {
        self.frames
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * self.dim * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        put_u32(&mut out, FEATURE_VERSION);
        put_u32(&mut out, self.len() as u32);
        put_u32(&mut out, self.dim as u32);
        for f in &self.frames {
            let vals: Vec<f32> = f.iter().map(|&v| v as f32).collect();
            put_f32s(&mut out, &vals);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(FEATURE_MAGIC)?;
        let version = r.u32("version")?;
        if version != FEATURE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let t = r.u32("frame count")? as usize;
        let d = r.u32("feature dimension")? as usize;
        if t == 0 {
            return Err(Error::Input("feature file declares T = 0".into()));
        }
        if d == 0 {
            return Err(Error::Input("feature file declares D = 0".into()));
        }
        let count = t.checked_mul(d).ok_or_else(|| Error::Malformed("T·D overflows".into()))?;
        let values = r.f32s(count, "feature payload")?;
        r.finish()?;
        FeatureSequence::new(values.chunks_exact(d).map(|c| c.iter().map(|&v| v as f64).collect()).collect())
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&buf)
}

pub fn save_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Keeps the first `len` frames, or appends zero frames up to `len`.
pub fn pad_truncate(xs: &FeatureSequence, len: usize) -> FeatureSequence {
    let mut frames: Vec<Vector> = xs.frames.iter().take(len).cloned().collect();
    frames.resize(len, vec![0.0; xs.dim]);
    FeatureSequence { frames, dim: xs.dim }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("valid punctuation class"))
}

/// Lowercases, drops Unicode punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    punctuation()
        .replace_all(&lowered, "")
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub caption: String,
}

/// `id<TAB>caption` lines; several lines may share an id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, caption) = line
                .split_once('\t')
                .ok_or_else(|| Error::Malformed(format!("manifest line {}: expected id<TAB>caption", lineno + 1)))?;
            if id.is_empty() {
                return Err(Error::Malformed(format!("manifest line {}: empty clip id", lineno + 1)));
            }
            records.push(ManifestRecord {
                id: id.to_string(),
                caption: caption.to_string(),
            });
        }
        Ok(Manifest { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{}\t{}\n", r.id, r.caption)).collect()
    }

    /// Captions grouped by clip id, ids in first-appearance order.
    pub fn grouped(&self) -> Vec<(String, Vec<String>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for r in &self.records {
            let entry = groups.entry(&r.id).or_default();
            if entry.is_empty() {
                order.push(r.id.clone());
            }
            entry.push(r.caption.clone());
        }
        order
            .into_iter()
            .map(|id| {
                let caps = groups.remove(id.as_str()).unwrap_or_default();
                (id, caps)
            })
            .collect()
    }
}

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{FEATURE_EXT}"))
}

/// A clip with every reference caption attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub features: FeatureSequence,
    pub captions: Vec<Vec<String>>,
}

/// Loads every clip named in `manifest` from `<dir>/<id>.feat`.
pub fn load_clips(dir: &Path, manifest: &Manifest) -> Result<Vec<Clip>> {
    manifest
        .grouped()
        .into_iter()
        .map(|(id, captions)| {
            let path = feature_path(dir, &id);
            if !path.exists() {
                return Err(Error::Input(format!("no feature file for clip {id} at {}", path.display())));
            }
            Ok(Clip {
                features: load_features(&path)?,
                captions: captions.iter().map(|c| tokenize(c)).collect(),
                id,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_clips: usize,
    pub segments: usize,
    pub segment_len: usize,
    pub dim: usize,
    pub prototypes: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_clips: 512,
            segments: 4,
            segment_len: 8,
            dim: 16,
            prototypes: 8,
            noise: 0.1,
        }
    }
}

/// Prototype name used as the caption word for prototype `k`.
pub fn prototype_name(k: usize) -> String {
    const NAMES: [&str; 12] = [
        "red", "green", "blue", "yellow", "purple", "orange", "black", "white", "pink", "brown", "gray", "cyan",
    ];
    NAMES.get(k).map_or_else(|| format!("color{k}"), |n| n.to_string())
}

/// A synthetic clip together with the prototype index of every segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub features: FeatureSequence,
    pub caption: Vec<String>,
    pub segments: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub prototypes: Vec<Vector>,
    pub clips: Vec<SynthClip>,
    pub config: SynthConfig,
}

impl SynthDataset {
    /// Rebuilds a clip from its segment sequence, reusing the given per-frame
    /// noise. Used to construct segment permutations of an existing clip.
    pub fn render(&self, segments: &[usize], noise: &[Vector]) -> Result<SynthClip> {
        let seg_len = self.config.segment_len;
        if noise.len() != segments.len() * seg_len {
            return Err(Error::Input("noise must cover every frame".into()));
        }
        let frames = segments
            .iter()
            .enumerate()
            .flat_map(|(k, &p)| {
                (0..seg_len).map(move |j| (k * seg_len + j, p))
            })
            .map(|(t, p)| self.prototypes[p].iter().zip(&noise[t]).map(|(a, b)| a + b).collect())
            .collect();
        Ok(SynthClip {
            features: FeatureSequence::new(frames)?,
            caption: segments.iter().map(|&p| prototype_name(p)).collect(),
            segments: segments.to_vec(),
        })
    }
}

/// Clips made of `segments` consecutive segments, each a noisy copy of a
/// randomly chosen prototype; the caption names the prototypes in order.
pub fn synth_generate(rng: &mut Rng, cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.prototypes < 2 {
        return Err(Error::Config("synthetic task needs at least 2 prototypes".into()));
    }
    if cfg.segments == 0 || cfg.segment_len == 0 || cfg.dim == 0 {
        return Err(Error::Config("segments, segment_len and dim must be at least 1".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be non-negative, got {}", cfg.noise)));
    }
    let prototypes: Vec<Vector> = (0..cfg.prototypes)
        .map(|_| (0..cfg.dim).map(|_| rng.normal(0.0, 1.0)).collect())
        .collect();
    let mut dataset = SynthDataset {
        prototypes,
        clips: Vec::with_capacity(cfg.num_clips),
        config: cfg.clone(),
    };
    for _ in 0..cfg.num_clips {
        let segments: Vec<usize> = (0..cfg.segments).map(|_| rng.below(cfg.prototypes)).collect();
        let noise: Vec<Vector> = (0..cfg.segments * cfg.segment_len)
            .map(|_| (0..cfg.dim).map(|_| if cfg.noise > 0.0 { rng.normal(0.0, cfg.noise) } else { 0.0 }).collect())
            .collect();
        let clip = dataset.render(&segments, &noise)?;
        dataset.clips.push(clip);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("A man is Swimming."), vec!["a", "man", "is", "swimming"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("don't stop"), vec!["dont", "stop"]);
        assert_eq!(tokenize("  «Bonjour», dit-il!  "), vec!["bonjour", "ditil"]);
    }

    #[test]
    fn feature_round_trip_and_errors() {
        let mut rng = Rng::new(1);
        let frames: Vec<Vector> = (0..7).map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0) as f32 as f64).collect()).collect();
        let seq = FeatureSequence::new(frames).unwrap();
        let bytes = seq.to_bytes();
        assert_eq!(bytes.len(), 16 + 7 * 5 * 4);
        assert_eq!(FeatureSequence::from_bytes(&bytes).unwrap(), seq);

        assert!(matches!(FeatureSequence::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureSequence::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut zero = bytes[..16].to_vec();
        zero[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(FeatureSequence::from_bytes(&zero), Err(Error::Input(_))));
        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(FeatureSequence::from_bytes(&v2), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn feature_file_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FeatureSequence::new(vec![vec![1.5, -2.0]; 3]).unwrap();
        let path = feature_path(dir.path(), "clip");
        save_features(&path, &seq).unwrap();
        assert_eq!(load_features(&path).unwrap(), seq);
        assert!(matches!(load_features(dir.path().join("missing.feat")), Err(Error::Io { .. })));
    }

    #[test]
    fn pad_truncate_examples() {
        let long = FeatureSequence::new((0..200).map(|t| vec![t as f64]).collect()).unwrap();
        let out = pad_truncate(&long, DEFAULT_FRAMES);
        assert_eq!(out.len(), 160);
        assert_eq!(out.frames()[159], vec![159.0]);

        let short = FeatureSequence::new((0..100).map(|t| vec![t as f64 + 1.0]).collect()).unwrap();
        let out = pad_truncate(&short, DEFAULT_FRAMES);
        assert_eq!(out.len(), 160);
        assert_eq!(out.frames()[99], vec![100.0]);
        assert!(out.frames()[100..].iter().all(|f| f == &vec![0.0]));

        let exact = FeatureSequence::new(vec![vec![2.0]; 160]).unwrap();
        assert_eq!(pad_truncate(&exact, DEFAULT_FRAMES), exact);
    }

    #[test]
    fn manifest_parsing() {
        let m = Manifest::parse("c1\tA dog runs.\nc2\tA cat\n\nc1\tThe dog is running\n").unwrap();
        assert_eq!(m.records.len(), 3);
        let g = m.grouped();
        assert_eq!(g[0].0, "c1");
        assert_eq!(g[0].1.len(), 2);
        assert_eq!(g[1].0, "c2");
        assert!(Manifest::parse("no tab here").is_err());
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn load_clips_requires_feature_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::parse("a\tone two\n").unwrap();
        assert!(matches!(load_clips(dir.path(), &m), Err(Error::Input(_))));
        save_features(feature_path(dir.path(), "a"), &FeatureSequence::new(vec![vec![0.5]]).unwrap()).unwrap();
        let clips = load_clips(dir.path(), &m).unwrap();
        assert_eq!(clips[0].captions, vec![vec!["one".to_string(), "two".to_string()]]);
    }

    #[test]
    fn synth_is_deterministic_and_order_coded() {
        let cfg = SynthConfig {
            num_clips: 20,
            segments: 3,
            ..SynthConfig::default()
        };
        let a = synth_generate(&mut Rng::new(3), &cfg).unwrap();
        let b = synth_generate(&mut Rng::new(3), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.clips.iter().all(|c| c.caption.len() == 3 && c.features.len() == 24 && c.features.dim() == 16));

        let clip = &a.clips[0];
        let noise: Vec<Vector> = clip
            .features
            .frames()
            .iter()
            .enumerate()
            .map(|(t, f)| f.iter().zip(&a.prototypes[clip.segments[t / 8]]).map(|(x, p)| x - p).collect())
            .collect();
        let mut swapped = clip.segments.clone();
        swapped.swap(0, 1);
        let mut swapped_noise = noise.clone();
        for j in 0..8 {
            swapped_noise.swap(j, 8 + j);
        }
        let other = a.render(&swapped, &swapped_noise).unwrap();
        assert_eq!(other.caption[0], clip.caption[1]);
        assert_eq!(other.caption[1], clip.caption[0]);
        assert_eq!(other.caption[2], clip.caption[2]);

        assert!(synth_generate(&mut Rng::new(1), &SynthConfig { prototypes: 1, ..cfg.clone() }).is_err());
        assert!(synth_generate(&mut Rng::new(1), &SynthConfig { segments: 0, ..cfg }).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_idempotent(text in "\\PC{0,40}") {
            let once = tokenize(&text);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn pad_truncate_length_and_idempotence(t in 1usize..60, len in 1usize..60) {
            let seq = FeatureSequence::new((0..t).map(|i| vec![i as f64, 1.0]).collect()).unwrap();
            let once = pad_truncate(&seq, len);
            prop_assert_eq!(once.len(), len);
            prop_assert_eq!(pad_truncate(&once, len), once);
        }
    }
}
