//! Training data: ingestion of sharp images, synthesis of blurred samples
//! with true and augmented blur fields, train/validation split, and a
//! checksummed on-disk layout.
//!
//! A dataset directory looks like
//!
//! ```text
//! manifest.txt
//! sharp/<source>.tiff
//! blurry/<id>.tiff
//! fields/<id>.true.bmap
//! fields/<id>.matting.bmap
//! fields/<id>.dt.bmap
//! ```
//!
//! Images are 32-bit float RGB TIFF so nothing is quantized on the way to the
//! loss. `manifest.txt` starts with a `#` header line followed by one record
//! per line of space-separated `key=value` pairs (see [`ManifestRecord`]).

pub mod formats;

pub use formats::{
    decode_field, encode_field, load_blur_map, read_field, read_gray_map, read_image, write_field,
    write_gray_map, write_image, write_image_f32, write_image_u8, BMAP_HEADER_LEN, BMAP_MAGIC,
    BMAP_VERSION,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::augmentation::{augment_with_edges, detect_edges, AugmentConfig};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::kernels::{generate_blur_field, BlurField, FieldPatternSpec};
use crate::synthesis::{sv_convolve, NoiseConfig};

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const MANIFEST_VERSION: u32 = 1;

/// A normalized sharp image and its identifier (sanitized file stem).
#[derive(Clone, Debug, PartialEq)]
pub struct SourceImage {
    pub id: String,
    pub image: ImageGrid,
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub images: Vec<SourceImage>,
    pub warnings: Vec<String>,
}

/// Replaces every character outside `[A-Za-z0-9_.-]` with `_`.
pub fn sanitize_id(stem: &str) -> String {
    let id: String = stem
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if id.is_empty() {
        "_".into()
    } else {
        id
    }
}

/// Prepares a decoded image for the pipeline: bilinear resize to
/// `height x width` and rounding to single precision, the storage precision.
pub fn normalize_source(image: &ImageGrid, height: usize, width: usize) -> Result<ImageGrid> {
    let mut out = if (image.height(), image.width()) == (height, width) {
        image.to_rgb()
    } else {
        image.to_rgb().resize_bilinear(height, width)?
    };
    out.round_to_f32();
    Ok(out)
}

/// Loads every decodable image in `dir` (sorted by file name, hidden files
/// ignored). Files that fail to decode are skipped with a warning.
pub fn ingest(dir: impl AsRef<Path>, height: usize, width: usize) -> Result<IngestReport> {
    let dir = dir.as_ref();
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!(
            "target size {height}x{width} must be positive"
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.retain(|p| {
        p.is_file()
            && !p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'))
    });
    paths.sort();

    let mut images = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let id = sanitize_id(stem);
        let image = match read_image(&path) {
            Ok(img) => img,
            Err(e) => {
                let msg = format!("skipping {}: {e}", path.display());
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
        };
        if !seen.insert(id.clone()) {
            let msg = format!("skipping {}: id `{id}` already taken", path.display());
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        images.push(SourceImage {
            id,
            image: normalize_source(&image, height, width)?,
        });
    }
    if images.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no decodable images in {}",
            dir.display()
        )));
    }
    Ok(IngestReport { images, warnings })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::InvalidParameter(format!("unknown split `{other}`"))),
        }
    }
}

/// Number of training groups out of `n` for `ratio`: `ceil(ratio * n)`,
/// kept within `[1, n - 1]` so that neither side is empty.
pub fn train_count(n: usize, ratio: f64) -> usize {
    let raw = (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.clamp(1, n - 1)
}

/// Assigns every distinct source id to a split. The ids are sorted, shuffled
/// with a seeded permutation, and the first [`train_count`] go to training.
pub fn split_sources<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    ratio: f64,
    seed: u64,
) -> Result<BTreeMap<String, Split>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split ratio {ratio} must lie in (0, 1)"
        )));
    }
    let unique: BTreeSet<&str> = ids.into_iter().collect();
    if unique.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "a split needs at least 2 source images, got {}",
            unique.len()
        )));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(order.len(), ratio);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id.to_string(),
                if i < n_train {
                    Split::Train
                } else {
                    Split::Val
                },
            )
        })
        .collect())
}

/// Relabels `samples` so that all samples of one source share a split.
pub fn split(samples: &mut [Sample], ratio: f64, seed: u64) -> Result<()> {
    let labels = split_sources(samples.iter().map(|s| s.source_id.as_str()), ratio, seed)?;
    for s in samples.iter_mut() {
        s.split = labels[&s.source_id];
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Bank patterns paired with each source image.
    pub patterns_per_image: usize,
    pub seed: u64,
    /// Gaussian noise level added to blurry images; 0 disables noise.
    pub noise_sigma: f64,
    pub augment: AugmentConfig,
    pub split_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            patterns_per_image: crate::kernels::BANK_SIZE,
            seed: 0,
            noise_sigma: 0.0,
            augment: AugmentConfig::default(),
            split_ratio: 0.8,
        }
    }
}

/// One training example held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub source_id: String,
    pub pattern_id: usize,
    pub seed: u64,
    pub split: Split,
    pub sharp: ImageGrid,
    pub blurry: ImageGrid,
    pub field_true: BlurField,
    pub field_matting: BlurField,
    pub field_dt: BlurField,
}

pub fn sample_id(source_id: &str, pattern_id: usize) -> String {
    format!("{source_id}_p{pattern_id:02}")
}

/// Round-robin pattern assignment: image `i` gets patterns
/// `(offset + i * per_image + j) mod bank_size` for `j < per_image`, with a
/// seeded `offset`.
pub fn assign_patterns(
    n_images: usize,
    per_image: usize,
    bank_size: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..bank_size.max(1));
    (0..n_images)
        .map(|i| {
            (0..per_image)
                .map(|j| (offset + i * per_image + j) % bank_size)
                .collect()
        })
        .collect()
}

/// Seed of one record, derived from the dataset seed and the record's
/// position so that records are independent of processing order.
pub fn record_seed(seed: u64, image_index: usize, pattern_id: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((image_index as u64) << 8) | pattern_id as u64);
    rng.next_u64()
}

fn synthesize_one(
    source: &SourceImage,
    image_index: usize,
    pattern_id: usize,
    spec: &FieldPatternSpec,
    cfg: &SynthConfig,
) -> Result<(Sample, Vec<String>)> {
    let (h, w) = (source.image.height(), source.image.width());
    let id = sample_id(&source.id, pattern_id);
    let seed = record_seed(cfg.seed, image_index, pattern_id);
    let field_true = generate_blur_field(spec, h, w)?;
    let noise = if cfg.noise_sigma > 0.0 {
        NoiseConfig::gaussian(cfg.noise_sigma, seed)
    } else {
        NoiseConfig::none()
    };
    let mut blurry = sv_convolve(&source.image, &field_true, &noise)?;
    blurry.round_to_f32();

    // Estimators only see the blurry image, so edges come from it. Strong blur
    // can erase every edge; the sharp image is the fallback.
    let mut warnings = Vec::new();
    let aug = &cfg.augment;
    let mut edges = detect_edges(&blurry, aug.edges.low, aug.edges.high)?;
    if edges.count() == 0 {
        warnings.push(format!(
            "{id}: no edges in the blurry image, using edges of the sharp image"
        ));
        edges = detect_edges(&source.image, aug.edges.low, aug.edges.high)?;
    }
    let (field_matting, field_dt) = if edges.count() == 0 {
        warnings.push(format!(
            "{id}: image has no edges, augmented fields equal the true field"
        ));
        (field_true.clone(), field_true.clone())
    } else {
        let v = augment_with_edges(&field_true, &blurry, &edges, aug)?;
        if !v.matting_converged {
            warnings.push(format!(
                "{id}: matting solve stopped at relative residual {:.3e} after {} iterations",
                v.matting_residual, v.matting_iterations
            ));
        }
        (v.matting, v.dt)
    };
    let sample = Sample {
        id,
        source_id: source.id.clone(),
        pattern_id,
        seed,
        split: Split::Train,
        sharp: source.image.clone(),
        blurry,
        field_true,
        field_matting,
        field_dt,
    };
    Ok((sample, warnings))
}

/// Synthesizes all samples in memory, ordered by id, with splits assigned
/// per source image. With a single source image every sample is training data.
pub fn synthesize_samples(
    images: &[SourceImage],
    bank: &[FieldPatternSpec],
    cfg: &SynthConfig,
) -> Result<(Vec<Sample>, Vec<String>)> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no source images".into()));
    }
    if bank.is_empty() || cfg.patterns_per_image == 0 || cfg.patterns_per_image > bank.len() {
        return Err(Error::InvalidParameter(format!(
            "patterns per image must lie in 1..={}, got {}",
            bank.len(),
            cfg.patterns_per_image
        )));
    }
    let ids: BTreeSet<&str> = images.iter().map(|s| s.id.as_str()).collect();
    if ids.len() != images.len() {
        return Err(Error::InvalidParameter(
            "source image ids must be unique".into(),
        ));
    }
    let shape = (images[0].image.height(), images[0].image.width());
    if let Some(bad) = images
        .iter()
        .find(|s| (s.image.height(), s.image.width()) != shape)
    {
        return Err(Error::shape(
            format!("{}x{}", shape.0, shape.1),
            format!("{}x{} ({})", bad.image.height(), bad.image.width(), bad.id),
        ));
    }

    let assignment = assign_patterns(images.len(), cfg.patterns_per_image, bank.len(), cfg.seed);
    let jobs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .flat_map(|(i, pats)| pats.iter().map(move |&p| (i, p)))
        .collect();
    let results: Vec<(Sample, Vec<String>)> = jobs
        .par_iter()
        .map(|&(i, p)| synthesize_one(&images[i], i, p, &bank[p], cfg))
        .collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for (s, w) in results {
        samples.push(s);
        warnings.extend(w);
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    if images.len() >= 2 {
        split(&mut samples, cfg.split_ratio, cfg.seed)?;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((samples, warnings))
}

/// A file referenced by the manifest: path relative to the dataset root and
/// hex SHA-256 of its bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

/// One manifest line. Keys, in order: `id source pattern seed split`, then
/// `<role>=<path>` and `<role>_sha256=<hex>` for the roles `sharp blurry
/// field_true field_matting field_dt`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub source_id: String,
    pub pattern_id: usize,
    pub seed: u64,
    pub split: Split,
    pub sharp: FileRef,
    pub blurry: FileRef,
    pub field_true: FileRef,
    pub field_matting: FileRef,
    pub field_dt: FileRef,
}

pub const FILE_ROLES: [&str; 5] = ["sharp", "blurry", "field_true", "field_matting", "field_dt"];

impl ManifestRecord {
    pub fn files(&self) -> [(&'static str, &FileRef); 5] {
        [
            ("sharp", &self.sharp),
            ("blurry", &self.blurry),
            ("field_true", &self.field_true),
            ("field_matting", &self.field_matting),
            ("field_dt", &self.field_dt),
        ]
    }

    fn to_line(&self) -> String {
        let mut line = format!(
            "id={} source={} pattern={} seed={} split={}",
            self.id, self.source_id, self.pattern_id, self.seed, self.split
        );
        for (role, f) in self.files() {
            line.push_str(&format!(" {role}={} {role}_sha256={}", f.path, f.sha256));
        }
        line
    }

    fn parse(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Manifest {
            line: line_no,
            message,
        };
        let mut kv = BTreeMap::new();
        for token in line.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| err(format!("token `{token}` is not key=value")))?;
            if kv.insert(k, v).is_some() {
                return Err(err(format!("duplicate key `{k}`")));
            }
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| err(format!("missing key `{k}`")))
        };
        let file = |role: &str| -> Result<FileRef> {
            let path = get(role)?;
            let p = Path::new(path);
            if p.is_absolute() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(err(format!(
                    "path `{path}` must be relative and stay inside the dataset"
                )));
            }
            let sha256 = get(&format!("{role}_sha256"))?;
            if sha256.len() != 64 || !sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(err(format!("bad checksum for {role}")));
            }
            Ok(FileRef {
                path: path.to_string(),
                sha256: sha256.to_ascii_lowercase(),
            })
        };
        let pattern_id: usize = get("pattern")?
            .parse()
            .map_err(|_| err("bad pattern id".into()))?;
        if pattern_id >= crate::kernels::BANK_SIZE {
            return Err(err(format!("pattern id {pattern_id} is outside the bank")));
        }
        Ok(Self {
            id: get("id")?.to_string(),
            source_id: get("source")?.to_string(),
            pattern_id,
            seed: get("seed")?.parse().map_err(|_| err("bad seed".into()))?,
            split: get("split")?
                .parse()
                .map_err(|e: Error| err(e.to_string()))?,
            sharp: file("sharp")?,
            blurry: file("blurry")?,
            field_true: file("field_true")?,
            field_matting: file("field_matting")?,
            field_dt: file("field_dt")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# svbr-dataset version={MANIFEST_VERSION} height={} width={} records={}\n",
            self.height,
            self.width,
            self.records.len()
        );
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Manifest {
            line: 1,
            message: "empty manifest".into(),
        })?;
        let header_err = |message: String| Error::Manifest { line: 1, message };
        let fields: BTreeMap<&str, &str> = header
            .strip_prefix("# svbr-dataset")
            .ok_or_else(|| header_err("missing `# svbr-dataset` header".into()))?
            .split_whitespace()
            .filter_map(|t| t.split_once('='))
            .collect();
        let num = |k: &str| -> Result<usize> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| header_err(format!("header lacks a numeric `{k}`")))
        };
        if num("version")? != MANIFEST_VERSION as usize {
            return Err(header_err(format!(
                "unsupported manifest version {}",
                num("version")?
            )));
        }
        let (height, width, count) = (num("height")?, num("width")?, num("records")?);
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            records.push(ManifestRecord::parse(line, i + 1)?);
        }
        if records.len() != count {
            return Err(header_err(format!(
                "header announces {count} records, found {}",
                records.len()
            )));
        }
        Ok(Self {
            height,
            width,
            records,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_ref(root: &Path, rel: String) -> Result<FileRef> {
    let path = root.join(&rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(FileRef {
        path: rel,
        sha256: sha256_hex(&bytes),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `samples` under `root` and returns the manifest written to
/// `root/manifest.txt`.
pub fn write_dataset(root: impl AsRef<Path>, samples: &[Sample]) -> Result<Manifest> {
    let root = root.as_ref();
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyInput("no samples to write".into()))?;
    let (height, width) = (first.sharp.height(), first.sharp.width());
    for dir in ["sharp", "blurry", "fields"] {
        create_dir(&root.join(dir))?;
    }

    let mut sharp_refs: BTreeMap<&str, FileRef> = BTreeMap::new();
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        if (s.sharp.height(), s.sharp.width()) != (height, width) {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{} ({})", s.sharp.height(), s.sharp.width(), s.id),
            ));
        }
        let sharp = match sharp_refs.get(s.source_id.as_str()) {
            Some(r) => r.clone(),
            None => {
                let rel = format!("sharp/{}.tiff", s.source_id);
                write_image_f32(root.join(&rel), &s.sharp)?;
                let r = file_ref(root, rel)?;
                sharp_refs.insert(&s.source_id, r.clone());
                r
            }
        };
        let blurry_rel = format!("blurry/{}.tiff", s.id);
        write_image_f32(root.join(&blurry_rel), &s.blurry)?;
        let field = |kind: &str, f: &BlurField| -> Result<FileRef> {
            let rel = format!("fields/{}.{kind}.bmap", s.id);
            write_field(root.join(&rel), f)?;
            file_ref(root, rel)
        };
        let (field_true, field_matting, field_dt) = (
            field("true", &s.field_true)?,
            field("matting", &s.field_matting)?,
            field("dt", &s.field_dt)?,
        );
        records.push(ManifestRecord {
            id: s.id.clone(),
            source_id: s.source_id.clone(),
            pattern_id: s.pattern_id,
            seed: s.seed,
            split: s.split,
            sharp,
            blurry: file_ref(root, blurry_rel)?,
            field_true,
            field_matting,
            field_dt,
        });
    }
    let manifest = Manifest {
        height,
        width,
        records,
    };
    let path = root.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct SynthOutcome {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

/// Synthesizes samples for `images` and writes them under `root`.
pub fn synthesize_dataset(
    images: &[SourceImage],
    bank: &[FieldPatternSpec],
    cfg: &SynthConfig,
    root: impl AsRef<Path>,
) -> Result<SynthOutcome> {
    let (samples, warnings) = synthesize_samples(images, bank, cfg)?;
    let manifest = write_dataset(root, &samples)?;
    Ok(SynthOutcome { manifest, warnings })
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let path = root.as_ref().join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::parse(&text)
}

fn verified_bytes(root: &Path, f: &FileRef) -> Result<Vec<u8>> {
    let path = root.join(&f.path);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != f.sha256 {
        return Err(Error::ChecksumMismatch { path });
    }
    Ok(bytes)
}

/// Loads every record of the dataset at `root`, verifying checksums and
/// shapes.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let root = root.as_ref();
    let manifest = read_manifest(root)?;
    let mut sharp_cache: BTreeMap<String, ImageGrid> = BTreeMap::new();
    let mut samples = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let sharp = match sharp_cache.get(&r.sharp.path) {
            Some(img) => img.clone(),
            None => {
                let img = formats::decode_image(
                    &verified_bytes(root, &r.sharp)?,
                    root.join(&r.sharp.path),
                )?;
                sharp_cache.insert(r.sharp.path.clone(), img.clone());
                img
            }
        };
        let blurry =
            formats::decode_image(&verified_bytes(root, &r.blurry)?, root.join(&r.blurry.path))?;
        let field =
            |f: &FileRef| -> Result<BlurField> { Ok(decode_field(&verified_bytes(root, f)?)?) };
        let sample = Sample {
            id: r.id.clone(),
            source_id: r.source_id.clone(),
            pattern_id: r.pattern_id,
            seed: r.seed,
            split: r.split,
            sharp,
            blurry,
            field_true: field(&r.field_true)?,
            field_matting: field(&r.field_matting)?,
            field_dt: field(&r.field_dt)?,
        };
        let shape = (manifest.height, manifest.width);
        let shapes = [
            (sample.sharp.height(), sample.sharp.width()),
            (sample.blurry.height(), sample.blurry.width()),
            sample.field_true.shape(),
            sample.field_matting.shape(),
            sample.field_dt.shape(),
        ];
        if let Some(bad) = shapes.iter().find(|s| **s != shape) {
            return Err(Error::shape(
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{} in record {}", bad.0, bad.1, r.id),
            ));
        }
        samples.push(sample);
    }
    Ok(samples)
}
