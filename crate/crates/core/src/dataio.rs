//! Dataset ingestion, the preprocessed image store, seeded batching, and a
//! procedural face-like image generator for smoke tests and CI.
//!
//! Images are kept as CHW `f32` records in `[-1, 1]`. The method assumes the
//! dataset is aligned (facial features at roughly fixed positions); nothing
//! here aligns faces.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::derive_seed;
use crate::tensor::Tensor;

const STORE_MAGIC: &[u8; 8] = b"PZGSTOR\0";
const STORE_VERSION: u32 = 1;
/// Only little-endian f32 records are written.
const DTYPE_F32_LE: u32 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub image_count: usize,
    pub resolution: usize,
    pub alignment_note: String,
    pub normalization: String,
    pub split_seed: u64,
    /// Files in store order.
    pub files: Vec<String>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Fixed-order random-access image container.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStore {
    resolution: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageStore {
    pub fn new(resolution: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let stride = resolution * resolution * channels;
        if stride == 0 || !data.len().is_multiple_of(stride) {
            return Err(Error::Shape(format!(
                "{} values do not divide into {channels}x{resolution}x{resolution} records",
                data.len()
            )));
        }
        Ok(Self {
            resolution,
            channels,
            data,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn stride(&self) -> usize {
        self.resolution * self.resolution * self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    /// Gather records into an `[N, C, R, R]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.stride());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(
            vec![indices.len(), self.channels, self.resolution, self.resolution],
            data,
        )
    }

    pub fn all(&self) -> Tensor {
        Tensor::new(
            vec![self.len(), self.channels, self.resolution, self.resolution],
            self.data.clone(),
        )
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(STORE_MAGIC)?;
        for v in [
            STORE_VERSION,
            self.len() as u32,
            self.resolution as u32,
            self.channels as u32,
            DTYPE_F32_LE,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("not an image store".into()));
        }
        let mut word = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let (version, count, res, ch, dtype) = (word()?, word()?, word()?, word()?, word()?);
        if version != STORE_VERSION || dtype != DTYPE_F32_LE {
            return Err(Error::Format(format!(
                "unsupported store version {version} / dtype {dtype}"
            )));
        }
        let n = count as usize * (res * res * ch) as usize;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after records", rest.len())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(res as usize, ch as usize, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(fs::File::open(path)?))
    }

    /// Write every record as `NNNNNN.png` into `dir`.
    pub fn export_png(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for i in 0..self.len() {
            to_rgb_image(self.image(i), self.resolution).save(dir.join(format!("{i:06}.png")))?;
        }
        Ok(())
    }
}

/// `[-1, 1]` CHW values to 8-bit RGB.
pub fn to_rgb_image(chw: &[f32], resolution: usize) -> RgbImage {
    let plane = resolution * resolution;
    RgbImage::from_fn(resolution as u32, resolution as u32, |x, y| {
        let i = y as usize * resolution + x as usize;
        let px = |c: usize| ((chw[c * plane + i].clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

/// Centre-crop to a square and resize. Images already at the target size are
/// passed through untouched.
pub fn preprocess(img: &image::DynamicImage, target: usize) -> RgbImage {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let cropped = if w == h {
        rgb
    } else {
        image::imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side).to_image()
    };
    if side as usize == target {
        cropped
    } else {
        image::imageops::resize(&cropped, target as u32, target as u32, FilterType::Triangle)
    }
}

fn to_chw(img: &RgbImage) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0.0f32; 3 * plane];
    for (x, y, p) in img.enumerate_pixels() {
        let i = (y * w + x) as usize;
        for c in 0..3 {
            out[c * plane + i] = p.0[c] as f32 / 127.5 - 1.0;
        }
    }
    out
}

const IMAGE_EXTS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "gif", "ppm"];

/// Read every image file in `folder` (sorted by file name), centre-crop,
/// resize to `target_resolution` and scale to `[-1, 1]`.
pub fn ingest(folder: &Path, target_resolution: usize) -> Result<(DatasetManifest, ImageStore)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(folder)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let mut data = Vec::new();
    let mut files = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        let name = p.file_name().unwrap_or_default().to_string_lossy().to_string();
        match image::open(&p) {
            Ok(img) => {
                data.extend(to_chw(&preprocess(&img, target_resolution)));
                files.push(name);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped.push((name, e.to_string()));
            }
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no decodable images in {}",
            folder.display()
        )));
    }
    let store = ImageStore::new(target_resolution, 3, data)?;
    let manifest = DatasetManifest {
        root: folder.to_path_buf(),
        image_count: store.len(),
        resolution: target_resolution,
        alignment_note: "assumed aligned: facial parts at fixed grid positions".into(),
        normalization: "[-1,1]".into(),
        split_seed: 0,
        files,
        skipped,
    };
    Ok((manifest, store))
}

/// Seeded shuffled epochs of index batches. The last batch of an epoch may
/// be short so every epoch covers each image exactly once.
#[derive(Clone, Debug)]
pub struct BatchIter {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

pub fn batch_iter(len: usize, batch_size: usize, seed: u64) -> Result<BatchIter> {
    if len == 0 {
        return Err(Error::EmptyDataset("cannot batch an empty store".into()));
    }
    if batch_size == 0 || batch_size > len {
        return Err(Error::Config(format!("batch size {batch_size} must be in 1..={len}")));
    }
    let mut it = BatchIter {
        n: len,
        batch_size,
        seed,
        epoch: 0,
        order: Vec::new(),
        pos: 0,
    };
    it.reshuffle();
    Ok(it)
}

impl BatchIter {
    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.epoch));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

// ---------------------------------------------------------------------------
// Synthetic aligned faces

/// Procedural face-like image with independently drawn region attributes:
/// background, hair colour and hairline, skin tone, eye colour and spacing,
/// mouth colour and width, jaw width. Features sit on the 8×8 grid used by
/// the canonical layouts (cell = resolution / 8).
pub fn synthetic_face(resolution: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = resolution as f32 / 8.0;
    fn col(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
        [
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
        ]
    }
    let background = col(&mut rng, 0.1, 0.9);
    let hair = {
        let base: f32 = rng.random_range(0.05..0.85);
        [base * 1.1, base * 0.8, base * 0.55]
    };
    let skin = {
        let t: f32 = rng.random_range(0.35..0.95);
        [t, t * 0.78, t * 0.62]
    };
    let eye = col(&mut rng, 0.0, 0.5);
    let mouth = {
        let r: f32 = rng.random_range(0.45..0.9);
        [r, r * 0.3, r * 0.35]
    };
    let hairline = rng.random_range(2.2f32..2.9) * s;
    let eye_gap = rng.random_range(0.55f32..0.95) * s;
    let eye_r = rng.random_range(0.3f32..0.5) * s;
    let mouth_w = rng.random_range(0.45f32..0.95) * s;
    let jaw = rng.random_range(1.7f32..2.1) * s;
    let hair_len = rng.random_range(4.0f32..7.5) * s;

    let cx = 4.0 * s;
    let cy = 4.4 * s;
    RgbImage::from_fn(resolution as u32, resolution as u32, |x, y| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let mut c = background;
        // hair mass behind the head
        let hdx = (px - cx) / (2.9 * s);
        let hdy = (py - 3.2 * s) / (2.6 * s);
        if hdx * hdx + hdy * hdy < 1.0 || (py < hair_len && (px - cx).abs() < 2.7 * s && py > 0.8 * s) {
            c = hair;
        }
        // face ellipse
        let fdx = (px - cx) / jaw;
        let fdy = (py - cy) / (2.5 * s);
        if fdx * fdx + fdy * fdy < 1.0 {
            c = if py < hairline { hair } else { skin };
        }
        // eyes on grid row 3
        let ey = 3.5 * s;
        for side in [-1.0f32, 1.0] {
            let ex = cx + side * eye_gap;
            let d = ((px - ex).powi(2) + (py - ey).powi(2)).sqrt();
            if d < eye_r {
                c = eye;
            }
        }
        // nose on row 4, mouth on row 5
        if (px - cx).abs() < 0.18 * s && py > 4.1 * s && py < 4.9 * s {
            c = [skin[0] * 0.75, skin[1] * 0.75, skin[2] * 0.75];
        }
        if (px - cx).abs() < mouth_w && (py - 5.45 * s).abs() < 0.22 * s {
            c = mouth;
        }
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// `count` synthetic faces as an in-memory store.
pub fn synthetic_store(count: usize, resolution: usize, seed: u64) -> ImageStore {
    let mut data = Vec::with_capacity(count * 3 * resolution * resolution);
    for i in 0..count {
        data.extend(to_chw(&synthetic_face(resolution, derive_seed(seed, i as u64))));
    }
    ImageStore::new(resolution, 3, data).expect("consistent record sizes")
}

/// Write `count` synthetic faces as PNG files into `dir`.
pub fn write_synthetic_faces(dir: &Path, count: usize, resolution: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    for i in 0..count {
        synthetic_face(resolution, derive_seed(seed, i as u64)).save(dir.join(format!("face_{i:06}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn hash(store: &ImageStore) -> Vec<u8> {
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        Sha256::digest(&bytes).to_vec()
    }

    #[test]
    fn ingest_resizes_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_faces(dir.path(), 16, 64, 1).unwrap();
        let (manifest, store) = ingest(dir.path(), 32).unwrap();
        assert_eq!(manifest.image_count, 16);
        assert_eq!(store.resolution(), 32);
        assert!(store.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        let (_, again) = ingest(dir.path(), 32).unwrap();
        assert_eq!(hash(&store), hash(&again));
    }

    #[test]
    fn non_square_is_center_cropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::new(40, 20);
        for (x, _, p) in img.enumerate_pixels_mut() {
            *p = if (10..30).contains(&x) {
                Rgb([255, 0, 0])
            } else {
                Rgb([0, 0, 255])
            };
        }
        img.save(dir.path().join("wide.png")).unwrap();
        let (_, store) = ingest(dir.path(), 20).unwrap();
        assert_eq!(store.resolution(), 20);
        // Crop keeps the red middle band only.
        let red = &store.image(0)[..400];
        assert!(red.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unreadable_files_are_skipped_and_empty_is_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        assert!(matches!(ingest(dir.path(), 8), Err(Error::EmptyDataset(_))));
        synthetic_face(8, 3).save(dir.path().join("ok.png")).unwrap();
        let (m, s) = ingest(dir.path(), 8).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(m.skipped.len(), 1);
    }

    #[test]
    fn ingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_faces(dir.path(), 6, 48, 2).unwrap();
        let (_, store) = ingest(dir.path(), 16).unwrap();
        let out = tempfile::tempdir().unwrap();
        store.export_png(out.path()).unwrap();
        let (_, again) = ingest(out.path(), 16).unwrap();
        assert_eq!(again, store);
    }

    #[test]
    fn store_round_trip() {
        let store = synthetic_store(3, 8, 0);
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        assert_eq!(ImageStore::read_from(bytes.as_slice()).unwrap(), store);
        bytes.push(0);
        assert!(ImageStore::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn batches_cover_epochs_and_repeat_with_seed() {
        let a: Vec<_> = batch_iter(10, 4, 9).unwrap().take(9).collect();
        let b: Vec<_> = batch_iter(10, 4, 9).unwrap().take(9).collect();
        assert_eq!(a, b);
        for epoch in a.chunks(3) {
            let mut seen: Vec<usize> = epoch.iter().flatten().copied().collect();
            seen.sort();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
        assert!(batch_iter(3, 4, 0).is_err());
    }

    #[test]
    fn batch_values_in_range() {
        let store = synthetic_store(8, 16, 5);
        for idx in batch_iter(store.len(), 3, 1).unwrap().take(6) {
            assert!(store.batch(&idx).data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
