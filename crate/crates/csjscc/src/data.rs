//! Dataset ingestion: the CIFAR-10 binary format, binary PPM images,
//! block-multiple padding and seeded synthetic images.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use csjscc_core::{rng, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
/// One label byte followed by three 32x32 colour planes.
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Tensor<f32>,
    /// Parsed and kept, never used by the reconstruction task.
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("trailing partial record of {len} bytes at byte offset {offset} (records are {CIFAR_RECORD} bytes)")]
pub struct CifarError {
    pub offset: usize,
    pub len: usize,
}

/// Parse CIFAR-10 binary records in file order.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<LabeledImage>, CifarError> {
    let rem = bytes.len() % CIFAR_RECORD;
    if rem != 0 {
        return Err(CifarError {
            offset: bytes.len() - rem,
            len: rem,
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    Ok(bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|rec| {
            let pixels = &rec[1..];
            // Planar RGB to interleaved.
            let image = Tensor::from_fn(&[CIFAR_SIDE, CIFAR_SIDE, 3], |i| {
                let (p, c) = (i / 3, i % 3);
                pixels[c * plane + p] as f32 / 255.0
            });
            LabeledImage {
                image,
                label: rec[0],
            }
        })
        .collect())
}

pub fn load_cifar10(path: &Path) -> Result<Vec<LabeledImage>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    parse_cifar10(&bytes).map_err(|source| Error::Cifar {
        path: path.to_owned(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PpmError {
    #[error("not a binary PPM (magic {0:?}, expected \"P6\")")]
    BadMagic(String),
    #[error("unsupported maxval {0} (only 255)")]
    UnsupportedMaxval(u64),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("pixel data has {found} bytes, {expected} expected")]
    ShortData { expected: usize, found: usize },
}

/// Decode a binary (`P6`) PPM with maxval 255.
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor<f32>, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PpmError::BadMagic(magic));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if i == 0 && pos == 2 {
            return Err(PpmError::BadMagic(
                String::from_utf8_lossy(&bytes[..3.min(bytes.len())]).into_owned(),
            ));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PpmError::Header(format!(
                "expected a number at byte {start}"
            )));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| PpmError::Header(format!("number too large at byte {start}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PpmError::Header(format!("empty image {width}x{height}")));
    }
    // Exactly one whitespace byte ends the header.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::Header("missing whitespace after maxval".into())),
    }
    let (w, h) = (width as usize, height as usize);
    let expected = w * h * 3;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(PpmError::ShortData {
            expected,
            found: data.len(),
        });
    }
    Ok(Tensor::from_fn(&[h, w, 3], |i| data[i] as f32 / 255.0))
}

/// Encode an `H x W x 3` image in `[0, 1]` as a `P6` file.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w, c) = image.hwc()?;
    if c != 3 {
        return Err(csjscc_core::Error::shape(
            "encode_ppm",
            "channels",
            format!("PPM needs 3 channels, image has {c}"),
        )
        .into());
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn load_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    parse_ppm(&bytes).map_err(|source| Error::Ppm {
        path: path.to_owned(),
        source,
    })
}

pub fn save_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(Error::io(path))
}

/// Mirror index for reflect padding: `n, n+1, ...` map to `n-2, n-3, ...`,
/// bouncing between the edges; a single row or column repeats.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Reflect-pad the bottom and right edges up to the next multiple of
/// `block`. Returns the padded image and the original `(H, W)`.
pub fn pad_to_block_multiple(
    image: &Tensor<f32>,
    block: usize,
) -> Result<(Tensor<f32>, (usize, usize))> {
    let (h, w, c) = image.hwc()?;
    let block = block.max(1);
    let (ph, pw) = (h.div_ceil(block) * block, w.div_ceil(block) * block);
    if (ph, pw) == (h, w) {
        return Ok((image.clone(), (h, w)));
    }
    let src = image.data();
    let padded = Tensor::from_fn(&[ph, pw, c], |i| {
        let (y, x, ch) = (i / (pw * c), (i / c) % pw, i % c);
        src[(reflect(y, h) * w + reflect(x, w)) * c + ch]
    });
    Ok((padded, (h, w)))
}

/// Top-left `height x width` window.
pub fn crop(image: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    crop_at(image, 0, 0, height, width)
}

fn crop_at(
    image: &Tensor<f32>,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<Tensor<f32>> {
    let (h, w, c) = image.hwc()?;
    if top + height > h || left + width > w {
        return Err(csjscc_core::Error::shape(
            "crop",
            "height/width",
            format!("{height}x{width} at ({top}, {left}) exceeds {h}x{w}"),
        )
        .into());
    }
    let src = image.data();
    Ok(Tensor::from_fn(&[height, width, c], |i| {
        let (y, x, ch) = (i / (width * c), (i / c) % width, i % c);
        src[((top + y) * w + left + x) * c + ch]
    }))
}

/// A uniformly placed `size x size` patch; images no larger than `size` in
/// a dimension are kept whole in that dimension.
pub fn random_crop<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    size: usize,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let (h, w, _) = image.hwc()?;
    let (ch, cw) = (size.min(h), size.min(w));
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    crop_at(image, top, left, ch, cw)
}

/// Seeded smooth test images: each is a sum of at most eight 2-D sinusoids
/// with at most three cycles across the image, rescaled to span `[0, 1]`.
pub fn synth_dataset(
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Vec<Tensor<f32>> {
    (0..count as u64)
        .map(|i| synth_image(height, width, channels, rng::derive_seed(seed, &[i])))
        .collect()
}

fn synth_image(height: usize, width: usize, channels: usize, seed: u64) -> Tensor<f32> {
    struct Wave {
        fy: f64,
        fx: f64,
        phase: f64,
        amp: Vec<f64>,
    }
    let mut r = rng::stream(seed);
    let waves: Vec<Wave> = (0..r.random_range(1..=8))
        .map(|_| Wave {
            fy: r.random_range(0.0..3.0),
            fx: r.random_range(0.0..3.0),
            phase: r.random_range(0.0..2.0 * PI),
            amp: (0..channels).map(|_| r.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let raw: Vec<f64> = (0..height * width * channels)
        .map(|i| {
            let (y, x, c) = (i / (width * channels), (i / channels) % width, i % channels);
            let (v, u) = (y as f64 / height as f64, x as f64 / width as f64);
            waves
                .iter()
                .map(|w| w.amp[c] * (2.0 * PI * (w.fy * v + w.fx * u) + w.phase).sin())
                .sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = raw
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span) as f32
            } else {
                0.5
            }
        })
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Tensor::new(&[height, width, channels], data).expect("sized above")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// A CIFAR-10 `.bin` file, or a directory whose `.bin` files are read in name order.
    Cifar10Binary,
    /// A directory of `.ppm` files read in name order.
    PpmDirectory,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Held-out evaluation images; the validation split is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub shuffle_seed: u64,
    /// Training patch size; whole images when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<usize>,
    /// Synthetic generator settings.
    pub synthetic_count: usize,
    pub synthetic_test_count: usize,
    pub synthetic_height: usize,
    pub synthetic_width: usize,
    pub synthetic_channels: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Synthetic,
            path: None,
            test_path: None,
            train_fraction: 0.9,
            validation_fraction: 0.1,
            shuffle_seed: 0,
            crop: None,
            synthetic_count: 256,
            synthetic_test_count: 32,
            synthetic_height: 32,
            synthetic_width: 32,
            synthetic_channels: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Tensor<f32>>,
    pub validation: Vec<Tensor<f32>>,
    pub test: Vec<Tensor<f32>>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (t, v) = (self.train_fraction, self.validation_fraction);
        if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&v) || ((t + v) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "data split fractions must be in [0, 1] and sum to 1, got {t} + {v}"
            )));
        }
        if self.crop == Some(0) {
            return Err(Error::Config("data.crop must be positive".into()));
        }
        match self.kind {
            DatasetKind::Synthetic => {
                if self.synthetic_height == 0
                    || self.synthetic_width == 0
                    || self.synthetic_channels == 0
                {
                    return Err(Error::Config(
                        "synthetic image extents must be positive".into(),
                    ));
                }
            }
            _ => {
                let path = self.path.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "data.path is required for {:?} datasets",
                        self.kind
                    ))
                })?;
                require_exists("dataset path", path)?;
            }
        }
        if let Some(p) = &self.test_path {
            require_exists("test dataset path", p)?;
        }
        Ok(())
    }

    /// Load, shuffle with `shuffle_seed` and split.
    pub fn open(&self) -> Result<Dataset> {
        self.validate()?;
        let (mut all, test) = match self.kind {
            DatasetKind::Synthetic => {
                let (h, w, c) = (
                    self.synthetic_height,
                    self.synthetic_width,
                    self.synthetic_channels,
                );
                let seed = self.shuffle_seed;
                (
                    synth_dataset(self.synthetic_count, h, w, c, rng::derive_seed(seed, &[1])),
                    Some(synth_dataset(
                        self.synthetic_test_count,
                        h,
                        w,
                        c,
                        rng::derive_seed(seed, &[2]),
                    )),
                )
            }
            kind => (
                load_images(kind, self.path.as_deref().expect("validated"))?,
                None,
            ),
        };
        all.shuffle(&mut rng::stream(self.shuffle_seed));
        let n_train = (all.len() as f64 * self.train_fraction).round() as usize;
        let validation = all.split_off(n_train.min(all.len()));
        let test = match (&self.test_path, test) {
            (Some(p), _) => load_images(self.kind, p)?,
            (None, Some(t)) => t,
            (None, None) => validation.clone(),
        };
        Ok(Dataset {
            train: all,
            validation,
            test,
        })
    }
}

fn require_exists(what: &'static str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath {
            what,
            path: path.to_owned(),
        })
    }
}

fn sorted_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(dir)))
        .collect::<Result<_>>()?;
    files.retain(|p| {
        p.is_file()
            && p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case(extension))
    });
    files.sort();
    Ok(files)
}

/// Images of `kind` from a file or a directory.
pub fn load_images(kind: DatasetKind, path: &Path) -> Result<Vec<Tensor<f32>>> {
    require_exists("dataset path", path)?;
    match kind {
        DatasetKind::Cifar10Binary => {
            let files = if path.is_dir() {
                sorted_files(path, "bin")?
            } else {
                vec![path.to_owned()]
            };
            let mut out = Vec::new();
            for f in files {
                out.extend(load_cifar10(&f)?.into_iter().map(|r| r.image));
            }
            Ok(out)
        }
        DatasetKind::PpmDirectory => {
            let files = if path.is_dir() {
                sorted_files(path, "ppm")?
            } else {
                vec![path.to_owned()]
            };
            files.iter().map(|f| load_ppm(f)).collect()
        }
        DatasetKind::Synthetic => Err(Error::Config("synthetic datasets have no files".into())),
    }
}
