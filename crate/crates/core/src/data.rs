//! Raster and mask containers, normalization, tiling and the synthetic
//! scene generator.
//!
//! Both file formats share one framing:
//!
//! ```text
//! magic      8 bytes   "MQRASTR1"
//! hlen       u32 LE    length of the JSON header
//! header     hlen      {"height","width","bands","band_names","dtype","layout","scale"}
//! payload    ...       f32 LE band-sequential (rasters) or u8 (masks)
//! checksum   u64 LE    FNV-1a of the payload
//! ```

use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MQRASTR1";
const MAGIC_PREFIX: &[u8; 7] = b"MQRASTR";
const FORMAT_VERSION: u32 = 1;

/// Sentinel-2 L2A band order used by every generated scene.
pub const S2_BANDS: [&str; 12] = [
    "Aerosols",
    "Blue",
    "Green",
    "Red",
    "RedEdge1",
    "RedEdge2",
    "RedEdge3",
    "NIR",
    "RedEdge4",
    "WaterVapour",
    "SWIR1",
    "SWIR2",
];

/// Reflectance scale of Sentinel-2 L2A digital numbers.
pub const L2A_SCALE: f64 = 10_000.0;

/// Multiband image stored band-sequentially as `(bands, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    band_names: Vec<String>,
    values: Array3<f32>,
    scale: f64,
}

impl Raster {
    pub fn new(band_names: Vec<String>, values: Array3<f32>, scale: f64) -> Result<Self> {
        if band_names.len() != values.dim().0 {
            return Err(Error::contract(format!(
                "{} band names for {} bands",
                band_names.len(),
                values.dim().0
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::contract("scale must be positive"));
        }
        Ok(Raster {
            band_names,
            values: values.as_standard_layout().into_owned(),
            scale,
        })
    }

    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }

    pub fn bands(&self) -> usize {
        self.values.dim().0
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    /// Divisor that maps stored values to reflectance; 1 once normalized.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn values(&self) -> &Array3<f32> {
        &self.values
    }

    pub fn band(&self, i: usize) -> ArrayView2<'_, f32> {
        self.values.index_axis(Axis(0), i)
    }

    /// Values widened to `f64`, as the model consumes them.
    pub fn to_f64(&self) -> Array3<f64> {
        self.values.mapv(f64::from)
    }
}

/// Binary map, 1 = mangrove.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(Array2<u8>);

impl Mask {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        if values.iter().any(|&v| v > 1) {
            return Err(Error::contract("mask values must be 0 or 1"));
        }
        Ok(Mask(values))
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<u8> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    height: usize,
    width: usize,
    bands: usize,
    band_names: Vec<String>,
    dtype: String,
    layout: String,
    scale: f64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Writes `bytes` next to `path` and renames into place, so a failed write
/// never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn encode(header: &Header, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::contract(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + 4 + json.len() + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out.extend_from_slice(&fnv1a(payload).to_le_bytes());
    Ok(out)
}

/// Parses the framing and returns the header and the verified payload.
fn decode<'a>(path: &Path, bytes: &'a [u8], dtype: &str) -> Result<(Header, &'a [u8])> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    let invalid = |reason: String| Error::HeaderInvalid {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) && !bytes.is_empty() {
            return Err(truncated(8));
        }
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if &bytes[..8] != MAGIC {
        if &bytes[..7] == MAGIC_PREFIX && bytes[7].is_ascii_digit() {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: u32::from(bytes[7] - b'0'),
                expected: FORMAT_VERSION,
            });
        }
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + hlen;
    if bytes.len() < header_end {
        return Err(truncated(header_end));
    }
    let header: Header =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| invalid(e.to_string()))?;
    if header.dtype != dtype {
        return Err(invalid(format!(
            "dtype `{}`, expected `{dtype}`",
            header.dtype
        )));
    }
    if header.layout != "bsq" {
        return Err(invalid(format!(
            "layout `{}`, expected `bsq`",
            header.layout
        )));
    }
    if header.bands != header.band_names.len() {
        return Err(invalid(format!(
            "bands = {} but {} band names",
            header.bands,
            header.band_names.len()
        )));
    }
    if !(header.scale > 0.0 && header.scale.is_finite()) {
        return Err(invalid(format!("scale {} is not positive", header.scale)));
    }
    let elem = if dtype == "u8" { 1 } else { 4 };
    let n = header
        .height
        .checked_mul(header.width)
        .and_then(|v| v.checked_mul(header.bands))
        .and_then(|v| v.checked_mul(elem))
        .ok_or_else(|| invalid("dimensions overflow".into()))?;
    let expected = header_end + n + 8;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(invalid(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let payload = &bytes[header_end..header_end + n];
    let stored = u64::from_le_bytes(bytes[header_end + n..].try_into().unwrap());
    let computed = fnv1a(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    Ok((header, payload))
}

pub fn raster_to_bytes(raster: &Raster) -> Result<Vec<u8>> {
    let header = Header {
        height: raster.height(),
        width: raster.width(),
        bands: raster.bands(),
        band_names: raster.band_names.clone(),
        dtype: "f32le".into(),
        layout: "bsq".into(),
        scale: raster.scale,
    };
    let payload: Vec<u8> = raster.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    encode(&header, &payload)
}

pub fn raster_from_bytes(path: &Path, bytes: &[u8]) -> Result<Raster> {
    let (h, payload) = decode(path, bytes, "f32le")?;
    let vals: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array3::from_shape_vec((h.bands, h.height, h.width), vals).map_err(|e| {
        Error::HeaderInvalid {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    Ok(Raster {
        band_names: h.band_names,
        values,
        scale: h.scale,
    })
}

pub fn write_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    write_atomic(path.as_ref(), &raster_to_bytes(raster)?)
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    raster_from_bytes(path, &bytes)
}

pub fn mask_to_bytes(mask: &Mask) -> Result<Vec<u8>> {
    let header = Header {
        height: mask.height(),
        width: mask.width(),
        bands: 1,
        band_names: vec!["mask".into()],
        dtype: "u8".into(),
        layout: "bsq".into(),
        scale: 1.0,
    };
    let payload: Vec<u8> = mask.0.iter().copied().collect();
    encode(&header, &payload)
}

pub fn mask_from_bytes(path: &Path, bytes: &[u8]) -> Result<Mask> {
    let (h, payload) = decode(path, bytes, "u8")?;
    let invalid = |reason: String| Error::HeaderInvalid {
        path: path.to_path_buf(),
        reason,
    };
    if h.bands != 1 {
        return Err(invalid(format!("mask has {} bands", h.bands)));
    }
    if payload.iter().any(|&v| v > 1) {
        return Err(invalid("mask payload is not binary".into()));
    }
    let values = Array2::from_shape_vec((h.height, h.width), payload.to_vec())
        .map_err(|e| invalid(e.to_string()))?;
    Ok(Mask(values))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write_atomic(path.as_ref(), &mask_to_bytes(mask)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    mask_from_bytes(path, &bytes)
}

/// A normalized raster and the number of values clamped into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub raster: Raster,
    pub clamped: usize,
}

/// Divides by `scale` and clamps to `[0, 1]`. The result records scale 1.
pub fn normalize(raster: &Raster, scale: f64) -> Result<Normalized> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::contract("scale must be positive"));
    }
    let mut clamped = 0usize;
    let values = raster.values.mapv(|v| {
        let x = f64::from(v) / scale;
        if !(0.0..=1.0).contains(&x) {
            clamped += 1;
        }
        // NaN clamps to 0 through max
        x.max(0.0).min(1.0) as f32
    });
    Ok(Normalized {
        raster: Raster {
            band_names: raster.band_names.clone(),
            values,
            scale: 1.0,
        },
        clamped,
    })
}

/// Index into `0..n` reflecting about the edges without repeating them
/// (`n, n+1, ..` map to `n-2, n-3, ..`).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

fn pad_to<T: Clone>(a: &Array3<T>, h: usize, w: usize) -> Array3<T> {
    let (c, h0, w0) = a.dim();
    Array3::from_shape_fn((c, h, w), |(k, y, x)| {
        a[[k, reflect(y, h0), reflect(x, w0)]].clone()
    })
}

fn check_min_size(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::contract(format!(
            "raster must be at least 2x2, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Reflect-pads the bottom and right edges to even height and width.
pub fn pad_even(raster: &Raster) -> Result<Raster> {
    let (h, w) = (raster.height(), raster.width());
    check_min_size(h, w)?;
    Ok(Raster {
        band_names: raster.band_names.clone(),
        values: pad_to(&raster.values, h + h % 2, w + w % 2),
        scale: raster.scale,
    })
}

/// One tile of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Top-left corner in the evenly padded scene.
    pub origin: (usize, usize),
    pub raster: Raster,
    pub mask: Option<Mask>,
    /// False where the pixel only exists because of padding.
    pub valid: Array2<bool>,
}

/// Tiles a scene into `size x size` patches with the given stride. The
/// scene is first padded to even dims; the last row and column of tiles are
/// reflect-padded to full size. When the padded scene is smaller than
/// `size`, tiles shrink to the scene.
pub fn extract_patches(
    raster: &Raster,
    mask: Option<&Mask>,
    size: usize,
    stride: usize,
) -> Result<Vec<Patch>> {
    if size == 0 || size % 2 != 0 {
        return Err(Error::contract(format!(
            "patch size must be even, got {size}"
        )));
    }
    if stride == 0 {
        return Err(Error::contract("stride must be positive"));
    }
    let (h, w) = (raster.height(), raster.width());
    check_min_size(h, w)?;
    if let Some(m) = mask {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::contract("mask and raster differ in shape"));
        }
    }
    let (ph, pw) = (h + h % 2, w + w % 2);
    let (th, tw) = (size.min(ph), size.min(pw));
    let starts = |total: usize, tile: usize| -> Vec<usize> {
        let mut v = vec![0];
        while v.last().unwrap() + tile < total {
            v.push(v.last().unwrap() + stride);
        }
        v
    };
    let rows = starts(ph, th);
    let cols = starts(pw, tw);
    // full extent needed by the last tiles
    let full_h = rows.last().unwrap() + th;
    let full_w = cols.last().unwrap() + tw;
    let padded = pad_to(&raster.values, full_h, full_w);
    let padded_mask = mask.map(|m| pad_to(&m.0.clone().insert_axis(Axis(0)), full_h, full_w));

    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &y0 in &rows {
        for &x0 in &cols {
            let values = padded.slice(s![.., y0..y0 + th, x0..x0 + tw]).to_owned();
            let mask = padded_mask
                .as_ref()
                .map(|m| Mask(m.slice(s![0, y0..y0 + th, x0..x0 + tw]).to_owned()));
            let valid = Array2::from_shape_fn((th, tw), |(y, x)| y0 + y < h && x0 + x < w);
            out.push(Patch {
                origin: (y0, x0),
                raster: Raster {
                    band_names: raster.band_names.clone(),
                    values,
                    scale: raster.scale,
                },
                mask,
                valid,
            });
        }
    }
    Ok(out)
}

/// Reassembles non-overlapping tiles into an `height x width` map.
pub fn stitch<T: Clone + Default>(
    tiles: &[((usize, usize), Array2<T>)],
    height: usize,
    width: usize,
) -> Result<Array2<T>> {
    let mut out = Array2::from_elem((height, width), T::default());
    let mut covered = Array2::from_elem((height, width), false);
    for ((y0, x0), tile) in tiles {
        for ((y, x), v) in tile.indexed_iter() {
            let (yy, xx) = (y0 + y, x0 + x);
            if yy < height && xx < width {
                out[[yy, xx]] = v.clone();
                covered[[yy, xx]] = true;
            }
        }
    }
    if covered.iter().any(|&c| !c) {
        return Err(Error::contract("tiles do not cover the output"));
    }
    Ok(out)
}

/// Land-cover classes of the synthetic generator.
pub const SYNTH_CLASSES: [&str; 4] = ["mangrove", "water", "upland_vegetation", "bare_soil"];

/// Fixed 12-band reflectance templates in [`S2_BANDS`] order. Mangrove has
/// high NIR, moderate green and low SWIR1 relative to upland vegetation.
pub const DEFAULT_TEMPLATES: [[f64; 12]; 4] = [
    [
        0.06, 0.05, 0.08, 0.05, 0.12, 0.25, 0.30, 0.35, 0.36, 0.12, 0.14, 0.07,
    ],
    [
        0.09, 0.08, 0.07, 0.05, 0.04, 0.03, 0.02, 0.02, 0.02, 0.01, 0.01, 0.005,
    ],
    [
        0.07, 0.07, 0.11, 0.07, 0.16, 0.35, 0.45, 0.55, 0.56, 0.22, 0.32, 0.20,
    ],
    [
        0.12, 0.14, 0.18, 0.24, 0.27, 0.29, 0.31, 0.33, 0.34, 0.20, 0.45, 0.38,
    ],
];

/// Parameters of [`synth_scene`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub templates: [[f64; 12]; 4],
    pub noise_std: f64,
    /// Gaussian bumps per class.
    pub blobs: usize,
    /// Bump radius range as a fraction of the shorter scene side.
    pub radius: (f64, f64),
}

impl SynthSpec {
    pub fn new(seed: u64, size: usize, noise_std: f64) -> Self {
        SynthSpec {
            seed,
            height: size,
            width: size,
            templates: DEFAULT_TEMPLATES,
            noise_std,
            blobs: 4,
            radius: (0.08, 0.25),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::contract("scene must be nonempty"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::contract("noise std must be non-negative"));
        }
        if self
            .templates
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::contract("templates must lie in [0, 1]"));
        }
        if self.blobs == 0 || !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return Err(Error::contract("invalid blob geometry"));
        }
        Ok(())
    }
}

/// Per-pixel class index in `0..4` (0 = mangrove) drawn from smooth random
/// fields: each class gets a sum of Gaussian bumps and the largest wins.
pub fn synth_labels(spec: &SynthSpec, rng: &mut impl Rng) -> Array2<u8> {
    let (h, w) = (spec.height, spec.width);
    let side = h.min(w) as f64;
    let mut fields = Array3::<f64>::zeros((4, h, w));
    for mut field in fields.outer_iter_mut() {
        for _ in 0..spec.blobs {
            let cy = rng.random::<f64>() * h as f64;
            let cx = rng.random::<f64>() * w as f64;
            let r = side * rng.random_range(spec.radius.0..=spec.radius.1);
            let amp = rng.random_range(0.5..1.0);
            let inv = 1.0 / (2.0 * r * r);
            for ((y, x), v) in field.indexed_iter_mut() {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                *v += amp * (-(dy * dy + dx * dx) * inv).exp();
            }
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut best = 0;
        for k in 1..4 {
            if fields[[k, y, x]] > fields[[best, y, x]] {
                best = k;
            }
        }
        best as u8
    })
}

/// Seeded synthetic 12-band scene with its mangrove mask. Values are
/// normalized reflectances (scale 1).
pub fn synth_scene(spec: &SynthSpec) -> Result<(Raster, Mask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = synth_labels(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::contract(e.to_string()))?;
    let (h, w) = (spec.height, spec.width);
    let mut values = Array3::<f32>::zeros((12, h, w));
    // pixel-major so the noise stream does not depend on band layout
    for y in 0..h {
        for x in 0..w {
            let t = &spec.templates[labels[[y, x]] as usize];
            for (b, &base) in t.iter().enumerate() {
                let v = if spec.noise_std > 0.0 {
                    base + noise.sample(&mut rng)
                } else {
                    base
                };
                values[[b, y, x]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let names = S2_BANDS.iter().map(|s| s.to_string()).collect();
    let raster = Raster::new(names, values, 1.0)?;
    let mask = Mask(labels.mapv(|c| u8::from(c == 0)));
    Ok((raster, mask))
}
