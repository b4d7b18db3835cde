//! Classical spectral index baselines: NDVI, MNDWI, MMRI, MVI and EMVI.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::data::Raster;
use crate::error::{Error, Result};

/// Channel positions of the five bands the indices need.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandSet {
    pub green: usize,
    pub red: usize,
    pub nir: usize,
    pub swir1: usize,
    pub swir2: usize,
}

fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn band_role(name: &str) -> Option<usize> {
    match normalize_name(name).as_str() {
        "green" | "b3" | "b03" => Some(0),
        "red" | "b4" | "b04" => Some(1),
        "nir" | "b8" | "b08" => Some(2),
        "swir1" | "b11" => Some(3),
        "swir2" | "b12" => Some(4),
        _ => None,
    }
}

impl BandSet {
    /// Resolves the five bands from header names. Both descriptive names
    /// (`Green`, `NIR`, `SWIR 1`) and Sentinel-2 codes (`B3`, `B8`, `B11`)
    /// are recognised, case-insensitively.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut slots: [Option<usize>; 5] = [None; 5];
        for (i, n) in names.iter().enumerate() {
            if let Some(role) = band_role(n.as_ref()) {
                if slots[role].is_some() {
                    return Err(Error::contract(format!(
                        "band `{}` appears more than once",
                        n.as_ref()
                    )));
                }
                slots[role] = Some(i);
            }
        }
        const LABELS: [&str; 5] = ["Green", "Red", "NIR", "SWIR1", "SWIR2"];
        let mut idx = [0usize; 5];
        for (k, slot) in slots.iter().enumerate() {
            idx[k] = slot.ok_or_else(|| {
                Error::contract(format!("band {} not found in band names", LABELS[k]))
            })?;
        }
        Ok(BandSet {
            green: idx[0],
            red: idx[1],
            nir: idx[2],
            swir1: idx[3],
            swir2: idx[4],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpectralIndex {
    Ndvi,
    Mndwi,
    Mmri,
    Mvi,
    Emvi,
}

impl SpectralIndex {
    pub const ALL: [SpectralIndex; 5] = [
        SpectralIndex::Ndvi,
        SpectralIndex::Mndwi,
        SpectralIndex::Mmri,
        SpectralIndex::Mvi,
        SpectralIndex::Emvi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpectralIndex::Ndvi => "ndvi",
            SpectralIndex::Mndwi => "mndwi",
            SpectralIndex::Mmri => "mmri",
            SpectralIndex::Mvi => "mvi",
            SpectralIndex::Emvi => "emvi",
        }
    }

    /// Published mangrove threshold; EMVI and MNDWI have none.
    pub fn default_threshold(self) -> Option<f64> {
        match self {
            SpectralIndex::Ndvi => Some(0.33),
            SpectralIndex::Mmri => Some(-0.27),
            SpectralIndex::Mvi => Some(2.6),
            SpectralIndex::Mndwi | SpectralIndex::Emvi => None,
        }
    }

    /// Evaluates the index on one pixel's bands. `None` marks a zero
    /// denominator.
    pub fn pixel(self, green: f64, red: f64, nir: f64, swir1: f64, swir2: f64) -> Option<f64> {
        match self {
            SpectralIndex::Ndvi => ratio(nir - red, nir + red),
            SpectralIndex::Mndwi => ratio(green - swir1, green + swir1),
            SpectralIndex::Mmri => {
                let w = ratio(green - swir1, green + swir1)?.abs();
                let v = ratio(nir - red, nir + red)?.abs();
                ratio(w - v, w + v)
            }
            SpectralIndex::Mvi => ratio(nir - green, swir1 - green),
            SpectralIndex::Emvi => ratio(green - swir2, swir1 - green),
        }
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

impl fmt::Display for SpectralIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpectralIndex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SpectralIndex::ALL
            .into_iter()
            .find(|i| i.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown index `{s}` (expected ndvi, mndwi, mmri, mvi or emvi)"))
    }
}

/// An index map plus the number of pixels whose denominator was zero (set
/// to 0 in the map).
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    pub values: Array2<f64>,
    pub flagged: usize,
}

pub fn compute_index(raster: &Raster, index: SpectralIndex) -> Result<IndexMap> {
    let bands = BandSet::from_names(raster.band_names())?;
    let band = |i: usize| -> ArrayView2<'_, f32> { raster.band(i) };
    let (g, r, n, s1, s2) = (
        band(bands.green),
        band(bands.red),
        band(bands.nir),
        band(bands.swir1),
        band(bands.swir2),
    );
    let mut flagged = 0usize;
    let mut values = Array2::zeros((raster.height(), raster.width()));
    for ((y, x), out) in values.indexed_iter_mut() {
        let px = [g[[y, x]], r[[y, x]], n[[y, x]], s1[[y, x]], s2[[y, x]]].map(f64::from);
        if px.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite band value at ({y}, {x})"
            )));
        }
        match index.pixel(px[0], px[1], px[2], px[3], px[4]) {
            Some(v) => *out = v,
            None => flagged += 1,
        }
    }
    Ok(IndexMap { values, flagged })
}

pub fn ndvi(raster: &Raster) -> Result<IndexMap> {
    compute_index(raster, SpectralIndex::Ndvi)
}

pub fn mndwi(raster: &Raster) -> Result<IndexMap> {
    compute_index(raster, SpectralIndex::Mndwi)
}

pub fn mmri(raster: &Raster) -> Result<IndexMap> {
    compute_index(raster, SpectralIndex::Mmri)
}

pub fn mvi(raster: &Raster) -> Result<IndexMap> {
    compute_index(raster, SpectralIndex::Mvi)
}

pub fn emvi(raster: &Raster) -> Result<IndexMap> {
    compute_index(raster, SpectralIndex::Emvi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Direction {
    #[default]
    Above,
    Below,
}

/// `1` where the value is strictly above (or below) the threshold.
pub fn classify_index(
    map: &Array2<f64>,
    threshold: f64,
    direction: Direction,
) -> Result<Array2<u8>> {
    if !threshold.is_finite() {
        return Err(Error::contract("threshold must be finite"));
    }
    Ok(map.mapv(|v| {
        u8::from(match direction {
            Direction::Above => v > threshold,
            Direction::Below => v < threshold,
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ndvi_examples() {
        let i = SpectralIndex::Ndvi;
        assert_eq!(i.pixel(0.0, 0.3, 0.3, 0.0, 0.0), Some(0.0));
        assert!((i.pixel(0.0, 0.2, 0.6, 0.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(i.pixel(0.0, 0.0, 0.0, 0.0, 0.0), None);
    }

    #[test]
    fn mvi_example() {
        let v = SpectralIndex::Mvi.pixel(0.1, 0.0, 0.4, 0.2, 0.0).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        let c = classify_index(&array![[v]], 2.6, Direction::Above).unwrap();
        assert_eq!(c[[0, 0]], 1);
    }

    #[test]
    fn thresholds() {
        let m = Array2::from_elem((2, 2), 0.5);
        assert!(classify_index(&m, 0.33, Direction::Above)
            .unwrap()
            .iter()
            .all(|&c| c == 1));
        let m = Array2::from_elem((2, 2), 0.33);
        assert!(classify_index(&m, 0.33, Direction::Above)
            .unwrap()
            .iter()
            .all(|&c| c == 0));
        let m = Array2::from_elem((2, 2), -0.5);
        assert!(classify_index(&m, -0.27, Direction::Above)
            .unwrap()
            .iter()
            .all(|&c| c == 0));
        assert!(classify_index(&m, -0.27, Direction::Below)
            .unwrap()
            .iter()
            .all(|&c| c == 1));
        assert!(classify_index(&m, f64::NAN, Direction::Above).is_err());
    }

    #[test]
    fn band_resolution() {
        let names = [
            "B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12",
        ];
        let b = BandSet::from_names(&names).unwrap();
        assert_eq!((b.green, b.red, b.nir, b.swir1, b.swir2), (2, 3, 7, 10, 11));
        let named = ["Green", "Red", "NIR", "SWIR 1", "SWIR-2"];
        assert!(BandSet::from_names(&named).is_ok());
        assert!(BandSet::from_names(&["Green", "Red"]).is_err());
    }

    #[test]
    fn parse_names() {
        for i in SpectralIndex::ALL {
            assert_eq!(i.as_str().parse::<SpectralIndex>().unwrap(), i);
        }
        assert!("ndwi".parse::<SpectralIndex>().is_err());
    }
}
