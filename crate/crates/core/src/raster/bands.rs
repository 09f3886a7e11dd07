use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral role of a satellite band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandRole {
    Blue,
    Green,
    Red,
    Nir,
    Vre1,
    Vre2,
    Vre3,
    Nnir,
    Swir1,
    Swir2,
}

impl BandRole {
    /// Canonical feature order.
    pub const ALL: [BandRole; 10] = [
        BandRole::Blue,
        BandRole::Green,
        BandRole::Red,
        BandRole::Nir,
        BandRole::Vre1,
        BandRole::Vre2,
        BandRole::Vre3,
        BandRole::Nnir,
        BandRole::Swir1,
        BandRole::Swir2,
    ];

    /// Short column name used in feature tables.
    pub fn short_name(self) -> &'static str {
        match self {
            BandRole::Blue => "b",
            BandRole::Green => "g",
            BandRole::Red => "r",
            BandRole::Nir => "nir",
            BandRole::Vre1 => "vre1",
            BandRole::Vre2 => "vre2",
            BandRole::Vre3 => "vre3",
            BandRole::Nnir => "nnir",
            BandRole::Swir1 => "swir1",
            BandRole::Swir2 => "swir2",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BandRole::Blue => "blue",
            BandRole::Green => "green",
            BandRole::Red => "red",
            BandRole::Nir => "nir",
            BandRole::Vre1 => "vre1",
            BandRole::Vre2 => "vre2",
            BandRole::Vre3 => "vre3",
            BandRole::Nnir => "nnir",
            BandRole::Swir1 => "swir1",
            BandRole::Swir2 => "swir2",
        }
    }

    /// Native resolution class: the 10 m bands, everything else is 20 m.
    pub fn native_pixel_m(self) -> f64 {
        match self {
            BandRole::Blue | BandRole::Green | BandRole::Red | BandRole::Nir => 10.0,
            _ => 20.0,
        }
    }
}

impl fmt::Display for BandRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        BandRole::ALL
            .into_iter()
            .find(|r| r.name() == s || r.short_name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown band role '{s}'")))
    }
}

/// Mapping from the ten spectral roles to raster band indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSet {
    indices: BTreeMap<BandRole, usize>,
}

impl BandSet {
    pub fn new(indices: BTreeMap<BandRole, usize>) -> Result<Self> {
        if indices.len() != BandRole::ALL.len() {
            return Err(Error::Parameter(format!(
                "band set needs all {} roles, got {}",
                BandRole::ALL.len(),
                indices.len()
            )));
        }
        let mut seen: Vec<usize> = indices.values().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != indices.len() {
            return Err(Error::Parameter("band indices must be distinct".into()));
        }
        Ok(BandSet { indices })
    }

    /// Bands stored in canonical order: index `i` holds `BandRole::ALL[i]`.
    pub fn canonical() -> Self {
        BandSet {
            indices: BandRole::ALL.iter().enumerate().map(|(i, r)| (*r, i)).collect(),
        }
    }

    /// Resolves roles from band names (either long or short role names).
    pub fn from_band_names(names: &[String]) -> Result<Self> {
        let mut indices = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if let Ok(role) = n.parse::<BandRole>() {
                indices.insert(role, i);
            }
        }
        BandSet::new(indices)
    }

    pub fn index(&self, role: BandRole) -> usize {
        self.indices[&role]
    }

    /// Band indices in canonical feature order.
    pub fn ordered_indices(&self) -> [usize; 10] {
        BandRole::ALL.map(|r| self.index(r))
    }

    pub fn max_index(&self) -> usize {
        self.indices.values().copied().max().unwrap_or(0)
    }
}

impl Default for BandSet {
    fn default() -> Self {
        BandSet::canonical()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_is_identity() {
        assert_eq!(BandSet::canonical().ordered_indices(), [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn duplicate_indices_rejected() {
        let mut m: BTreeMap<_, _> = BandRole::ALL.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        m.insert(BandRole::Swir2, 0);
        assert!(BandSet::new(m).is_err());
    }

    #[test]
    fn missing_role_rejected() {
        let mut m: BTreeMap<_, _> = BandRole::ALL.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        m.remove(&BandRole::Vre2);
        assert!(BandSet::new(m).is_err());
    }

    #[test]
    fn names_resolve_in_any_order() {
        let names: Vec<String> = BandRole::ALL.iter().rev().map(|r| r.name().to_string()).collect();
        let bs = BandSet::from_band_names(&names).unwrap();
        assert_eq!(bs.index(BandRole::Blue), 9);
        assert_eq!(bs.index(BandRole::Swir2), 0);
        assert_eq!("VRE2".parse::<BandRole>().unwrap(), BandRole::Vre2);
        assert!("coastal".parse::<BandRole>().is_err());
    }
}
