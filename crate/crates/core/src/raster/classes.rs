use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The eleven classes of the ESA WorldCover product, keyed by their file codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum LandCoverClass {
    TreeCover = 10,
    Shrubland = 20,
    Grassland = 30,
    Cropland = 40,
    BuiltUp = 50,
    BareSparse = 60,
    SnowIce = 70,
    PermanentWater = 80,
    HerbaceousWetland = 90,
    Mangroves = 95,
    MossLichen = 100,
}

impl LandCoverClass {
    pub const ALL: [LandCoverClass; 11] = [
        Self::TreeCover,
        Self::Shrubland,
        Self::Grassland,
        Self::Cropland,
        Self::BuiltUp,
        Self::BareSparse,
        Self::SnowIce,
        Self::PermanentWater,
        Self::HerbaceousWetland,
        Self::Mangroves,
        Self::MossLichen,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.code() == code)
    }
}

/// Köppen-Geiger climate classes present over the European study area.
///
/// Numeric codes follow the convention of the 1-km Köppen-Geiger maps
/// (1 = Af … 30 = EF), so class rasters can be read without remapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClimateClass {
    BWh = 4,
    BWk = 5,
    BSh = 6,
    BSk = 7,
    Csa = 8,
    Csb = 9,
    Cfa = 14,
    Cfb = 15,
    Cfc = 16,
    Dsa = 17,
    Dsb = 18,
    Dsc = 19,
    Dfa = 25,
    Dfb = 26,
    Dfc = 27,
    ET = 29,
}

impl ClimateClass {
    pub const ALL: [ClimateClass; 16] = [
        Self::BWh,
        Self::BWk,
        Self::BSh,
        Self::BSk,
        Self::Csa,
        Self::Csb,
        Self::Cfa,
        Self::Cfb,
        Self::Cfc,
        Self::Dsa,
        Self::Dsb,
        Self::Dsc,
        Self::Dfa,
        Self::Dfb,
        Self::Dfc,
        Self::ET,
    ];

    /// Default membership of the composite Mediterranean class.
    pub const MEDITERRANEAN: [ClimateClass; 9] = [
        Self::Csa,
        Self::Csb,
        Self::BSh,
        Self::BSk,
        Self::BWh,
        Self::BWk,
        Self::Cfa,
        Self::Dsa,
        Self::Dsb,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BWh => "BWh",
            Self::BWk => "BWk",
            Self::BSh => "BSh",
            Self::BSk => "BSk",
            Self::Csa => "Csa",
            Self::Csb => "Csb",
            Self::Cfa => "Cfa",
            Self::Cfb => "Cfb",
            Self::Cfc => "Cfc",
            Self::Dsa => "Dsa",
            Self::Dsb => "Dsb",
            Self::Dsc => "Dsc",
            Self::Dfa => "Dfa",
            Self::Dfb => "Dfb",
            Self::Dfc => "Dfc",
            Self::ET => "ET",
        }
    }
}

impl fmt::Display for ClimateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClimateClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown climate class `{s}`"))
    }
}
