//! Semantic class vocabulary shared by the rig, the rasterizer and the metrics.

use serde::{Deserialize, Serialize};

/// Per-pixel class ids. The first eleven follow the Helen/LaPa face-parsing
/// vocabulary; the remaining four only exist for asset ablations and are
/// folded back into that vocabulary by [`SemanticClass::parsing_class`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum SemanticClass {
    Background = 0,
    Skin = 1,
    LeftBrow = 2,
    RightBrow = 3,
    LeftEye = 4,
    RightEye = 5,
    Nose = 6,
    UpperLip = 7,
    InnerMouth = 8,
    LowerLip = 9,
    Hair = 10,
    Clothing = 11,
    Headwear = 12,
    Facewear = 13,
    Eyewear = 14,
}

impl SemanticClass {
    pub const COUNT: usize = 15;
    /// Size of the face-parsing vocabulary (background included).
    pub const PARSING_COUNT: usize = 11;

    pub const ALL: [SemanticClass; Self::COUNT] = [
        SemanticClass::Background,
        SemanticClass::Skin,
        SemanticClass::LeftBrow,
        SemanticClass::RightBrow,
        SemanticClass::LeftEye,
        SemanticClass::RightEye,
        SemanticClass::Nose,
        SemanticClass::UpperLip,
        SemanticClass::InnerMouth,
        SemanticClass::LowerLip,
        SemanticClass::Hair,
        SemanticClass::Clothing,
        SemanticClass::Headwear,
        SemanticClass::Facewear,
        SemanticClass::Eyewear,
    ];

    /// The ten facial classes a bare head can produce.
    pub const FACIAL: [SemanticClass; 10] = [
        SemanticClass::Skin,
        SemanticClass::LeftBrow,
        SemanticClass::RightBrow,
        SemanticClass::LeftEye,
        SemanticClass::RightEye,
        SemanticClass::Nose,
        SemanticClass::UpperLip,
        SemanticClass::InnerMouth,
        SemanticClass::LowerLip,
        SemanticClass::Background,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Background => "background",
            SemanticClass::Skin => "skin",
            SemanticClass::LeftBrow => "left-brow",
            SemanticClass::RightBrow => "right-brow",
            SemanticClass::LeftEye => "left-eye",
            SemanticClass::RightEye => "right-eye",
            SemanticClass::Nose => "nose",
            SemanticClass::UpperLip => "upper-lip",
            SemanticClass::InnerMouth => "inner-mouth",
            SemanticClass::LowerLip => "lower-lip",
            SemanticClass::Hair => "hair",
            SemanticClass::Clothing => "clothing",
            SemanticClass::Headwear => "headwear",
            SemanticClass::Facewear => "facewear",
            SemanticClass::Eyewear => "eyewear",
        }
    }

    /// Down-mapping onto the 11-class parsing vocabulary. Headwear counts as
    /// hair (it occupies the hair region); clothing, masks and glasses are
    /// not part of the vocabulary and become background.
    pub fn parsing_class(self) -> SemanticClass {
        match self {
            SemanticClass::Headwear => SemanticClass::Hair,
            SemanticClass::Clothing | SemanticClass::Facewear | SemanticClass::Eyewear => {
                SemanticClass::Background
            }
            other => other,
        }
    }
}
