//! Dataset records, embedding stores and their on-disk encodings.

mod embeddings;
mod manifest;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub use embeddings::{load_embeddings, EmbeddingStore, EMBEDDING_MAGIC};
pub use manifest::{load_manifest, read_raw_image, write_manifest, write_raw_image};
pub use synth::{generate_synthetic, SynthConfig};

/// Live/attack ground truth. Live is the positive class everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Live,
    Attack,
}

impl Label {
    /// `1.0` for live, `0.0` for attack.
    pub fn target(self) -> f64 {
        match self {
            Label::Live => 1.0,
            Label::Attack => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Live => "live",
            Label::Attack => "attack",
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" | "bonafide" | "bona_fide" | "1" => Ok(Label::Live),
            "attack" | "spoof" | "0" => Ok(Label::Attack),
            other => Err(Error::Validation(format!("unknown label {other:?}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attack families of the challenge data, plus `Live` for bona fide samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackCategory {
    PixelLevel,
    SemanticLevel,
    VideoDriven,
    FaceSwap,
    AttributeEdit,
    Replay,
    Cutouts,
    Print,
    Live,
}

impl AttackCategory {
    pub const ALL: [AttackCategory; 9] = [
        AttackCategory::PixelLevel,
        AttackCategory::SemanticLevel,
        AttackCategory::VideoDriven,
        AttackCategory::FaceSwap,
        AttackCategory::AttributeEdit,
        AttackCategory::Replay,
        AttackCategory::Cutouts,
        AttackCategory::Print,
        AttackCategory::Live,
    ];

    pub const ATTACKS: [AttackCategory; 8] = [
        AttackCategory::PixelLevel,
        AttackCategory::SemanticLevel,
        AttackCategory::VideoDriven,
        AttackCategory::FaceSwap,
        AttackCategory::AttributeEdit,
        AttackCategory::Replay,
        AttackCategory::Cutouts,
        AttackCategory::Print,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackCategory::PixelLevel => "pixel_level",
            AttackCategory::SemanticLevel => "semantic_level",
            AttackCategory::VideoDriven => "video_driven",
            AttackCategory::FaceSwap => "face_swap",
            AttackCategory::AttributeEdit => "attribute_edit",
            AttackCategory::Replay => "replay",
            AttackCategory::Cutouts => "cutouts",
            AttackCategory::Print => "print",
            AttackCategory::Live => "live",
        }
    }

    /// Attacks that keep the subject's identity (adversarial perturbations and
    /// reenactment). Their embeddings stay close to the subject's lives.
    pub fn preserves_identity(self) -> bool {
        matches!(
            self,
            AttackCategory::PixelLevel | AttackCategory::SemanticLevel | AttackCategory::VideoDriven
        )
    }
}

impl FromStr for AttackCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Ok(match key.as_str() {
            "pixellevel" => AttackCategory::PixelLevel,
            "semanticlevel" => AttackCategory::SemanticLevel,
            "videodriven" => AttackCategory::VideoDriven,
            "faceswap" => AttackCategory::FaceSwap,
            "attributeedit" => AttackCategory::AttributeEdit,
            "replay" => AttackCategory::Replay,
            "cutouts" | "cutout" => AttackCategory::Cutouts,
            "print" => AttackCategory::Print,
            "live" | "liveface" | "bonafide" => AttackCategory::Live,
            _ => return Err(Error::Validation(format!("unknown category {s:?}"))),
        })
    }
}

impl fmt::Display for AttackCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dataset record. `image` has shape `[height, width, 3]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub identity: String,
    pub label: Label,
    pub category: AttackCategory,
    pub valid: bool,
    pub image: Tensor,
}

impl Sample {
    /// Checks the label/category pairing, image rank and pixel range.
    pub fn validate(&self) -> Result<()> {
        if (self.label == Label::Live) != (self.category == AttackCategory::Live) {
            return Err(Error::Validation(format!(
                "sample {}: label {} does not agree with category {}",
                self.id, self.label, self.category
            )));
        }
        let shape = self.image.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Validation(format!(
                "sample {}: image shape {shape:?} is not [h, w, 3]",
                self.id
            )));
        }
        if let Some(v) = self.image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!(
                "sample {}: pixel value {v} outside [0, 1]",
                self.id
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_parsing_is_lenient_about_case_and_separators() {
        for c in AttackCategory::ALL {
            assert_eq!(c.as_str().parse::<AttackCategory>().unwrap(), c);
        }
        assert_eq!(
            "Pixel-Level".parse::<AttackCategory>().unwrap(),
            AttackCategory::PixelLevel
        );
        assert!(matches!(
            "hologram".parse::<AttackCategory>(),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn validate_rejects_label_category_disagreement() {
        let s = Sample {
            id: "a".into(),
            identity: "p".into(),
            label: Label::Live,
            category: AttackCategory::Print,
            valid: true,
            image: Tensor::zeros(vec![2, 2, 3]),
        };
        assert!(matches!(s.validate(), Err(Error::Validation(_))));
    }
}
