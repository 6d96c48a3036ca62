//! Paired dynamic/static RGB-D sequences: in-memory types, on-disk format,
//! a procedural scene generator and training-time augmentation.

pub mod augment;
pub mod generate;
pub mod io;
pub mod toy;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intrinsics_from_fov, CameraModel, Pose6};

pub use augment::{augment, augment_frames, AugmentConfig, AugmentParams};
pub use generate::{dataset_checksum, generate_dataset, GeneratedSequence, SPLITS};
pub use io::{load_sequence, load_split, save_sequence};
pub use toy::{generate_toy_sequence, ToySceneConfig};

/// Pose tolerance between paired dynamic and static frames.
pub const POSE_TOLERANCE_M: f64 = 1e-6;
pub const POSE_TOLERANCE_DEG: f64 = 1e-6;

/// Semantic class table. Ids are positions in `names`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassConfig {
    pub names: Vec<String>,
    pub dynamic_ids: Vec<u8>,
    pub road_id: u8,
    pub sidewalk_id: u8,
    /// Label written over removed objects in inpainted outputs.
    pub ignore_id: u8,
}

impl Default for ClassConfig {
    fn default() -> Self {
        let names = [
            "building",
            "fence",
            "pole",
            "road line",
            "road",
            "sidewalk",
            "vegetation",
            "wall",
            "traffic sign",
            "other",
            "pedestrian",
            "vehicle",
            "ignore",
        ];
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            dynamic_ids: vec![10, 11],
            road_id: 4,
            sidewalk_id: 5,
            ignore_id: 12,
        }
    }
}

impl ClassConfig {
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes();
        for &id in self
            .dynamic_ids
            .iter()
            .chain([&self.road_id, &self.sidewalk_id, &self.ignore_id])
        {
            if id as usize >= n {
                return Err(Error::Config(format!("class id {id} out of range for {n} classes")));
            }
        }
        if self.dynamic_ids.contains(&self.ignore_id) {
            return Err(Error::Config("ignore id cannot be dynamic".into()));
        }
        Ok(())
    }
}

/// One timestep of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// `H×W×3`, 8-bit; mapped to `[-1, 1]` only at the model boundary.
    pub rgb: Array3<u8>,
    /// Normalized depth in `[0, 1]`; `1.0` is the maximum range.
    pub depth: Array2<f32>,
    pub semantic: Array2<u8>,
    /// 1 on dynamic pixels.
    pub mask: Array2<u8>,
    pub pose: Pose6,
    pub index: usize,
}

impl Frame {
    pub fn dims(&self) -> (usize, usize) {
        self.depth.dim()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (h, w) = self.dims();
        let shape_ok = self.rgb.dim() == (h, w, 3)
            && self.semantic.dim() == (h, w)
            && self.mask.dim() == (h, w);
        if !shape_ok {
            return Err(Error::Contract(format!(
                "frame {}: modality shapes disagree (rgb {:?}, depth {:?}, semantic {:?}, mask {:?})",
                self.index,
                self.rgb.dim(),
                self.depth.dim(),
                self.semantic.dim(),
                self.mask.dim()
            )));
        }
        if self.depth.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::Contract(format!("frame {}: depth outside [0, 1]", self.index)));
        }
        if self.mask.iter().any(|&m| m > 1) {
            return Err(Error::Contract(format!("frame {}: mask is not binary", self.index)));
        }
        if self.semantic.iter().any(|&s| s as usize >= num_classes) {
            return Err(Error::Contract(format!(
                "frame {}: semantic label >= {num_classes}",
                self.index
            )));
        }
        Ok(())
    }

    /// RGB in `[-1, 1]`, `H×W×3`.
    pub fn rgb_signed(&self) -> Array3<f32> {
        self.rgb.mapv(u8_to_signed)
    }
}

#[inline]
pub fn u8_to_signed(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

#[inline]
pub fn signed_to_u8(x: f32) -> u8 {
    ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Camera intrinsics plus the mount offset of the camera on the vehicle.
/// Serialized as `camera.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub width: usize,
    pub height: usize,
    pub fov_degrees: f64,
    /// Camera position in the vehicle frame, meters.
    pub mount_translation: [f64; 3],
}

impl CameraRig {
    pub fn camera(&self) -> Result<CameraModel> {
        intrinsics_from_fov(self.width, self.height, self.fov_degrees)
    }
}

/// Aligned streams recorded with and without dynamic objects.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub id: String,
    pub dynamic_frames: Vec<Frame>,
    pub static_frames: Vec<Frame>,
    pub rig: CameraRig,
}

impl SequencePair {
    pub fn len(&self) -> usize {
        self.dynamic_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dynamic_frames.is_empty()
    }

    /// Checks every pairing invariant.
    pub fn validate(&self, classes: &ClassConfig) -> Result<()> {
        if self.dynamic_frames.len() != self.static_frames.len() {
            return Err(Error::Alignment {
                frame: self.dynamic_frames.len().min(self.static_frames.len()),
                reason: format!(
                    "{} dynamic frames vs {} static frames",
                    self.dynamic_frames.len(),
                    self.static_frames.len()
                ),
            });
        }
        let n = classes.num_classes();
        for (d, s) in self.dynamic_frames.iter().zip(&self.static_frames) {
            d.validate(n)?;
            s.validate(n)?;
            if d.dims() != (self.rig.height, self.rig.width) || s.dims() != d.dims() {
                return Err(Error::Alignment {
                    frame: d.index,
                    reason: "frame size disagrees with camera rig".into(),
                });
            }
            if d.index != s.index {
                return Err(Error::Alignment {
                    frame: d.index,
                    reason: format!("static index {} differs", s.index),
                });
            }
            let (dp, da) = d.pose.max_delta(&s.pose);
            if dp > POSE_TOLERANCE_M || da > POSE_TOLERANCE_DEG {
                return Err(Error::Alignment {
                    frame: d.index,
                    reason: format!("pose mismatch of {dp} m / {da} deg"),
                });
            }
            if s.mask.iter().any(|&m| m != 0) {
                return Err(Error::Alignment {
                    frame: s.index,
                    reason: "static frame contains dynamic pixels".into(),
                });
            }
        }
        Ok(())
    }
}

/// `mask(u, v) = 1` iff `semantic(u, v)` is one of `dynamic_ids`.
pub fn extract_dynamic_mask(semantic: &Array2<u8>, dynamic_ids: &[u8]) -> Array2<u8> {
    let mut table = [0u8; 256];
    for &id in dynamic_ids {
        table[id as usize] = 1;
    }
    semantic.mapv(|s| table[s as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_static_label_has_empty_mask() {
        let sem = Array2::<u8>::zeros((4, 5));
        assert!(extract_dynamic_mask(&sem, &[10, 11]).iter().all(|&m| m == 0));
    }

    #[test]
    fn uniform_dynamic_label_has_full_mask() {
        let sem = Array2::<u8>::from_elem((4, 5), 10);
        assert!(extract_dynamic_mask(&sem, &[10]).iter().all(|&m| m == 1));
    }

    #[test]
    fn empty_id_set_is_all_zero() {
        let sem = Array2::<u8>::from_elem((3, 3), 11);
        assert!(extract_dynamic_mask(&sem, &[]).iter().all(|&m| m == 0));
    }

    #[test]
    fn random_labels_match_membership_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let sem = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..13u8));
        let ids = [3u8, 10, 11];
        let mask = extract_dynamic_mask(&sem, &ids);
        for ((v, u), &s) in sem.indexed_iter() {
            let expected = ids.iter().any(|&i| i == s) as u8;
            assert_eq!(mask[[v, u]], expected);
        }
    }

    #[test]
    fn default_class_table() {
        let c = ClassConfig::default();
        assert_eq!(c.num_classes(), 13);
        assert_eq!(c.id_of("pedestrian"), Some(10));
        assert_eq!(c.id_of("vehicle"), Some(11));
        assert_eq!(c.id_of("road"), Some(c.road_id));
        c.validate().unwrap();
    }

    #[test]
    fn signed_conversion_roundtrips() {
        for v in 0..=255u8 {
            assert_eq!(signed_to_u8(u8_to_signed(v)), v);
        }
    }
}
