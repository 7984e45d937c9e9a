use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATIC_LABELS: [&str; 9] = [
    "BOLLARD",
    "CONSTRUCTION_BARREL",
    "CONSTRUCTION_CONE",
    "MESSAGE_BOARD_TRAILER",
    "MOBILE_PEDESTRIAN_CROSSING_SIGN",
    "OFFICIAL_SIGNALER",
    "SIGN",
    "STOP_SIGN",
    "TRAFFIC_LIGHT_TRAILER",
];

pub const DYNAMIC_LABELS: [&str; 21] = [
    "ANIMAL",
    "ARTICULATED_BUS",
    "BICYCLE",
    "BICYCLIST",
    "BOX_TRUCK",
    "BUS",
    "DOG",
    "LARGE_VEHICLE",
    "MOTORCYCLE",
    "MOTORCYCLIST",
    "PEDESTRIAN",
    "RAILED_VEHICLE",
    "REGULAR_VEHICLE",
    "SCHOOL_BUS",
    "STROLLER",
    "TRUCK",
    "TRUCK_CAB",
    "VEHICULAR_TRAILER",
    "WHEELCHAIR",
    "WHEELED_DEVICE",
    "WHEELED_RIDER",
];

/// Partition of object labels into static and dynamic classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    #[serde(rename = "static")]
    static_labels: BTreeSet<String>,
    #[serde(rename = "dynamic")]
    dynamic_labels: BTreeSet<String>,
}

impl Default for LabelTaxonomy {
    fn default() -> Self {
        Self {
            static_labels: STATIC_LABELS.iter().map(|s| s.to_string()).collect(),
            dynamic_labels: DYNAMIC_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelTaxonomy {
    pub fn new(
        static_labels: impl IntoIterator<Item = String>,
        dynamic_labels: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let t = Self {
            static_labels: static_labels.into_iter().collect(),
            dynamic_labels: dynamic_labels.into_iter().collect(),
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if let Some(l) = self.static_labels.intersection(&self.dynamic_labels).next() {
            return Err(Error::Invalid(format!("label {l} is both static and dynamic")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn static_labels(&self) -> &BTreeSet<String> {
        &self.static_labels
    }

    pub fn dynamic_labels(&self) -> &BTreeSet<String> {
        &self.dynamic_labels
    }

    /// Whether `label` is dynamic; unknown labels are an error.
    pub fn is_dynamic(&self, label: &str) -> Result<bool> {
        if self.dynamic_labels.contains(label) {
            Ok(true)
        } else if self.static_labels.contains(label) {
            Ok(false)
        } else {
            Err(Error::UnknownLabel(label.to_string()))
        }
    }
}
