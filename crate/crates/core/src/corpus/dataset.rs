use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::ImageGrid;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub id: String,
    /// Index into [`TaskDataset::classes`].
    pub label: usize,
    pub image: ImageGrid,
}

/// A labeled downstream image set (no captions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct TaskDataset {
    pub task: String,
    /// Ordered class names; for graded tasks the order is the grade order.
    pub classes: Vec<String>,
    pub items: Vec<LabeledImage>,
}

#[derive(Deserialize)]
struct RawDataset {
    task: String,
    classes: Vec<String>,
    items: Vec<LabeledImage>,
}

impl TryFrom<RawDataset> for TaskDataset {
    type Error = Error;
    fn try_from(r: RawDataset) -> Result<Self> {
        TaskDataset::new(r.task, r.classes, r.items)
    }
}

impl TaskDataset {
    pub fn new(task: String, classes: Vec<String>, items: Vec<LabeledImage>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset {task:?} has no classes")));
        }
        if let Some(bad) = items.iter().find(|i| i.label >= classes.len()) {
            return Err(Error::InvalidArgument(format!(
                "item {:?} has label {} but only {} classes",
                bad.id,
                bad.label,
                classes.len()
            )));
        }
        Ok(TaskDataset { task, classes, items })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn images(&self) -> Vec<&ImageGrid> {
        self.items.iter().map(|i| &i.image).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for i in &self.items {
            counts[i.label] += 1;
        }
        counts
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
