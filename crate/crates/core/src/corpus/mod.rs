//! Image-caption corpora and keyword retrieval.

mod dataset;
mod image;
mod keywords;
mod labels;
mod record;
mod text;

pub use dataset::{LabeledImage, TaskDataset};
pub use image::{ImageGrid, ImageSource};
pub use keywords::{match_keywords, KeywordSpec, RetrievalMember, RetrievalMode, RetrievalSet};
pub use labels::{assign_pseudo_labels, balance_by_label, BalancePolicy};
pub use record::{load_corpus, save_corpus, CaptionRecord};
pub use text::{find_phrase, normalize_text, words};
