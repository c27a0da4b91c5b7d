//! Datasets, synthetic generators, CSV I/O, MCAR masking, label noise and
//! input perturbations.

mod csvio;
mod dataset;
mod generators;
mod masking;
mod perturb;

pub use csvio::{load_csv, read_csv, write_csv, write_csv_to};
pub use dataset::{HiddenLabels, PartiallyLabelledDataset};
pub use generators::{gen_two_uniform, GaussianBlobs, GeneratorSpec, LogisticGroundTruth, TwoUniform};
pub use masking::{inject_label_noise, mcar_mask, mcar_split, mcar_split_exact, EmptyPolicy};
pub use perturb::{perturb, Perturbation};
