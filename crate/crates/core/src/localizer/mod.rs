//! Apparel localization: soft masks, the compact segmentation net, garment
//! splitting by clustering, and contour-based mask refinement.

mod kmeans;
mod mask;
mod net;
mod snake;
mod train;

pub use kmeans::{kmeans, split_garments, GarmentSplit, KmeansOutcome};
pub use mask::Mask;
pub use net::{Localization, LocalizerNet, CONV_CHANNELS, DEFAULT_K, EMBED_DIM, FEATURE_STRIDE};
pub use snake::{refine_contour, refine_contour_traced, SnakeParams, CONTOUR_POINTS};
pub use train::{
    garment_free_sample, scene_training_pairs, train_localizer, LocSample, LocTrainHyper,
    LocTrainReport,
};
