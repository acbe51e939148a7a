//! Training objectives, data generation and metrics.

pub mod data;
pub mod metrics;
pub mod render;
pub mod train;

pub use data::{
    patterned_texture, pixel_coords, sample_sdf, square_mask, synthetic_image, DirectData, ImageSignal, SampleTag,
    SdfSampleSet, Shape, SDF_BBOX,
};
pub use metrics::{giou, mse, psnr, psnr_with_ceiling, PSNR_CEILING};
pub use render::{
    fibonacci_sphere, orbit_cameras, ray_aabb, render_rays, stratified, synthetic_views, BlobScene, Camera,
    FittedField, RadianceData, RadianceSource, RayBatch,
};
pub use train::{mean_local, train_direct, train_shared, Objective, Schedule, StepRecord, StreamMode, TrainLog};
