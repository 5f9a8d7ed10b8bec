//! Landmark-free mesh personalization by image registration.
//!
//! The pipeline voxelizes template and target surfaces onto a shared grid,
//! registers the binary images with diffeomorphic demons, and pushes the
//! template mesh nodes through the resulting displacement field. Accuracy
//! is scored with Dice, HD95, per-vertex surface distance and element
//! scaled Jacobians. The [`signals`] module carries the crash-signal
//! instrumentation (channel-class filtering and CORA rating) used to judge
//! the morphed models in simulation.

pub mod error;
pub mod grid;
pub mod image_io;
pub mod mesh;
pub mod metrics;
pub mod morph;
pub mod registration;
pub mod signals;
pub mod spatial;
pub mod voxelize;

pub type Vec3 = nalgebra::Vector3<f64>;

pub use error::{Error, Result};
pub use grid::{FieldValue, Grid, Volume};
pub use mesh::{
    apply_rigid, fit_rigid, read_femesh, read_stl, write_femesh, write_stl, Aabb, Element, ElementKind, FEMesh,
    PointCloud, RigidTransform, StlFormat, TriangleMesh,
};
pub use metrics::{
    accuracy_report, dice, distance_map, hd95, scaled_jacobian, AccuracyReport, HausdorffReport, JacobianReport,
};
pub use morph::{morph_mesh, morph_report, sample_field, MorphMask, MorphOutcome, QualityReport};
pub use registration::{
    compose_fields, demons_step, exp_field, gaussian_smooth, invert_field, register_demons, warp_binary, warp_scalar,
    DemonsParams, InverseField, RegistrationReport,
};
pub use signals::{
    average_components, cfc_filter, classify_biofidelity, cora_rate, Biofidelity, Cfc, CoraParams, CoraResult,
    TimeSeries,
};
pub use voxelize::{boundary_voxels, image_union, voxelize, voxelize_on_grid, VoxelizeParams};

/// Voxel occupancy image.
pub type BinaryImage3D = Volume<bool>;
/// Real-valued intensity image.
pub type ScalarImage3D = Volume<f64>;
/// Dense displacement (mm) per voxel.
pub type DisplacementField = Volume<Vec3>;
