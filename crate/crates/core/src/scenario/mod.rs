//! Bathymetry scenarios for the seven tasks, their masks and datasets.

pub mod dataset;
pub mod families;
pub mod mask;

pub use dataset::{
    build_task_datasets, denormalize, normalize, solve_spec, DatasetConfig, FieldSolver, NormStats, RayOracle, Sample, Split,
    SplitFractions, SplitKind, TaskConfig, TaskDataset,
};
pub use families::{
    draw_spec, draw_specs, gen_dickins_like, gen_seamount_base, gen_seamount_general, gen_seamount_height, gen_wedge, sample_seed,
    vee_test_case, Family, FamilyBounds, ScenarioSpec,
};
pub use mask::{rasterize_mask, MaskGrid};
