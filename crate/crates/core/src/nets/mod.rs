//! Step networks and composition trees.
//!
//! A step evaluates a backbone on the stacked pair `[A, B]` and turns the
//! output into a transform. Antisymmetric steps use `N[A,B] − N[B,A]`, so
//! swapping the inputs exactly negates the algebra element.

mod backbone;
mod model;
mod presets;
mod step;

pub use backbone::{backbone_forward, init_backbone, BackboneKind, BackboneOutput};
pub use model::{ModelDescriptor, ModelNode, ModelOutput, RegistrationModel, DESCRIPTOR_VERSION};
pub use presets::{affine_grid_descriptor, param_label, zoo_descriptor, Composition, GRID_PARAMS, ZOO_MODELS};
pub use step::{hom_from_raw, Family, Parameterization, Resolution, StepNetwork, StepOutput, StepSpec};
