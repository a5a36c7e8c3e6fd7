//! Lie algebra elements, their exponentials, and transform composition.
//!
//! Coordinates live in `[0,1]^D` with pixel centers at `(j + 0.5) / w`.
//! Composition follows the warp convention: `compose(Φ, Ψ)` maps
//! `x ↦ Φ(Ψ(x))`, and warping `I` by `T` samples `I` at `T(x)`.

mod expm;
mod flow;
mod grid;
mod transform;

pub use expm::{mat_exp, mat_sqrt, norm1, TAYLOR_TERMS};
pub use flow::{mlp_param_count, rk4_flow, svf_displacement, svf_exp, Dense, MlpVelocity, MlpWeights, MLP_WIDTHS};
pub use grid::{identity_grid, interior_points, CENTER};
pub use transform::{
    compose, exponentiate, warp_image, Capabilities, ExpPrimitive, ExpSettings, LieAlgebraElement, Transform,
    DEFAULT_RK4_STEPS, DEFAULT_SQUARING_STEPS,
};
