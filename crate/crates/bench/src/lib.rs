//! Fixture models shared by the benchmarks.

use floquet_core::growth_fragmentation::{FragmentationDistribution, PeriodicCoefficient};
use floquet_core::selection_mutation::{FitnessField, MutationKernel, SMModel};
use floquet_core::{GFModel, GFParams, SpaceGrid};

/// `g₀ = β₁ = 1 + 0.3 sin(2πt)` with the floor-plus-bump kernel on `[0, x_max]`.
pub fn gf_fixture(n: usize, x_max: f64) -> GFModel {
    let p = GFParams::new(
        PeriodicCoefficient::sinusoid(1.0, 0.3, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::sinusoid(1.0, 0.3, 1.0),
        FragmentationDistribution::FloorPlusBump { kappa_floor: 1.0 },
    );
    GFModel::new(p, SpaceGrid::new(0.0, x_max, n).expect("grid")).expect("model")
}

/// Confining quadratic fitness with a width-4 uniform mutation window on `[−6, 6]`.
pub fn sm_fixture(n: usize) -> SMModel {
    SMModel::new(
        FitnessField::PowerConfine {
            a0: 1.0,
            a1: 1.0,
            p: 2.0,
            phi: 0.5,
            period: 1.0,
        },
        MutationKernel::UniformWindow { q: 0.2, eps: 4.0 },
        SpaceGrid::new(-6.0, 6.0, n).expect("grid"),
    )
    .expect("model")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(gf_fixture(41, 8.0).grid.n_nodes(), 41);
        assert_eq!(sm_fixture(41).period(), 1.0);
    }
}
