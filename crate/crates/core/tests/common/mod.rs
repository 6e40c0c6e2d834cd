#![allow(dead_code)]

use floquet_core::growth_fragmentation::{FragmentationDistribution, PeriodicCoefficient};
use floquet_core::selection_mutation::{FitnessField, MutationKernel, SMModel};
use floquet_core::{GFModel, GFParams, SpaceGrid};

/// `g₀ = β₁ = 1 + amp·sin(2πt)`, `g₁ = β₀ = 0`.
pub fn gf_model(n: usize, x_max: f64, amp: f64, kappa: FragmentationDistribution) -> GFModel {
    let p = GFParams::new(
        PeriodicCoefficient::sinusoid(1.0, amp, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::constant(0.0, 1.0),
        PeriodicCoefficient::sinusoid(1.0, amp, 1.0),
        kappa,
    );
    GFModel::new(p, SpaceGrid::new(0.0, x_max, n).unwrap()).unwrap()
}

pub fn bump() -> FragmentationDistribution {
    FragmentationDistribution::FloorPlusBump { kappa_floor: 1.0 }
}

pub fn sm_model(n: usize, half_width: f64) -> SMModel {
    SMModel::new(
        FitnessField::PowerConfine {
            a0: 1.0,
            a1: 1.0,
            p: 2.0,
            phi: 0.5,
            period: 1.0,
        },
        MutationKernel::UniformWindow { q: 0.2, eps: 4.0 },
        SpaceGrid::new(-half_width, half_width, n).unwrap(),
    )
    .unwrap()
}

/// Deterministic pseudo-random values in `[0, 1)`.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}
