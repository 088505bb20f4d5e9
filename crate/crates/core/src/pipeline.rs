//! Everything between physical parameters and a runnable closed loop.

use crate::error::Result;
use crate::kernels::{solve_controller_kernels, solve_observer_kernels, ControllerKernels, KernelSettings, ObserverKernels};
use crate::model::{analyze, EquilibriumState, Linearization, TrafficParams};
use crate::riemann::{build_design_model, diagonalize_with_gauge, DesignModel, SpectralDecomposition};

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub params: TrafficParams,
    pub equilibrium: EquilibriumState,
    pub linearization: Linearization,
    pub spectral: SpectralDecomposition,
    pub design: DesignModel,
    pub controller: ControllerKernels,
    pub observer: ObserverKernels,
    pub settings: KernelSettings,
}

impl Pipeline {
    pub fn build(params: &TrafficParams, rho_star: [f64; 2], settings: &KernelSettings) -> Result<Self> {
        Self::build_with_gauge(params, rho_star, settings, [1.0; 4])
    }

    /// Like [`Pipeline::build`] with eigenvector column `i` scaled by
    /// `gauge[i] > 0`.
    pub fn build_with_gauge(
        params: &TrafficParams,
        rho_star: [f64; 2],
        settings: &KernelSettings,
        gauge: [f64; 4],
    ) -> Result<Self> {
        let (equilibrium, linearization) = analyze(rho_star, params)?;
        let spectral = diagonalize_with_gauge(&linearization, gauge)?;
        let design = build_design_model(&spectral, &linearization, &params.road)?;
        let controller = solve_controller_kernels(&design.coeffs, settings)?;
        let observer = solve_observer_kernels(&design.coeffs, settings)?;
        Ok(Self {
            params: *params,
            equilibrium,
            linearization,
            spectral,
            design,
            controller,
            observer,
            settings: *settings,
        })
    }

    /// Finite convergence time `L / v2* + L / (-lambda4)` [s].
    pub fn t_f(&self) -> f64 {
        convergence_time(&self.linearization, self.params.road.length)
    }
}

/// `L / v2* + L / (-lambda4)` [s].
pub fn convergence_time(lin: &Linearization, length: f64) -> f64 {
    length / lin.equilibrium.v_star[1] + length / (-lin.lambdas[3])
}
