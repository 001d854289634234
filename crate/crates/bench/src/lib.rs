//! Fixtures shared by the benchmarks.

use twoscale::{ForcingSpec, InnerProductChoice, Preset, ProblemConfig};

pub fn double_porosity() -> Preset {
    Preset::DoublePorosity {
        matrix_value: 1.0,
        half_width: 0.25,
    }
}

/// Double-porosity problem on the unit square with sine forcing.
pub fn double_porosity_config(cells: usize, macro_cells: usize) -> ProblemConfig {
    let cfg = ProblemConfig {
        schema_version: twoscale::coefficients::SCHEMA_VERSION,
        name: format!("bench-dp-{cells}"),
        dim: 2,
        components: 1,
        cells,
        geometry: double_porosity(),
        density: twoscale::coefficients::DensitySpec::Uniform(1.0),
        nu: 1.0,
        lambda: 1.0,
        domain_length: 1.0,
        macro_cells,
        epsilons: vec![0.125],
        fine_multiplier: 1,
        forcing: ForcingSpec::sine(1),
        inner_product: InnerProductChoice::MeanGradient,
        key_constant_cells: Vec::new(),
        homogenize_cells: None,
        tolerances: Default::default(),
        expected: Default::default(),
    };
    cfg.validate().expect("bench config is valid");
    cfg
}
