use proptest::prelude::*;
use twoscale::cell::CorrectorBank;
use twoscale::limit::{
    apply_t, assemble_limit_system, build_two_scale_space, homogenized_tensor, solve_limit,
    CellBlocks,
};
use twoscale::linalg::dot;
use twoscale::{
    build_periodic_mesh, compute_kernel_basis, geometry_hash, preset_geometry, CellSolver,
    DensityField, Error, ForcingSpec, InnerProductChoice, MacroMesh, Preset, TwoScaleField,
};

fn dp4() -> Preset {
    Preset::DoublePorosity {
        matrix_value: 1.0,
        half_width: 0.25,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Equal-fraction laminate: the effective coefficient is the harmonic mean.
    #[test]
    fn laminate_harmonic_mean(a in 0.1f64..10.0, b in 0.1f64..10.0) {
        let mesh = build_periodic_mesh(1, 8, 1).unwrap();
        let t = preset_geometry(&Preset::Laminate { values: [a, b] }, 1, 1, 8).unwrap();
        let basis = compute_kernel_basis(&mesh, &t, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
        let solver = CellSolver::new(&mesh, &t, &basis).unwrap();
        let fluxes = solver.elementary_fluxes(&solver.build_bank("p").unwrap()).unwrap();
        let got = homogenized_tensor(&fluxes, &basis, &mesh).unwrap()[0];
        let oracle = 2.0 * a * b / (a + b);
        prop_assert!((got - oracle).abs() <= 1e-10 * oracle);
    }

    /// P_W is idempotent and splits any flux into orthogonal parts.
    #[test]
    fn projection_pythagoras(seed in proptest::collection::vec(-1.0f64..1.0, 64)) {
        let mesh = build_periodic_mesh(2, 4, 1).unwrap();
        let a = preset_geometry(&dp4(), 2, 1, 4).unwrap();
        let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
        let solver = CellSolver::new(&mesh, &a, &basis).unwrap();
        let psi: Vec<f64> = (0..mesh.flux_len()).map(|i| seed[i % 64] * (1.0 + (i / 64) as f64)).collect();
        let w = solver.project_onto_w(&psi).unwrap();
        prop_assert!(w.in_w);
        let rest: Vec<f64> = psi.iter().zip(&w.values).map(|(x, y)| x - y).collect();
        let total = mesh.flux_inner(&psi, &psi);
        let split = mesh.flux_inner(&w.values, &w.values) + mesh.flux_inner(&rest, &rest);
        prop_assert!((total - split).abs() <= 1e-10 * total);
        let again = solver.project_onto_w(&w.values).unwrap().values;
        let d: Vec<f64> = again.iter().zip(&w.values).map(|(x, y)| x - y).collect();
        prop_assert!(mesh.flux_norm(&d) <= 1e-10 * mesh.flux_norm(&psi));
    }

    /// `int int T u . T w` is symmetric in `(u, w)`.
    #[test]
    fn flux_form_is_symmetric(u in proptest::collection::vec(-1.0f64..1.0, 18), w in proptest::collection::vec(-1.0f64..1.0, 18)) {
        let mesh = build_periodic_mesh(2, 4, 1).unwrap();
        let a = preset_geometry(&dp4(), 2, 1, 4).unwrap();
        let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
        prop_assert_eq!(basis.dim(), 2);
        let solver = CellSolver::new(&mesh, &a, &basis).unwrap();
        let fluxes = solver.elementary_fluxes(&solver.build_bank("p").unwrap()).unwrap();
        let field = |c: &[f64]| TwoScaleField {
            macro_mesh: MacroMesh::new(2, 4, 1.0).unwrap(),
            kernel_dim: 2,
            coefficients: c.to_vec(),
            residual: 0.0,
        };
        let tu = apply_t(&field(&u), &fluxes);
        let tw = apply_t(&field(&w), &fluxes);
        let form = |x: &twoscale::limit::TwoScaleFlux, y: &twoscale::limit::TwoScaleFlux| -> f64 {
            x.slices.iter().zip(&y.slices).zip(&x.weights).map(|((p, q), wt)| wt * mesh.flux_inner(p, q)).sum()
        };
        let (uw, wu) = (form(&tu, &tw), form(&tw, &tu));
        prop_assert!((uw - wu).abs() <= 1e-13 * (form(&tu, &tu) * form(&tw, &tw)).sqrt().max(1e-300));
    }

    /// The limit solution scales linearly with the forcing amplitude.
    #[test]
    fn limit_is_linear_in_forcing(s in 0.1f64..5.0) {
        let mesh = build_periodic_mesh(2, 4, 1).unwrap();
        let a = preset_geometry(&dp4(), 2, 1, 4).unwrap();
        let rho = DensityField::uniform(16, 1.0);
        let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
        let solver = CellSolver::new(&mesh, &a, &basis).unwrap();
        let fluxes = solver.elementary_fluxes(&solver.build_bank("p").unwrap()).unwrap();
        let space = build_two_scale_space(MacroMesh::new(2, 6, 1.0).unwrap(), &basis);
        let solve = |f: &ForcingSpec| {
            let blocks = CellBlocks::new(&mesh, &a, &rho, &basis, f).unwrap();
            solve_limit(&assemble_limit_system(space, &fluxes, &blocks, 1.0, f).unwrap(), 1e-10).unwrap()
        };
        let base = solve(&ForcingSpec::sine(1));
        let mut scaled_f = ForcingSpec::sine(1);
        scaled_f.components[0] = s;
        let scaled = solve(&scaled_f);
        for (x, y) in base.coefficients.iter().zip(&scaled.coefficients) {
            prop_assert!((s * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn corrector_bank_round_trip() {
    let mesh = build_periodic_mesh(2, 8, 1).unwrap();
    let a = preset_geometry(&dp4(), 2, 1, 8).unwrap();
    let rho = DensityField::uniform(64, 1.0);
    let hash = geometry_hash(&a, &rho);
    let basis =
        compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
    let bank = CellSolver::new(&mesh, &a, &basis)
        .unwrap()
        .build_bank(&hash)
        .unwrap();
    assert_eq!(bank.entries.len(), 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.json");
    bank.write(&path).unwrap();
    assert_eq!(CorrectorBank::read(&path, &hash).unwrap(), bank);
    assert!(matches!(
        CorrectorBank::read(&path, "elsewhere"),
        Err(Error::Config(_))
    ));
}

#[test]
fn geometry_hash_is_stable_and_sensitive() {
    let make =
        |v: f64| preset_geometry(&Preset::Checkerboard { values: [1.0, v] }, 2, 1, 8).unwrap();
    let rho = DensityField::uniform(64, 1.0);
    assert_eq!(
        geometry_hash(&make(4.0), &rho),
        geometry_hash(&make(4.0), &rho)
    );
    assert_ne!(
        geometry_hash(&make(4.0), &rho),
        geometry_hash(&make(4.5), &rho)
    );
    assert_ne!(
        geometry_hash(&make(4.0), &rho),
        geometry_hash(&make(4.0), &DensityField::uniform(64, 2.0))
    );
}

/// Kernel vectors supported in the inclusion carry no corrector load.
#[test]
fn inclusion_modes_need_no_corrector() {
    let mesh = build_periodic_mesh(2, 8, 1).unwrap();
    let a = preset_geometry(&dp4(), 2, 1, 8).unwrap();
    let basis =
        compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
    let solver = CellSolver::new(&mesh, &a, &basis).unwrap();
    // the unit field on one interior inclusion node is a kernel element
    let mut bump = vec![0.0; 64];
    bump[4 * 8 + 4] = 1.0;
    let coords = basis.coefficients(&bump);
    let v = basis.project_v(&bump);
    let d: Vec<f64> = v.iter().zip(&bump).map(|(x, y)| x - y).collect();
    assert!(dot(&d, &d).sqrt() < 1e-10);
    // combine correctors with those coordinates
    let mut chi = vec![0.0; 64];
    for q in 0..2 {
        for (k, c) in coords.iter().enumerate() {
            let field = solver.solve_corrector(k, q).unwrap().field;
            for (x, y) in chi.iter_mut().zip(&field) {
                *x += c * y;
            }
        }
        assert!(chi.iter().all(|x| x.abs() < 1e-10));
    }
}
