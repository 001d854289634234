//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the lines appear in order; the process fails if any criterion fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twoscale::harness::{SweepArtifact, LIMIT_CSV, SWEEP_CSV};
use twoscale::kernel::combinatorial_kernel;
use twoscale::limit::{
    assemble_limit_system, build_two_scale_space, flux_identity_sides, homogenized_tensor,
    solve_limit, CellBlocks,
};
use twoscale::{
    build_periodic_mesh, compute_kernel_basis, estimate_key_constant, preset_geometry, CellSolver,
    DensityField, ForcingSpec, Harness, InnerProductChoice, MacroMesh, Preset, ProblemConfig,
};

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn dp() -> Preset {
    Preset::DoublePorosity {
        matrix_value: 1.0,
        half_width: 0.25,
    }
}

fn classical_1d() -> Outcome {
    let start = Instant::now();
    let mesh = build_periodic_mesh(1, 8, 1).map_err(err)?;
    let a = preset_geometry(&Preset::Laminate { values: [1.0, 2.0] }, 1, 1, 8).map_err(err)?;
    let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
        .map_err(err)?;
    let solver = CellSolver::new(&mesh, &a, &basis).map_err(err)?;
    let bank = solver.build_bank("acceptance").map_err(err)?;
    let t = homogenized_tensor(
        &solver.elementary_fluxes(&bank).map_err(err)?,
        &basis,
        &mesh,
    )
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    // harmonic mean of equal fractions of 1 and 2
    let oracle = 2.0 / (1.0 + 0.5);
    let dev = (t[0] - oracle).abs();
    Ok((
        dev <= 1e-10 && secs < 1.0,
        format!("|a_hom - 4/3| = {dev:.2e} (<= 1e-10), {secs:.3} s (< 1 s)"),
    ))
}

fn classical_2d() -> Outcome {
    let start = Instant::now();
    let cells = 64;
    let mesh = build_periodic_mesh(2, cells, 1).map_err(err)?;
    let a =
        preset_geometry(&Preset::Checkerboard { values: [1.0, 4.0] }, 2, 1, cells).map_err(err)?;
    let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
        .map_err(err)?;
    let solver = CellSolver::new(&mesh, &a, &basis).map_err(err)?;
    let bank = solver.build_bank("acceptance").map_err(err)?;
    let t = homogenized_tensor(
        &solver.elementary_fluxes(&bank).map_err(err)?,
        &basis,
        &mesh,
    )
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    // geometric mean of the two phases
    let g = (1.0f64 * 4.0).sqrt();
    let oracle = [g, 0.0, 0.0, g];
    let dev = t
        .iter()
        .zip(oracle)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / g;
    Ok((
        dev <= 0.02 && secs < 60.0,
        format!(
            "a_hom = [{:.5}, {:.1e}; {:.1e}, {:.5}], max rel dev {dev:.2e} (<= 2e-2), {secs:.2} s (< 60 s)",
            t[0], t[1], t[2], t[3]
        ),
    ))
}

fn kernel_identification() -> Outcome {
    let cells = 8;
    let mesh = build_periodic_mesh(2, cells, 1).map_err(err)?;
    let a = preset_geometry(&dp(), 2, 1, cells).map_err(err)?;
    let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
        .map_err(err)?;
    // nodes strictly inside the inclusion (0.25, 0.75)^2
    let inside = (0..cells).filter(|&i| {
        let y = i as f64 / cells as f64;
        y > 0.25 && y < 0.75
    });
    let interior = inside.count().pow(2);
    let combinatorial = combinatorial_kernel(&mesh, &a).map(|v| v.len());
    let m = basis.dim();
    Ok((
        m == 1 + interior && combinatorial == Some(m) && basis.gap_ratio >= 1e4,
        format!(
            "m = {m}, 1 + interior nodes = {}, enumeration = {combinatorial:?}, gap ratio {:.2e} (>= 1e4)",
            1 + interior,
            basis.gap_ratio
        ),
    ))
}

fn key_constant() -> Outcome {
    let mesh = build_periodic_mesh(1, 64, 1).map_err(err)?;
    let a = preset_geometry(&Preset::Uniform { value: 1.0 }, 1, 1, 64).map_err(err)?;
    let basis =
        compute_kernel_basis(&mesh, &a, InnerProductChoice::Standard, 1e-8, 1e4).map_err(err)?;
    let c = estimate_key_constant(&mesh, &a, &basis, 1e-8)
        .map_err(err)?
        .constant;
    let oracle = (1.0 + 1.0 / (4.0 * PI * PI)).sqrt();
    let rel = (c - oracle).abs() / oracle;
    let mut dp_c = Vec::new();
    for cells in [16, 32] {
        let mesh = build_periodic_mesh(2, cells, 1).map_err(err)?;
        let a = preset_geometry(&dp(), 2, 1, cells).map_err(err)?;
        let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
            .map_err(err)?;
        dp_c.push(
            estimate_key_constant(&mesh, &a, &basis, 1e-8)
                .map_err(err)?
                .constant,
        );
    }
    let change = (dp_c[1] - dp_c[0]).abs() / dp_c[0];
    Ok((
        rel <= 0.01 && change < 0.2,
        format!(
            "identity: C = {c:.6} vs {oracle:.6}, rel {rel:.2e} (<= 1e-2); double porosity C(16) = {:.4}, C(32) = {:.4}, change {change:.2e} (< 0.2)",
            dp_c[0], dp_c[1]
        ),
    ))
}

fn degenerate_cell_solver() -> Outcome {
    let mesh = build_periodic_mesh(2, 8, 1).map_err(err)?;
    let a = preset_geometry(&dp(), 2, 1, 8).map_err(err)?;
    let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
        .map_err(err)?;
    let bank = CellSolver::new(&mesh, &a, &basis)
        .map_err(err)?
        .build_bank("acceptance")
        .map_err(err)?;
    let defect = bank
        .entries
        .iter()
        .map(|e| e.corrector.solvability_defect)
        .fold(0.0, f64::max);
    let kernel_part = bank
        .entries
        .iter()
        .map(|e| e.corrector.orthogonality)
        .fold(0.0, f64::max);

    let cells = 8;
    let mesh = build_periodic_mesh(1, cells, 1).map_err(err)?;
    let lam = Preset::Laminate { values: [1.0, 2.0] };
    let a = preset_geometry(&lam, 1, 1, cells).map_err(err)?;
    let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
        .map_err(err)?;
    let chi = CellSolver::new(&mesh, &a, &basis)
        .map_err(err)?
        .solve_corrector(0, 0)
        .map_err(err)?;
    let b = basis.vector(0)[0];
    let h = 1.0 / cells as f64;
    let mut worst: f64 = 0.0;
    for e in 0..cells {
        let slope = (chi.field[(e + 1) % cells] - chi.field[e]) / h;
        let exact = b * (-1.0 + (4.0 / 3.0) / a.a1_cell(e)[0]);
        worst = worst.max((slope - exact).abs());
    }
    Ok((
        defect <= 1e-12 && kernel_part <= 1e-10 && worst <= 1e-10,
        format!(
            "solvability defect {defect:.2e} (<= 1e-12), kernel component {kernel_part:.2e} (<= 1e-10), laminate chi' error {worst:.2e} (<= 1e-10)"
        ),
    ))
}

fn weyl_decomposition() -> Outcome {
    let mesh = build_periodic_mesh(2, 8, 1).map_err(err)?;
    let a = preset_geometry(&dp(), 2, 1, 8).map_err(err)?;
    let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
        .map_err(err)?;
    let solver = CellSolver::new(&mesh, &a, &basis).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut recon, mut idem, mut sym): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..100 {
        let psi: Vec<f64> = (0..mesh.flux_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let pw = solver.project_onto_w(&psi).map_err(err)?.values;
        let eta: Vec<f64> = psi.iter().zip(&pw).map(|(x, y)| x - y).collect();
        recon = recon.max(
            solver
                .weyl_decompose(&eta, 1e-8)
                .map_err(err)?
                .reconstruction_residual,
        );
        let ppw = solver.project_onto_w(&pw).map_err(err)?.values;
        let d: Vec<f64> = ppw.iter().zip(&pw).map(|(x, y)| x - y).collect();
        idem = idem.max(mesh.flux_norm(&d) / mesh.flux_norm(&psi));
        if let Some((q, pq)) = &prev {
            let s = (mesh.flux_inner(&pw, q) - mesh.flux_inner(&psi, pq)).abs()
                / (mesh.flux_norm(&psi) * mesh.flux_norm(q));
            sym = sym.max(s);
        }
        prev = Some((psi, pw));
    }
    Ok((
        recon <= 1e-8 && idem <= 1e-10 && sym <= 1e-10,
        format!("100 fields: reconstruction {recon:.2e} (<= 1e-8), idempotence {idem:.2e}, self-adjointness {sym:.2e} (<= 1e-10)"),
    ))
}

fn flux_field_identity() -> Outcome {
    let cells = 8;
    let mesh = build_periodic_mesh(2, cells, 1).map_err(err)?;
    let a = preset_geometry(&dp(), 2, 1, cells).map_err(err)?;
    let rho = DensityField::uniform(mesh.element_count(), 1.0);
    let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
        .map_err(err)?;
    let solver = CellSolver::new(&mesh, &a, &basis).map_err(err)?;
    let fluxes = solver
        .elementary_fluxes(&solver.build_bank("acceptance").map_err(err)?)
        .map_err(err)?;
    let forcing = ForcingSpec::sine(1);
    let blocks = CellBlocks::new(&mesh, &a, &rho, &basis, &forcing).map_err(err)?;
    let space = build_two_scale_space(MacroMesh::new(2, 16, 1.0).map_err(err)?, &basis);
    let u0 = solve_limit(
        &assemble_limit_system(space, &fluxes, &blocks, 1.0, &forcing).map_err(err)?,
        1e-10,
    )
    .map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let raw: Vec<f64> = (0..mesh.flux_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let psi = solver.project_onto_w(&raw).map_err(err)?.values;
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let k: [f64; 2] = std::array::from_fn(|_| rng.random_range(0.5..3.0));
        let g = move |x: &[f64]| {
            let (s0, c0) = (k[0] * x[0] + c[0]).sin_cos();
            let (s1, c1) = (k[1] * x[1] + c[1]).sin_cos();
            let amp = c[2] + 2.0;
            (
                amp * s0 * c1 + c[3],
                [amp * k[0] * c0 * c1, -amp * k[1] * s0 * s1],
            )
        };
        let (lhs, rhs) = flux_identity_sides(&u0, &fluxes, &solver, &psi, g, 5);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    Ok((
        worst <= 1e-6,
        format!("20 random test fluxes, max relative mismatch {worst:.2e} (<= 1e-6)"),
    ))
}

fn limit_well_posedness() -> Outcome {
    let cases = [
        ("uniform", Preset::Uniform { value: 1.0 }, 2, 2, 2),
        ("laminate", Preset::Laminate { values: [1.0, 2.0] }, 1, 1, 8),
        (
            "checkerboard",
            Preset::Checkerboard { values: [1.0, 4.0] },
            2,
            1,
            4,
        ),
        ("double porosity", dp(), 2, 1, 8),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, preset, d, n, cells) in cases {
        let mesh = build_periodic_mesh(d, cells, n).map_err(err)?;
        let a = preset_geometry(&preset, d, n, cells).map_err(err)?;
        let rho = DensityField::uniform(mesh.element_count(), 1.0);
        let basis = compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
            .map_err(err)?;
        let solver = CellSolver::new(&mesh, &a, &basis).map_err(err)?;
        let fluxes = solver
            .elementary_fluxes(&solver.build_bank("acceptance").map_err(err)?)
            .map_err(err)?;
        let forcing = ForcingSpec::sine(n);
        let blocks = CellBlocks::new(&mesh, &a, &rho, &basis, &forcing).map_err(err)?;
        let space = build_two_scale_space(MacroMesh::new(d, 16, 1.0).map_err(err)?, &basis);
        let sys = assemble_limit_system(space, &fluxes, &blocks, 1.0, &forcing).map_err(err)?;
        let scale = sys
            .matrix
            .values()
            .iter()
            .fold(0.0f64, |s, v| s.max(v.abs()));
        let asym = sys.matrix.max_asymmetry() / scale;
        let factored = solve_limit(&sys, 1e-10).is_ok();
        ok &= factored && asym <= 1e-14;
        lines.push(format!(
            "{name}: asymmetry {asym:.1e}, factorization {}",
            if factored { "ok" } else { "failed" }
        ));
    }
    Ok((ok, lines.join("; ")))
}

struct ShippedRun {
    name: String,
    sweep: SweepArtifact,
    sweep_seconds: f64,
    classical: bool,
    identical: bool,
}

fn shipped_runs() -> Result<Vec<ShippedRun>, String> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut out = Vec::new();
    for name in [
        "uniform",
        "laminate-1d",
        "checkerboard-2d",
        "double-porosity-2d",
    ] {
        let cfg = ProblemConfig::from_path(&root.join(format!("{name}.json"))).map_err(err)?;
        let mut csvs = Vec::new();
        let mut first = None;
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(err)?;
            let report = Harness::new(cfg.clone(), dir.path(), 0)
                .map_err(err)?
                .run()
                .map_err(err)?;
            if let Some(f) = &report.failure {
                return Err(format!("{name}: stage {} failed: {}", f.stage, f.message));
            }
            let mut bytes = std::fs::read(dir.path().join(SWEEP_CSV)).map_err(err)?;
            bytes.extend(std::fs::read(dir.path().join(LIMIT_CSV)).map_err(err)?);
            csvs.push(bytes);
            if first.is_none() {
                first = Some(report);
            }
        }
        let report = first.expect("one run");
        let sweep_seconds = report
            .timings
            .iter()
            .filter(|t| t.stage == twoscale::Stage::Sweep)
            .map(|t| t.seconds)
            .sum();
        out.push(ShippedRun {
            name: name.into(),
            classical: report.kernel.as_ref().map(|k| k.dim) == Some(cfg.components),
            sweep: report.sweep.ok_or("no sweep")?,
            sweep_seconds,
            identical: csvs[0] == csvs[1],
        });
    }
    Ok(out)
}

fn apriori(runs: &[ShippedRun]) -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for r in runs {
        let first = &r.sweep.rows[0];
        let growth = |f: fn(&twoscale::harness::SweepRow) -> f64| {
            r.sweep
                .rows
                .iter()
                .map(|row| f(row) / f(first))
                .fold(0.0, f64::max)
        };
        let g = [growth(|x| x.r1), growth(|x| x.r2), growth(|x| x.r3)];
        let energy = r
            .sweep
            .rows
            .iter()
            .map(|x| x.energy.relative_defect)
            .fold(0.0, f64::max);
        ok &= g.iter().all(|&v| v <= 1.2) && energy <= 1e-10;
        lines.push(format!(
            "{}: growth {:.3}/{:.3}/{:.3}, energy {energy:.1e}",
            r.name, g[0], g[1], g[2]
        ));
    }
    Ok((ok, format!("{} (<= 1.2, <= 1e-10)", lines.join("; "))))
}

fn convergence(runs: &[ShippedRun]) -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    let mut total = 0.0;
    for r in runs {
        let decreasing = r.sweep.rows.windows(2).all(|w| w[1].e_u < w[0].e_u);
        let order_ok = !r.classical || r.sweep.order_e_u >= 0.9;
        ok &= decreasing && order_ok;
        total += r.sweep_seconds;
        lines.push(format!(
            "{}: decreasing {decreasing}, order {:.3}{}",
            r.name,
            r.sweep.order_e_u,
            if r.classical { " (>= 0.9)" } else { "" }
        ));
    }
    ok &= total < 300.0;
    Ok((
        ok,
        format!("{}; sweep time {total:.2} s (< 300 s)", lines.join("; ")),
    ))
}

fn determinism(runs: &[ShippedRun]) -> Outcome {
    let same: Vec<String> = runs
        .iter()
        .map(|r| format!("{}: {}", r.name, r.identical))
        .collect();
    Ok((
        runs.iter().all(|r| r.identical),
        format!("byte-identical CSV on rerun: {}", same.join(", ")),
    ))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "classical 1D reduction", classical_1d()),
        (2, "classical 2D reduction", classical_2d()),
        (3, "kernel identification", kernel_identification()),
        (4, "key-assumption constant", key_constant()),
        (5, "degenerate cell solver", degenerate_cell_solver()),
        (6, "Weyl decomposition", weyl_decomposition()),
        (7, "flux-field identity", flux_field_identity()),
        (8, "limit system well-posedness", limit_well_posedness()),
    ];
    match shipped_runs() {
        Ok(runs) => {
            results.push((9, "a priori estimates", apriori(&runs)));
            results.push((10, "two-scale convergence", convergence(&runs)));
            results.push((11, "determinism", determinism(&runs)));
        }
        Err(e) => {
            for (id, name) in [
                (9, "a priori estimates"),
                (10, "two-scale convergence"),
                (11, "determinism"),
            ] {
                results.push((id, name, Err(e.clone())));
            }
        }
    }
    let mut failed = 0;
    for (id, name, outcome) in &results {
        let (pass, detail) = match outcome {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "acceptance: {} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
