use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use tlfea::exit_codes;
use tlfea::scenes::BeamMaterial;
use tlfea_core::pipeline::{run_simulation, AsyncConfig, RunOptions};
use tlfea_core::solvers::InnerSolverKind;
use tlfea_core::Error;

#[derive(Parser)]
#[command(
    name = "tlfea",
    about = "Total Lagrangian FEM engine: scenario runner, validation suites, and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file, emitting VTK series and a metrics CSV.
    Run {
        scenario: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named validation suite.
    Validate {
        /// One of: gradients, sparse, brick-slope, oblique-impact,
        /// joints, collision-oracle
        suite: String,
    },
    /// Cantilever scaling benchmark family.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
    /// Print mesh statistics.
    MeshInfo { file: PathBuf },
    /// Generate a built-in mesh file.
    GenMesh {
        #[arg(value_enum)]
        shape: Shape,
        /// Resolution level (beam) or per-axis divisions (ball).
        #[arg(long, default_value_t = 0)]
        res: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    Cantilever {
        #[arg(long, default_value_t = 0)]
        res: usize,
        #[arg(long, value_enum, default_value_t = SolverArg::Newton)]
        solver: SolverArg,
        #[arg(long, value_enum, default_value_t = MaterialArg::Svk)]
        material: MaterialArg,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Append the result to a CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Newton,
    Adamw,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaterialArg {
    Svk,
    Mr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    /// 3 x 2 x 1 m benchmark beam (res 0 -> 105 nodes / 36 elements).
    Beam,
    /// 0.4 x 0.2 x 0.1 m brick.
    Brick,
    /// Radius 0.15 m ball (res = divisions per axis, default 5).
    Ball,
    /// 0.5 x 0.04 x 0.04 m pendulum link along z.
    Link,
}

fn exit_for(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Mesh(_) | Error::Structural(_) | Error::State(_) => {
            exit_codes::USAGE
        }
        _ => exit_codes::NON_CONVERGENCE,
    }
}

fn main() -> ExitCode {
    // Cap worker parallelism when requested.
    if let Ok(threads) = std::env::var("TLFEA_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(cli: Cli) -> tlfea_core::Result<i32> {
    match cli.command {
        Command::Run { scenario, out } => cmd_run(&scenario, out),
        Command::Validate { suite } => {
            let result = tlfea::validate::run_suite(&suite)?;
            result.print();
            Ok(if result.passed() {
                exit_codes::OK
            } else {
                exit_codes::NON_CONVERGENCE
            })
        }
        Command::Bench { which } => match which {
            BenchCmd::Cantilever {
                res,
                solver,
                material,
                steps,
                csv,
            } => {
                let solver = match solver {
                    SolverArg::Newton => InnerSolverKind::Newton,
                    SolverArg::Adamw => InnerSolverKind::AdamW,
                };
                let material = match material {
                    MaterialArg::Svk => BeamMaterial::Svk,
                    MaterialArg::Mr => BeamMaterial::MooneyRivlin,
                };
                let r = tlfea::bench::run_cantilever(res, solver, material, steps)?;
                println!(
                    "cantilever res{} {} {}: {} DOFs, {} elements, {} steps",
                    r.res, r.solver, r.material, r.dofs, r.elements, r.steps
                );
                println!(
                    "  wall {:.3} s, RTF {:.2}, tip displacement {:.4e} m, non-converged steps {}",
                    r.wall_seconds, r.rtf, r.tip_displacement, r.non_converged_steps
                );
                if let Some(path) = csv {
                    append_csv(&path, &r)?;
                    println!("  appended to {}", path.display());
                }
                Ok(exit_codes::OK)
            }
        },
        Command::MeshInfo { file } => {
            let mesh = tlfea::meshio::load_mesh(&file)?;
            let vol: f64 = (0..mesh.n_elements()).map(|e| mesh.corner_volume(e)).sum();
            println!("{}", file.display());
            println!("  nodes:             {}", mesh.n_nodes());
            println!("  elements (T10):    {}", mesh.n_elements());
            println!("  dofs:              {}", mesh.n_dofs());
            println!("  surface triangles: {}", mesh.surface_triangles.len());
            println!("  bodies:            {}", mesh.n_bodies());
            println!("  corner volume:     {vol:.6e} m^3");
            Ok(exit_codes::OK)
        }
        Command::GenMesh { shape, res, out } => {
            use nalgebra::Vector3;
            use tlfea_core::meshgen;
            let mesh = match shape {
                Shape::Beam => meshgen::t10_box(
                    Vector3::zeros(),
                    Vector3::new(3.0, 2.0, 1.0),
                    tlfea::scenes::beam_divisions(res),
                ),
                Shape::Brick => meshgen::t10_box(
                    Vector3::new(-0.2, -0.1, 0.0),
                    Vector3::new(0.4, 0.2, 0.1),
                    (4, 2, 1),
                ),
                Shape::Ball => meshgen::t10_ball(
                    Vector3::new(0.0, 0.0, 0.0),
                    0.15,
                    if res == 0 { 5 } else { res },
                ),
                Shape::Link => meshgen::t10_box(
                    Vector3::new(-0.02, -0.02, -0.5),
                    Vector3::new(0.04, 0.04, 0.5),
                    (1, 1, 6),
                ),
            };
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| {
                        Error::usage(format!("cannot create {}: {e}", parent.display()))
                    })?;
                }
            }
            tlfea::meshio::write_mesh(&mesh, &out)?;
            println!(
                "wrote {} ({} nodes, {} elements)",
                out.display(),
                mesh.n_nodes(),
                mesh.n_elements()
            );
            Ok(exit_codes::OK)
        }
    }
}

fn append_csv(path: &PathBuf, r: &tlfea::bench::BenchResult) -> tlfea_core::Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::usage(format!("cannot open {}: {e}", path.display())))?;
    if fresh {
        let _ = writeln!(f, "{}", tlfea::bench::csv_header());
    }
    let _ = writeln!(f, "{}", tlfea::bench::csv_line(r));
    Ok(())
}

fn cmd_run(scenario_path: &PathBuf, out_override: Option<PathBuf>) -> tlfea_core::Result<i32> {
    let scenario = tlfea::config::load_scenario(scenario_path)?;
    let base = scenario_path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut sim = tlfea::scenario::build_simulation(&scenario, &base)?;
    let out_dir = out_override.unwrap_or_else(|| PathBuf::from(&scenario.output.dir));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::usage(format!("cannot create {}: {e}", out_dir.display())))?;

    let opts = RunOptions {
        detection: AsyncConfig {
            enabled: scenario.detection.async_mode,
            n_max: scenario.detection.n_max,
            test_delay: None,
        },
    };
    let every = scenario.output.every;
    let name = scenario.name.clone();

    use std::io::Write;
    let csv_path = out_dir.join("metrics.csv");
    let mut csv = std::fs::File::create(&csv_path)
        .map_err(|e| Error::usage(format!("cannot create {}: {e}", csv_path.display())))?;
    writeln!(csv, "step,t,inner,outer,grad_norm,constraint_norm,n_contacts,wall_ms")
        .map_err(|e| Error::usage(e.to_string()))?;

    // buffer output frames; writing inside the sink would alias the
    // simulation borrow
    let mut frames: Vec<(u64, tlfea_core::model::SystemState)> = Vec::new();
    let report = run_simulation(&mut sim, &opts, |state, rec| {
        let _ = writeln!(
            csv,
            "{},{:.9},{},{},{:.6e},{:.6e},{},{:.3}",
            rec.step,
            rec.t,
            rec.inner,
            rec.outer,
            rec.grad_norm,
            rec.constraint_norm,
            rec.n_contacts,
            rec.wall_ms
        );
        if every > 0 && rec.step % every as u64 == 0 {
            frames.push((rec.step, state.clone()));
        }
    })?;
    if every > 0 {
        for (step, state) in &frames {
            let path = out_dir.join(format!("{name}_{step:06}.vtk"));
            tlfea::vtk::write_vtk(&sim.model, state, &name, &path)?;
        }
        let final_path = out_dir.join(format!("{name}_final.vtk"));
        tlfea::vtk::write_vtk(&sim.model, &sim.state, &name, &final_path)?;
    }

    println!(
        "{name}: {} steps, wall {:.3} s, RTF {:.2}",
        report.records.len(),
        report.wall_seconds,
        report.rtf
    );
    for (phase, phase_rtf) in &report.phase_rtf {
        println!("  phase {phase}: RTF {phase_rtf:.2}");
    }
    println!(
        "  factorizations: {} full, {} re; metrics: {}",
        report.full_factorizations,
        report.refactorizations,
        csv_path.display()
    );
    if report.non_converged_steps > 0 {
        eprintln!(
            "warning: {} steps did not meet the outer tolerance (report: {})",
            report.non_converged_steps,
            csv_path.display()
        );
        return Ok(exit_codes::NON_CONVERGENCE);
    }
    Ok(exit_codes::OK)
}
