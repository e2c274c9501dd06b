use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cellwall::chemistry::{CouplingVariant, KineticsParams};
use cellwall::config::{Model, SimConfig};
use cellwall::error::CellwallError;
use cellwall::io::format_f64;
use cellwall::macro_solver::{run_simulation, MacroSystem};
use cellwall::pipeline::prepare_effective_model;
use cellwall::validate;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "I")]
    I,
    #[value(name = "II")]
    Ii,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Stress,
    Strain,
}

#[derive(Parser)]
#[command(
    name = "cellwall",
    about = "Unit-cell homogenization and coupled chemo-mechanical simulation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Configuration file (TOML); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides config and CELLWALL_OUT_DIR).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Coupling model override.
    #[arg(long, global = true)]
    model: Option<ModelArg>,
    /// Coupling variant override.
    #[arg(long, global = true)]
    variant: Option<VariantArg>,
    /// Cell mesh size override.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Worker thread count (overrides CELLWALL_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the cell problems once and write the effective tensors.
    CellSolve,
    /// Sweep the affine stiffness family over a range of cross-link densities.
    TensorTable {
        #[arg(long, default_value_t = 0.0)]
        b_min: f64,
        #[arg(long, default_value_t = 5.0)]
        b_max: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
    },
    /// Run the full coupled simulation.
    Simulate,
    /// Run the oracle and property suite; exit code 0 iff everything passes.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool, CellwallError> {
    let threads = cli
        .threads
        .or_else(|| std::env::var("CELLWALL_THREADS").ok()?.parse().ok());
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CellwallError::Config(format!("thread pool: {e}")))?;
    }

    let mut config = match &cli.config {
        Some(path) => cellwall::config::parse_config(path)?,
        None => SimConfig::default(),
    };
    if let Some(h) = cli.h {
        config.geometry.h_cell = h;
    }
    if let Some(m) = cli.model {
        config.coupling.model = match m {
            ModelArg::I => Model::I,
            ModelArg::Ii => Model::II,
        };
    }
    if let Some(v) = cli.variant {
        config.coupling.variant = match v {
            VariantArg::Stress => CouplingVariant::Stress,
            VariantArg::Strain => CouplingVariant::Strain,
        };
    }
    let out_dir: PathBuf = cli
        .out
        .or_else(|| std::env::var("CELLWALL_OUT_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.outputs.directory));
    config.validate()?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CellwallError::io(out_dir.display().to_string(), e))?;
    let cache = out_dir.join("cache");

    match cli.cmd {
        Cmd::CellSolve => {
            let (model, stats) = prepare_effective_model(&config, Some(&cache))?;
            let tensor = model.family.evaluate(config.initial.b)?;
            cellwall::io::write_voigt_table(&tensor, &out_dir.join("effective_elasticity.voigt"))?;
            let mut d = String::new();
            for i in 0..3 {
                let row: Vec<String> =
                    (0..3).map(|j| format_f64(model.d_unit[(i, j)])).collect();
                d.push_str(&row.join(" "));
                d.push('\n');
            }
            std::fs::write(out_dir.join("effective_diffusion_unit.txt"), d)
                .map_err(|e| CellwallError::io(out_dir.display().to_string(), e))?;
            println!(
                "cell solves: {} (cache {})",
                stats.cell_solves,
                if stats.cache_hit { "hit" } else { "miss" }
            );
            println!("theta_m = {}", format_f64(model.theta_m));
            println!("wrote {}", out_dir.join("effective_elasticity.voigt").display());
            Ok(true)
        }
        Cmd::TensorTable { b_min, b_max, steps } => {
            if steps < 2 || b_max <= b_min || b_min < 0.0 {
                return Err(CellwallError::Config(
                    "tensor-table needs 0 <= b_min < b_max and steps >= 2".into(),
                ));
            }
            let (model, _) = prepare_effective_model(&config, Some(&cache))?;
            let mut s = String::from("b,E_m,C11,C12,C13,C33,C44,C66\n");
            for k in 0..steps {
                let b = b_min + (b_max - b_min) * k as f64 / (steps - 1) as f64;
                let e_m = model.family.law.evaluate(b)?;
                let c = *model.family.evaluate(b)?.voigt();
                let picks = [
                    c[(0, 0)],
                    c[(0, 1)],
                    c[(0, 2)],
                    c[(2, 2)],
                    c[(3, 3)],
                    c[(5, 5)],
                ];
                s.push_str(&format_f64(b));
                s.push(',');
                s.push_str(&format_f64(e_m));
                for p in picks {
                    s.push(',');
                    s.push_str(&format_f64(p));
                }
                s.push('\n');
            }
            let path = out_dir.join("tensor_table.csv");
            std::fs::write(&path, s)
                .map_err(|e| CellwallError::io(path.display().to_string(), e))?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Cmd::Simulate => {
            let (model, _) = prepare_effective_model(&config, Some(&cache))?;
            let system = MacroSystem::new(config, model)?;
            let start = system.initial_state()?;
            let result = run_simulation(&system, start, Some(&out_dir))?;
            println!(
                "completed {} steps to t = {}",
                result.trajectory.len(),
                format_f64(result.final_state.time)
            );
            println!("wrote {}", out_dir.join("trajectory.csv").display());
            Ok(true)
        }
        Cmd::Validate => {
            let mut all_pass = true;
            let h = config.geometry.h_cell.min(0.1);
            let checks = validate::bounds_and_symmetry_suite(h, config.outputs.seed)?;
            for c in &checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                all_pass &= c.pass;
            }
            // Well-mixed oracle self-check plus the closed-form breakage case.
            let k = KineticsParams::default();
            let y0 = [
                config.initial.p1,
                config.initial.p2,
                config.initial.n1,
                config.initial.n2,
                config.initial.b,
            ];
            match validate::well_mixed_oracle(y0, 0.5, 1.0, &k, 1.0, 1e-3) {
                Ok(r) => println!("PASS well_mixed_richardson: {:.3e}", r.richardson),
                Err(e) => {
                    println!("FAIL well_mixed_richardson: {e}");
                    all_pass = false;
                }
            }
            let delta = config.delta();
            let est = validate::monte_carlo_ball_measure(
                [
                    config.geometry.extents[0] / 2.0,
                    config.geometry.extents[1] / 2.0,
                    config.geometry.extents[2] / 2.0,
                ],
                delta,
                config.geometry.extents,
                200_000,
                config.outputs.seed,
            );
            let exact = 4.0 / 3.0 * std::f64::consts::PI * delta.powi(3);
            let dev = (est - exact).abs() / exact;
            let ok = dev < 0.01;
            println!(
                "{} ball_measure_interior: dev {:.3e}",
                if ok { "PASS" } else { "FAIL" },
                dev
            );
            all_pass &= ok;
            Ok(all_pass)
        }
    }
}
