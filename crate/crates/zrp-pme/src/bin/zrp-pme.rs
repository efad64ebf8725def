//! Command-line front end:
//! `zrp-pme <subcommand> --config <file> [--seed S] [--out DIR] [--threads T] [--plot-script]`
//!
//! Subcommands: hydro, equilibrium-stats, ldp-lower, gradient-flow,
//! dissipation-budget, martingale-check. The environment variable
//! `ZRP_PME_SEED` overrides the config seed; `--seed` overrides both.

use std::path::PathBuf;
use std::process::ExitCode;

use zrp_pme::experiments::config::{ChiRule, ExperimentConfig, Profile};
use zrp_pme::experiments::csv::{write_manifest, write_plot_script, Table};
use zrp_pme::experiments::{
    budget_table, density_path_table, dissipation_budget, equilibrium_stats, gradient_flow,
    gradient_flow_table, hydro, hydro_table, ldp_lower, ldp_table, martingale_check,
    martingale_table, BudgetParams, EquilibriumStatsParams, GradientFlowParams, HydroParams,
    LdpParams, MartingaleParams,
};

const USAGE: &str = "usage: zrp-pme <subcommand> --config <file> [--seed S] [--out DIR] [--threads T] [--plot-script]
subcommands: hydro | equilibrium-stats | ldp-lower | gradient-flow | dissipation-budget | martingale-check";

struct Cli {
    subcommand: String,
    config: PathBuf,
    seed: Option<u64>,
    out: PathBuf,
    threads: Option<usize>,
    plot_script: bool,
}

fn parse_cli() -> Result<Cli, String> {
    let mut args = std::env::args().skip(1);
    let subcommand = args.next().ok_or(USAGE.to_string())?;
    let mut config: Option<PathBuf> = None;
    let mut seed = None;
    let mut out = PathBuf::from("out");
    let mut threads = None;
    let mut plot_script = false;
    while let Some(a) = args.next() {
        match a.as_str() {
            "--config" => config = Some(args.next().ok_or("--config needs a path")?.into()),
            "--seed" => {
                seed = Some(
                    args.next()
                        .ok_or("--seed needs a value")?
                        .parse::<u64>()
                        .map_err(|e| format!("bad seed: {e}"))?,
                )
            }
            "--out" => out = args.next().ok_or("--out needs a path")?.into(),
            "--threads" => {
                threads = Some(
                    args.next()
                        .ok_or("--threads needs a value")?
                        .parse::<usize>()
                        .map_err(|e| format!("bad thread count: {e}"))?,
                )
            }
            "--plot-script" => plot_script = true,
            other => return Err(format!("unknown argument `{other}`\n{USAGE}")),
        }
    }
    Ok(Cli {
        subcommand,
        config: config.ok_or(format!("missing --config\n{USAGE}"))?,
        seed,
        out,
        threads,
        plot_script,
    })
}

fn resolve_seed(cli: &Cli, cfg: &ExperimentConfig, section: &str) -> u64 {
    if let Some(s) = cli.seed {
        return s;
    }
    if let Ok(env) = std::env::var("ZRP_PME_SEED") {
        if let Ok(s) = env.parse::<u64>() {
            return s;
        }
    }
    cfg.get_u64(section, "seed", 0xC0FFEE).unwrap_or(0xC0FFEE)
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main_inner() -> Result<(), String> {
    let cli = parse_cli()?;
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let cfg = ExperimentConfig::load(&cli.config).map_err(|e| e.to_string())?;
    let section = cli.subcommand.clone();
    let seed = resolve_seed(&cli, &cfg, &section);
    let tables: Vec<Table> = match section.as_str() {
        "hydro" => run_hydro(&cfg, seed).map_err(|e| e.to_string())?,
        "equilibrium-stats" => run_eq_stats(&cfg).map_err(|e| e.to_string())?,
        "ldp-lower" => run_ldp(&cfg, seed).map_err(|e| e.to_string())?,
        "gradient-flow" => run_gflow(&cfg).map_err(|e| e.to_string())?,
        "dissipation-budget" => run_budget(&cfg, seed).map_err(|e| e.to_string())?,
        "martingale-check" => run_martingale(&cfg, seed).map_err(|e| e.to_string())?,
        other => return Err(format!("unknown subcommand `{other}`\n{USAGE}")),
    };
    for t in &tables {
        let path = t.write_to(&cli.out).map_err(|e| e.to_string())?;
        println!("wrote {}", path.display());
    }
    write_manifest(&cli.out, &section, &cfg.canonical_text(), cfg.hash(), seed)
        .map_err(|e| e.to_string())?;
    if cli.plot_script {
        let refs: Vec<&Table> = tables.iter().collect();
        write_plot_script(&cli.out, &refs).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run_hydro(cfg: &ExperimentConfig, seed: u64) -> zrp_pme::Result<Vec<Table>> {
    let s = "hydro";
    let p = HydroParams {
        d: cfg.get_usize(s, "d", 1)?,
        alpha: cfg.get_f64(s, "alpha", 2.0)?,
        t_fin: cfg.get_f64(s, "t_fin", 0.05)?,
        n_values: cfg.get_usize_list(s, "n")?.unwrap_or(vec![16, 32, 64]),
        chi_rule: ChiRule::from_config(cfg, s)?,
        profile: Profile::from_config(cfg, s)?,
        replicas: cfg.get_usize(s, "replicas", 64)?,
        n_snap: cfg.get_usize(s, "n_snap", 16)?,
        pde_cells: cfg.get_usize(s, "pde_cells", 512)?,
        deterministic_init: cfg.get_bool(s, "deterministic_init", false)?,
        metric_k: cfg.get_usize(s, "metric_k", 16)?,
        error_exponent: match cfg.get(s, "error_exponent") {
            Some(_) => Some(cfg.get_f64(s, "error_exponent", 2.0)?),
            None => None,
        },
        seed,
    };
    let report = hydro(&p)?;
    for r in &report.rows {
        println!(
            "n = {:4}  chi = {:.3e}  s = {:.3}  L^a err = {:.6e} +- {:.1e}",
            r.n, r.chi, r.scaling_diag, r.err_lalpha.mean, r.err_lalpha.stderr
        );
    }
    Ok(vec![hydro_table(&report)])
}

fn run_eq_stats(cfg: &ExperimentConfig) -> zrp_pme::Result<Vec<Table>> {
    let s = "equilibrium-stats";
    let p = EquilibriumStatsParams {
        alpha: cfg.get_f64(s, "alpha", 2.0)?,
        chis: cfg
            .get_f64_list(s, "chi")?
            .unwrap_or(vec![1e-1, 1e-2, 1e-3, 1e-4]),
        a: cfg.get_f64(s, "a", 0.5)?,
        b: cfg.get_f64(s, "b", 2.0)?,
        rhos: cfg.get_f64_list(s, "rho")?.unwrap_or(vec![0.5, 1.0, 2.0]),
        cgf_n: cfg.get_usize(s, "cgf_n", 256)?,
        cgf_amp: cfg.get_f64(s, "cgf_amp", 0.5)?,
    };
    let r = equilibrium_stats(&p)?;
    println!(
        "partition rows: {}, moments rows: {}, cgf rows: {}",
        r.partition.rows.len(),
        r.moments.rows.len(),
        r.cgf.rows.len()
    );
    Ok(vec![r.partition, r.moments, r.cgf])
}

fn run_ldp(cfg: &ExperimentConfig, seed: u64) -> zrp_pme::Result<Vec<Table>> {
    let s = "ldp-lower";
    let p = LdpParams {
        alpha: cfg.get_f64(s, "alpha", 2.0)?,
        n: cfg.get_usize(s, "n", 128)?,
        chi: cfg.get_f64(s, "chi", 1.0 / (128.0 * 128.0))?,
        rho: cfg.get_f64(s, "rho", 1.0)?,
        u0: Profile::from_config(cfg, s)?,
        tilt_eps: cfg.get_f64(s, "tilt_eps", 0.2)?,
        tilt_wave: cfg.get_usize(s, "tilt_wave", 1)?,
        t_fin: cfg.get_f64(s, "t_fin", 5e-4)?,
        n_snap: cfg.get_usize(s, "n_snap", 8)?,
        replicas: cfg.get_usize(s, "replicas", 256)?,
        trunc: cfg.get_f64(s, "trunc", 8.0)?,
        pde_cells: cfg.get_usize(s, "pde_cells", 512)?,
        pde_snaps: cfg.get_usize(s, "pde_snaps", 64)?,
        seed,
    };
    let r = ldp_lower(&p)?;
    println!(
        "target = {:.6e}  mean = {:.6e} +- {:.1e}  gap = {:.2e}  in CI: {}",
        r.target_total,
        r.total.mean,
        r.total.stderr,
        r.gap(),
        r.total_in_ci()
    );
    Ok(vec![ldp_table(&r)])
}

fn run_gflow(cfg: &ExperimentConfig) -> zrp_pme::Result<Vec<Table>> {
    let s = "gradient-flow";
    let tilt_eps = cfg.get_f64(s, "tilt_eps", 0.0)?;
    let p = GradientFlowParams {
        alpha: cfg.get_f64(s, "alpha", 2.0)?,
        rho: cfg.get_f64(s, "rho", 1.0)?,
        u0: Profile::from_config(cfg, s)?,
        tilt: if tilt_eps != 0.0 {
            Some((tilt_eps, cfg.get_usize(s, "tilt_wave", 1)?))
        } else {
            None
        },
        t_fin: cfg.get_f64(s, "t_fin", 0.02)?,
        pde_cells: cfg.get_usize(s, "pde_cells", 256)?,
        path_nodes: cfg.get_usize(s, "path_nodes", 64)?,
        k_max: cfg.get_usize(s, "k_max", 8)?,
    };
    let r = gradient_flow(&p)?;
    println!("{}", r.rate.to_text());
    println!(
        "relative residual = {:.3e}, reversal gap = {:.3e}",
        r.relative_residual, r.reversal_gap
    );
    let mut tables = vec![gradient_flow_table(&r)];
    if cfg.get_bool(s, "export_path", false)? {
        tables.push(density_path_table("gradient_flow_path", &r.path_times, &r.path_fields));
    }
    Ok(tables)
}

fn run_budget(cfg: &ExperimentConfig, seed: u64) -> zrp_pme::Result<Vec<Table>> {
    let s = "dissipation-budget";
    let p = BudgetParams {
        d: cfg.get_usize(s, "d", 1)?,
        alpha: cfg.get_f64(s, "alpha", 2.0)?,
        n_values: cfg.get_usize_list(s, "n")?.unwrap_or(vec![32, 64, 128]),
        chi_rule: ChiRule::from_config(cfg, s)?,
        rho: cfg.get_f64(s, "rho", 1.0)?,
        t_fin: cfg.get_f64(s, "t_fin", 1e-3)?,
        n_snap: cfg.get_usize(s, "n_snap", 8)?,
        replicas: cfg.get_usize(s, "replicas", 64)?,
        seed,
    };
    let r = dissipation_budget(&p)?;
    println!("log-log slope of Int D vs n^2 chi: {:.3}", r.loglog_slope);
    let mut tables = vec![budget_table(&r)];
    let mut surr = Table::new("budget_surrogate", &["t", "mean_surrogate"]);
    for (t, v) in r.surrogate_times.iter().zip(&r.surrogate_means) {
        surr.push(vec![*t, *v]);
    }
    tables.push(surr);
    Ok(tables)
}

fn run_martingale(cfg: &ExperimentConfig, seed: u64) -> zrp_pme::Result<Vec<Table>> {
    let s = "martingale-check";
    let p = MartingaleParams {
        alpha: cfg.get_f64(s, "alpha", 2.0)?,
        n: cfg.get_usize(s, "n", 128)?,
        chi: cfg.get_f64(s, "chi", 1.0 / (128.0 * 128.0))?,
        rho: cfg.get_f64(s, "rho", 1.0)?,
        t_fin: cfg.get_f64(s, "t_fin", 2e-4)?,
        n_snap: cfg.get_usize(s, "n_snap", 4)?,
        waves: cfg.get_usize_list(s, "waves")?.unwrap_or(vec![1, 2, 3, 4, 5]),
        replicas: cfg.get_usize(s, "replicas", 200)?,
        seed,
    };
    let rows = martingale_check(&p)?;
    for r in &rows {
        println!(
            "wave {}: mean = {:+.3e} (z = {:.2}), var/bound = {:.3}",
            r.wave,
            r.final_residual.mean,
            r.zscore,
            r.variance / r.qv_bound
        );
    }
    Ok(vec![martingale_table(&rows)])
}
