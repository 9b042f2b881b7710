use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mas_aht::aht::{AhtError, AhtModel, CoefficientOptions, TermKind};
use mas_aht::config::{parse_number, ConfigError, ExperimentConfig, RawConfig};
use mas_aht::optimizer::{coarse_grid, emit_delay_list, full_grid, grid_search_adiabatic, grid_table_tsv};
use mas_aht::output::{fmt_f64, write_csv, CsvTable};
use mas_aht::pulse::tangential_sweep;
use mas_aht::quaternion::offset_sweep;
use mas_aht::recipes::{crystallites, run_recipe, RecipeError};
use mas_aht::tensor::EulerAngles;

#[derive(Parser)]
#[command(name = "mas-aht", version, about = "MAS NMR simulations and average Hamiltonian analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// experiment configuration file
    #[arg(long)]
    config: PathBuf,
    /// override, `section.key=value`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named figure recipe and write CSV tables
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        recipe: String,
        /// output directory (default: out/<recipe>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Effective Hamiltonian of the configured sequence for one crystallite
    Effective {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        order: u8,
        /// also print the frequency-tuple table
        #[arg(long)]
        dump_tuples: bool,
        /// crystallite Euler angles in degrees, `alpha,beta,gamma`
        #[arg(long, default_value = "0,0,0")]
        crystal: String,
    },
    /// Effective fields of the configured sequence over an offset grid
    EffectiveFields {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `spin=start:stop:count`, comma separated; spins are 1-based
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search of adiabatic RFDR sweep parameters
    OptimizeRfdr {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// block counts, `a..b` or a comma list
        #[arg(long, default_value = "1..10")]
        n_blocks: String,
        #[arg(long, conflicts_with = "full")]
        coarse: bool,
        #[arg(long)]
        full: bool,
        #[arg(long, default_value = "out/optimize_rfdr")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RecipeError> for Failure {
    fn from(e: RecipeError) -> Self {
        if e.exit_code() == 2 {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<AhtError> for Failure {
    fn from(e: AhtError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    for s in &args.sets {
        raw.apply_override(s)?;
    }
    Ok(raw.resolve()?)
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn parse_blocks(spec: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Config(format!("invalid --n-blocks '{spec}'"));
    let v: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if v.is_empty() || v.contains(&0) {
        return Err(bad());
    }
    Ok(v)
}

fn parse_crystal(s: &str) -> Result<EulerAngles<f64>, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| parse_number("crystal", x.trim()))
        .collect::<Result<_, _>>()?;
    if v.len() != 3 {
        return Err(Failure::Config("--crystal expects alpha,beta,gamma".into()));
    }
    Ok(EulerAngles::from_degrees(v[0], v[1], v[2]))
}

/// `spin=start:stop:count` entries; the grid is their Cartesian product.
fn parse_sweep(spec: &str, n_spins: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let bad = |m: &str| Failure::Config(format!("invalid --sweep '{spec}': {m}"));
    let mut axes: Vec<(usize, Vec<f64>)> = Vec::new();
    for part in spec.split(',') {
        let (q, range) = part.split_once('=').ok_or_else(|| bad("expected spin=start:stop:count"))?;
        let q: usize = q.trim().parse().map_err(|_| bad("spin index"))?;
        if q == 0 || q > n_spins {
            return Err(bad("spin index out of range"));
        }
        let f: Vec<&str> = range.split(':').collect();
        if f.len() != 3 {
            return Err(bad("expected start:stop:count"));
        }
        let a = parse_number("sweep", f[0])?;
        let b = parse_number("sweep", f[1])?;
        let n: usize = f[2].parse().map_err(|_| bad("count"))?;
        axes.push((q - 1, mas_aht::config::linspace(a, b, n)));
    }
    let mut grid = vec![vec![0.0; n_spins]];
    for (q, vals) in axes {
        grid = grid
            .iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut p = p.clone();
                    p[q] = *v;
                    p
                })
            })
            .collect();
    }
    Ok(grid)
}

fn simulate(cfg: &ConfigArgs, recipe: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let config = load(cfg)?;
    let result = run_recipe(recipe, &config)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(recipe));
    for p in result.write(&dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn effective(cfg: &ConfigArgs, order: u8, dump: bool, crystal: &str) -> Result<(), Failure> {
    let config = load(cfg)?;
    let cr = parse_crystal(crystal)?;
    let seq = config.build_sequence()?;
    let opts = CoefficientOptions { k_max: config.par.k_max, samples: None, tail_tol: config.par.tail_tol, auto_k: false };
    let mut model = AhtModel::general(&config.system, &seq, config.par.spin_rate, &opts)?;
    model.exact_tol = config.par.exact_tol;
    let threshold = config.par.near_threshold.unwrap_or(1000.0);
    let model = model.absorb_small_fields(threshold);
    let mut h = model.first_order(&cr)?;
    if order == 2 {
        let sp = model.spatial(&cr)?;
        let h2 = model.assemble_components(&sp, &|t| matches!(t.kind, TermKind::Shift { .. } | TermKind::Pair { .. }))
            .second_order(model.exact_tol)?;
        h = h.plus(&h2, 2);
    }
    println!("# order = {order}");
    println!("# tau_c_prime_s = {}", fmt_f64(h.tau_c_prime));
    for (q, r) in h.big_effective.iter().enumerate() {
        println!(
            "# spin{} omega_cw_hz = {} axis = {} {} {}",
            q + 1,
            fmt_f64(r.omega_cw),
            fmt_f64(r.axis[0]),
            fmt_f64(r.axis[1]),
            fmt_f64(r.axis[2])
        );
    }
    println!("row\tcol\tre_hz\tim_hz");
    let tau = std::f64::consts::TAU;
    for i in 0..h.matrix.nrows() {
        for j in 0..h.matrix.ncols() {
            let v = h.matrix[(i, j)];
            println!("{i}\t{j}\t{}\t{}", fmt_f64(v.re / tau), fmt_f64(v.im / tau));
        }
    }
    if dump {
        println!();
        print!("{}", model.tuple_dump(&cr, threshold)?);
    }
    Ok(())
}

fn effective_fields(cfg: &ConfigArgs, sweep: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let config = load(cfg)?;
    let seq = config.build_sequence()?;
    let ns = config.system.n_spins();
    let grid = parse_sweep(sweep, ns)?;
    let chans: Vec<&str> = config.system.spins.iter().map(|s| s.channel.as_str()).collect();
    let rows = offset_sweep(&seq, &chans, &grid).map_err(|e| Failure::Numerical(e.to_string()))?;
    let mut cols: Vec<String> = Vec::new();
    for q in 1..=ns {
        cols.push(format!("offset_{q}_hz"));
    }
    for q in 1..=ns {
        cols.extend([
            format!("omega_cw_{q}_hz"),
            format!("signed_omega_cw_{q}_hz"),
            format!("axis_x_{q}"),
            format!("axis_y_{q}"),
            format!("axis_z_{q}"),
        ]);
    }
    cols.extend(["hetero_metric_hz".to_string(), "dq_metric_hz".to_string()]);
    let mut t = CsvTable::new(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    for r in rows {
        let mut v = r.offsets.clone();
        for (rot, s) in r.rotations.iter().zip(&r.signed_omega_cw) {
            v.extend([rot.omega_cw, *s, rot.axis[0], rot.axis[1], rot.axis[2]]);
        }
        v.extend([r.hetero_metric, r.dq_metric]);
        t.push_values(&v);
    }
    let mut manifest = vec![("sweep".to_string(), sweep.to_string())];
    manifest.extend(config.manifest());
    match out {
        Some(p) => {
            write_csv(&p, &manifest, &t).map_err(|e| io(&p, e))?;
            println!("{}", p.display());
        }
        None => print!("{}", mas_aht::output::render_csv(&manifest, &t)),
    }
    Ok(())
}

fn optimize_rfdr(cfg: &ConfigArgs, n_blocks: &str, full: bool, out: &Path) -> Result<(), Failure> {
    let config = load(cfg)?;
    let ns = parse_blocks(n_blocks)?;
    let setup = mas_aht::optimizer::RfdrSetup {
        system: config.system.clone(),
        channel: config.channels()[0].clone(),
        spin_rate: config.par.spin_rate,
        pi_duration: p180(&config)?,
        pi_amplitude: 0.0,
        rho0: config.par.start_operator.clone(),
        detect: config.par.detect_operator.clone(),
        crystallites: crystallites(&config)?,
        grid: config.par.grid,
    };
    let setup = mas_aht::optimizer::RfdrSetup { pi_amplitude: rf(&config, setup.pi_duration)?, ..setup };
    let (sweep, xco) = if full { full_grid() } else { coarse_grid() };
    let rows = grid_search_adiabatic(&setup, &ns, &sweep, &xco).map_err(|e| Failure::Numerical(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let table = grid_table_tsv(&rows);
    let tp = out.join("adrfdr_opt.tsv");
    std::fs::write(&tp, &table).map_err(|e| io(&tp, e))?;
    print!("{table}");
    for r in &rows {
        let sch = tangential_sweep(r.n_blocks, r.tau_sweep, r.x_co)
            .map_err(|e| Failure::Config(e.to_string()))?;
        let list = emit_delay_list(&sch, setup.tau_r(), setup.pi_duration)
            .map_err(|e| Failure::Numerical(e.to_string()))?;
        let p = out.join(format!("delays_n{}.txt", r.n_blocks));
        std::fs::write(&p, list).map_err(|e| io(&p, e))?;
    }
    Ok(())
}

fn seq_value(config: &ExperimentConfig, key: &str) -> Result<Option<f64>, Failure> {
    Ok(config
        .sequence
        .as_ref()
        .and_then(|s| s.params.get(key))
        .map(|v| parse_number(key, v))
        .transpose()?)
}

fn p180(config: &ExperimentConfig) -> Result<f64, Failure> {
    Ok(seq_value(config, "p180")?.unwrap_or(5e-6))
}

fn rf(config: &ExperimentConfig, p: f64) -> Result<f64, Failure> {
    Ok(seq_value(config, "rf")?.unwrap_or(0.5 / p))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { cfg, recipe, out } => simulate(cfg, recipe, out.clone()),
        Command::Effective { cfg, order, dump_tuples, crystal } => effective(cfg, *order, *dump_tuples, crystal),
        Command::EffectiveFields { cfg, sweep, out } => effective_fields(cfg, sweep, out.clone()),
        Command::OptimizeRfdr { cfg, n_blocks, full, out, .. } => optimize_rfdr(cfg, n_blocks, *full, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical guard: {m}");
            ExitCode::from(3)
        }
    }
}
