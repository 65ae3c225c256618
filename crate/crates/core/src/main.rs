use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use myopinn::config::RunConfig;
use myopinn::io::{self, CurveDataset, MapFile};
use myopinn::kinetics::{to_blood_units, ConversionConstants};
use myopinn::maps::{KineticMaps, Param, VolumeDims};
use myopinn::metrics::{compare_maps, write_table};
use myopinn::phantom::{generate_dro, GammaVariateAif, PhantomConfig};
use myopinn::pinn::{self, Variant};
use myopinn::{nlls, Error};

/// Perfusion quantification with physics-informed networks and NLLS.
#[derive(Parser)]
#[command(name = "myopinn", version)]
struct Cli {
    /// Worker threads for per-pixel parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a digital reference phantom.
    GenDro {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Signal-to-noise ratio; `inf` disables noise.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Small 4 x 4 block phantom (ve = 0.2, PS = 1.5) with this block size.
        #[arg(long)]
        mini: Option<usize>,
        #[arg(long)]
        aif_onset: Option<f64>,
        #[arg(long)]
        aif_alpha: Option<f64>,
        #[arg(long)]
        aif_beta: Option<f64>,
        /// Peak AIF concentration (mM).
        #[arg(long)]
        aif_peak: Option<f64>,
        /// Also export the curves as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fit kinetic parameter maps to a dataset (.pqd) or curve CSV.
    Fit {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the PINN iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Also export the maps as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score map files against a dataset's ground truth.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        est: Vec<PathBuf>,
        #[arg(long)]
        gt_dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render one parameter map (from a map file or a dataset's ground truth) as PGM or PNG.
    Render {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        param: Param,
        #[arg(long)]
        out: PathBuf,
        /// Display range `min,max`.
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
        range: Option<(f64, f64)>,
    },
    /// Convert plasma flow/volume to blood flow/volume.
    Convert {
        #[arg(long)]
        fp: f64,
        #[arg(long)]
        vp: Option<f64>,
        #[arg(long, default_value_t = 0.45)]
        hct: f64,
        #[arg(long, default_value_t = 1.05)]
        rho: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    #[value(name = "pinn-2cxm")]
    Pinn2cxm,
    #[value(name = "pinn-mesh")]
    PinnMesh,
    #[value(name = "pinn-reduced")]
    PinnReduced,
    #[value(name = "pinn-combined")]
    PinnCombined,
    Nlls,
}

impl Method {
    fn variant(self) -> Option<Variant> {
        match self {
            Method::Pinn2cxm => Some(Variant::TwoCxm),
            Method::PinnMesh => Some(Variant::TwoCxmMesh),
            Method::PinnReduced => Some(Variant::Reduced),
            Method::PinnCombined => Some(Variant::Combined),
            Method::Nlls => None,
        }
    }

    fn name(self) -> &'static str {
        self.variant().map(Variant::method_name).unwrap_or("nlls")
    }
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalFailure { .. } => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::GenDro { out, config, snr, seed, mini, aif_onset, aif_alpha, aif_beta, aif_peak, csv } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(b) = mini {
                let base = cfg.phantom.clone();
                cfg.phantom = PhantomConfig { aif: base.aif, snr_mode: base.snr_mode, ..PhantomConfig::mini(b, base.snr, base.seed) };
            }
            if let Some(s) = snr {
                cfg.phantom.snr = Some(s);
            }
            let a = cfg.phantom.aif;
            if aif_onset.is_some() || aif_alpha.is_some() || aif_beta.is_some() || aif_peak.is_some() {
                cfg.phantom.aif = GammaVariateAif::with_peak(
                    aif_onset.unwrap_or(a.onset),
                    aif_alpha.unwrap_or(a.alpha),
                    aif_beta.unwrap_or(a.beta),
                    aif_peak.unwrap_or_else(|| a.peak_value()),
                )?;
            }
            let cfg = cfg.resolved();
            cfg.phantom.validate()?;
            let dro = generate_dro(&cfg.phantom)?;
            let ds = CurveDataset::from_dro(&dro)?;
            io::write_dataset(&out, &ds)?;
            if let Some(p) = csv {
                io::write_curves_csv(create(&p)?, &ds.grid, &ds.aif, &ds.curves)?;
            }
            let d = ds.dims;
            println!("wrote {}: {} x {} x {} pixels, {} time points, seed {}", out.display(), d.nx, d.ny, d.nz, ds.grid.n, cfg.phantom.seed);
            Ok(())
        }
        Command::Fit { method, input, out, config, seed, iterations, csv } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(n) = iterations {
                cfg.pinn.iterations = n;
            }
            let cfg = cfg.resolved();
            let ds = read_curves(&input)?;
            let maps = match method.variant() {
                Some(variant) => {
                    let pcfg = pinn::PinnConfig { variant, ..cfg.pinn.clone() };
                    pcfg.validate()?;
                    let fit = pinn::fit_volume(ds.dims, &ds.grid, &ds.aif, &ds.curves, &pcfg)?;
                    for (z, s) in fit.slices.iter().enumerate() {
                        let path = history_path(&out, z, fit.slices.len());
                        s.write_history_csv(create(&path)?)?;
                        println!("slice {z}: {} iterations in {:.1?}, history in {}", pcfg.iterations, s.duration, path.display());
                    }
                    fit.maps
                }
                None => {
                    cfg.nlls.validate()?;
                    let aif = myopinn::kinetics::ConcentrationSeries::new(ds.grid, ds.aif.clone())?;
                    let fit = nlls::fit_volume(ds.dims, &ds.curves, &aif, &cfg.nlls)?;
                    let mut counts = [0usize; 3];
                    for s in &fit.status {
                        counts[s.code() as usize] += 1;
                    }
                    println!("nlls: {} converged, {} hit max iterations, {} degenerate", counts[0], counts[1], counts[2]);
                    fit.maps
                }
            };
            let echo = effective_config(&cfg, method)?;
            let seed = match method.variant() {
                Some(_) => cfg.pinn.seed,
                None => cfg.nlls.seed,
            };
            let file = MapFile::new(&maps, method.name(), echo, seed);
            io::write_maps(&out, &file)?;
            if let Some(p) = csv {
                io::write_maps_csv(create(&p)?, &file.maps)?;
            }
            println!("wrote {} ({})", out.display(), method.name());
            Ok(())
        }
        Command::Eval { est, gt_dataset, out, config } => {
            let cfg = load_config(config.as_deref(), None)?;
            let ds = io::read_dataset(&gt_dataset)?;
            let gt = ds.truth.ok_or_else(|| Error::InvalidInput(format!("{} has no ground-truth maps", gt_dataset.display())))?;
            let mut rows = Vec::new();
            for p in &est {
                let m = io::read_maps(p)?;
                let cmp = compare_maps(&m.maps, &gt, &cfg.ssim.options())?;
                rows.push((m.method, cmp));
            }
            write_table(create(&out)?, &rows)?;
            write_table(std::io::stdout().lock(), &rows)?;
            Ok(())
        }
        Command::Render { maps, param, out, range } => {
            let (m, label) = read_any_maps(&maps)?;
            let img = io::render(m.map(param), m.dims, range)?;
            if img.degenerate {
                eprintln!("warning: {param} map has an empty display range; writing a uniform mid-gray image");
            }
            let png = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if png {
                img.write_png(&out)?;
            } else {
                img.write_pgm(&out)?;
            }
            let side = img.write_sidecar(&out, &format!("{param} ({label})"))?;
            println!("wrote {} ({} x {}), scaling in {}", out.display(), img.width, img.height, side.display());
            Ok(())
        }
        Command::Convert { fp, vp, hct, rho } => {
            let consts = ConversionConstants::new(hct, rho)?;
            let (fb, vb) = to_blood_units(fp, vp.unwrap_or(0.0), &consts)?;
            println!("Fb = {fb:.4} mL/min/g");
            if vp.is_some() {
                println!("vb = {vb:.4} mL/g");
            }
            Ok(())
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `min,max`")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(lo)?, num(hi)?))
}

fn create(path: &Path) -> Result<fs::File, Error> {
    fs::File::create(path).map_err(io::with_path(path))
}

fn history_path(out: &Path, z: usize, slices: usize) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    if slices > 1 {
        s.push(format!(".z{z}"));
    }
    s.push(".history.csv");
    PathBuf::from(s)
}

/// Effective settings of `method` as TOML, including the derived seed.
fn effective_config(cfg: &RunConfig, method: Method) -> Result<String, Error> {
    let body = match method.variant() {
        Some(v) => toml::to_string(&pinn::PinnConfig { variant: v, ..cfg.pinn.clone() }),
        None => toml::to_string(&cfg.nlls),
    }
    .map_err(|e| Error::InvalidInput(format!("cannot serialize config: {e}")))?;
    Ok(format!("method = \"{}\"\nglobal_seed = {}\n\n{body}", method.name(), cfg.seed))
}

/// A `.csv` input becomes a single-row volume of its pixel columns.
fn read_curves(path: &Path) -> Result<CurveDataset, Error> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let c = io::read_curves_csv(fs::File::open(path).map_err(io::with_path(path))?)?;
        let meta = format!("source = {:?}\n", path.display().to_string());
        return CurveDataset::new(VolumeDims::new(c.pixels, 1, 1), c.grid, &c.aif, &c.curves, None, meta);
    }
    io::read_dataset(path)
}

fn read_any_maps(path: &Path) -> Result<(KineticMaps, String), Error> {
    let bytes = fs::read(path).map_err(io::with_path(path))?;
    if bytes.starts_with(io::DATASET_MAGIC) {
        let ds = io::decode_dataset(&bytes)?;
        let t = ds.truth.ok_or_else(|| Error::InvalidInput(format!("{} has no ground-truth maps", path.display())))?;
        Ok((t, "ground truth".into()))
    } else {
        let m = io::decode_maps(&bytes)?;
        Ok((m.maps, m.method))
    }
}
