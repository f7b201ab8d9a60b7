//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use decoybound::channel::observables;
use decoybound::config::{preset, LossGrid, RunConfig, TablesSection};
use decoybound::decoy::{
    build_bound_lp, build_yield_lp, photon_bounds, Direction, RefYields,
};
use decoybound::error::{Error, Result};
use decoybound::inner::InnerProductBounds;
use decoybound::model::{EpsilonMode, Intensity, SettingSequence};
use decoybound::skr::{csv_row, sweep, CSV_HEADER};
use decoybound::tables::{
    compose_source, derive_epsilons, ideal_overlap, qubit_overlap, SubTable, TableSet,
};
use decoybound::virt::{decompose, zeta_weights};

use crate::manifest::{hash_file, sha256_hex, RunManifest};

fn input_err(msg: String) -> Error {
    Error::Config(vec![msg])
}

/// Loads either --config or --preset, exactly one of them.
fn load_config(config: Option<&Path>, preset_name: Option<&str>) -> Result<RunConfig> {
    match (config, preset_name) {
        (Some(path), None) => RunConfig::load(path),
        (None, Some(name)) => preset(name).ok_or_else(|| {
            input_err(format!(
                "unknown preset {name:?}; available: {}",
                decoybound::config::PRESET_NAMES.join(", ")
            ))
        }),
        (None, None) => Err(input_err("one of --config or --preset is required".into())),
        (Some(_), Some(_)) => Err(input_err("--config and --preset are exclusive".into())),
    }
}

/// Maximum absolute per-pattern deviation of one table row from its mean.
fn row_deviation_summary(table: &SubTable) -> Vec<(String, f64)> {
    let labels: &[&str] = match table.kind {
        decoybound::tables::TableKind::ImIntensity => &["omega", "nu", "mu"],
        decoybound::tables::TableKind::SiIntensity => &["Z", "X"],
        _ => &["0", "1", "plus"],
    };
    labels
        .iter()
        .enumerate()
        .map(|(ri, label)| {
            let mean = table.row_mean(ri);
            let max_dev = (0..table.num_cols())
                .map(|c| (table.cell(ri, c) / mean - 1.0).abs())
                .fold(0.0f64, f64::max);
            (label.to_string(), max_dev)
        })
        .collect()
}

pub fn characterize(tables_dir: &Path, config: &Path, out: &Path) -> Result<usize> {
    let cfg = RunConfig::load(config)?;
    cfg.protocol.validate()?;
    let tables = TableSet::load_dir(tables_dir)?;
    let marg = cfg
        .tables
        .as_ref()
        .map(|t| t.marginalization)
        .unwrap_or_default();
    let floors = cfg
        .tables
        .as_ref()
        .map(|t| t.sidechannel_floor.clone())
        .filter(|f| !f.is_empty())
        .unwrap_or_else(|| vec![0.0; cfg.protocol.xi + 1]);
    let src = compose_source(&tables, &cfg.protocol, marg)?;
    let eps = derive_epsilons(&src, &cfg.protocol, &floors)?;
    eps.check_coarse_dominates_fine()?;
    std::fs::write(out, serde_json::to_string(&eps)?)?;

    println!("wrote parameter report to {}", out.display());
    println!("-- per-table max |deviation from row mean|, grouped by pattern --");
    for (name, table) in [
        ("IM-intensity", &tables.im),
        ("SI-intensity", &tables.si),
        ("OS-state", &tables.os_state),
        ("OS-intensity", &tables.os_intensity),
    ] {
        for (label, dev) in row_deviation_summary(table) {
            println!("{name:<13} row {label:<5} max dev {dev:.3e}");
        }
    }
    // Pattern-index profile of the signal row, index = 9 a_{k-1} + 3 a_{k-2} + a_{k-3}.
    let mu_row = Intensity::Mu.index();
    let mean = tables.im.row_mean(mu_row);
    let profile: Vec<String> = (0..27)
        .map(|c| format!("{:+.2e}", tables.im.cell(mu_row, c) / mean - 1.0))
        .collect();
    println!("signal-intensity deviation by pattern index 0..26:");
    println!("  {}", profile.join(" "));

    // Table-implied flat-model angles, for configs that want tight SPF values.
    let lam = |r: usize| {
        (0..tables.os_state.num_cols())
            .map(|c| tables.os_state.cell(r, c))
            .sum::<f64>()
            / tables.os_state.num_cols() as f64
    };
    let (l0, l1, lp) = (lam(0), lam(1), lam(2));
    let d1 = 2.0 * qubit_overlap(l0, l1).asin();
    let d2 = 4.0 * qubit_overlap(l0, lp).acos() - std::f64::consts::PI;
    println!("table-implied flat-model angles: delta1 = {d1:.6}, delta2 = {d2:.6}");
    println!(
        "coarse summary: bit intensity imbalance {:?}, delta intervals {:?}",
        eps.coarse.bit_int, eps.coarse.delta
    );
    let ideal = ideal_overlap(0, &cfg.protocol);
    println!(
        "flat-model (0,1) overlap at configured angles: {ideal:.6} (table average {:.6})",
        qubit_overlap(l0, l1)
    );
    Ok(0)
}

pub struct SkrArgs {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub tables: Option<PathBuf>,
    pub loss: Option<String>,
    pub mode: Option<String>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub paranoid_phi: bool,
}

pub fn skr(args: SkrArgs) -> Result<usize> {
    let started = std::time::Instant::now();
    let mut cfg = load_config(args.config.as_deref(), args.preset.as_deref())?;
    if let Some(dir) = &args.tables {
        match &mut cfg.tables {
            Some(t) => t.dir = dir.clone(),
            None => {
                cfg.tables = Some(TablesSection {
                    dir: dir.clone(),
                    marginalization: Default::default(),
                    sidechannel_floor: vec![],
                })
            }
        }
    }
    if let Some(loss) = &args.loss {
        cfg.channel.loss_db = LossGrid::parse_cli(loss)?;
    }
    if let Some(mode) = &args.mode {
        cfg.protocol.mode = match mode.as_str() {
            "fine" => EpsilonMode::Fine,
            _ => EpsilonMode::Coarse,
        };
    }
    if let Some(out) = &args.out {
        cfg.output.csv = Some(out.clone());
    }
    cfg.validate()?;
    let out_path = cfg
        .output
        .csv
        .clone()
        .unwrap_or_else(|| PathBuf::from("skr_out.csv"));

    let (src, eps) = cfg.resolve_inputs()?;
    let losses = cfg.channel.loss_db.points()?;
    let chan = cfg.channel.channel();
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Search(format!("thread pool: {e}")))?;

    let mut warnings = Vec::new();
    let points = pool.install(|| {
        sweep(
            &cfg.protocol,
            &chan,
            &losses,
            &src,
            &eps,
            cfg.output.clock_hz,
            args.paranoid_phi,
            &mut warnings,
        )
    })?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for p in &points {
        csv.push_str(&csv_row(p));
        csv.push('\n');
    }
    std::fs::write(&out_path, &csv)?;

    if let Some(dump) = &cfg.output.dump_observables {
        let mut text = String::new();
        for &loss in &losses {
            let obs = observables(&src, &chan, chan.eta(loss), &cfg.protocol)?;
            for line in obs.to_csv().lines().skip(if text.is_empty() { 0 } else { 1 }) {
                if text.is_empty() && line.starts_with("window") {
                    text.push_str("loss_db,");
                    text.push_str(line);
                    text.push('\n');
                    continue;
                }
                text.push_str(&format!("{loss},{line}\n"));
            }
        }
        std::fs::write(dump, text)?;
    }

    let flagged_points = points.iter().filter(|p| p.flagged_sequences > 0).count();
    let mut table_sha256 = BTreeMap::new();
    if let Some(t) = &cfg.tables {
        for name in ["im.csv", "si.csv", "os_state.csv", "os_intensity.csv"] {
            let p = t.dir.join(name);
            if p.exists() {
                table_sha256.insert(name.to_string(), hash_file(&p)?);
            }
        }
    }
    let manifest = RunManifest {
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        mode: match cfg.protocol.mode {
            EpsilonMode::Fine => "fine".into(),
            EpsilonMode::Coarse => "coarse".into(),
        },
        config_sha256: sha256_hex(&serde_json::to_vec(&cfg)?),
        table_sha256,
        wall_ms: started.elapsed().as_millis(),
        flagged_points,
        warnings: warnings.clone(),
    };
    let manifest_path = out_path.with_extension("manifest.json");
    manifest.write(&manifest_path)?;
    println!(
        "wrote {} points to {} (manifest {})",
        points.len(),
        out_path.display(),
        manifest_path.display()
    );
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(flagged_points)
}

struct SweepCsv {
    loss: Vec<f64>,
    per_pulse: Vec<f64>,
    bps: Vec<f64>,
}

fn read_sweep_csv(path: &Path) -> Result<SweepCsv> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| input_err(format!("{}: empty file", path.display())))?;
    if header != CSV_HEADER {
        return Err(input_err(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut out = SweepCsv {
        loss: Vec::new(),
        per_pulse: Vec::new(),
        bps: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(input_err(format!(
                "{} line {}: expected 9 fields",
                path.display(),
                i + 2
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| input_err(format!("{} line {}: {e}", path.display(), i + 2)))
        };
        out.loss.push(parse(fields[0])?);
        out.per_pulse.push(parse(fields[1])?);
        out.bps.push(parse(fields[2])?);
    }
    Ok(out)
}

/// Infers the clock from bps/per-pulse and checks the arithmetic identity
/// holds on every row.
fn check_clock_identity(csv: &SweepCsv, name: &str) -> Result<Option<f64>> {
    let mut clock = None;
    for i in 0..csv.loss.len() {
        if csv.per_pulse[i] > 0.0 {
            let c = csv.bps[i] / csv.per_pulse[i];
            match clock {
                None => clock = Some(c),
                Some(prev) => {
                    if ((c - prev) / prev).abs() > 1e-9 {
                        return Err(input_err(format!(
                            "{name}: bps is not per-pulse times a fixed clock \
                             (row {i}: {c} vs {prev})"
                        )));
                    }
                }
            }
        }
    }
    Ok(clock)
}

pub fn compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<usize> {
    let ca = read_sweep_csv(a)?;
    let cb = read_sweep_csv(b)?;
    if ca.loss.len() != cb.loss.len() {
        return Err(input_err(format!(
            "loss grids differ in length: {} vs {}",
            ca.loss.len(),
            cb.loss.len()
        )));
    }
    for i in 0..ca.loss.len() {
        if ca.loss[i] != cb.loss[i] {
            return Err(input_err(format!(
                "loss grids differ first at index {i}: {} vs {}",
                ca.loss[i], cb.loss[i]
            )));
        }
    }
    let clock_a = check_clock_identity(&ca, "A")?;
    let clock_b = check_clock_identity(&cb, "B")?;
    println!(
        "clock A = {} Hz, clock B = {} Hz",
        clock_a.map_or("n/a".into(), |c| format!("{c:.6e}")),
        clock_b.map_or("n/a".into(), |c| format!("{c:.6e}"))
    );
    println!("loss_db  bps_A        bps_B        ratio_B/A");
    let mut table = String::from("loss_db,ratio\n");
    let mut at_10 = None;
    for i in 0..ca.loss.len() {
        let ratio = if ca.bps[i] > 0.0 {
            format!("{:.6}", cb.bps[i] / ca.bps[i])
        } else if cb.bps[i] > 0.0 {
            "inf".to_string()
        } else {
            "undefined".to_string()
        };
        println!(
            "{:7.2}  {:.5e}  {:.5e}  {ratio}",
            ca.loss[i], ca.bps[i], cb.bps[i]
        );
        table.push_str(&format!("{},{ratio}\n", ca.loss[i]));
        let d = (ca.loss[i] - 10.0).abs();
        let better = match &at_10 {
            None => true,
            Some((best, _)) => d < *best,
        };
        if better {
            at_10 = Some((d, ratio.clone()));
        }
    }
    if let Some((_, ratio)) = at_10 {
        println!("throughput ratio near 10 dB: {ratio}");
    }
    if let Some(path) = out {
        std::fs::write(path, table)?;
    }
    Ok(0)
}

pub struct DumpArgs {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub tables: Option<PathBuf>,
    pub loss: f64,
    pub sequence: u32,
    pub family: usize,
    pub direction: Option<String>,
    pub out: Option<PathBuf>,
}

pub fn dump_lp(args: DumpArgs) -> Result<usize> {
    let mut cfg = load_config(args.config.as_deref(), args.preset.as_deref())?;
    if let Some(dir) = &args.tables {
        cfg.tables = Some(TablesSection {
            dir: dir.clone(),
            marginalization: Default::default(),
            sidechannel_floor: vec![],
        });
    }
    cfg.validate()?;
    if !(1..=5).contains(&args.family) {
        return Err(input_err(format!(
            "--family must be 1..=5, got {}",
            args.family
        )));
    }
    let (src, eps) = cfg.resolve_inputs()?;
    let pcfg = &cfg.protocol;
    let n_past = decoybound::model::NUM_SETTINGS.pow(pcfg.xi as u32) as u32;
    if args.sequence >= n_past {
        return Err(input_err(format!(
            "--sequence {} out of range (0..{n_past})",
            args.sequence
        )));
    }
    let chan = cfg.channel.channel();
    let eta = chan.eta(args.loss);
    let stats = observables(&src, &chan, eta, pcfg)?;
    let bounds = photon_bounds(&src, pcfg)?;
    let past = SettingSequence::unpack(args.sequence, pcfg.xi);
    let inner = InnerProductBounds::compute(&eps, pcfg, &past)?;
    let refs = RefYields::compute(pcfg, eta, chan.dark_count);

    let problem = if args.family == 5 {
        build_yield_lp(args.sequence, &stats, &bounds, &inner, &refs, pcfg)?
    } else {
        // The zeta weights need the auxiliary phase; the dump uses phase 0.
        let dec = decompose(pcfg.delta1, pcfg.delta2, 0.0, pcfg)?;
        let w = zeta_weights(&dec, pcfg);
        let j = args.family - 1;
        let Some(zeta) = &w.zeta[j] else {
            return Err(input_err(format!(
                "family {} is dropped (its S factor vanishes) at phase 0",
                args.family
            )));
        };
        let dir = match args.direction.as_deref() {
            Some("max") => Direction::Max,
            Some("min") => Direction::Min,
            _ => {
                if w.s.s[j] >= 0.0 {
                    Direction::Max
                } else {
                    Direction::Min
                }
            }
        };
        build_bound_lp(zeta, j, args.sequence, &stats, &bounds, &inner, &refs, pcfg, dir)?
    };
    let text = problem.dump();
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(0)
}
