//! CSV emission and run manifests for the command-line front end.
//!
//! Columns follow fixed schemas (units: energies in E_R, displacements in
//! units of the lattice spacing a, temporal pulse widths in units of T12,
//! rates in Hz, times in seconds). Floats are written in Rust's shortest
//! round-trip form, so identical runs produce byte-identical files. The
//! manifest records the resolved configuration, tool version, and content
//! hashes; re-running a manifest reproduces the outputs exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::coupling::{DelayPoint, DepthPoint, LossPoint, OptimizedPulse, ScanPoint};
use crate::echo::EchoTrace;
use crate::error::{Error, Result};
use crate::lattice::{BandStructure, LandauZenerRate};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn sha256_hex(data: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// One emitted file: path plus content hash, as recorded in the manifest.
#[derive(Clone, Debug)]
pub struct EmittedFile {
    pub path: PathBuf,
    pub sha256: String,
}

fn emit(path: PathBuf, contents: String) -> Result<EmittedFile> {
    write_file(&path, &contents)?;
    Ok(EmittedFile { sha256: sha256_hex(&contents), path })
}

/// `q,E1..En` rows over the Brillouin-zone grid.
pub fn bands_csv(bands: &BandStructure) -> String {
    let n_bands = bands.solutions()[0].num_bands();
    let mut out = String::from("q");
    for b in 1..=n_bands {
        out.push_str(&format!(",E{b}"));
    }
    out.push('\n');
    for sol in bands.solutions() {
        out.push_str(&format!("{}", sol.q()));
        for b in 1..=n_bands {
            out.push_str(&format!(",{}", sol.energy(b)));
        }
        out.push('\n');
    }
    out
}

/// `dx,P11,P12,loss` rows of a displacement sweep.
pub fn couple_csv(scan: &[ScanPoint]) -> String {
    let mut out = String::from("dx,P11,P12,loss\n");
    for p in scan {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.dx,
            p.result.p11(),
            p.result.p12(),
            p.result.loss_from_band(1)
        ));
    }
    out
}

/// `tau,P12,P11,loss` rows of a delay sweep.
pub fn delay_csv(scan: &[DelayPoint]) -> String {
    let mut out = String::from("tau,P12,P11,loss\n");
    for p in scan {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.tau,
            p.result.p12(),
            p.result.p11(),
            p.result.loss_from_band(1)
        ));
    }
    out
}

/// `family,A_pulse,W_pulse,P12` summary rows, one per optimized family.
pub fn optimize_csv(rows: &[(String, OptimizedPulse)]) -> String {
    let mut out = String::from("family,A_pulse,W_pulse,P12\n");
    for (family, opt) in rows {
        let width = opt
            .spec
            .width_scaled()
            .map(|w| format!("{w}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            family,
            opt.spec.amplitude(),
            width,
            opt.result.p12()
        ));
    }
    out
}

/// `s,family,A_opt,W_opt,P12_max,tau_min_opt` rows of a depth scan.
pub fn depth_csv(rows: &[(String, Vec<DepthPoint>)]) -> String {
    let mut out = String::from("s,family,A_opt,W_opt,P12_max,tau_min_opt\n");
    for (family, points) in rows {
        for p in points {
            let width = p
                .optimum
                .spec
                .width_scaled()
                .map(|w| format!("{w}"))
                .unwrap_or_default();
            let tau = p.tau_min_opt.map(|t| format!("{t}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.depth_s,
                family,
                p.optimum.spec.amplitude(),
                width,
                p.optimum.result.p12(),
                tau
            ));
        }
    }
    out
}

/// `dx,P11,P12,loss` rows of a loss-versus-coupling curve.
pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("dx,P11,P12,loss\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.dx, p.p11, p.p12, p.loss));
    }
    out
}

/// `t_s,p1` rows of a population trace.
pub fn echo_csv(trace: &EchoTrace) -> String {
    let mut out = String::from("t_s,p1\n");
    for (t, p) in trace.times.iter().zip(trace.p1.iter()) {
        out.push_str(&format!("{t},{p}\n"));
    }
    out
}

/// `n,rate_hz,lifetime_s` rows of Landau-Zener transitions.
pub fn lz_csv(rates: &[LandauZenerRate]) -> String {
    let mut out = String::from("n,rate_hz,lifetime_s\n");
    for r in rates {
        out.push_str(&format!("{},{},{}\n", r.band, r.rate_hz, r.lifetime_s));
    }
    out
}

/// Write one output file under the configured directory.
pub fn write_output(dir: &Path, name: &str, contents: String) -> Result<EmittedFile> {
    emit(dir.join(name), contents)
}

/// Write the run manifest next to the outputs: resolved config, tool
/// version, grid hash, and per-file content hashes. The manifest is itself
/// a valid configuration input (its `[config]` table), and contains no
/// timestamps, so a re-run reproduces every byte.
pub fn write_manifest(
    dir: &Path,
    subcommand: &str,
    config: &RunConfig,
    files: &[EmittedFile],
) -> Result<PathBuf> {
    let mut meta = toml::value::Table::new();
    meta.insert("tool".into(), toml::Value::String("washboard".into()));
    meta.insert(
        "version".into(),
        toml::Value::String(env!("CARGO_PKG_VERSION").into()),
    );
    meta.insert("subcommand".into(), toml::Value::String(subcommand.into()));
    meta.insert(
        "config_sha256".into(),
        toml::Value::String(sha256_hex(&config.to_toml())),
    );
    let mut outputs = Vec::new();
    for f in files {
        let mut entry = toml::value::Table::new();
        entry.insert(
            "path".into(),
            toml::Value::String(f.path.file_name().unwrap_or_default().to_string_lossy().into()),
        );
        entry.insert("sha256".into(), toml::Value::String(f.sha256.clone()));
        outputs.push(toml::Value::Table(entry));
    }
    meta.insert("outputs".into(), toml::Value::Array(outputs));

    let mut root = toml::value::Table::new();
    root.insert("meta".into(), toml::Value::Table(meta));
    root.insert(
        "config".into(),
        toml::Value::try_from(config).expect("config serializes"),
    );
    let text = toml::to_string_pretty(&toml::Value::Table(root)).expect("manifest serializes");
    let path = dir.join(format!("{subcommand}.manifest.toml"));
    write_file(&path, &text)?;
    Ok(path)
}
