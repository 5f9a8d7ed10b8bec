use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use morphforge::image_io::{self, ElementType};
use morphforge::metrics::write_distance_csv;
use morphforge::morph::DEFAULT_JACOBIAN_THRESHOLD;
use morphforge::signals::{read_series_csv, write_series_csv};
use morphforge::{
    accuracy_report, average_components, cfc_filter, classify_biofidelity, cora_rate, distance_map, invert_field,
    morph_mesh, morph_report, register_demons, scaled_jacobian, warp_binary, warp_scalar, Cfc, CoraParams, CoraResult,
    DemonsParams, MorphMask, TimeSeries, VoxelizeParams,
};
use serde::Serialize;

use crate::io::{image_type, read_mesh, write_surface, write_volume, Mesh};
use crate::{write_json, DemonsArgs, NumericalFailure};

#[derive(Args)]
pub struct VoxelizeArgs {
    /// Closed STL surface.
    pub mesh: PathBuf,
    /// Isotropic voxel size (mm).
    #[arg(long, default_value_t = 2.0)]
    pub spacing: f64,
    /// Empty voxels around the mesh bounds.
    #[arg(long, default_value_t = 4)]
    pub padding: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output image header (.mhd).
    #[arg(short, long)]
    pub output: PathBuf,
}

fn check_spacing(s: f64) -> Result<()> {
    ensure!(s > 0.0 && s.is_finite(), "--spacing must be a positive number, got {s}");
    Ok(())
}

pub fn voxelize(a: VoxelizeArgs) -> Result<()> {
    check_spacing(a.spacing)?;
    let mesh = morphforge::read_stl(&a.mesh)?;
    let params = VoxelizeParams {
        spacing: [a.spacing; 3],
        padding: a.padding,
        seed: a.seed,
    };
    let img = morphforge::voxelize(&mesh, &params).with_context(|| format!("voxelizing {}", a.mesh.display()))?;
    image_io::write_binary_image(&img, &a.output)?;
    let b = mesh.bounds().expect("non-empty mesh");
    println!("occupied: {}", img.count());
    println!("grid: {}", img.grid());
    println!(
        "bounds: [{}, {}, {}] .. [{}, {}, {}]",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    );
    Ok(())
}

#[derive(Args)]
pub struct RegisterArgs {
    /// Fixed binary image; the field lives on its grid.
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    /// Output displacement field (.mhd).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Optional JSON registration report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub demons: DemonsArgs,
}

pub fn register(a: RegisterArgs) -> Result<()> {
    let fixed = image_io::read_binary_image(&a.fixed)?;
    let moving = image_io::read_binary_image(&a.moving)?;
    let params = a.demons.apply(DemonsParams::for_spacing(fixed.grid().min_spacing()));
    let (field, report) = register_demons(&fixed, &moving, &params)?;
    if !report.final_mse.is_finite() {
        return Err(NumericalFailure("registration produced a non-finite similarity".into()).into());
    }
    image_io::write_field(&field, &a.output)?;
    if let Some(p) = &a.report {
        write_json(&report, p)?;
    }
    println!("mse: {:.6e} -> {:.6e}", report.initial_mse, report.final_mse);
    Ok(())
}

#[derive(Args)]
pub struct InvertArgs {
    pub field: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    /// Stop when the largest update is below this many voxels.
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
    /// Optional JSON with residual statistics.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

pub fn invert(a: InvertArgs) -> Result<()> {
    ensure!(a.tolerance > 0.0, "--tolerance must be positive");
    let d = image_io::read_field(&a.field)?;
    let inv = invert_field(&d, a.iterations, a.tolerance);
    if let Some(p) = &a.stats {
        write_json(&inv.stats, p)?;
    }
    if let Some(w) = &inv.stats.warning {
        return Err(NumericalFailure(w.clone()).into());
    }
    image_io::write_field(&inv.field, &a.output)?;
    println!(
        "iterations: {} converged: {} residual p95: {:.3e} mm max: {:.3e} mm",
        inv.stats.iterations, inv.stats.converged, inv.stats.residual_p95, inv.stats.residual_max
    );
    Ok(())
}

#[derive(Args)]
pub struct WarpArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn warp(a: WarpArgs) -> Result<()> {
    let d = image_io::read_field(&a.field)?;
    match image_type(&a.image)? {
        (ElementType::Uint8, 1) => {
            let img = image_io::read_binary_image(&a.image)?;
            image_io::write_binary_image(&warp_binary(&img, &d)?, &a.output)?;
        }
        (ElementType::Float32, 1) => {
            let img = image_io::read_scalar_image(&a.image)?;
            image_io::write_scalar_image(&warp_scalar(&img, &d)?, &a.output)?;
        }
        _ => bail!("{}: expected a single-channel image", a.image.display()),
    }
    Ok(())
}

#[derive(Args)]
pub struct MorphArgs {
    /// STL surface or neutral FE mesh.
    pub mesh: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Part label to hold fixed; repeatable.
    #[arg(long = "exclude")]
    pub excluded: Vec<String>,
    #[arg(long, default_value_t = 30.0)]
    pub blend_band: f64,
    /// Quality report as `key: value` text (FE meshes only); JSON is
    /// written next to it with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn morph(a: MorphArgs) -> Result<()> {
    let d = image_io::read_field(&a.field)?;
    let mask = MorphMask {
        excluded_parts: a.excluded.iter().cloned().collect::<BTreeSet<_>>(),
        blend_band: a.blend_band,
    };
    match read_mesh(&a.mesh)? {
        Mesh::Surface(m) => {
            if a.report.is_some() {
                bail!("quality reports need a volume mesh");
            }
            let out = morph_mesh(&m, &d, &mask)?;
            write_surface(&out.mesh, &a.output)?;
            println!(
                "moved {} vertices, {} outside grid",
                m.vertices().len(),
                out.outside_nodes.len()
            );
        }
        Mesh::Volume(m) => {
            let out = morph_mesh(&m, &d, &mask)?;
            write_volume(&out.mesh, &a.output)?;
            let q = morph_report(&m, &out.mesh, DEFAULT_JACOBIAN_THRESHOLD)?;
            if let Some(p) = &a.report {
                std::fs::write(p, q.to_string()).with_context(|| format!("writing {}", p.display()))?;
                write_json(&q, &p.with_extension("json"))?;
            }
            print!("{q}");
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Report JSON path.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ia = image_io::read_binary_image(&a.a)?;
    let ib = image_io::read_binary_image(&a.b)?;
    let r = accuracy_report(&ia, &ib)?;
    let json = serde_json::to_string_pretty(&r)?;
    println!("{json}");
    if let Some(p) = &a.output {
        write_json(&r, p)?;
    }
    if r.hd95.is_none() {
        bail!(morphforge::Error::UndefinedMetric(
            "HD95 needs two non-empty images".into()
        ));
    }
    Ok(())
}

#[derive(Args)]
pub struct DistmapArgs {
    pub morphed: PathBuf,
    pub target: PathBuf,
    /// CSV with `vertex_id,distance_mm`.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn distmap(a: DistmapArgs) -> Result<()> {
    let m = morphforge::read_stl(&a.morphed)?;
    let t = morphforge::read_stl(&a.target)?;
    let d = distance_map(&m, &t)?;
    write_distance_csv(&d, &a.output)?;
    let max = d.iter().map(|s| s.distance_mm).fold(0.0, f64::max);
    let mean = d.iter().map(|s| s.distance_mm).sum::<f64>() / d.len() as f64;
    println!("vertices: {} mean: {mean:.6} mm max: {max:.6} mm", d.len());
    Ok(())
}

#[derive(Args)]
pub struct JacobianArgs {
    pub mesh: PathBuf,
    #[arg(long, default_value_t = DEFAULT_JACOBIAN_THRESHOLD)]
    pub threshold: f64,
    /// Per-element JSON report.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn jacobian(a: JacobianArgs) -> Result<()> {
    let mesh = morphforge::read_femesh(&a.mesh)?;
    let r = scaled_jacobian(&mesh);
    let fmt = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.6}"));
    println!("elements: {}", r.values.len());
    println!("skipped: {}", r.skipped);
    println!("min: {}", fmt(r.min));
    println!("mean: {}", fmt(r.mean));
    println!("below_{}: {}", a.threshold, r.count_below(a.threshold));
    if let Some(p) = &a.output {
        write_json(&r, p)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct FilterArgs {
    /// CSV with `time_s` and one or more channels.
    pub input: PathBuf,
    /// Channel frequency class: 60, 180, 600 or 1000.
    #[arg(long)]
    pub cfc: Cfc,
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn filter(a: FilterArgs) -> Result<()> {
    let series = read_series_csv(&a.input)?;
    let filtered = series
        .iter()
        .map(|s| cfc_filter(s, a.cfc))
        .collect::<Result<Vec<_>, _>>()?;
    write_series_csv(&filtered, &a.output)?;
    println!("filtered {} channel(s) at {}", filtered.len(), a.cfc);
    Ok(())
}

#[derive(Args)]
pub struct CoraArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// JSON with CORA parameters; missing keys keep their defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Filter both signals with this channel class before rating.
    #[arg(long)]
    pub cfc: Option<Cfc>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct ChannelRating {
    reference: String,
    test: String,
    classification: String,
    result: CoraResult,
}

#[derive(Serialize)]
struct CoraOutput {
    filter: Option<String>,
    channels: Vec<ChannelRating>,
    /// Mean of the three component totals, present for three-channel input.
    average: Option<f64>,
    classification: String,
}

/// Largest factor by which sample intervals may differ before refusing to
/// resample.
const MAX_DT_RATIO: f64 = 10.0;

pub fn cora(a: CoraArgs) -> Result<()> {
    let params: CoraParams = match &a.params {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CoraParams::default(),
    };
    let prep = |s: TimeSeries| -> Result<TimeSeries> {
        Ok(match a.cfc {
            Some(c) => cfc_filter(&s, c)?,
            None => s,
        })
    };
    let refs = read_series_csv(&a.reference)?;
    let tests = read_series_csv(&a.test)?;
    ensure!(
        refs.len() == tests.len(),
        "reference has {} channel(s) but test has {}",
        refs.len(),
        tests.len()
    );
    let ratio = refs[0].dt.max(tests[0].dt) / refs[0].dt.min(tests[0].dt);
    ensure!(
        ratio <= MAX_DT_RATIO,
        "sample intervals differ by a factor of {ratio:.1}, more than {MAX_DT_RATIO}"
    );
    let mut channels = Vec::new();
    for (r, t) in refs.into_iter().zip(tests) {
        let (rl, tl) = (r.label.clone(), t.label.clone());
        let res = cora_rate(&prep(r)?, &prep(t)?, &params).with_context(|| format!("rating channel '{tl}'"))?;
        channels.push(ChannelRating {
            reference: rl,
            test: tl,
            classification: classify_biofidelity(res.total)?.to_string(),
            result: res,
        });
    }
    let average = (channels.len() == 3)
        .then(|| average_components(&channels[0].result, &channels[1].result, &channels[2].result));
    let score = average.unwrap_or_else(|| channels.iter().map(|c| c.result.total).sum::<f64>() / channels.len() as f64);
    let out = CoraOutput {
        filter: a.cfc.map(|c| c.to_string()),
        channels,
        average,
        classification: classify_biofidelity(score)?.to_string(),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    if let Some(p) = &a.output {
        write_json(&out, p)?;
    }
    Ok(())
}
