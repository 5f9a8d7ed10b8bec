//! End-to-end personalization from a JSON manifest.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::Args;
use morphforge::image_io;
use morphforge::morph::DEFAULT_JACOBIAN_THRESHOLD;
use morphforge::registration::InversionStats;
use morphforge::{
    accuracy_report, apply_rigid, fit_rigid, image_union, invert_field, morph_mesh, morph_report, read_femesh,
    read_stl, register_demons, voxelize_on_grid, warp_binary, Aabb, AccuracyReport, BinaryImage3D, DemonsParams, Grid,
    MorphMask, QualityReport, RegistrationReport, RigidTransform, TriangleMesh, Vec3,
};
use serde::{Deserialize, Serialize};

use crate::io::{write_surface, write_volume};
use crate::{write_json, DemonsArgs, NumericalFailure};

#[derive(Args)]
pub struct PersonalizeArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub padding: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "exclude")]
    pub excluded: Vec<String>,
    #[arg(long)]
    pub blend_band: Option<f64>,
    #[command(flatten)]
    pub demons: DemonsArgs,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub skin: PathBuf,
    #[serde(default)]
    pub skeleton: Option<PathBuf>,
    /// FE volume mesh (template only).
    #[serde(default)]
    pub volume_mesh: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSettings {
    pub iterations: usize,
    /// Largest fixed-point update (voxels) at which iteration stops.
    pub tolerance: f64,
}

impl Default for InversionSettings {
    fn default() -> Self {
        InversionSettings {
            iterations: 50,
            tolerance: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub template: Inputs,
    pub target: Inputs,
    /// JSON `{"template": [[x,y,z], ...], "target": [[x,y,z], ...]}`.
    pub landmarks: PathBuf,
    /// Isotropic voxel size (mm).
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_padding")]
    pub padding: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub demons: Option<DemonsParams>,
    #[serde(default)]
    pub mask: MorphMask,
    #[serde(default)]
    pub inversion: InversionSettings,
    pub output_dir: PathBuf,
}

fn default_spacing() -> f64 {
    2.0
}

fn default_padding() -> usize {
    4
}

#[derive(Deserialize)]
struct Landmarks {
    template: Vec<[f64; 3]>,
    target: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct Summary<'a> {
    spacing: f64,
    padding: usize,
    seed: u64,
    demons: &'a DemonsParams,
    mask: &'a MorphMask,
    inversion: &'a InversionSettings,
    alignment: &'a RigidTransform,
    landmark_rms_mm: f64,
    grid: &'a Grid,
    template_voxels: usize,
    target_voxels: usize,
    registration: &'a RegistrationReport,
    inversion_stats: &'a InversionStats,
    accuracy: &'a AccuracyReport,
    quality: Option<&'a QualityReport>,
    /// Files written, relative to the output directory.
    artifacts: &'a [String],
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Manifest {
    fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for inputs in [&mut m.template, &mut m.target] {
            inputs.skin = resolve(base, &inputs.skin);
            inputs.skeleton = inputs.skeleton.as_deref().map(|p| resolve(base, p));
            inputs.volume_mesh = inputs.volume_mesh.as_deref().map(|p| resolve(base, p));
        }
        m.landmarks = resolve(base, &m.landmarks);
        m.output_dir = resolve(base, &m.output_dir);
        Ok(m)
    }

    fn apply_flags(&mut self, a: &PersonalizeArgs) {
        if let Some(d) = &a.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(s) = a.spacing {
            self.spacing = s;
        }
        if let Some(p) = a.padding {
            self.padding = p;
        }
        if let Some(s) = a.seed {
            self.seed = s;
        }
        if !a.excluded.is_empty() {
            self.mask.excluded_parts = a.excluded.iter().cloned().collect();
        }
        if let Some(b) = a.blend_band {
            self.mask.blend_band = b;
        }
        let base = self
            .demons
            .clone()
            .unwrap_or_else(|| DemonsParams::for_spacing(self.spacing));
        self.demons = Some(a.demons.apply(base));
    }

    /// Checks everything that can be checked before any computation.
    fn validate(&self) -> Result<()> {
        ensure!(
            self.spacing > 0.0 && self.spacing.is_finite(),
            "spacing must be a positive number, got {}",
            self.spacing
        );
        if self.target.volume_mesh.is_some() {
            bail!("target.volume_mesh is not used; remove it from the manifest");
        }
        let mut files = vec![("landmark file", &self.landmarks)];
        for (who, i) in [("template", &self.template), ("target", &self.target)] {
            files.push((
                if who == "template" {
                    "template skin"
                } else {
                    "target skin"
                },
                &i.skin,
            ));
            if let Some(s) = &i.skeleton {
                files.push((
                    if who == "template" {
                        "template skeleton"
                    } else {
                        "target skeleton"
                    },
                    s,
                ));
            }
        }
        if let Some(v) = &self.template.volume_mesh {
            files.push(("template volume mesh", v));
        }
        for (what, p) in files {
            ensure!(p.is_file(), "{what} not found: {}", p.display());
        }
        self.demons.as_ref().expect("flags applied").validate()?;
        self.mask.validate()?;
        ensure!(self.inversion.tolerance > 0.0, "inversion tolerance must be positive");
        Ok(())
    }
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        let path = dir.join(".morphforge.lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "output directory {} is in use (lock file {})",
                    dir.display(),
                    path.display()
                )
            })?;
        Ok(DirLock(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Run {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, names: &[&str]) {
        self.artifacts.extend(names.iter().map(|s| s.to_string()));
    }

    fn stage<T>(&self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        f().map_err(|e| {
            let done = if self.artifacts.is_empty() {
                "none".to_string()
            } else {
                self.artifacts
                    .iter()
                    .map(|a| self.dir.join(a).display().to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            e.context(format!("stage '{name}' failed; completed artifacts: {done}"))
        })
    }
}

fn read_surfaces(i: &Inputs) -> Result<Vec<TriangleMesh>> {
    let mut v = vec![read_stl(&i.skin)?];
    if let Some(s) = &i.skeleton {
        v.push(read_stl(s)?);
    }
    Ok(v)
}

fn voxelize_union(meshes: &[TriangleMesh], grid: &Grid, seed: u64) -> Result<BinaryImage3D> {
    let mut img = voxelize_on_grid(&meshes[0], grid, seed)?;
    for m in &meshes[1..] {
        img = image_union(&img, &voxelize_on_grid(m, grid, seed)?)?;
    }
    Ok(img)
}

pub fn run(a: PersonalizeArgs) -> Result<()> {
    let mut m = Manifest::load(&a.manifest)?;
    m.apply_flags(&a);
    m.validate().context("invalid manifest")?;
    let demons = m.demons.clone().expect("flags applied");

    fs::create_dir_all(&m.output_dir).with_context(|| format!("creating {}", m.output_dir.display()))?;
    let _lock = DirLock::acquire(&m.output_dir)?;
    let mut run = Run {
        dir: m.output_dir.clone(),
        artifacts: Vec::new(),
    };

    let (alignment, rms, template_surf, target_surf) = run.stage("align", || {
        let text = fs::read_to_string(&m.landmarks)?;
        let lm: Landmarks =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", m.landmarks.display()))?;
        let tpl: Vec<Vec3> = lm.template.iter().map(|p| Vec3::from(*p)).collect();
        let tgt: Vec<Vec3> = lm.target.iter().map(|p| Vec3::from(*p)).collect();
        let t = fit_rigid(&tgt, &tpl)?;
        let rms = (tgt
            .iter()
            .zip(&tpl)
            .map(|(s, d)| (t.apply(s) - d).norm_squared())
            .sum::<f64>()
            / tgt.len() as f64)
            .sqrt();
        let template_surf = read_surfaces(&m.template)?;
        let target_surf: Vec<TriangleMesh> = read_surfaces(&m.target)?.iter().map(|s| apply_rigid(s, &t)).collect();
        write_surface(&target_surf[0], &run.path("target_skin_aligned.stl"))?;
        if let Some(s) = target_surf.get(1) {
            write_surface(s, &run.path("target_skeleton_aligned.stl"))?;
        }
        Ok((t, rms, template_surf, target_surf))
    })?;
    run.record(&["target_skin_aligned.stl"]);
    if target_surf.len() > 1 {
        run.record(&["target_skeleton_aligned.stl"]);
    }

    let (grid, template_img, target_img) = run.stage("voxelize", || {
        let bounds = template_surf
            .iter()
            .chain(&target_surf)
            .filter_map(TriangleMesh::bounds)
            .reduce(|a: Aabb, b| a.union(&b))
            .ok_or_else(|| anyhow!("no geometry"))?;
        let grid = Grid::covering(&bounds, [m.spacing; 3], m.padding)?;
        let t = voxelize_union(&template_surf, &grid, m.seed).context("template")?;
        let g = voxelize_union(&target_surf, &grid, m.seed).context("target")?;
        image_io::write_binary_image(&t, run.path("template_image.mhd"))?;
        image_io::write_binary_image(&g, run.path("target_image.mhd"))?;
        Ok((grid, t, g))
    })?;
    run.record(&[
        "template_image.mhd",
        "template_image.raw",
        "target_image.mhd",
        "target_image.raw",
    ]);

    let (field, registration) = run.stage("register", || {
        let (field, report) = register_demons(&template_img, &target_img, &demons)?;
        if !report.final_mse.is_finite() || field.data().iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(NumericalFailure("registration produced non-finite values".into()).into());
        }
        image_io::write_field(&field, run.path("displacement.mhd"))?;
        Ok((field, report))
    })?;
    run.record(&["displacement.mhd", "displacement.raw"]);

    let quality = run.stage("morph", || {
        let skin = morph_mesh(&template_surf[0], &field, &m.mask)?;
        write_surface(&skin.mesh, &run.path("morphed_skin.stl"))?;
        if let Some(s) = template_surf.get(1) {
            write_surface(&morph_mesh(s, &field, &m.mask)?.mesh, &run.path("morphed_skeleton.stl"))?;
        }
        match &m.template.volume_mesh {
            Some(p) => {
                let fe = read_femesh(p)?;
                let out = morph_mesh(&fe, &field, &m.mask)?;
                write_volume(&out.mesh, &run.path("morphed_volume.fem"))?;
                let q = morph_report(&fe, &out.mesh, DEFAULT_JACOBIAN_THRESHOLD)?;
                fs::write(run.path("quality.txt"), q.to_string())?;
                write_json(&q, &run.path("quality.json"))?;
                Ok(Some(q))
            }
            None => Ok(None),
        }
    })?;
    run.record(&["morphed_skin.stl"]);
    if template_surf.len() > 1 {
        run.record(&["morphed_skeleton.stl"]);
    }
    if quality.is_some() {
        run.record(&["morphed_volume.fem", "quality.txt", "quality.json"]);
    }

    let inverse = run.stage("invert", || {
        let inv = invert_field(&field, m.inversion.iterations, m.inversion.tolerance);
        if let Some(w) = &inv.stats.warning {
            return Err(NumericalFailure(w.clone()).into());
        }
        image_io::write_field(&inv.field, run.path("inverse_displacement.mhd"))?;
        Ok(inv)
    })?;
    run.record(&["inverse_displacement.mhd", "inverse_displacement.raw"]);

    let accuracy = run.stage("evaluate", || {
        let warped = warp_binary(&template_img, &inverse.field)?;
        image_io::write_binary_image(&warped, run.path("warped_template.mhd"))?;
        let r = accuracy_report(&warped, &target_img)?;
        write_json(&r, &run.path("accuracy.json"))?;
        Ok(r)
    })?;
    run.record(&["warped_template.mhd", "warped_template.raw", "accuracy.json"]);

    run.stage("summary", || {
        let mut artifacts = run.artifacts.clone();
        artifacts.push("summary.json".into());
        let summary = Summary {
            spacing: m.spacing,
            padding: m.padding,
            seed: m.seed,
            demons: &demons,
            mask: &m.mask,
            inversion: &m.inversion,
            alignment: &alignment,
            landmark_rms_mm: rms,
            grid: &grid,
            template_voxels: template_img.count(),
            target_voxels: target_img.count(),
            registration: &registration,
            inversion_stats: &inverse.stats,
            accuracy: &accuracy,
            quality: quality.as_ref(),
            artifacts: &artifacts,
        };
        write_json(&summary, &run.path("summary.json"))
    })?;

    println!("dice: {:.6}", accuracy.dice);
    match accuracy.hd95 {
        Some(h) => println!("hd95: {h:.3} mm"),
        None => println!("hd95: undefined"),
    }
    println!("summary: {}", run.path("summary.json").display());
    Ok(())
}
