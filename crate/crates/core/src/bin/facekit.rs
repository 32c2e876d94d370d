use clap::{Args, Parser, Subcommand};
use facekit::camera::{load_camera, Camera};
use facekit::fit::{fit, load_fit, load_landmarks, save_fit, FitConfig};
use facekit::mesh::{load_obj, save_obj};
use facekit::morph::{load_model, synthesize_shape};
use facekit::refine::{refine_fit, SegmentationMask, DEFAULT_LAMBDA};
use facekit::render::{
    landmark_error_report, load_lighting, photometric_error, rasterize, PhotometricNorm, SHLighting,
};
use facekit::rig::{
    build_model_rig, evaluate_rig, load_beta_sequence, load_rig, load_rig_json, save_rig,
    save_rig_json, BlendshapeRig, DEFAULT_EYEBALL_INSET,
};
use facekit::scene::{generate_scene, SceneParams};
use facekit::texture::{compute_tex_coords, diffuse_background, export_textured_obj, RasterImage};
use facekit::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Single-image 3D face reconstruction and blendshape rigging.
///
/// Exit codes: 0 success, 1 generic failure, 2 missing input,
/// 3 validation error, 4 numerical failure.
#[derive(Parser)]
#[command(name = "facekit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic model and a rendered test scene.
    GenSynthetic(GenArgs),
    /// Coarse reconstruction from landmarks.
    Fit(FitArgs),
    /// Laplacian refinement of a coarse fit.
    Refine(RefineArgs),
    /// Project the image onto a mesh and export OBJ + MTL + PNG.
    Texture(TextureArgs),
    /// Transfer the expression templates onto a neutral mesh.
    Rig(RigArgs),
    /// Render a mesh under a fitted pose.
    Render(RenderArgs),
    /// Landmark and photometric error report.
    Eval(EvalArgs),
    /// Evaluate a rig over a β sequence.
    Animate(AnimateArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Stretch the ground-truth eyes by this factor.
    #[arg(long)]
    eye_dilation: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    /// Camera file; defaults to the image size with 100 px per unit per 256 px.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    wid: Option<f64>,
    #[arg(long)]
    wexp: Option<f64>,
    #[arg(long)]
    wtex: Option<f64>,
    #[arg(long)]
    freeze_scale: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output fit file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    /// Segmentation mask; eye landmarks snap to its eye boundaries.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Output OBJ.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TextureArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "face")]
    stem: String,
}

#[derive(Args)]
struct RigArgs {
    #[arg(long)]
    model: PathBuf,
    /// Neutral target mesh, usually the refined reconstruction.
    #[arg(long)]
    mesh: PathBuf,
    /// Output directory for `rig.cfr` and `rig.json`.
    #[arg(long)]
    out: PathBuf,
    /// Texture file name recorded in the JSON export.
    #[arg(long)]
    texture: Option<String>,
    /// Distance the eyeball spheres are pushed into the head.
    #[arg(long, default_value_t = DEFAULT_EYEBALL_INSET)]
    eyeball_inset: f64,
    #[arg(long)]
    no_eyeballs: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    /// Lighting file; defaults to unit ambient light.
    #[arg(long)]
    lighting: Option<PathBuf>,
    /// Texture image; the mesh must carry texture coordinates.
    #[arg(long)]
    texture: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    /// Mesh to evaluate; defaults to the shape of the fit.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Input image; with `--mask` adds the photometric error.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Texture image; defaults to the diffused input image.
    #[arg(long)]
    texture: Option<PathBuf>,
    #[arg(long)]
    lighting: Option<PathBuf>,
    /// Report file; defaults to standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AnimateArgs {
    /// Rig in CFR1 (`.cfr`) or JSON (`.json`) form.
    #[arg(long)]
    rig: PathBuf,
    /// β sequence, one frame per line.
    #[arg(long)]
    beta: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write only this (possibly fractional) frame, interpolating linearly.
    #[arg(long)]
    frame: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Texture(a) => cmd_texture(a),
        Command::Rig(a) => cmd_rig(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Animate(a) => cmd_animate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("facekit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_gen_synthetic(a: GenArgs) -> Result<()> {
    let mut params = SceneParams::new(a.seed);
    if let Some(f) = a.eye_dilation {
        params = params.with_eye_dilation(f);
    }
    let scene = generate_scene(&params)?;
    let paths = scene.save(&a.out)?;
    log::info!(
        "wrote scene to {}",
        paths.model.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

fn camera_for(camera: Option<&Path>, image: Option<&Path>) -> Result<Camera> {
    match (camera, image) {
        (Some(c), _) => load_camera(c),
        (None, Some(i)) => {
            let img = RasterImage::load(i)?;
            let ppu = 100.0 * img.width().min(img.height()) as f64 / 256.0;
            Camera::new(img.width(), img.height(), ppu, 10.0)
        }
        (None, None) => Err(Error::Validation("fit needs --camera or --image".into())),
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cam = camera_for(a.camera.as_deref(), a.image.as_deref())?;
    let lm = load_landmarks(&a.landmarks, Some(model.landmark_count()))?;
    let mut cfg = FitConfig::default();
    cfg.w_id = a.wid.unwrap_or(cfg.w_id);
    cfg.w_exp = a.wexp.unwrap_or(cfg.w_exp);
    cfg.w_tex = a.wtex.unwrap_or(cfg.w_tex);
    cfg.freeze_scale = a.freeze_scale;
    cfg.max_outer_iters = a.max_iters.unwrap_or(cfg.max_outer_iters);
    let result = fit(&model, &lm, &cam, &cfg)?;
    log::info!(
        "fit: landmark error {:.4} px^2 after {} iterations",
        result.landmark_error,
        result.iterations
    );
    save_fit(&result, &cam, &a.out)
}

fn load_mask(path: &Path) -> Result<SegmentationMask> {
    SegmentationMask::load(path)
}

fn cmd_refine(a: RefineArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (coarse, cam) = load_fit(&a.fit)?;
    let lm = load_landmarks(&a.landmarks, Some(model.landmark_count()))?;
    let mask = a.mask.as_deref().map(load_mask).transpose()?;
    let refined = refine_fit(&model, &coarse, &lm, mask.as_ref(), &cam, a.lambda)?;
    save_obj(&refined, &a.out)
}

fn cmd_texture(a: TextureArgs) -> Result<()> {
    let mesh = load_obj(&a.mesh)?;
    let (f, cam) = load_fit(&a.fit)?;
    let image = RasterImage::load(&a.image)?;
    let mask = load_mask(&a.mask)?;
    let textured = compute_tex_coords(&mesh, &f.pose, &cam);
    if textured.clamped > 0 {
        log::warn!(
            "{} texture coordinates fell outside the image",
            textured.clamped
        );
    }
    let texture = diffuse_background(&image, &mask)?;
    export_textured_obj(&textured.mesh, &texture, &a.out, &a.stem)?;
    Ok(())
}

fn cmd_rig(a: RigArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let neutral = load_obj(&a.mesh)?;
    let rig = build_model_rig(
        &model,
        &neutral,
        (!a.no_eyeballs).then_some(a.eyeball_inset),
    )?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    save_rig(&rig, a.out.join("rig.cfr"))?;
    save_rig_json(&rig, a.texture.as_deref(), a.out.join("rig.json"))
}

fn lighting_or_ambient(path: Option<&Path>) -> Result<SHLighting> {
    path.map_or_else(|| Ok(SHLighting::ambient(1.0)), load_lighting)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let mesh = load_obj(&a.mesh)?;
    let (f, cam) = load_fit(&a.fit)?;
    let light = lighting_or_ambient(a.lighting.as_deref())?;
    let texture = a.texture.as_deref().map(RasterImage::load).transpose()?;
    let out = rasterize(&mesh, &f.pose, &cam, &light, texture.as_ref())?;
    out.color.save(&a.out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (f, cam) = load_fit(&a.fit)?;
    let lm = load_landmarks(&a.landmarks, Some(model.landmark_count()))?;
    let mesh = match &a.mesh {
        Some(p) => load_obj(p)?,
        None => synthesize_shape(&model, &f.coefficients)?,
    };
    let report = landmark_error_report(&mesh, &model, &f.pose, &cam, &lm)?;
    let mut text = Vec::new();
    report.write(&mut text).expect("write to memory");
    if let (Some(img), Some(mask)) = (&a.image, &a.mask) {
        let image = RasterImage::load(img)?;
        let mask = load_mask(mask)?;
        let texture = match &a.texture {
            Some(t) => RasterImage::load(t)?,
            None => diffuse_background(&image, &mask)?,
        };
        let textured = if mesh.tex_coords().is_some() && a.texture.is_some() {
            mesh
        } else {
            compute_tex_coords(&mesh, &f.pose, &cam).mesh
        };
        let light = lighting_or_ambient(a.lighting.as_deref())?;
        let render = rasterize(&textured, &f.pose, &cam, &light, Some(&texture))?;
        let err = photometric_error(&render, &image, &mask, PhotometricNorm::Manhattan)?;
        writeln!(text, "photometric {err}").expect("write to memory");
    }
    match &a.report {
        Some(p) => std::fs::write(p, &text).map_err(|e| io_error(p, e)),
        None => std::io::stdout()
            .write_all(&text)
            .map_err(|e| io_error("<stdout>", e)),
    }
}

fn load_any_rig(path: &Path) -> Result<BlendshapeRig> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        load_rig_json(path)
    } else {
        load_rig(path)
    }
}

fn cmd_animate(a: AnimateArgs) -> Result<()> {
    let rig = load_any_rig(&a.rig)?;
    let frames = load_beta_sequence(&a.beta, rig.expression_count())?;
    if frames.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no frames",
            a.beta.display()
        )));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    match a.frame {
        Some(t) => {
            let last = (frames.len() - 1) as f64;
            if !(0.0..=last).contains(&t) {
                return Err(Error::Validation(format!("frame {t} outside 0..={last}")));
            }
            let (i, frac) = (t.floor() as usize, t.fract());
            let j = (i + 1).min(frames.len() - 1);
            let beta: Vec<f64> = frames[i]
                .iter()
                .zip(&frames[j])
                .map(|(x, y)| x + frac * (y - x))
                .collect();
            save_obj(&evaluate_rig(&rig, &beta)?, a.out.join("frame.obj"))
        }
        None => {
            for (k, beta) in frames.iter().enumerate() {
                save_obj(
                    &evaluate_rig(&rig, beta)?,
                    a.out.join(format!("frame_{k:04}.obj")),
                )?;
            }
            Ok(())
        }
    }
}

fn io_error(path: impl AsRef<Path>, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingInput(path.as_ref().to_path_buf())
    } else {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source: e,
        }
    }
}
