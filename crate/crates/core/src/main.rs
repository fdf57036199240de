use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use facemorph::alignment::{align_template, transfer_texture};
use facemorph::config::PipelineConfig;
use facemorph::corpus::{AlignedCorpus, CorpusEntry, NEUTRAL};
use facemorph::coupling::{fit_coupling, load_coupling, neutralize_corpus, save_coupling, TextureInput, Variant};
use facemorph::evaluation::{
    cross_validate_methods, identity_descriptor, nn_distance_curve, sliced_wasserstein, DescriptorInput, DescriptorSet,
};
use facemorph::mesh::{
    load_scan, load_template, rasterize_vertex_colors_to_texture, save_obj, vertex_colors_from_texture,
    write_template_landmarks, GeometryVector, TemplateTopology, TextureImage,
};
use facemorph::morphable::{build_joint_model, build_model, load_model, save_joint_model, save_model, MorphableModel, Space};
use facemorph::report::key_value_lines;
use facemorph::rng;
use facemorph::synthetic::{gen_synthetic_corpus, procedural_template, SyntheticCorpusSpec, DEFAULT_TEMPLATE_GRID};
use facemorph::Error;

/// Morphable face models: build, couple texture to geometry, synthesize, evaluate.
#[derive(Parser)]
#[command(name = "facemorph", version)]
struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set alignment.w_reg=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed; falls back to FACEMORPH_SEED, then the configuration.
    #[arg(long, global = true, env = "FACEMORPH_SEED")]
    seed: Option<u64>,
    /// Print the report as JSON instead of key=value lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align a scan to the template and append it to a corpus.
    Ingest(IngestArgs),
    /// Fit the geometry and texture PCA models of a corpus.
    BuildModel(BuildModelArgs),
    /// Fit a texture-to-geometry coupling.
    FitCoupling(FitCouplingArgs),
    /// Geometry for a texture image; writes OBJ, MTL and PNG.
    Synthesize(SynthesizeArgs),
    /// Random faces drawn from the model prior.
    #[command(name = "sample-3dmm")]
    Sample3dmm(SampleArgs),
    /// Evaluation harnesses.
    Evaluate {
        #[command(subcommand)]
        which: Evaluate,
    },
    /// Procedural corpus with a planted texture-geometry correlation.
    GenSyntheticCorpus(GenCorpusArgs),
    /// Write the procedural template OBJ and landmark file.
    GenTemplate(GenTemplateArgs),
    /// Rasterize the vertex colors of corpus entries to PNG textures.
    ExportTextures(ExportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    scan: PathBuf,
    /// Scan landmarks (`ordinal x y z`); defaults to the scan path with extension `lmk`.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Texture overriding the scan's material or vertex colors.
    #[arg(long)]
    texture: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    template_landmarks: Option<PathBuf>,
    /// Corpus directory, created when missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Identity of the entry; defaults to the scan file stem.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = NEUTRAL)]
    expression: String,
    #[arg(long)]
    w_lm: Option<f64>,
    #[arg(long)]
    w_fit: Option<f64>,
    #[arg(long)]
    w_reg: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    step_init: Option<f64>,
    #[arg(long)]
    energy_tol: Option<f64>,
    #[arg(long)]
    refresh: Option<usize>,
    #[arg(long)]
    two_phase: bool,
}

#[derive(Args)]
struct BuildModelArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Rank of both bases.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_g: Option<usize>,
    #[arg(long)]
    k_t: Option<usize>,
    /// Fit the joint geometry-texture model instead.
    #[arg(long)]
    joint: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct CouplingFlags {
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k_joint: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct FitCouplingArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// random, nn, ml or ls.
    #[arg(long)]
    method: Option<Variant>,
    /// Pair every texture with its identity's neutral geometry.
    #[arg(long)]
    neutral: bool,
    /// Ranks used by the coupling; default to the model's.
    #[arg(long)]
    k_g: Option<usize>,
    #[arg(long)]
    k_t: Option<usize>,
    #[command(flatten)]
    flags: CouplingFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    coupling: Option<PathBuf>,
    #[arg(long)]
    texture: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base name of the written files.
    #[arg(long, default_value = "face")]
    name: String,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Corpus providing the topology; otherwise the template is used.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Evaluate {
    /// Cross-validated geometry recovery error.
    Cv(CvArgs),
    /// Multi-resolution sliced Wasserstein distance between two PNG directories.
    Swd(SwdArgs),
    /// Sorted nearest-neighbour identity distances.
    Nn(NnArgs),
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Methods to compare (repeatable, or comma separated).
    #[arg(long, value_delimiter = ',')]
    method: Vec<Variant>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    flags: CouplingFlags,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SwdArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_delimiter = ',')]
    resolutions: Vec<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    patches_per_image: Option<usize>,
    #[arg(long)]
    projections: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    no_mask: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NnArgs {
    /// Descriptor file, corpus directory, or directory of PNG textures. Corpus
    /// descriptors are keyed by identity, so `--exclude-self` skips all of its entries.
    #[arg(long)]
    references: PathBuf,
    /// Same kinds as `--references`; defaults to the references.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Needed for descriptors computed from corpora or textures.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Topology for texture directories (defaults to the references corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long, default_value = "queries_to_references")]
    label: String,
    #[arg(long)]
    k_id: Option<usize>,
    /// Write the query descriptors to this file.
    #[arg(long)]
    save_descriptors: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenCorpusArgs {
    /// JSON corpus spec; defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    expressions: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct GenTemplateArgs {
    #[arg(long, default_value_t = DEFAULT_TEMPLATE_GRID)]
    grid: usize,
    /// Output directory for `template.obj` and `template.lmk`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    neutral_only: bool,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Flag value, else configuration value, else a usage error naming both.
fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str, key: &str) -> Outcome<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| usage(format!("missing --{name} (or config {key})")))
}

fn existing(p: PathBuf) -> Outcome<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::InvalidInput(format!("{} does not exist", p.display())).into())
    }
}

fn create_dir(p: &Path) -> Outcome {
    fs::create_dir_all(p).map_err(|e| Failure::Run(Error::Io { path: p.into(), source: e }))
}

fn write_file(p: &Path, body: &str) -> Outcome {
    fs::write(p, body).map_err(|e| Failure::Run(Error::Io { path: p.into(), source: e }))
}

fn is_corpus(p: &Path) -> bool {
    p.join("entries.bin").is_file()
}

fn png_files(dir: &Path) -> Outcome<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Failure::Run(Error::Io { path: dir.into(), source: e }))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG files in {}", dir.display())).into());
    }
    Ok(files)
}

fn load_pngs(dir: &Path) -> Outcome<Vec<(String, TextureImage)>> {
    png_files(dir)?
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, TextureImage::load_png(&p)?))
        })
        .collect()
}

/// Writes `<name>.obj`, `<name>.mtl` and `<name>.png` into `dir`.
fn write_textured_mesh(dir: &Path, name: &str, topo: &TemplateTopology, g: &GeometryVector, tex: &TextureImage) -> Outcome {
    create_dir(dir)?;
    let mtl = format!("{name}.mtl");
    save_obj(&dir.join(format!("{name}.obj")), &g.points(), topo.faces(), Some(topo.uv()), None, Some(&mtl))?;
    write_file(&dir.join(&mtl), &format!("newmtl face\nKd 1 1 1\nmap_Kd {name}.png\n"))?;
    tex.save_png(&dir.join(format!("{name}.png")))?;
    Ok(())
}

struct Ctx {
    config: PipelineConfig,
    json: bool,
}

impl Ctx {
    fn emit(&self, report: &Value) {
        let text = if self.json {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        } else {
            key_value_lines(report)
        };
        // a closed pipe on stdout is not an error of the command
        let _ = std::io::stdout().lock().write_all(text.as_bytes());
    }

    fn emit_to(&self, report: &Value, out: Option<&Path>) -> Outcome {
        if let Some(p) = out {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_file(p, &(serde_json::to_string_pretty(report).expect("report serializes") + "\n"))?;
        }
        self.emit(report);
        Ok(())
    }

    fn finish(&mut self) -> Outcome {
        self.config.validate().map_err(|e| usage(e.to_string()))
    }

    fn template(&self, flag: Option<PathBuf>, landmarks: Option<PathBuf>) -> Outcome<(TemplateTopology, GeometryVector)> {
        let obj = existing(pick(flag.clone(), &self.config.paths.template, "template", "paths.template")?)?;
        let lmk = landmarks
            .or_else(|| if flag.is_some() { None } else { self.config.template_landmarks() })
            .unwrap_or_else(|| obj.with_extension("lmk"));
        Ok(load_template(&obj, &existing(lmk)?)?)
    }

    fn apply_coupling_flags(&mut self, f: &CouplingFlags) {
        let c = &mut self.config.coupling;
        if f.ridge.is_some() {
            c.ridge = f.ridge;
        }
        if let Some(l) = f.lambda {
            c.lambda = l;
        }
        if f.k_joint.is_some() {
            c.k_joint = f.k_joint;
        }
        if let Some(t) = f.temperature {
            c.temperature = t;
        }
    }
}

fn ingest(ctx: &mut Ctx, a: IngestArgs) -> Outcome {
    let al = &mut ctx.config.alignment;
    a.w_lm.inspect(|v| al.w_lm = *v);
    a.w_fit.inspect(|v| al.w_fit = *v);
    a.w_reg.inspect(|v| al.w_reg = *v);
    a.max_iters.inspect(|v| al.max_iters = *v);
    a.step_init.inspect(|v| al.step_init = *v);
    a.energy_tol.inspect(|v| al.energy_tol = *v);
    a.refresh.inspect(|v| al.correspondence_refresh = *v);
    al.two_phase |= a.two_phase;
    ctx.finish()?;
    let out = pick(a.out, &ctx.config.paths.corpus, "out", "paths.corpus")?;
    let (topo, template) = ctx.template(a.template, a.template_landmarks)?;
    let scan_path = existing(a.scan)?;
    let lmk = existing(a.landmarks.unwrap_or_else(|| scan_path.with_extension("lmk")))?;
    let texture = a.texture.map(existing).transpose()?;
    let scan = load_scan(&scan_path, &lmk, texture.as_deref())?;
    let mut corpus = if is_corpus(&out) {
        let c = AlignedCorpus::load(&out)?;
        if c.topology != topo {
            return Err(Error::InvalidInput(format!("{} was built on a different template", out.display())).into());
        }
        c
    } else {
        AlignedCorpus::new(topo.clone(), template.clone(), Vec::new())?
    };
    let result = align_template(&topo, &template, &scan, &ctx.config.alignment.params())?;
    let colors = transfer_texture(&result.geometry, &topo, &scan)?;
    let identity = a
        .id
        .unwrap_or_else(|| scan_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    corpus.entries.push(CorpusEntry {
        identity: identity.clone(),
        expression: a.expression.clone(),
        geometry: result.geometry,
        colors,
    });
    corpus.save(&out)?;
    ctx.emit(&json!({
        "corpus": out, "identity": identity, "expression": a.expression, "entries": corpus.len(),
        "iterations": result.iterations, "converged": result.converged, "final_energy": result.final_energy,
    }));
    Ok(())
}

fn build(ctx: &mut Ctx, a: BuildModelArgs) -> Outcome {
    let m = &mut ctx.config.model;
    if let Some(k) = a.k {
        (m.k_g, m.k_t) = (k, k);
    }
    a.k_g.inspect(|v| m.k_g = *v);
    a.k_t.inspect(|v| m.k_t = *v);
    ctx.finish()?;
    let corpus_path = pick(a.corpus, &ctx.config.paths.corpus, "corpus", "paths.corpus")?;
    let out = pick(a.out, &ctx.config.paths.model, "out", "paths.model")?;
    let corpus = AlignedCorpus::load(&existing(corpus_path)?)?;
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    if a.joint {
        let jm = build_joint_model(&corpus)?;
        save_joint_model(&out, &jm)?;
        ctx.emit(&json!({"model": out, "kind": "joint", "samples": jm.samples, "rank": jm.rank(),
            "geometry_scale": jm.geometry_scale, "texture_scale": jm.texture_scale}));
    } else {
        let rank = corpus.len().min(corpus.dim());
        let (k_g, k_t) = (ctx.config.model.k_g.min(rank), ctx.config.model.k_t.min(rank));
        let model = build_model(&corpus, k_g, k_t)?;
        save_model(&out, &model)?;
        ctx.emit(&json!({"model": out, "kind": "pca", "samples": model.samples(), "rank": model.rank(),
            "k_g": model.k_g, "k_t": model.k_t, "vertices": model.vertex_count()}));
    }
    Ok(())
}

fn fit(ctx: &mut Ctx, a: FitCouplingArgs) -> Outcome {
    if let Some(m) = a.method {
        ctx.config.coupling.method = m;
    }
    ctx.config.coupling.neutral |= a.neutral;
    ctx.apply_coupling_flags(&a.flags);
    ctx.finish()?;
    let corpus_path = pick(a.corpus, &ctx.config.paths.corpus, "corpus", "paths.corpus")?;
    let model_path = pick(a.model, &ctx.config.paths.model, "model", "paths.model")?;
    let out = pick(a.out, &ctx.config.paths.coupling, "out", "paths.coupling")?;
    let mut corpus = AlignedCorpus::load(&existing(corpus_path)?)?;
    let model = load_model(&existing(model_path)?)?;
    let c = &ctx.config.coupling;
    if c.neutral {
        corpus = neutralize_corpus(&corpus)?;
    }
    let mut options = c.options();
    options.k_g = a.k_g;
    options.k_t = a.k_t;
    let cm = fit_coupling(&corpus, &model, c.method, &options)?;
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_coupling(&out, &cm)?;
    ctx.emit(&json!({"coupling": out, "method": c.method, "neutral": c.neutral, "k_g": cm.k_g, "k_t": cm.k_t,
        "training_faces": corpus.len()}));
    Ok(())
}

fn synthesize(ctx: &mut Ctx, a: SynthesizeArgs) -> Outcome {
    ctx.finish()?;
    let cp = pick(a.coupling, &ctx.config.paths.coupling, "coupling", "paths.coupling")?;
    let out = pick(a.out, &ctx.config.paths.output, "out", "paths.output")?;
    let cm = load_coupling(&existing(cp)?)?;
    let tex = TextureImage::load_png(&existing(a.texture)?)?;
    let g = cm.synthesize_geometry(TextureInput::Image(&tex), ctx.config.seed)?;
    write_textured_mesh(&out, &a.name, &cm.topology, &g, &tex)?;
    ctx.emit(&json!({"output": out.join(format!("{}.obj", a.name)), "method": cm.variant(),
        "vertices": g.vertex_count(), "seed": ctx.config.seed}));
    Ok(())
}

fn topology_for(ctx: &Ctx, corpus: Option<PathBuf>, template: Option<PathBuf>) -> Outcome<TemplateTopology> {
    match corpus.or_else(|| if template.is_some() { None } else { ctx.config.paths.corpus.clone() }) {
        Some(c) => Ok(AlignedCorpus::load(&existing(c)?)?.topology),
        None => Ok(ctx.template(template, None)?.0),
    }
}

fn check_topology(model: &MorphableModel, topo: &TemplateTopology) -> Outcome {
    if model.vertex_count() != topo.vertex_count() {
        return Err(Error::DimensionMismatch {
            context: "model vs topology vertex count",
            expected: topo.vertex_count(),
            got: model.vertex_count(),
        }
        .into());
    }
    Ok(())
}

fn sample(ctx: &mut Ctx, a: SampleArgs) -> Outcome {
    if let Some(t) = a.temperature {
        ctx.config.coupling.temperature = t;
    }
    if let Some(r) = a.resolution {
        ctx.config.evaluation.texture_resolution = r;
    }
    ctx.finish()?;
    let model_path = pick(a.model, &ctx.config.paths.model, "model", "paths.model")?;
    let out = pick(a.out, &ctx.config.paths.output, "out", "paths.output")?;
    let model = load_model(&existing(model_path)?)?;
    let topo = topology_for(ctx, a.corpus, a.template)?;
    check_topology(&model, &topo)?;
    let (seed, temp, res) = (ctx.config.seed, ctx.config.coupling.temperature, ctx.config.evaluation.texture_resolution);
    for i in 0..a.count {
        let i64_ = i as u64;
        let alpha = model.sample_coefficients(Space::Geometry, model.k_g, rng::split(seed, 2 * i64_), temp)?;
        let beta = model.sample_coefficients(Space::Texture, model.k_t, rng::split(seed, 2 * i64_ + 1), temp)?;
        let g = model.reconstruct_geometry(&alpha)?;
        let t = model.reconstruct_texture(&beta)?;
        let img = rasterize_vertex_colors_to_texture(&topo, &t, res, res)?;
        write_textured_mesh(&out, &format!("sample{i:04}"), &topo, &g, &img)?;
    }
    ctx.emit(&json!({"output": out, "count": a.count, "seed": seed, "temperature": temp, "resolution": res}));
    Ok(())
}

fn eval_cv(ctx: &mut Ctx, a: CvArgs) -> Outcome {
    if !a.method.is_empty() {
        ctx.config.evaluation.methods = a.method.clone();
    }
    a.folds.inspect(|f| ctx.config.evaluation.folds = *f);
    if let Some(k) = a.k {
        (ctx.config.model.k_g, ctx.config.model.k_t) = (k, k);
    }
    ctx.apply_coupling_flags(&a.flags);
    ctx.finish()?;
    let corpus = AlignedCorpus::load(&existing(pick(a.corpus, &ctx.config.paths.corpus, "corpus", "paths.corpus")?)?)?;
    let reports = cross_validate_methods(&corpus, &ctx.config.evaluation.methods, &ctx.config.cv_options())?;
    let mut doc = serde_json::Map::new();
    for r in &reports {
        doc.insert(r.method.clone(), serde_json::to_value(r).expect("report serializes"));
    }
    ctx.emit_to(&json!({ "cv": doc }), a.out.as_deref())
}

fn eval_swd(ctx: &mut Ctx, a: SwdArgs) -> Outcome {
    let s = &mut ctx.config.evaluation.swd;
    if !a.resolutions.is_empty() {
        s.resolutions = a.resolutions.clone();
    }
    a.patch.inspect(|v| s.patch = *v);
    a.patches_per_image.inspect(|v| s.patches_per_image = *v);
    a.projections.inspect(|v| s.projections = *v);
    a.repeats.inspect(|v| s.repeats = *v);
    s.normalize &= !a.no_normalize;
    s.mask_background &= !a.no_mask;
    ctx.finish()?;
    let set_a: Vec<TextureImage> = load_pngs(&existing(a.a)?)?.into_iter().map(|(_, t)| t).collect();
    let set_b: Vec<TextureImage> = load_pngs(&existing(a.b)?)?.into_iter().map(|(_, t)| t).collect();
    let report = sliced_wasserstein(&set_a, &set_b, &ctx.config.swd_params())?;
    ctx.emit_to(&json!({ "swd": report }), a.out.as_deref())
}

fn descriptors(
    src: &Path,
    model: Option<&MorphableModel>,
    topo: Option<&TemplateTopology>,
    k_id: usize,
    texture_only: bool,
) -> Outcome<DescriptorSet> {
    if src.is_file() {
        return Ok(DescriptorSet::load(src)?);
    }
    let model = model.ok_or_else(|| usage(format!("--model is needed to describe {}", src.display())))?;
    let k = k_id.min(model.rank());
    let (mut ids, mut vectors) = (Vec::new(), Vec::new());
    if is_corpus(src) {
        let corpus = AlignedCorpus::load(src)?;
        for e in &corpus.entries {
            let input = if texture_only {
                DescriptorInput::Texture(&e.colors)
            } else {
                DescriptorInput::Face(&e.geometry, &e.colors)
            };
            ids.push(e.identity.clone());
            vectors.push(identity_descriptor(input, model, k)?);
        }
    } else {
        let topo = topo.ok_or_else(|| usage("--corpus is needed for the topology of texture directories"))?;
        for (id, img) in load_pngs(src)? {
            let colors = vertex_colors_from_texture(topo, &img)?;
            ids.push(id);
            vectors.push(identity_descriptor(DescriptorInput::Texture(&colors), model, k)?);
        }
    }
    Ok(DescriptorSet::new(ids, vectors)?)
}

fn eval_nn(ctx: &mut Ctx, a: NnArgs) -> Outcome {
    a.k_id.inspect(|k| ctx.config.evaluation.descriptor_rank = *k);
    ctx.finish()?;
    let refs = existing(a.references)?;
    let queries = a.queries.map(existing).transpose()?;
    let model_path = a.model.or_else(|| ctx.config.paths.model.clone());
    let model = model_path.map(|p| existing(p).and_then(|p| Ok(load_model(&p)?))).transpose()?;
    let topo_src = a.corpus.or_else(|| if is_corpus(&refs) { Some(refs.clone()) } else { ctx.config.paths.corpus.clone() });
    let topo = topo_src.map(|c| existing(c).and_then(|c| Ok(AlignedCorpus::load(&c)?.topology))).transpose()?;
    if let (Some(m), Some(t)) = (&model, &topo) {
        check_topology(m, t)?;
    }
    let k = ctx.config.evaluation.descriptor_rank;
    // faces are compared to textures on their texture block only
    let is_textures = |p: &Path| p.is_dir() && !is_corpus(p);
    let texture_only = is_textures(&refs) || queries.as_deref().is_some_and(is_textures);
    let r = descriptors(&refs, model.as_ref(), topo.as_ref(), k, texture_only)?;
    let q = match &queries {
        Some(q) => descriptors(q, model.as_ref(), topo.as_ref(), k, texture_only)?,
        None => r.clone(),
    };
    if let Some(p) = &a.save_descriptors {
        q.save(p)?;
    }
    let curve = nn_distance_curve(&a.label, &q, &r, a.exclude_self)?;
    let d = &curve.distances;
    let summary = json!({"count": d.len(), "min": d[0], "median": d[d.len() / 2], "max": d[d.len() - 1]});
    ctx.emit_to(&json!({"nn": {"curve": curve, "summary": summary, "exclude_self": a.exclude_self}}), a.out.as_deref())
}

fn gen_corpus(ctx: &mut Ctx, a: GenCorpusArgs, seed_flag: Option<u64>) -> Outcome {
    ctx.finish()?;
    let mut spec = match a.spec {
        Some(p) => SyntheticCorpusSpec::load(&existing(p)?)?,
        None => SyntheticCorpusSpec::default(),
    };
    a.identities.inspect(|v| spec.identities = *v);
    a.expressions.inspect(|v| spec.expressions = *v);
    a.noise.inspect(|v| spec.noise = *v);
    a.grid.inspect(|v| spec.template_grid = *v);
    if let Some(s) = seed_flag {
        spec.seed = s;
    }
    let out = pick(a.out, &ctx.config.paths.corpus, "out", "paths.corpus")?;
    let (corpus, latents) = gen_synthetic_corpus(&spec)?;
    corpus.save(&out)?;
    latents.save(&out.join("latents.txt"))?;
    ctx.emit(&json!({"corpus": out, "entries": corpus.len(), "identities": spec.identities,
        "vertices": corpus.topology.vertex_count(), "seed": spec.seed}));
    Ok(())
}

fn gen_template(ctx: &mut Ctx, a: GenTemplateArgs) -> Outcome {
    ctx.finish()?;
    let out = pick(a.out, &ctx.config.paths.output, "out", "paths.output")?;
    create_dir(&out)?;
    let (topo, g) = procedural_template(a.grid)?;
    let obj = out.join("template.obj");
    save_obj(&obj, &g.points(), topo.faces(), Some(topo.uv()), None, None)?;
    write_template_landmarks(&out.join("template.lmk"), topo.landmark_indices())?;
    ctx.emit(&json!({"template": obj, "vertices": topo.vertex_count(), "faces": topo.faces().len()}));
    Ok(())
}

fn export(ctx: &mut Ctx, a: ExportArgs) -> Outcome {
    a.resolution.inspect(|r| ctx.config.evaluation.texture_resolution = *r);
    ctx.finish()?;
    let corpus_path = pick(a.corpus, &ctx.config.paths.corpus, "corpus", "paths.corpus")?;
    let out = pick(a.out, &ctx.config.paths.output, "out", "paths.output")?;
    let corpus = AlignedCorpus::load(&existing(corpus_path)?)?;
    create_dir(&out)?;
    let res = ctx.config.evaluation.texture_resolution;
    let mut count = 0;
    for e in corpus.entries.iter().filter(|e| !a.neutral_only || e.is_neutral()) {
        let img = rasterize_vertex_colors_to_texture(&corpus.topology, &e.colors, res, res)?;
        img.save_png(&out.join(format!("{}_{}.png", e.identity, e.expression)))?;
        count += 1;
    }
    ctx.emit(&json!({"output": out, "textures": count, "resolution": res}));
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(&existing(p.clone())?)?,
        None => PipelineConfig::default(),
    };
    config
        .apply_overrides(cli.overrides.iter().map(String::as_str))
        .map_err(|e| usage(e.to_string()))?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let mut ctx = Ctx { config, json: cli.json };
    match cli.command {
        Command::Ingest(a) => ingest(&mut ctx, a),
        Command::BuildModel(a) => build(&mut ctx, a),
        Command::FitCoupling(a) => fit(&mut ctx, a),
        Command::Synthesize(a) => synthesize(&mut ctx, a),
        Command::Sample3dmm(a) => sample(&mut ctx, a),
        Command::Evaluate { which: Evaluate::Cv(a) } => eval_cv(&mut ctx, a),
        Command::Evaluate { which: Evaluate::Swd(a) } => eval_swd(&mut ctx, a),
        Command::Evaluate { which: Evaluate::Nn(a) } => eval_nn(&mut ctx, a),
        Command::GenSyntheticCorpus(a) => gen_corpus(&mut ctx, a, cli.seed),
        Command::GenTemplate(a) => gen_template(&mut ctx, a),
        Command::ExportTextures(a) => export(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("facemorph: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("facemorph: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
