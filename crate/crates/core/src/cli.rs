// SPDX-License-Identifier: Apache-2.0

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset_io::{
    load_bundle, load_manifest, save_bundle, save_graymap, DatasetManifest, FingerprintBundle, ManifestEntry,
    PostprocessFlags, Role,
};
use crate::denoise::DenoiserSpec;
use crate::error::{Error, Result};
use crate::eval::svg::{roc_svg, trace_svg};
use crate::eval::{
    auc, bootstrap_auc_se, check_compare, evaluate, roc_points, write_auc_csv, write_roc_csv, AucRow, RocCurve, Scene,
    SyntheticPoolSpec, TrialConfig, DEFAULT_BOOTSTRAP, DEFAULT_MEMBER_QUERIES, DEFAULT_NON_MEMBER_QUERIES,
    DEFAULT_TEXTURE_SMOOTHNESS,
};
use crate::fingerprint::{
    accumulate_subset, load_residual_pool, postprocess_bundle, whiten, PostprocessConfig, DEFAULT_EPSILON_R,
    DEFAULT_WHITEN_WINDOW, DEFAULT_WIENER_WINDOW,
};
use crate::leakage::{analyze, choose_subset, GammaMethod, LeakageConfig, LeakageReport, DEFAULT_GAMMA_WINDOW, DEFAULT_SPLITS};
use crate::membership::{read_scores_csv, score_queries, write_scores_csv, Detector, MembershipScore, NpConfig, Query, Target, DEFAULT_NP_WINDOW};
use crate::sensor_sim::{BRIGHT_LEVEL, DARK_LEVEL, DEFAULT_SIGMA_K, DEFAULT_SIGMA_N};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Name of the effective-configuration file every command writes.
pub const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "prnuleak", version, about = "PRNU fingerprint leakage toolkit")]
pub struct Cli {
    /// Worker threads (0 = one per core). Never changes any output bit.
    #[arg(long, global = true, env = "PRNULEAK_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic image set, its manifest and the true PRNU.
    Simulate(SimulateArgs),
    /// Estimate a fingerprint bundle from the estimation images of a manifest.
    Extract(ExtractArgs),
    /// Information leakage bound of fingerprints built from L images.
    Leakage(LeakageArgs),
    /// Score manifest images against a fingerprint bundle.
    Membership(MembershipArgs),
    /// ROC curves from a scores file, or Monte-Carlo trials over a manifest.
    Roc(RocArgs),
    /// Whiten a fingerprint bundle by its local standard deviation.
    Mitigate(MitigateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Preset {
    /// 50 bright flat fields.
    #[value(name = "brt50")]
    #[serde(rename = "brt50")]
    Brt50,
    /// 50 dark flat fields.
    #[value(name = "drk50")]
    #[serde(rename = "drk50")]
    Drk50,
    /// 49 bright flat fields and one textured scene.
    #[value(name = "brt49+tex")]
    #[serde(rename = "brt49+tex")]
    Brt49Tex,
    /// 49 dark flat fields and one textured scene.
    #[value(name = "drk49+tex")]
    #[serde(rename = "drk49+tex")]
    Drk49Tex,
    /// 250 textured scenes (membership experiments).
    #[value(name = "tex250")]
    #[serde(rename = "tex250")]
    Tex250,
}

impl Preset {
    fn scenes(self, smoothness: f64) -> Vec<Scene> {
        let tex = Scene::Textured { smoothness };
        let flats = |level: f64, n: usize| vec![Scene::Flat { level }; n];
        match self {
            Preset::Brt50 => flats(BRIGHT_LEVEL, 50),
            Preset::Drk50 => flats(DARK_LEVEL, 50),
            Preset::Brt49Tex => [flats(BRIGHT_LEVEL, 49), vec![tex]].concat(),
            Preset::Drk49Tex => [flats(DARK_LEVEL, 49), vec![tex]].concat(),
            Preset::Tex250 => vec![tex; 250],
        }
    }

    fn default_size(self) -> usize {
        match self {
            Preset::Tex250 => 128,
            _ => 256,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Square image side (default 256, or 128 for tex250).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SIGMA_K)]
    pub sigma_k: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_N)]
    pub sigma_n: f64,
    /// Gaussian blur std of textured scenes.
    #[arg(long, default_value_t = DEFAULT_TEXTURE_SMOOTHNESS)]
    pub smoothness: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PostArgs {
    /// Skip row/column mean removal.
    #[arg(long)]
    pub no_zero_mean: bool,
    /// Skip DFT-domain Wiener filtering.
    #[arg(long)]
    pub no_wiener: bool,
    #[arg(long, default_value_t = DEFAULT_WIENER_WINDOW)]
    pub wiener_window: usize,
    /// Whiten the estimate by its local standard deviation.
    #[arg(long)]
    pub whiten: bool,
    #[arg(long, default_value_t = DEFAULT_WHITEN_WINDOW)]
    pub whiten_window: usize,
}

impl PostArgs {
    fn config(&self) -> PostprocessConfig {
        PostprocessConfig {
            zero_mean: !self.no_zero_mean,
            dft_wiener: !self.no_wiener,
            wiener_window: self.wiener_window,
            whiten: self.whiten,
            whiten_window: self.whiten_window,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory (receives fingerprint.prnu and config.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Denoiser id, e.g. mihcak-db8-l4-s5.0 or gaussian-b1.5.
    #[arg(long, default_value_t = DenoiserSpec::default().id())]
    pub denoiser: String,
    /// Store the normalizer R in the bundle (needed by the NP detector).
    #[arg(long = "keep-R")]
    pub keep_r: bool,
    #[arg(long, default_value_t = DEFAULT_EPSILON_R)]
    pub epsilon_r: f64,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct LeakageArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Estimation-set sizes, comma separated.
    #[arg(long = "L", value_delimiter = ',', required = true)]
    pub l: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DenoiserSpec::default().id())]
    pub denoiser: String,
    #[arg(long, default_value_t = DEFAULT_GAMMA_WINDOW)]
    pub gamma_window: usize,
    /// Estimate gamma^2 from the spread of per-image contributions.
    #[arg(long)]
    pub gamma_across_images: bool,
    #[arg(long, default_value_t = DEFAULT_EPSILON_R)]
    pub epsilon_r: f64,
    /// Row label of the CSV table.
    #[arg(long, default_value = "camera")]
    pub label: String,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct MembershipArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Images to score. Estimation entries are labeled members, holdout
    /// entries non-members and query entries unlabeled.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the denoiser recorded in the bundle.
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Detectors to run; NP is skipped unless the bundle stores R and is not whitened.
    #[arg(long, value_delimiter = ',', default_value = "NP,NCC")]
    pub detectors: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_NP_WINDOW)]
    pub window: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct RocArgs {
    /// Scores CSV written by `membership` (or by a previous `roc` run).
    #[arg(long, conflicts_with = "manifest")]
    pub scores: Option<PathBuf>,
    /// Image pool for Monte-Carlo trials (every entry is used).
    #[arg(long, required_unless_present = "scores")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Estimation-set sizes, ascending.
    #[arg(long = "L", value_delimiter = ',', default_value = "50")]
    pub l: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    #[arg(long, default_value_t = DEFAULT_MEMBER_QUERIES)]
    pub members: usize,
    #[arg(long, default_value_t = DEFAULT_NON_MEMBER_QUERIES)]
    pub non_members: usize,
    #[arg(long, value_delimiter = ',', default_value = "NP,NCC")]
    pub detectors: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DenoiserSpec::default().id())]
    pub denoiser: String,
    #[arg(long, default_value_t = DEFAULT_NP_WINDOW)]
    pub window: usize,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct MitigateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WHITEN_WINDOW)]
    pub window: usize,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Leakage(a) => cmd_leakage(a),
        Command::Membership(a) => cmd_membership(a),
        Command::Roc(a) => cmd_roc(a),
        Command::Mitigate(a) => cmd_mitigate(a),
    })
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize, E: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    args: &'a T,
    effective: E,
}

fn echo_config<T: Serialize, E: Serialize>(dir: &Path, command: &'static str, args: &T, effective: E) -> Result<()> {
    let echo = Echo {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args,
        effective,
    };
    let text = serde_json::to_string_pretty(&echo).map_err(|e| Error::invalid(e.to_string()))?;
    write_file(&dir.join(CONFIG_FILE), format!("{text}\n").as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn parse_denoiser(id: &str) -> Result<DenoiserSpec> {
    let spec: DenoiserSpec = id.parse()?;
    spec.validate()?;
    Ok(spec)
}

fn parse_detectors(names: &[String]) -> Result<Vec<Detector>> {
    let mut out: Vec<Detector> = Vec::new();
    for n in names {
        let d: Detector = n.trim().parse()?;
        if !out.contains(&d) {
            out.push(d);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no detectors selected"));
    }
    Ok(out)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let size = a.size.unwrap_or_else(|| a.preset.default_size());
    if size == 0 {
        return Err(Error::invalid("--size must be positive"));
    }
    let spec = SyntheticPoolSpec {
        rows: size,
        cols: size,
        sigma_k: a.sigma_k,
        sigma_n: a.sigma_n,
        clip_to_8bit: true,
        scenes: a.preset.scenes(a.smoothness),
        seed: a.seed,
    };
    create_dir(&a.out)?;
    let sensor = spec.sensor()?;
    let names: Vec<String> = (0..spec.scenes.len()).map(|i| format!("img_{i:04}.pgm")).collect();
    let written: Vec<Result<()>> = {
        use rayon::prelude::*;
        names
            .par_iter()
            .enumerate()
            .map(|(i, name)| {
                let (_, y) = spec.capture(&sensor, i)?;
                save_graymap(a.out.join(name), &y)
            })
            .collect()
    };
    written.into_iter().collect::<Result<()>>()?;

    let entries = names
        .iter()
        .zip(&spec.scenes)
        .map(|(name, scene)| ManifestEntry {
            path: PathBuf::from(name),
            role: Role::Estimation,
            label: Some(match scene {
                Scene::Flat { level } => format!("flat-{level}"),
                Scene::Textured { .. } => "textured".to_string(),
            }),
        })
        .collect();
    let preset_name = a.preset.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let manifest = DatasetManifest::new(format!("synthetic sensor, preset {preset_name}, seed {}", a.seed), entries)?;
    write_file(&a.out.join("manifest.json"), format!("{}\n", manifest.to_json()).as_bytes())?;

    let truth = FingerprintBundle {
        fingerprint: sensor.k.clone(),
        normalizer: None,
        image_count: spec.scenes.len() as u32,
        flags: PostprocessFlags::empty(),
        denoiser_id: "groundtruth".into(),
        seed: Some(a.seed),
    };
    save_bundle(&truth, a.out.join("groundtruth.prnu"))?;

    #[derive(Serialize)]
    struct Effective<'a> {
        spec: &'a SyntheticPoolSpec,
        note: &'static str,
    }
    echo_config(
        &a.out,
        "simulate",
        a,
        Effective {
            spec: &spec,
            note: "sigma_k, sigma_n, image size and texture smoothness defaults are toolkit choices",
        },
    )?;
    println!("wrote {} images to {}", spec.scenes.len(), a.out.display());
    Ok(())
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let denoiser = parse_denoiser(&a.denoiser)?;
    let post = a.post.config();
    let manifest = load_manifest(&a.manifest)?;
    let entries: Vec<&ManifestEntry> = manifest.with_role(Role::Estimation).collect();
    if entries.is_empty() {
        return Err(Error::Manifest("no estimation entries".into()));
    }
    let pool = load_residual_pool(&manifest, &entries, &denoiser)?;
    let all: Vec<usize> = (0..pool.len()).collect();
    let finalized = accumulate_subset(&pool, &all)?.finalize(a.epsilon_r)?;
    let mut bundle = finalized.bundle;
    bundle.denoiser_id = denoiser.id();
    postprocess_bundle(&mut bundle, &post)?;
    if !a.keep_r {
        bundle.normalizer = None;
    }
    bundle.validate()?;

    create_dir(&a.out)?;
    save_bundle(&bundle, a.out.join("fingerprint.prnu"))?;

    #[derive(Serialize)]
    struct Effective {
        denoiser: String,
        postprocess: PostprocessConfig,
        images: usize,
        guarded_pixels: usize,
        flags: Vec<&'static str>,
    }
    echo_config(
        &a.out,
        "extract",
        a,
        Effective {
            denoiser: denoiser.id(),
            postprocess: post,
            images: pool.len(),
            guarded_pixels: finalized.guarded_pixels,
            flags: bundle.flags.names(),
        },
    )?;
    println!(
        "fingerprint {}x{} from {} images -> {}",
        bundle.fingerprint.rows(),
        bundle.fingerprint.cols(),
        pool.len(),
        a.out.join("fingerprint.prnu").display()
    );
    Ok(())
}

fn leakage_csv(label: &str, reports: &[LeakageReport]) -> Vec<u8> {
    csv_bytes(|out| {
        writeln!(out, "label,L,rows,cols,ilb_bpp,ilb_bits,p_hat,p_clamped,mu,splits,excluded_pixels,guarded_pixels")?;
        for r in reports {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                label.replace(',', ";"),
                r.image_count,
                r.rows,
                r.cols,
                r.ilb_bpp,
                r.ilb_bits,
                r.p_hat,
                r.p_clamped,
                r.mu,
                r.splits,
                r.excluded_pixels,
                r.guarded_pixels
            )?;
        }
        Ok(())
    })
}

fn cmd_leakage(a: &LeakageArgs) -> Result<()> {
    let denoiser = parse_denoiser(&a.denoiser)?;
    let cfg = LeakageConfig {
        gamma_window: a.gamma_window,
        gamma_method: if a.gamma_across_images {
            GammaMethod::AcrossImages
        } else {
            GammaMethod::LocalVariance
        },
        splits: a.splits,
        seed: a.seed,
        epsilon_r: a.epsilon_r,
        postprocess: a.post.config(),
        ..LeakageConfig::default()
    };
    let manifest = load_manifest(&a.manifest)?;
    let entries: Vec<&ManifestEntry> = manifest.with_role(Role::Estimation).collect();
    let available = entries.len();
    if let Some(&too_many) = a.l.iter().find(|&&l| l > available || l < 2) {
        return Err(Error::invalid(format!(
            "L = {too_many} is outside 2..={available} (estimation images in the manifest)"
        )));
    }
    let pool = load_residual_pool(&manifest, &entries, &denoiser)?;

    create_dir(&a.out)?;
    let mut reports = Vec::new();
    for &l in &a.l {
        let subset = choose_subset(pool.len(), l, a.seed)?;
        let report = analyze(&pool, &subset, &cfg)?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::invalid(e.to_string()))?;
        write_file(&a.out.join(format!("leakage_L{l}.json")), format!("{json}\n").as_bytes())?;
        println!(
            "L={l}: ILB {:.6} bpp ({:.1} bits), P_hat {:.6e}{}",
            report.ilb_bpp,
            report.ilb_bits,
            report.p_hat,
            if report.p_clamped { " [clamped]" } else { "" }
        );
        reports.push(report);
    }
    write_file(&a.out.join("leakage.csv"), &leakage_csv(&a.label, &reports))?;

    #[derive(Serialize)]
    struct Effective {
        denoiser: String,
        leakage: LeakageConfig,
    }
    echo_config(
        &a.out,
        "leakage",
        a,
        Effective {
            denoiser: denoiser.id(),
            leakage: cfg,
        },
    )
}

fn truth_for(role: Role) -> Option<bool> {
    match role {
        Role::Estimation => Some(true),
        Role::Holdout => Some(false),
        Role::Query => None,
    }
}

fn cmd_membership(a: &MembershipArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let denoiser = match &a.denoiser {
        Some(id) => parse_denoiser(id)?,
        None => parse_denoiser(&bundle.denoiser_id).unwrap_or_default(),
    };
    let requested = parse_detectors(&a.detectors)?;
    let np_available = bundle.normalizer.is_some() && !bundle.flags.contains(PostprocessFlags::WHITENED);
    let mut detectors = requested.clone();
    if !np_available && detectors.contains(&Detector::Np) {
        detectors.retain(|&d| d != Detector::Np);
        eprintln!("note: NP detector skipped (bundle has no R or is whitened)");
    }
    if detectors.is_empty() {
        return Err(Error::invalid("no usable detector for this bundle"));
    }
    let np = NpConfig {
        window: a.window,
        ..NpConfig::default()
    };

    let manifest = load_manifest(&a.manifest)?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    let pool = load_residual_pool(&manifest, &entries, &denoiser)?;
    if let Some(first) = pool.first() {
        bundle.fingerprint.ensure_shape(&first.residual)?;
    }
    let queries: Vec<Query<'_>> = entries
        .iter()
        .zip(&pool)
        .map(|(e, pair)| Query {
            image_id: e.path.to_string_lossy().into_owned(),
            pair,
            is_member_truth: truth_for(e.role),
        })
        .collect();
    let target = Target {
        fingerprint: &bundle.fingerprint,
        normalizer: bundle.normalizer.as_ref(),
        gain: None,
    };
    let scores = score_queries(&target, &queries, &detectors, &np)?;

    create_dir(&a.out)?;
    write_file(&a.out.join("scores.csv"), &csv_bytes(|o| write_scores_csv(o, &scores)))?;
    let members = queries.iter().take_while(|q| q.is_member_truth == Some(true)).count();
    let series: Vec<(String, Vec<f64>)> = detectors
        .iter()
        .map(|&d| {
            let v = scores.iter().filter(|s| s.detector == d).map(|s| s.statistic).collect();
            (d.to_string(), v)
        })
        .collect();
    write_file(&a.out.join("trace.svg"), trace_svg(&series, members).as_bytes())?;

    #[derive(Serialize)]
    struct Effective {
        denoiser: String,
        detectors: Vec<Detector>,
        np: NpConfig,
        bundle_flags: Vec<&'static str>,
        images: usize,
    }
    echo_config(
        &a.out,
        "membership",
        a,
        Effective {
            denoiser: denoiser.id(),
            detectors: detectors.clone(),
            np,
            bundle_flags: bundle.flags.names(),
            images: queries.len(),
        },
    )?;
    println!("scored {} images with {:?}", queries.len(), detectors);
    Ok(())
}

fn cmd_roc(a: &RocArgs) -> Result<()> {
    create_dir(&a.out)?;
    match (&a.scores, &a.manifest) {
        (Some(path), _) => roc_from_scores(a, path),
        (None, Some(manifest)) => roc_monte_carlo(a, manifest),
        (None, None) => Err(Error::invalid("either --scores or --manifest is required")),
    }
}

fn write_curves(out: &Path, summary: &[(AucRow, RocCurve)]) -> Result<()> {
    let rows: Vec<AucRow> = summary.iter().map(|(r, _)| r.clone()).collect();
    write_file(&out.join("auc.csv"), &csv_bytes(|o| write_auc_csv(o, &rows)))?;
    for (row, curve) in summary {
        let name = format!("roc_{}_L{}.csv", row.detector, row.l);
        write_file(&out.join(name), &csv_bytes(|o| write_roc_csv(o, curve)))?;
    }
    let labeled: Vec<(String, &RocCurve)> = summary
        .iter()
        .map(|(row, curve)| (format!("{} L={}", row.detector, row.l), curve))
        .collect();
    write_file(&out.join("roc.svg"), roc_svg(&labeled).as_bytes())?;
    for row in &rows {
        println!("{} L={}: AUC {:.4} +/- {:.4}", row.detector, row.l, row.auc, row.se);
    }
    Ok(())
}

fn roc_from_scores(a: &RocArgs, path: &Path) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let scores = read_scores_csv(std::io::BufReader::new(file))?;
    let mut detectors: Vec<Detector> = scores.iter().map(|s| s.detector).collect();
    detectors.sort();
    detectors.dedup();
    let mut summary = Vec::new();
    for d in detectors {
        let sub: Vec<MembershipScore> = scores.iter().filter(|s| s.detector == d).cloned().collect();
        let curve = roc_points(&sub)?;
        let row = AucRow {
            detector: d,
            l: 0,
            auc: auc(&sub)?,
            se: bootstrap_auc_se(&sub, DEFAULT_BOOTSTRAP, a.seed)?,
            n_trials: sub.iter().filter_map(|s| s.trial).max().map_or(1, |t| t + 1),
        };
        summary.push((row, curve));
    }
    write_curves(&a.out, &summary)?;
    echo_config(&a.out, "roc", a, serde_json::json!({ "mode": "scores" }))
}

fn roc_monte_carlo(a: &RocArgs, manifest_path: &Path) -> Result<()> {
    let denoiser = parse_denoiser(&a.denoiser)?;
    let base = TrialConfig {
        l: a.l.first().copied().unwrap_or(0),
        n_trials: a.trials,
        detectors: parse_detectors(&a.detectors)?,
        members: a.members,
        non_members: a.non_members,
        seed: a.seed,
        postprocess: a.post.config(),
        np: NpConfig {
            window: a.window,
            ..NpConfig::default()
        },
        epsilon_r: DEFAULT_EPSILON_R,
    };
    check_compare(&a.l, &base)?;
    let manifest = load_manifest(manifest_path)?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    for &l in &a.l {
        base.with_l(l).validate(entries.len())?;
    }
    let pool = load_residual_pool(&manifest, &entries, &denoiser)?;

    let mut summary = Vec::new();
    let mut all_scores = Vec::new();
    for &l in &a.l {
        let (scores, rows) = evaluate(&pool, &base.with_l(l))?;
        all_scores.extend(scores.into_iter().map(|mut s| {
            s.image_id = format!("L{l}/{}", s.image_id);
            s
        }));
        summary.extend(rows);
    }
    write_file(&a.out.join("scores.csv"), &csv_bytes(|o| write_scores_csv(o, &all_scores)))?;
    write_curves(&a.out, &summary)?;

    #[derive(Serialize)]
    struct Effective<'a> {
        mode: &'static str,
        denoiser: String,
        trials: &'a TrialConfig,
        pool_size: usize,
    }
    echo_config(
        &a.out,
        "roc",
        a,
        Effective {
            mode: "monte-carlo",
            denoiser: denoiser.id(),
            trials: &base,
            pool_size: pool.len(),
        },
    )
}

fn cmd_mitigate(a: &MitigateArgs) -> Result<()> {
    let mut bundle = load_bundle(&a.bundle)?;
    if bundle.flags.contains(PostprocessFlags::WHITENED) {
        return Err(Error::invalid("bundle is already whitened"));
    }
    bundle.fingerprint = whiten(&bundle.fingerprint, a.window)?;
    bundle.flags.insert(PostprocessFlags::WHITENED);
    bundle.validate_structure()?;
    create_dir(&a.out)?;
    save_bundle(&bundle, a.out.join("whitened.prnu"))?;
    echo_config(&a.out, "mitigate", a, serde_json::json!({ "flags": bundle.flags.names() }))?;
    println!("whitened fingerprint -> {}", a.out.join("whitened.prnu").display());
    Ok(())
}
