//! The `daam` command-line front end.
//!
//! Settings resolve as flag, then `DAAM_*` environment variable, then the
//! config file (`--config`, `DAAM_CONFIG`, or `./daam.toml`), then the
//! built-in default. Exit codes: 0 success, 1 input or validation error,
//! 2 empty result, 64 usage error.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attribution::{
    threshold, token_heat_maps, word_heat_maps, AttributionConfig, HeatMap, LayerFilter, UpscaleMode,
};
use crate::error::{DaamError, Result};
use crate::fixture::{HotSquareFixture, RandomFixture, IMAGE_FILE};
use crate::par::Execution;
use crate::pos_stats::{summarize, word_intensities, write_records_csv, IntensityRecord, PosSummary};
use crate::render::{load_rgb, render_hard, render_soft, save_png_rgb, Colormap, DrawMode, OverlaySpec};
use crate::seg_eval::{
    class_key, derive_seed, evaluate, random_baseline, read_annotations, EvalConfig, EvalPair, EvalReport, Method,
    Restriction,
};
use crate::tensor_store::{Dump, SliceSource, WordInfo, MANIFEST_FILE};

pub const DEFAULT_TAUS: [f64; 3] = [0.3, 0.4, 0.5];

#[derive(Debug, Parser)]
#[command(
    name = "daam",
    version,
    about = "Attribution maps from diffusion cross-attention dumps"
)]
pub struct Cli {
    /// Key/value TOML file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute word or token heat maps and hard masks for one dump.
    Compute(ComputeArgs),
    /// Score hard masks against annotated segments (mIoU).
    Eval(EvalArgs),
    /// Per part-of-speech coverage statistics over a corpus of dumps.
    Pos(PosArgs),
    /// Write a synthetic dump directory.
    Fixture(FixtureArgs),
    /// Draw a heat map or mask over the dump's image.
    Render(RenderArgs),
    /// Check a dump's manifest and every slice.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Default)]
pub struct MapArgs {
    /// Thresholds, comma separated; `none` for soft maps only.
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long, value_name = "deconv|bicubic")]
    pub upsample: Option<String>,
    /// Block directions to include: down, up, mid, all (comma separated).
    #[arg(long)]
    pub layers: Option<String>,
    /// Skip value-range and row-sum checks on read.
    #[arg(long)]
    pub no_validate: bool,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub word: Vec<String>,
    #[arg(long)]
    pub token_index: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub map: MapArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Random,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dump directories, or directories containing dumps.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Closed class list (one name per line); `coco80` for the bundled list.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub map: MapArgs,
}

#[derive(Debug, Args)]
pub struct PosArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub map: MapArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Structured {
    HotSquare,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub tokens: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub structured: Option<Structured>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Draw {
    Soft,
    Fill,
    Outline,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub word: Option<String>,
    #[arg(long)]
    pub token_index: Option<usize>,
    #[arg(long, value_enum, default_value_t = Draw::Soft)]
    pub draw: Draw,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub colormap: Option<PathBuf>,
    /// Image to draw on; defaults to the dump's image.png.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub map: MapArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
}

/// Flat key/value settings from a TOML file.
#[derive(Debug, Default)]
pub struct FileConfig(BTreeMap<String, toml::Value>);

impl FileConfig {
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => match std::env::var_os("DAAM_CONFIG") {
                Some(p) => Some(PathBuf::from(p)),
                None => Some(PathBuf::from("daam.toml")).filter(|p| p.exists()),
            },
        };
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(&path).map_err(|e| DaamError::io(&path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| DaamError::Usage(format!("config file {}: {e}", path.display())))?;
        Ok(FileConfig(table.into_iter().collect()))
    }

    fn get(&self, key: &str) -> Option<String> {
        self.0.get(key).map(|v| match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        })
    }
}

/// Layered lookup: flag, `DAAM_<KEY>` environment variable, config file.
pub struct Settings {
    file: FileConfig,
    env: HashMap<String, String>,
}

impl Settings {
    pub fn new(file: FileConfig) -> Self {
        let env = std::env::vars().filter(|(k, _)| k.starts_with("DAAM_")).collect();
        Settings { file, env }
    }

    pub fn with_env(file: FileConfig, env: HashMap<String, String>) -> Self {
        Settings { file, env }
    }

    pub fn resolve(&self, key: &str, flag: Option<String>) -> Option<String> {
        flag.or_else(|| self.env.get(&format!("DAAM_{}", key.to_ascii_uppercase())).cloned())
            .or_else(|| self.file.get(key))
    }

    fn resolve_bool(&self, key: &str, flag: bool) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        match self.resolve(key, None) {
            None => Ok(false),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" | "" => Ok(false),
                other => Err(DaamError::Usage(format!("{key}: expected a boolean, got {other:?}"))),
            },
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.resolve(key, None)
            .map(|v| {
                v.trim()
                    .parse::<T>()
                    .map_err(|e| DaamError::Usage(format!("{key}: {e}")))
            })
            .transpose()
    }
}

/// Parses a comma-separated τ list; `none` or an empty string is empty.
pub fn parse_taus(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() || text.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut taus = Vec::new();
    for part in text.split(',') {
        let tau: f64 = part
            .trim()
            .parse()
            .map_err(|_| DaamError::Usage(format!("invalid tau {part:?}")))?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(DaamError::Usage(format!("tau {tau} outside [0, 1]")));
        }
        if !taus.contains(&tau) {
            taus.push(tau);
        }
    }
    Ok(taus)
}

struct MapSettings {
    taus: Vec<f64>,
    attribution: AttributionConfig,
    validate: bool,
}

fn map_settings(settings: &Settings, args: &MapArgs, default_taus: &[f64]) -> Result<MapSettings> {
    let taus = match settings.resolve("tau", args.tau.clone()) {
        Some(t) => parse_taus(&t)?,
        None => default_taus.to_vec(),
    };
    let mode = match settings.resolve("upsample", args.upsample.clone()) {
        Some(m) => m.parse()?,
        None => UpscaleMode::default(),
    };
    let layers = match settings.resolve("layers", args.layers.clone()) {
        Some(l) => l.parse()?,
        None => LayerFilter::all(),
    };
    Ok(MapSettings {
        taus,
        attribution: AttributionConfig {
            mode,
            layers,
            execution: Execution::default(),
        },
        validate: !settings.resolve_bool("no_validate", args.no_validate)?,
    })
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let settings = Settings::new(FileConfig::load(cli.config.as_deref())?);
    match cli.command {
        Command::Compute(a) => cmd_compute(&settings, &a),
        Command::Eval(a) => cmd_eval(&settings, &a),
        Command::Pos(a) => cmd_pos(&settings, &a),
        Command::Fixture(a) => cmd_fixture(&settings, &a),
        Command::Render(a) => cmd_render(&settings, &a),
        Command::Validate(a) => cmd_validate(&a),
    }
}

fn open_dump(path: &Path, validate: bool) -> Result<Dump> {
    Ok(Dump::open(path)?.with_validation(validate))
}

fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

fn find_words(words: &[WordInfo], query: &str) -> Vec<WordInfo> {
    let q = query.trim().to_lowercase();
    let exact: Vec<_> = words.iter().filter(|w| w.text.to_lowercase() == q).cloned().collect();
    if !exact.is_empty() {
        return exact;
    }
    let key = class_key(&q);
    words.iter().filter(|w| class_key(&w.text) == key).cloned().collect()
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| DaamError::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| DaamError::io("<stdout>", e))
        }
    }
}

#[derive(Debug, Serialize)]
struct MaskEntry {
    tau: f64,
    file: String,
    coverage: f64,
}

#[derive(Debug, Serialize)]
struct MapEntry {
    name: String,
    subject: &'static str,
    index: usize,
    text: String,
    tokens: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pos_tag: Option<String>,
    max: f64,
    sum: f64,
    heat_attn: String,
    heat_png: String,
    masks: Vec<MaskEntry>,
}

#[derive(Debug, Serialize)]
struct ComputeIndex {
    image_id: String,
    prompt: String,
    upsample: String,
    layers: String,
    taus: Vec<f64>,
    maps: Vec<MapEntry>,
}

fn tau_label(tau: f64) -> String {
    format!("tau{tau}")
}

pub fn cmd_compute(settings: &Settings, args: &ComputeArgs) -> Result<()> {
    let ms = map_settings(settings, &args.map, &DEFAULT_TAUS)?;
    let dump = open_dump(&args.input, ms.validate)?;
    let manifest = dump.manifest();
    let words = manifest.words();

    let mut selected_words: Vec<WordInfo> = Vec::new();
    for w in &args.word {
        let found = find_words(&words, w);
        if found.is_empty() {
            return Err(DaamError::UnknownWord(w.clone()));
        }
        for f in found {
            if !selected_words.iter().any(|s| s.word_index == f.word_index) {
                selected_words.push(f);
            }
        }
    }
    if args.word.is_empty() && args.token_index.is_empty() {
        selected_words = words.clone();
    }

    let word_ids: Vec<usize> = selected_words.iter().map(|w| w.word_index).collect();
    let mut maps: Vec<(String, HeatMap, WordOrToken)> = Vec::new();
    let word_maps = if word_ids.is_empty() {
        Vec::new()
    } else {
        word_heat_maps(&dump, &word_ids, &ms.attribution)?
    };
    for (info, map) in selected_words.iter().zip(word_maps) {
        let dup = selected_words.iter().filter(|w| w.text == info.text).count() > 1;
        let name = if dup {
            format!("{}_{}", sanitize(&info.text), info.word_index)
        } else {
            sanitize(&info.text)
        };
        maps.push((name, map, WordOrToken::Word(info.clone())));
    }
    if !args.token_index.is_empty() {
        let token_maps = token_heat_maps(&dump, &args.token_index, &ms.attribution)?;
        for (&t, map) in args.token_index.iter().zip(token_maps) {
            maps.push((format!("token{t}"), map, WordOrToken::Token(t)));
        }
    }

    fs::create_dir_all(&args.out).map_err(|e| DaamError::io(&args.out, e))?;
    let mut entries = Vec::new();
    for (name, map, what) in &maps {
        let heat_attn = format!("{name}.heat.attn");
        let heat_png = format!("{name}.heat.png");
        map.write_attn(&args.out.join(&heat_attn))?;
        map.write_png16(&args.out.join(&heat_png))?;
        let mut masks = Vec::new();
        for &tau in &ms.taus {
            let hard = threshold(map, tau);
            let file = format!("{name}.{}.png", tau_label(tau));
            hard.mask.write_png(&args.out.join(&file))?;
            masks.push(MaskEntry {
                tau,
                file,
                coverage: hard.coverage(),
            });
        }
        let (subject, index, text, tokens, pos_tag) = match what {
            WordOrToken::Word(w) => (
                "word",
                w.word_index,
                w.text.clone(),
                w.token_indices.clone(),
                w.pos_tag.clone(),
            ),
            WordOrToken::Token(t) => {
                let rec = manifest.tokens.iter().find(|r| r.token_index == *t);
                (
                    "token",
                    *t,
                    rec.map(|r| r.clean_text().to_string()).unwrap_or_default(),
                    vec![*t],
                    rec.and_then(|r| r.pos_tag.clone()),
                )
            }
        };
        entries.push(MapEntry {
            name: name.clone(),
            subject,
            index,
            text,
            tokens,
            pos_tag,
            max: map.max(),
            sum: map.sum(),
            heat_attn,
            heat_png,
            masks,
        });
    }
    let index = ComputeIndex {
        image_id: dump.image_id(),
        prompt: manifest.prompt.clone(),
        upsample: ms.attribution.mode.to_string(),
        layers: ms.attribution.layers.to_string(),
        taus: ms.taus.clone(),
        maps: entries,
    };
    write_json(&index, Some(&args.out.join("index.json")))
}

enum WordOrToken {
    Word(WordInfo),
    Token(usize),
}

/// Expands inputs: a directory without a manifest contributes its
/// immediate subdirectories that have one, in name order.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.join(MANIFEST_FILE).exists() {
            out.push(input.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| DaamError::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).exists())
            .collect();
        if subs.is_empty() {
            return Err(DaamError::MissingManifest(input.clone()));
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct Skipped {
    image_id: String,
    noun: String,
    reason: &'static str,
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    class_list: String,
    taus: Vec<f64>,
    open: EvalReport,
    closed: EvalReport,
    skipped: Vec<Skipped>,
}

pub fn cmd_eval(settings: &Settings, args: &EvalArgs) -> Result<()> {
    let ms = map_settings(settings, &args.map, &DEFAULT_TAUS)?;
    let class_source = settings
        .resolve("classes", args.classes.clone())
        .unwrap_or_else(|| "coco80".into());
    let restriction = if class_source == "coco80" {
        Restriction::coco80()
    } else {
        Restriction::from_class_file(Path::new(&class_source))?
    };
    let baseline = match (args.baseline, settings.resolve("baseline", None)) {
        (Some(b), _) => Some(b),
        (None, Some(b)) if b == "random" => Some(Baseline::Random),
        (None, Some(b)) => return Err(DaamError::Usage(format!("unknown baseline {b:?}"))),
        (None, None) => None,
    };
    let seed = settings.parsed("seed", args.seed)?.unwrap_or(0);

    let gt = read_annotations(&args.annotations)?;
    let mut dumps: HashMap<String, Dump> = HashMap::new();
    for path in expand_inputs(&args.input)? {
        let d = open_dump(&path, ms.validate)?;
        dumps.insert(d.image_id(), d);
    }

    let mut skipped: Vec<Skipped> = gt
        .absent
        .iter()
        .map(|a| Skipped {
            image_id: a.image_id.clone(),
            noun: a.noun.clone(),
            reason: "not_depicted",
        })
        .collect();

    // group segments by image so each dump is read once
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, seg) in gt.segments.iter().enumerate() {
        by_image.entry(seg.image_id.as_str()).or_default().push(i);
    }
    let mut pairs = Vec::new();
    let mut random_index = 0u64;
    for (image_id, seg_ids) in by_image {
        let Some(dump) = dumps.get(image_id) else {
            for &i in &seg_ids {
                skipped.push(Skipped {
                    image_id: image_id.to_string(),
                    noun: gt.segments[i].noun.clone(),
                    reason: "no_dump",
                });
            }
            continue;
        };
        let words = dump.manifest().words();
        let mut wanted = Vec::new();
        for &i in &seg_ids {
            let seg = &gt.segments[i];
            match find_words(&words, &seg.noun).first() {
                Some(w) => wanted.push((i, w.word_index)),
                None => skipped.push(Skipped {
                    image_id: image_id.to_string(),
                    noun: seg.noun.clone(),
                    reason: "not_in_prompt",
                }),
            }
        }
        if wanted.is_empty() {
            continue;
        }
        let ids: Vec<usize> = wanted.iter().map(|&(_, w)| w).collect();
        let maps = word_heat_maps(dump, &ids, &ms.attribution)?;
        for ((i, _), map) in wanted.iter().zip(maps) {
            let seg = &gt.segments[*i];
            if seg.mask.height != map.height || seg.mask.width != map.width {
                return Err(DaamError::DimMismatch(format!(
                    "annotation {}/{} is {}x{}, image is {}x{}",
                    seg.image_id, seg.noun, seg.mask.height, seg.mask.width, map.height, map.width
                )));
            }
            for &tau in &ms.taus {
                pairs.push(EvalPair {
                    method: Method::Daam { tau },
                    prediction: threshold(&map, tau).mask,
                    truth: seg.clone(),
                });
            }
            if baseline == Some(Baseline::Random) {
                pairs.push(EvalPair {
                    method: Method::Random,
                    prediction: random_baseline(map.height, map.width, derive_seed(seed, random_index)),
                    truth: seg.clone(),
                });
                random_index += 1;
            }
        }
    }

    let open = evaluate(
        &pairs,
        &EvalConfig {
            restriction: Restriction::Open,
            execution: Execution::default(),
        },
    )?;
    let closed = evaluate(
        &pairs,
        &EvalConfig {
            restriction,
            execution: Execution::default(),
        },
    )?;
    if let Some(csv) = &args.csv {
        open.write_csv(csv)?;
    }
    let output = EvalOutput {
        class_list: class_source,
        taus: ms.taus,
        open,
        closed,
        skipped,
    };
    if args.out.is_some() {
        println!("{:<12} {:>10} {:>10}", "method", "mIoU-closed", "mIoU-open");
        for a in &output.open.aggregates {
            let closed = output
                .closed
                .miou(&a.method)
                .map(|v| format!("{:.1}", 100.0 * v))
                .unwrap_or_else(|| "-".into());
            println!("{:<12} {:>10} {:>10.1}", a.method, closed, 100.0 * a.miou);
        }
    }
    write_json(&output, args.out.as_deref())
}

#[derive(Debug, Serialize)]
struct PosOutput {
    tau: f64,
    records: usize,
    #[serde(flatten)]
    summary: PosSummary,
}

pub fn cmd_pos(settings: &Settings, args: &PosArgs) -> Result<()> {
    let ms = map_settings(settings, &args.map, &[crate::pos_stats::DEFAULT_TAU])?;
    let tau = match ms.taus.as_slice() {
        [t] => *t,
        _ => return Err(DaamError::Usage("pos takes exactly one tau".into())),
    };
    let mut records: Vec<IntensityRecord> = Vec::new();
    for path in expand_inputs(&args.input)? {
        let dump = open_dump(&path, ms.validate)?;
        records.extend(word_intensities(&dump, &dump.image_id(), tau, &ms.attribution)?);
    }
    if records.is_empty() {
        log::warn!("no part-of-speech tagged words in the input dumps");
        eprintln!("warning: no part-of-speech tagged words in the input dumps");
    }
    if let Some(csv) = &args.csv {
        write_records_csv(&records, csv)?;
    }
    let output = PosOutput {
        tau,
        records: records.len(),
        summary: summarize(&records),
    };
    write_json(&output, args.out.as_deref())
}

pub fn cmd_fixture(settings: &Settings, args: &FixtureArgs) -> Result<()> {
    match args.structured {
        Some(Structured::HotSquare) => {
            HotSquareFixture::write(&args.out)?;
        }
        None => {
            let seed = settings.parsed("seed", args.seed)?.unwrap_or(1);
            RandomFixture {
                layers: args.layers,
                steps: args.steps,
                tokens: args.tokens,
                seed,
                ..RandomFixture::default()
            }
            .write(&args.out)?;
        }
    }
    Ok(())
}

pub fn cmd_render(settings: &Settings, args: &RenderArgs) -> Result<()> {
    let ms = map_settings(settings, &args.map, &[crate::pos_stats::DEFAULT_TAU])?;
    let dump = open_dump(&args.input, ms.validate)?;
    let map = match (&args.word, args.token_index) {
        (Some(w), None) => {
            let found = find_words(&dump.manifest().words(), w);
            let info = found.first().ok_or_else(|| DaamError::UnknownWord(w.clone()))?;
            word_heat_maps(&dump, &[info.word_index], &ms.attribution)?.remove(0)
        }
        (None, Some(t)) => token_heat_maps(&dump, &[t], &ms.attribution)?.remove(0),
        _ => {
            return Err(DaamError::Usage(
                "render needs exactly one of --word or --token-index".into(),
            ))
        }
    };
    let mut spec = OverlaySpec::default();
    if let Some(a) = settings.parsed("alpha", args.alpha)? {
        spec.alpha = a;
    }
    if let Some(path) = settings.resolve("colormap", args.colormap.as_ref().map(|p| p.display().to_string())) {
        spec.colormap = Colormap::from_file(Path::new(&path))?;
    }
    let image_path = args.image.clone().unwrap_or_else(|| dump.root().join(IMAGE_FILE));
    let image = load_rgb(&image_path)?;
    let out = match args.draw {
        Draw::Soft => render_soft(&image, &map, &spec)?,
        Draw::Fill | Draw::Outline => {
            spec.draw_mode = if args.draw == Draw::Fill {
                DrawMode::HardFill
            } else {
                DrawMode::HardOutline
            };
            let tau = *ms
                .taus
                .first()
                .ok_or_else(|| DaamError::Usage("hard rendering needs a tau".into()))?;
            render_hard(&image, &threshold(&map, tau), &spec)?
        }
    };
    save_png_rgb(&out, &args.out)
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    for path in expand_inputs(&args.input)? {
        let dump = Dump::open(&path)?;
        let n = dump.validate_all()?;
        println!("{}: ok ({} slices)", path.display(), n);
    }
    Ok(())
}
