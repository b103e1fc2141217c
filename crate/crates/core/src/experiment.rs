//! Recipe-driven experiments: generate or load a corpus, train every model
//! variant, run the density sweep and write all artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archlang::{parse_blueprint, NetworkBlueprint};
use crate::cloud::write_atomic;
use crate::datagen::{make_synthetic_corpus, read_corpus, Corpus, CorpusSpec};
use crate::error::{Error, Result};
use crate::trainer::{density_sweep, save_checkpoint, sweep_csv, train, Checkpoint, TrainConfig};

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Generated in memory from a spec.
    Generate(CorpusSpec),
    /// A corpus directory or manifest, relative to the recipe.
    Path(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantRecipe {
    pub name: String,
    /// Inline blueprint text; exactly one of `arch` and `arch_file`.
    #[serde(default)]
    pub arch: Option<String>,
    #[serde(default)]
    pub arch_file: Option<String>,
    /// Inline training config; at most one of `config` and `config_file`.
    #[serde(default)]
    pub config: Option<TrainConfig>,
    #[serde(default)]
    pub config_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub corpus: CorpusSource,
    pub variants: Vec<VariantRecipe>,
    /// Strictly descending point budgets for the sweep.
    pub budgets: Vec<usize>,
    /// Seed for sweep subsampling.
    #[serde(default)]
    pub sweep_seed: u64,
    /// Output directory, relative to the recipe; overridable by the caller.
    #[serde(default)]
    pub out: Option<String>,
}

/// A recipe with every reference resolved and read.
#[derive(Debug, Clone)]
pub struct ResolvedRecipe {
    pub recipe: Recipe,
    pub base_dir: PathBuf,
    pub variants: Vec<(String, NetworkBlueprint, TrainConfig)>,
    /// SHA-256 of the recipe text and every referenced file, in order.
    pub config_hash: String,
}

impl Recipe {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("recipe: {e}")))
    }
}

fn read_ref(base: &Path, rel: &str, what: &str, hasher: &mut Sha256) -> Result<String> {
    let path = base.join(rel);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::config(format!("{what} `{}` cannot be read: {e}", path.display())))?;
    hasher.update(text.as_bytes());
    Ok(text)
}

/// Parses the recipe and reads every file it references, so a missing or
/// malformed input fails before any training starts.
pub fn resolve_recipe(path: impl AsRef<Path>) -> Result<ResolvedRecipe> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("recipe `{}` cannot be read: {e}", path.display())))?;
    let recipe = Recipe::from_json(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());

    if recipe.variants.is_empty() {
        return Err(Error::config("recipe lists no variants"));
    }
    if recipe.budgets.is_empty() || recipe.budgets.windows(2).any(|w| w[0] <= w[1]) || recipe.budgets.contains(&0) {
        return Err(Error::config("budgets must be positive and strictly descending"));
    }
    if let CorpusSource::Path(p) = &recipe.corpus {
        let full = base.join(p);
        let manifest = if full.is_dir() { full.join(crate::datagen::corpus::MANIFEST_NAME) } else { full };
        read_ref(&base, &manifest.to_string_lossy(), "corpus manifest", &mut hasher)?;
    }
    let mut seen = BTreeMap::new();
    let mut variants = Vec::new();
    for v in &recipe.variants {
        if seen.insert(v.name.clone(), ()).is_some() {
            return Err(Error::config(format!("variant name `{}` is used twice", v.name)));
        }
        if v.name.is_empty() || v.name.contains(|c: char| c == ',' || c == '/' || c.is_whitespace()) {
            return Err(Error::config(format!("variant name `{}` must be non-empty without commas, slashes or spaces", v.name)));
        }
        let arch = match (&v.arch, &v.arch_file) {
            (Some(a), None) => {
                hasher.update(a.as_bytes());
                a.clone()
            }
            (None, Some(f)) => read_ref(&base, f, "blueprint", &mut hasher)?,
            _ => return Err(Error::config(format!("variant `{}` needs exactly one of arch, arch_file", v.name))),
        };
        let blueprint = parse_blueprint(&arch).map_err(|e| Error::config(format!("variant `{}`: {e}", v.name)))?;
        let config = match (&v.config, &v.config_file) {
            (Some(c), None) => c.clone(),
            (None, Some(f)) => TrainConfig::from_json(&read_ref(&base, f, "config", &mut hasher)?)?,
            (None, None) => TrainConfig::default(),
            _ => return Err(Error::config(format!("variant `{}` has both config and config_file", v.name))),
        };
        config.validate()?;
        variants.push((v.name.clone(), blueprint, config));
    }
    let config_hash = format!("{:x}", hasher.finalize());
    Ok(ResolvedRecipe {
        recipe,
        base_dir: base,
        variants,
        config_hash,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub sweep_seed: u64,
    pub corpus: CorpusSource,
    /// Variant name to its training seed.
    pub seeds: BTreeMap<String, u64>,
    pub blueprints: BTreeMap<String, String>,
    pub files: Vec<String>,
}

pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub checkpoints: Vec<(String, Checkpoint)>,
    pub sweep_csv: String,
}

pub fn load_recipe_corpus(resolved: &ResolvedRecipe) -> Result<Corpus> {
    match &resolved.recipe.corpus {
        CorpusSource::Generate(spec) => make_synthetic_corpus(spec),
        CorpusSource::Path(p) => read_corpus(resolved.base_dir.join(p)),
    }
}

/// Runs a recipe. Writes `<variant>.ckpt`, `<variant>_metrics.csv`,
/// `sweep.csv` and `manifest.json` into the output directory.
pub fn run_experiment(recipe_path: impl AsRef<Path>, out_override: Option<&Path>) -> Result<ExperimentOutput> {
    let resolved = resolve_recipe(recipe_path.as_ref())?;
    let out_dir = match (out_override, &resolved.recipe.out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(rel)) => resolved.base_dir.join(rel),
        (None, None) => return Err(Error::config("no output directory: set `out` in the recipe or pass one")),
    };
    let corpus = load_recipe_corpus(&resolved)?;
    std::fs::create_dir_all(&out_dir)?;

    let mut files = Vec::new();
    let mut checkpoints = Vec::new();
    for (name, blueprint, config) in &resolved.variants {
        let outcome = train(blueprint, &corpus, config)?;
        let ckpt = format!("{name}.ckpt");
        save_checkpoint(&outcome.checkpoint, out_dir.join(&ckpt))?;
        let metrics = format!("{name}_metrics.csv");
        write_atomic(&out_dir.join(&metrics), outcome.log.to_csv().as_bytes())?;
        files.extend([ckpt, metrics]);
        checkpoints.push((name.clone(), outcome.checkpoint));
    }
    let models: Vec<(String, &Checkpoint)> = checkpoints.iter().map(|(n, c)| (n.clone(), c)).collect();
    let rows = density_sweep(&models, &corpus, &resolved.recipe.budgets, resolved.recipe.sweep_seed)?;
    let sweep = sweep_csv(&rows);
    write_atomic(&out_dir.join("sweep.csv"), sweep.as_bytes())?;
    files.push("sweep.csv".into());

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: resolved.config_hash.clone(),
        sweep_seed: resolved.recipe.sweep_seed,
        corpus: resolved.recipe.corpus.clone(),
        seeds: resolved.variants.iter().map(|(n, _, c)| (n.clone(), c.seed)).collect(),
        blueprints: resolved.variants.iter().map(|(n, b, _)| (n.clone(), b.to_string())).collect(),
        files,
    };
    write_atomic(&out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(ExperimentOutput {
        out_dir,
        checkpoints,
        sweep_csv: sweep,
    })
}
