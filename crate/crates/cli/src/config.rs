use std::fs;
use std::path::Path;
use std::str::FromStr;

use hpfa::model::{parse_key_values, ModelConfig, Variant};

use crate::args::ModelArgs;
use crate::error::{CliError, CliResult};

/// Settings read from a `key=value` file. Command-specific keys are taken
/// out first; whatever remains must be a model setting.
#[derive(Debug, Default)]
pub struct ConfigFile {
    entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        Ok(ConfigFile { entries: parse_key_values(&text)? })
    }

    /// Removes and returns the last value given for `key`. Dashes and
    /// underscores are interchangeable.
    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        let norm = |s: &str| s.replace('-', "_");
        let want = norm(key);
        let mut found = None;
        self.entries.retain(|(k, v)| {
            if norm(k) == want {
                found = Some(v.clone());
                false
            } else {
                true
            }
        });
        found
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.take_raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::validation(format!("config: bad value for {key}: `{v}`"))),
        }
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str) -> CliResult<Option<Vec<T>>> {
        match self.take_raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| x.parse().map_err(|_| CliError::validation(format!("config: bad entry `{x}` in {key}"))))
                .collect::<CliResult<Vec<T>>>()
                .map(Some),
        }
    }

    /// Applies the remaining entries to `cfg`; unknown keys are an error.
    /// `k` goes first so K-dependent defaults see the final value.
    pub fn apply_model(mut self, cfg: &mut ModelConfig) -> CliResult<()> {
        if let Some(k) = self.take_raw("k") {
            cfg.set("k", &k)?;
        }
        for (key, value) in &self.entries {
            if !cfg.set(&key.replace('-', "_"), value)? {
                return Err(CliError::validation(format!("config: unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn finish(self) -> CliResult<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((k, _)) => Err(CliError::validation(format!("config: unknown key `{k}`"))),
        }
    }
}

pub const DEFAULT_K: usize = 25;
pub const DEFAULT_VARIANT: &str = "aa";

/// Flag values that select the model.
#[derive(Debug, Clone, Copy)]
pub struct ModelFlags<'a> {
    pub k: Option<usize>,
    pub variant: Option<&'a str>,
    pub local_topics: bool,
    pub default_k: usize,
    pub default_variant: &'a str,
}

impl Default for ModelFlags<'_> {
    fn default() -> Self {
        ModelFlags { k: None, variant: None, local_topics: false, default_k: DEFAULT_K, default_variant: DEFAULT_VARIANT }
    }
}

/// Builds a model config from defaults, then the config file, then flags.
pub fn model_config(file: ConfigFile, flags: &ModelArgs, model: ModelFlags<'_>) -> CliResult<ModelConfig> {
    let ModelFlags { k, variant, local_topics, .. } = model;
    let mut cfg = ModelConfig::new(model.default_k, model.default_variant.parse::<Variant>()?);
    file.apply_model(&mut cfg)?;
    if let Some(v) = variant {
        let lt = cfg.variant.local_topics;
        cfg.variant = v.parse()?;
        cfg.variant.local_topics |= lt;
    }
    if local_topics {
        cfg.variant.local_topics = true;
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    let s = &mut cfg.sampler;
    if let Some(x) = flags.burnin {
        s.burn_in = x;
    }
    if let Some(x) = flags.samples {
        s.n_samples = x;
    }
    if let Some(x) = flags.thin {
        s.thin = x;
    }
    if let Some(x) = flags.chains {
        s.chains = x;
    }
    if let Some(x) = flags.seed {
        s.seed = x;
    }
    if let Some(x) = &flags.storage {
        s.storage = x.parse()?;
    }
    Ok(cfg)
}
