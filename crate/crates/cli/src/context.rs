use std::fmt;
use std::path::{Component, Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::Serialize;
use xrecolor::config::PipelineConfig;

pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "+",
    env!("XRECOLOR_GIT_DESCRIBE")
);

/// Marks an error as a numerical failure (exit code 3).
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<NumericalFailure>().is_some()
            || e.downcast_ref::<xrecolor::Error>()
                .is_some_and(|x| x.is_numerical())
    });
    if numerical {
        3
    } else {
        2
    }
}

pub struct Ctx {
    pub config: PipelineConfig,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

impl Ctx {
    pub fn out_path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    pub fn ensure_out_dir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.out.join(rel);
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(dir)
    }

    /// Writes `body` wrapped with command name, version, config hash and seed.
    pub fn write_report<T: Serialize>(
        &self,
        file: &str,
        command: &str,
        body: &T,
    ) -> Result<PathBuf> {
        let env = Envelope {
            command,
            version: VERSION,
            config_hash: self.config.hash(),
            seed: self.config.seed,
            body,
        };
        let path = self.out.join(file);
        write_json(&path, &env)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    xrecolor::io::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let bytes = xrecolor::io::read_file(path)?;
    serde_json::from_slice(&bytes)
        .with_context(|| format!("{} is not a valid {what}", path.display()))
}

/// `target` expressed relative to the directory `base`, when both resolve.
pub fn relative_path(base: &Path, target: &Path) -> String {
    let (Ok(base), Ok(target)) = (base.canonicalize(), target.canonicalize()) else {
        return target.display().to_string();
    };
    let b: Vec<Component> = base.components().collect();
    let t: Vec<Component> = target.components().collect();
    let common = b.iter().zip(&t).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c);
    }
    rel.to_string_lossy().replace('\\', "/")
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
