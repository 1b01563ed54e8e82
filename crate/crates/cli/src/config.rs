use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rlp_core::backends::{BackendConfig, BackendKind};
use rlp_core::cognition::WindowPolicy;
use rlp_core::prompt::PromptTemplate;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "RLP_CONFIG";
pub const DEFAULT_CONFIG: &str = "rlp.toml";

/// Contents of `rlp.toml`. Relative paths are taken from the file's
/// directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub personas_dir: Option<PathBuf>,
    pub sessions_dir: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendConfig,
    pub template: Option<PromptTemplate>,
    pub window: Option<WindowPolicy>,
    #[serde(default)]
    pub service: ServiceSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: Option<SocketAddr>,
    pub buffer: Option<usize>,
}

impl Config {
    /// `explicit`, else `$RLP_CONFIG`, else `./rlp.toml` if present.
    pub fn discover(explicit: Option<&Path>) -> anyhow::Result<Self> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Some(PathBuf::from(p)),
                None => Some(PathBuf::from(DEFAULT_CONFIG)).filter(|p| p.is_file()),
            },
        };
        match path {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Config =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.personas_dir.as_mut().map(rebase);
        config.sessions_dir.as_mut().map(rebase);
        config.backend.fixture.as_mut().map(rebase);
        Ok(config)
    }

    pub fn personas_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.personas_dir.clone()).unwrap_or_else(|| "personas".into())
    }

    pub fn sessions_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.sessions_dir.clone()).unwrap_or_else(|| "sessions".into())
    }

    /// Applies a `--backend` flag: `scripted:<fixture>` or `http`.
    pub fn backend(&self, flag: Option<&str>) -> anyhow::Result<BackendConfig> {
        let mut backend = self.backend.clone();
        match flag {
            None => {}
            Some("http") => backend.kind = Some(BackendKind::Http),
            Some(other) => match other.strip_prefix("scripted:") {
                Some(path) if !path.is_empty() => {
                    backend.kind = Some(BackendKind::Scripted);
                    backend.fixture = Some(path.into());
                }
                _ => anyhow::bail!("--backend must be `http` or `scripted:<fixture path>`, got `{other}`"),
            },
        }
        Ok(backend)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rlp.toml");
        std::fs::write(
            &path,
            "personas_dir = \"p\"\n[backend]\nkind = \"scripted\"\nfixture = \"f.toml\"\n[service]\nbind = \"127.0.0.1:9000\"\n",
        )
        .unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.personas_dir(None), dir.path().join("p"));
        assert_eq!(c.backend.fixture, Some(dir.path().join("f.toml")));
        assert_eq!(c.sessions_dir(None), PathBuf::from("sessions"));
        assert_eq!(c.service.bind.unwrap().port(), 9000);
    }

    #[test]
    fn backend_flag() {
        let c = Config::default();
        let b = c.backend(Some("scripted:x.toml")).unwrap();
        assert_eq!(b.kind, Some(BackendKind::Scripted));
        assert_eq!(b.fixture, Some(PathBuf::from("x.toml")));
        assert_eq!(c.backend(Some("http")).unwrap().kind, Some(BackendKind::Http));
        assert!(c.backend(Some("scripted:")).is_err());
        assert!(c.backend(Some("ftp")).is_err());
    }
}
