//! Run configuration, output provenance and verification.
//!
//! A config is TOML with fixed sections. Every key has a default, every
//! unknown key is an error, and the fully resolved config is hashed so each
//! output file can name the run that produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amplitude::Amplitude;
use crate::critical::TestFunction;
use crate::error::{Error, Result};
use crate::experiments::StudySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSection {
    /// `gaussian(s)`, `bump(r)` or `table(path, tail=κ)`.
    pub amplitude: String,
    pub m: usize,
    /// Keep only the first `k` modes; 0 keeps all.
    pub modes: usize,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            amplitude: "gaussian(1)".into(),
            m: 1,
            modes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySection {
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            r: vec![8.0, 16.0, 32.0, 64.0],
            trials: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestFunctionSection {
    /// `bump`, `indicator`, `full` or `zero`.
    pub kind: String,
    pub center: Vec<f64>,
    pub r0: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Default for TestFunctionSection {
    fn default() -> Self {
        Self {
            kind: "bump".into(),
            center: vec![],
            r0: 0.25,
            lo: vec![],
            hi: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KacRiceSection {
    pub n_mc_one: usize,
    pub n_mc_two: usize,
    pub quad_nodes: usize,
    /// Separations (along `e₁`, x-units) for two-point scans.
    pub r_grid: Vec<f64>,
}

impl Default for KacRiceSection {
    fn default() -> Self {
        Self {
            n_mc_one: crate::kac_rice::N_MC_ONE_POINT,
            n_mc_two: crate::kac_rice::N_MC_TWO_POINT,
            quad_nodes: 8,
            r_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlnSection {
    #[serde(rename = "N")]
    pub n: Vec<f64>,
    pub streams: usize,
}

impl Default for LlnSection {
    fn default() -> Self {
        Self {
            n: vec![4.0, 8.0, 16.0, 24.0],
            streams: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlowupSection {
    pub r_grid: Vec<f64>,
    pub trials: usize,
}

impl Default for BlowupSection {
    fn default() -> Self {
        Self {
            r_grid: vec![1.0, 0.5, 0.25, 0.1, 0.05, 0.01, 0.001],
            trials: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub field: FieldSection,
    pub study: StudySection,
    pub test_function: TestFunctionSection,
    pub kac_rice: KacRiceSection,
    pub lln: LlnSection,
    pub blowup: BlowupSection,
    pub output: OutputSection,
}

fn unknown_keys(given: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    let (Some(g), Some(k)) = (given.as_table(), known.as_table()) else {
        return;
    };
    for (key, val) in g {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match k.get(key) {
            None => out.push(path),
            Some(kv) if kv.is_table() => unknown_keys(val, kv, &path, out),
            Some(_) => {}
        }
    }
}

impl Config {
    /// Parses TOML text; unknown keys are all reported at once.
    pub fn from_toml(text: &str) -> Result<Self> {
        let given: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let known = toml::Value::try_from(Config::default()).map_err(|e| Error::Config(e.to_string()))?;
        let mut bad = Vec::new();
        unknown_keys(&given, &known, "", &mut bad);
        if !bad.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", bad.join(", "))));
        }
        let cfg: Config = given
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(1..=crate::MAX_DIM).contains(&self.field.m) {
            errs.push(format!("field.m = {} must be 1..={}", self.field.m, crate::MAX_DIM));
        }
        if let Err(e) = Amplitude::parse(&self.field.amplitude) {
            errs.push(format!("field.amplitude: {e}"));
        }
        if self.study.trials < 2 {
            errs.push("study.trials must be at least 2".into());
        }
        if self.study.r.iter().any(|r| !(*r > 0.0)) {
            errs.push("study.R entries must be positive".into());
        }
        if let Err(e) = self.test_function() {
            errs.push(format!("test_function: {e}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    pub fn amplitude(&self) -> Result<Amplitude> {
        Amplitude::parse(&self.field.amplitude)
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        let m = self.field.m.min(crate::MAX_DIM);
        let t = &self.test_function;
        let pad = |v: &[f64], fill: f64| -> Result<Vec<f64>> {
            match v.len() {
                0 => Ok(vec![fill; m]),
                n if n == m => Ok(v.to_vec()),
                n => Err(Error::Config(format!("expected {m} coordinates, got {n}"))),
            }
        };
        match t.kind.as_str() {
            "bump" => TestFunction::bump(&pad(&t.center, 0.0)?, t.r0),
            "indicator" => {
                let lo = pad(&t.lo, 0.0)?;
                let hi = pad(&t.hi, 1.0)?;
                let mut a = [0.0; crate::MAX_DIM];
                let mut b = [0.0; crate::MAX_DIM];
                a[..m].copy_from_slice(&lo);
                b[..m].copy_from_slice(&hi);
                Ok(TestFunction::Indicator { lo: a, hi: b })
            }
            "full" => Ok(TestFunction::FullTorus),
            "zero" => Ok(TestFunction::Zero),
            other => Err(Error::Config(format!("unknown test function kind '{other}'"))),
        }
    }

    pub fn study_spec(&self) -> Result<StudySpec> {
        Ok(StudySpec {
            amplitude: self.amplitude()?,
            m: self.field.m,
            f: self.test_function()?,
            trials: self.study.trials,
            seed: self.study.seed,
            modes: (self.field.modes > 0).then_some(self.field.modes),
            skip_gate: false,
        })
    }

    /// Resolved config with all defaults, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form of the resolved config. The output
    /// directory is left out: moving a run does not change what it computed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

const HASH_PREFIX: &str = "# config_hash=";

/// Output file list of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: Config,
    /// File name → SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    /// Headline numbers of the run.
    pub summary: serde_json::Value,
}

/// Collects outputs under one directory and stamps each with the config hash.
pub struct OutputSink {
    dir: PathBuf,
    config: Config,
    hash: String,
    command: String,
    files: BTreeMap<String, String>,
}

impl OutputSink {
    pub fn new(dir: &Path, config: &Config, command: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config: config.clone(),
            hash: config.hash(),
            command: command.into(),
            files: BTreeMap::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    /// Writes a CSV produced by `body`, preceded by a `# config_hash=` line.
    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = format!("{HASH_PREFIX}{}\n", self.hash).into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes JSON with the config hash as a top-level field.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("config_hash".into(), self.hash.clone().into());
        } else {
            v = serde_json::json!({ "config_hash": self.hash, "value": v });
        }
        let text = serde_json::to_string_pretty(&v)?;
        self.write(name, text.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.insert(name.into(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn finish(self, summary: serde_json::Value) -> Result<PathBuf> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.hash,
            config: self.config,
            files: self.files,
            summary,
        };
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

/// Re-checks a run directory: manifest hash against its config, file digests,
/// and the hash embedded in every file.
pub fn verify_dir(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::Verify("manifest config does not match its hash".into()));
    }
    for (name, digest) in &manifest.files {
        let bytes = fs::read(dir.join(name))?;
        if &sha256_hex(&bytes) != digest {
            return Err(Error::Verify(format!("{name}: content digest mismatch")));
        }
        let text = String::from_utf8_lossy(&bytes);
        let embedded = if name.ends_with(".json") {
            serde_json::from_str::<serde_json::Value>(&text)?
                .get("config_hash")
                .and_then(|v| v.as_str())
                .map(str::to_string)
        } else {
            text.lines()
                .next()
                .and_then(|l| l.strip_prefix(HASH_PREFIX))
                .map(str::to_string)
        };
        if embedded.as_deref() != Some(manifest.config_hash.as_str()) {
            return Err(Error::Verify(format!("{name}: embedded config hash missing or wrong")));
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        let back = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let text = r#"
            typo = 1
            [field]
            amplitude = "gaussian(1)"
            dimension = 2
            [study]
            R = [8.0]
            trails = 5
            [nonsense]
            x = 1
        "#;
        let err = Config::from_toml(text).unwrap_err().to_string();
        for key in ["typo", "field.dimension", "study.trails", "nonsense"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[field]\nm = 5").is_err());
        assert!(Config::from_toml("[field]\namplitude = \"cauchy(1)\"").is_err());
        assert!(Config::from_toml("[test_function]\nr0 = 0.7").is_err());
        assert!(Config::from_toml("[study]\ntrials = 1").is_err());
    }

    #[test]
    fn hash_tracks_every_value() {
        let a = Config::default();
        let mut b = a.clone();
        b.study.seed += 1;
        assert_ne!(a.hash(), b.hash());
        let c = Config::from_toml("[study]\nseed = 1").unwrap();
        assert_eq!(a.hash(), c.hash());
        let mut d = a.clone();
        d.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn outputs_verify_and_detect_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::default();
        let mut sink = OutputSink::new(dir.path(), &cfg, "test").unwrap();
        sink.csv("a.csv", |w| {
            w.extend_from_slice(b"x,y\n1,2\n");
            Ok(())
        })
        .unwrap();
        sink.json("b.json", &serde_json::json!({"v": 1.5})).unwrap();
        sink.finish(serde_json::json!({})).unwrap();
        verify_dir(dir.path()).unwrap();
        let p = dir.path().join("a.csv");
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("3,4\n");
        fs::write(&p, text).unwrap();
        assert!(matches!(verify_dir(dir.path()), Err(Error::Verify(_))));
    }
}
