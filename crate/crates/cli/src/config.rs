use serde::{Deserialize, Serialize};
use sgweyl::cutoff::CutoffConfig;
use sgweyl::spectral::canonical_model;
use sgweyl::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Overrides of the derived cutoff constants. `a` and `c` are upper bounds
/// for the ellipticity constant and the phase-gradient constant of q; the
/// phase stage checks the measured values against them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffSection {
    pub a: f64,
    pub c: f64,
    /// eikonal time T
    pub t: f64,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub eps: Option<f64>,
    pub k0: Option<f64>,
    pub lambda0: Option<f64>,
}

impl Default for CutoffSection {
    fn default() -> Self {
        CutoffSection { a: 1.0, c: 1.1309, t: 0.2, k1: None, k2: None, eps: None, k0: None, lambda0: None }
    }
}

/// Order of q = ⟨x⟩⟨ξ⟩^{1/2} in ξ.
pub const Q_ORDER: f64 = 0.5;

impl CutoffSection {
    pub fn build(&self) -> Result<CutoffConfig> {
        let mut c = CutoffConfig::derive(self.a, self.c, Q_ORDER, self.t);
        if let Some(v) = self.k1 {
            c.k1 = v;
        }
        if let Some(v) = self.k2 {
            c.k2 = v;
        }
        if let Some(v) = self.eps {
            c.eps = v;
        }
        if let Some(v) = self.k0 {
            c.k0 = v;
        }
        c.lambda0 = match self.lambda0 {
            Some(v) => v,
            None if self.k1.is_some() || self.k2.is_some() => 1.25 * 2.0 * c.k1 * (1.0 + 4.0 * c.k2 * c.k2).sqrt().powf(c.m),
            None => c.lambda0,
        };
        c.kappa = (1.0 - c.eps / 2.0) / (c.a * (2.0 * c.k2).powf(c.m));
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// relative agreement between basis sizes for an eigenvalue to be trusted
    pub trust_rel: f64,
    /// absolute quadrature tolerance of the closed-form constants
    pub constants: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { trust_rel: 1e-6, constants: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Windows {
    /// Weyl fit window; the top trusted decade when unset
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    /// λ values of the direct trace quadrature
    pub direct: Vec<f64>,
    /// octave of the nonstationary decay measurements
    pub decay: Vec<f64>,
    /// λ values of the n = 2 fixed-point suite
    pub fixed_point: Vec<f64>,
    /// half-width of the Tauberian window
    pub tauber_t: f64,
    /// points of the log-spaced trace cross-check grid
    pub crosscheck_points: usize,
}

impl Default for Windows {
    fn default() -> Self {
        Windows {
            lambda_min: None,
            lambda_max: None,
            direct: vec![100.0, 200.0, 400.0],
            decay: vec![400.0, 800.0],
            fixed_point: vec![40.0, 120.0, 400.0, 1200.0, 4000.0],
            tauber_t: 8.0,
            crosscheck_points: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: String,
    /// basis sizes per model, ascending; the first is the reported dataset,
    /// the second the one it is trusted against
    pub basis_dims: BTreeMap<String, Vec<usize>>,
    pub tolerances: Tolerances,
    pub windows: Windows,
    pub cutoff: CutoffSection,
    pub output: PathBuf,
    pub cache_dir: PathBuf,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut dims = BTreeMap::new();
        dims.insert("oracle-h".to_string(), vec![400]);
        dims.insert("model-a".to_string(), vec![2000, 3000]);
        dims.insert("model-b".to_string(), vec![2000, 3000]);
        ExperimentConfig {
            model: "model-b".into(),
            basis_dims: dims,
            tolerances: Tolerances::default(),
            windows: Windows::default(),
            cutoff: CutoffSection::default(),
            output: PathBuf::from("out"),
            cache_dir: PathBuf::from("cache"),
            threads: 1,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    /// Canonical model ids in the dims table and the selected model.
    pub fn validate(&self) -> Result<()> {
        canonical_model(&self.model)?;
        for (k, dims) in &self.basis_dims {
            if canonical_model(k)? != k {
                return Err(invalid(format!("basis_dims key {k} is not a canonical model id")));
            }
            if dims.is_empty() || dims.iter().any(|&d| d == 0) || dims.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid(format!("basis_dims for {k} must be positive and ascending, got {dims:?}")));
            }
        }
        let t = &self.tolerances;
        if !(t.trust_rel > 0.0 && t.trust_rel < 1.0 && t.constants > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        let w = &self.windows;
        if let (Some(a), Some(b)) = (w.lambda_min, w.lambda_max) {
            if !(a > 0.0 && b > a) {
                return Err(invalid(format!("lambda window [{a}, {b}] is empty")));
            }
        }
        if w.direct.len() < 2 || w.decay.len() < 2 || w.fixed_point.is_empty() {
            return Err(invalid("direct and decay need at least two lambda values"));
        }
        let ascending = |v: &[f64]| v.windows(2).all(|p| p[1] > p[0]);
        if w.direct.iter().chain(&w.decay).any(|&l| !(l > 0.0)) || !ascending(&w.direct) || !ascending(&w.decay) {
            return Err(invalid("lambda values must be positive and ascending"));
        }
        if !(w.tauber_t > 0.0) || w.crosscheck_points < 3 {
            return Err(invalid("tauber_t must be positive and the cross-check needs 3 points"));
        }
        if self.threads == 0 {
            return Err(invalid("threads must be at least 1"));
        }
        self.cutoff.build()?;
        Ok(())
    }

    pub fn model_id(&self) -> &'static str {
        canonical_model(&self.model).expect("validated")
    }

    pub fn dims(&self, model: &str) -> Result<&[usize]> {
        self.basis_dims
            .get(model)
            .map(|v| v.as_slice())
            .ok_or_else(|| invalid(format!("no basis_dims entry for {model}")))
    }

    /// Hash of everything that affects results; output location, cache
    /// location and thread count are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.cache_dir = PathBuf::new();
        c.threads = 1;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
