use std::path::{Path, PathBuf};

use curlhom::cell::spectral::SmoothCoefficient;
use curlhom::homogenised::MacroField;
use curlhom::laminate::LaminateProfile;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Level cap shared by the laminate tables and the generic recurrence.
pub const MAX_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// Piecewise constant alpha(y2) I, layers listed from y2 = 0.
    Laminate { values: Vec<f64>, widths: Vec<f64> },
    /// The same layers blended over `cells` grid cells, sampled on the 3D grid.
    SmoothedLaminate {
        values: Vec<f64>,
        widths: Vec<f64>,
        #[serde(default = "default_cells")]
        cells: f64,
    },
    Anisotropic { amplitude: f64 },
    Scalar3d { amplitude: f64 },
}

fn default_cells() -> f64 {
    2.0
}

impl CoefficientSpec {
    pub fn profile(&self) -> CliResult<LaminateProfile> {
        match self {
            CoefficientSpec::Laminate { values, widths } | CoefficientSpec::SmoothedLaminate { values, widths, .. } => {
                Ok(LaminateProfile::from_widths(values, widths)?)
            }
            _ => Err(CliError::Infeasible(format!("{} is not a layered coefficient", self.name()))),
        }
    }

    /// Smooth coefficient for the 3D spectral path; laminates are smoothed
    /// over two grid cells.
    pub fn smooth(&self) -> SmoothCoefficient {
        match self {
            CoefficientSpec::Laminate { values, widths } => {
                SmoothCoefficient::SmoothedLaminate { values: values.clone(), widths: widths.clone(), cells: 2.0 }
            }
            CoefficientSpec::SmoothedLaminate { values, widths, cells } => {
                SmoothCoefficient::SmoothedLaminate { values: values.clone(), widths: widths.clone(), cells: *cells }
            }
            CoefficientSpec::Anisotropic { amplitude } => SmoothCoefficient::Anisotropic3d { amplitude: *amplitude },
            CoefficientSpec::Scalar3d { amplitude } => SmoothCoefficient::Scalar3d { amplitude: *amplitude },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CoefficientSpec::Laminate { .. } => "laminate",
            CoefficientSpec::SmoothedLaminate { .. } => "smoothed-laminate",
            CoefficientSpec::Anisotropic { .. } => "anisotropic",
            CoefficientSpec::Scalar3d { .. } => "scalar3d",
        }
    }
}

/// One Fourier mode of a vector potential; the source is its curl.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceMode {
    pub k: [i64; 3],
    pub potential: [f64; 3],
    #[serde(default)]
    pub potential_im: [f64; 3],
}

pub fn source_field(period: f64, modes: &[SourceMode]) -> CliResult<MacroField> {
    let pots: Vec<([i64; 3], [C64; 3])> = modes
        .iter()
        .map(|m| (m.k, [0, 1, 2].map(|i| C64::new(m.potential[i], m.potential_im[i]))))
        .collect();
    Ok(MacroField::curl_of(period, &pots)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Closed-form identities and exact tensor equalities.
    pub identity: f64,
    pub equivalence_laminate: f64,
    pub equivalence_general: f64,
    /// Constitutive-law and energy-relation comparisons.
    pub law: f64,
    pub oscillation: f64,
    pub identity_defect: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity: 1e-12,
            equivalence_laminate: 1e-8,
            equivalence_general: 1e-6,
            law: 1e-8,
            oscillation: 1e-12,
            identity_defect: 1e-14,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstitutiveSpec {
    pub permeability: Layers,
    pub permittivity: Layers,
    /// First-order current; the zeroth-order one is the run source.
    pub current: Vec<SourceMode>,
    /// Random curl-type inputs for the law comparison.
    pub samples: usize,
    /// Law truncation order in eps.
    pub order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layers {
    pub values: Vec<f64>,
    pub widths: Vec<f64>,
}

impl Layers {
    pub fn profile(&self) -> CliResult<LaminateProfile> {
        Ok(LaminateProfile::from_widths(&self.values, &self.widths)?)
    }
}

impl Default for ConstitutiveSpec {
    fn default() -> Self {
        ConstitutiveSpec {
            permeability: Layers { values: vec![1.0, 2.0], widths: vec![0.5, 0.5] },
            permittivity: Layers { values: vec![1.0, 3.0, 2.0], widths: vec![0.2, 0.5, 0.3] },
            current: vec![SourceMode { k: [0, 1, 1], potential: [0.1, 0.4, 0.0], potential_im: [0.0; 3] }],
            samples: 10,
            order: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub coefficient: CoefficientSpec,
    pub grid_n: usize,
    /// Number of corrector levels J.
    pub levels: usize,
    pub period: f64,
    pub eps: Vec<f64>,
    /// Truncation orders K.
    pub orders: Vec<usize>,
    pub source: Vec<SourceMode>,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub shifts: usize,
    pub trials: usize,
    /// Spectral-element degree of the laminate fine solver.
    pub degree: usize,
    pub subdivisions: usize,
    pub constitutive: ConstitutiveSpec,
    /// Output directory; not part of the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            coefficient: CoefficientSpec::Laminate { values: vec![1.0, 2.0], widths: vec![0.5, 0.5] },
            grid_n: 32,
            levels: 3,
            period: 1.0,
            eps: vec![0.125, 0.0625, 0.03125],
            orders: vec![1, 2, 3],
            source: vec![
                SourceMode { k: [1, 1, 2], potential: [0.3, -0.2, 0.5], potential_im: [0.0; 3] },
                SourceMode { k: [0, 1, 0], potential: [0.4, 0.0, -0.1], potential_im: [0.0; 3] },
            ],
            tolerances: Tolerances::default(),
            seed: 7,
            shifts: 32,
            trials: 20,
            degree: 12,
            subdivisions: 1,
            constitutive: ConstitutiveSpec::default(),
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| CliError::Read { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        RunConfig::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> CliResult<RunConfig> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.period.is_finite() && self.period > 0.0) {
            return bad(format!("period {} must be positive", self.period));
        }
        for &e in &self.eps {
            if !(e.is_finite() && e > 0.0) {
                return bad(format!("eps {e} must be positive"));
            }
            let r = self.period / e;
            if (r - r.round()).abs() > 1e-9 * r.max(1.0) {
                return bad(format!("period / eps = {r} is not an integer for eps = {e}"));
            }
        }
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return bad(format!("levels {} outside 1..={MAX_LEVELS}", self.levels));
        }
        if self.grid_n < 8 || self.grid_n % 2 != 0 {
            return bad(format!("grid_n {} must be even and at least 8", self.grid_n));
        }
        if self.orders.iter().any(|&k| k == 0) {
            return bad("truncation orders start at 1".into());
        }
        if self.degree < 2 || self.subdivisions == 0 {
            return bad("degree >= 2 and subdivisions >= 1 required".into());
        }
        let t = &self.tolerances;
        for v in [t.identity, t.equivalence_laminate, t.equivalence_general, t.law, t.oscillation, t.identity_defect] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("tolerance {v} must be positive"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (output directory excluded).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        format!("{:x}", Sha256::digest(&bytes))
    }
}

/// `a.b.c=value`, with value read as a TOML literal and falling back to a
/// bare string. Only scalars and arrays may be overridden.
fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    if value.is_table() {
        return Err(CliError::Config(format!("override '{key}' must be a scalar or array")));
    }
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
