//! Line-oriented run configuration: `key = value` pairs under `[section]`
//! headers, `#` comments, UTF-8. Parse errors carry line numbers.
//!
//! ```text
//! seed = 42
//! [grid]
//! n_side = 64
//! [form]
//! kind = cosine:2.0          # lebesgue | cosine:A | file:path
//! [measure]
//! kind = klt                 # lebesgue | klt | file:path
//! poles = (0.5,0.5,0.5) (0.25,0.25,-1.0)
//! [solver]
//! beta = -1.5
//! tol_residual = 1e-9
//! tol_gap = 1e-8
//! max_iter = 20000
//! damping = 0.3
//! override_coercivity = false
//! [sweep]
//! betas = 1,4,16,64,256
//! [output]
//! dir = out
//! heatmaps = true
//! ```

use crate::error::{Error, Result};
use crate::grid::{BackgroundForm, GridSpec, Point, ScalarField};
use crate::measure::Measure;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Parsed configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_side: usize,
    pub form_kind: String,
    pub measure_kind: String,
    pub poles: Vec<(f64, f64, f64)>,
    pub beta: f64,
    pub tol_residual: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
    pub damping: Option<f64>,
    pub override_coercivity: bool,
    pub sweep_betas: Vec<f64>,
    pub output_dir: PathBuf,
    pub heatmaps: bool,
    pub seed: u64,
    /// directory of the config file, for resolving file: references
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_side: 64,
            form_kind: "lebesgue".into(),
            measure_kind: "lebesgue".into(),
            poles: Vec::new(),
            beta: 1.0,
            tol_residual: 1e-9,
            tol_gap: 1e-8,
            max_iter: 20_000,
            damping: None,
            override_coercivity: false,
            sweep_betas: vec![1.0, 4.0, 16.0, 64.0, 256.0],
            output_dir: PathBuf::from("out"),
            heatmaps: true,
            seed: 42,
            base_dir: PathBuf::from("."),
        }
    }
}

fn config_err(line_no: usize, msg: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("config line {line_no}: {msg}"))
}

impl RunConfig {
    /// Parse a config file; errors carry 1-based line numbers.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_str_at(&text)?;
        cfg.base_dir = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    /// Parse config text.
    pub fn from_str_at(text: &str) -> Result<RunConfig> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line_no, "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line_no, format!("expected key = value, got `{line}`")))?;
            let full_key = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            if entries
                .insert(full_key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(config_err(line_no, format!("duplicate key {full_key}")));
            }
        }

        let mut cfg = RunConfig::default();
        let mut known = |k: &str| entries.remove(k);
        if let Some((ln, v)) = known("grid.n_side") {
            cfg.n_side = v
                .parse()
                .map_err(|_| config_err(ln, format!("invalid n_side `{v}`")))?;
        }
        if let Some((_, v)) = known("form.kind") {
            cfg.form_kind = v;
        }
        if let Some((_, v)) = known("measure.kind") {
            cfg.measure_kind = v;
        }
        if let Some((ln, v)) = known("measure.poles") {
            cfg.poles = parse_poles(&v).map_err(|m| config_err(ln, m))?;
        }
        if let Some((ln, v)) = known("solver.beta") {
            cfg.beta = parse_f64(&v).map_err(|m| config_err(ln, m))?;
        }
        if let Some((ln, v)) = known("solver.tol_residual") {
            cfg.tol_residual = parse_f64(&v).map_err(|m| config_err(ln, m))?;
        }
        if let Some((ln, v)) = known("solver.tol_gap") {
            cfg.tol_gap = parse_f64(&v).map_err(|m| config_err(ln, m))?;
        }
        if let Some((ln, v)) = known("solver.max_iter") {
            cfg.max_iter = v
                .parse()
                .map_err(|_| config_err(ln, format!("invalid max_iter `{v}`")))?;
        }
        if let Some((ln, v)) = known("solver.damping") {
            cfg.damping = Some(parse_f64(&v).map_err(|m| config_err(ln, m))?);
        }
        if let Some((ln, v)) = known("solver.override_coercivity") {
            cfg.override_coercivity = parse_bool(&v).map_err(|m| config_err(ln, m))?;
        }
        if let Some((ln, v)) = known("sweep.betas") {
            cfg.sweep_betas = v
                .split(',')
                .map(|s| parse_f64(s.trim()))
                .collect::<std::result::Result<_, _>>()
                .map_err(|m| config_err(ln, m))?;
        }
        if let Some((_, v)) = known("output.dir") {
            cfg.output_dir = PathBuf::from(v);
        }
        if let Some((ln, v)) = known("output.heatmaps") {
            cfg.heatmaps = parse_bool(&v).map_err(|m| config_err(ln, m))?;
        }
        if let Some((ln, v)) = known("seed") {
            cfg.seed = v
                .parse()
                .map_err(|_| config_err(ln, format!("invalid seed `{v}`")))?;
        }
        if let Some((key, (ln, _))) = entries.into_iter().next() {
            return Err(config_err(ln, format!("unknown key `{key}`")));
        }

        if cfg.tol_residual <= 0.0 || cfg.tol_gap <= 0.0 {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if cfg.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be >= 1".into()));
        }
        if let Some(d) = cfg.damping {
            if !(0.0 < d && d <= 1.0) {
                return Err(Error::Invalid(format!("damping {d} outside (0, 1]")));
            }
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n_side)
    }

    /// Build the background form named by `form.kind`.
    pub fn background_form(&self) -> Result<BackgroundForm> {
        let grid = self.grid()?;
        if self.form_kind == "lebesgue" {
            Ok(BackgroundForm::lebesgue(grid))
        } else if let Some(a) = self.form_kind.strip_prefix("cosine:") {
            let a = parse_f64(a).map_err(Error::Invalid)?;
            Ok(BackgroundForm::cosine(grid, a))
        } else if let Some(path) = self.form_kind.strip_prefix("file:") {
            let field = read_field_file(&self.base_dir.join(path), grid)?;
            BackgroundForm::from_density(field)
        } else {
            Err(Error::Invalid(format!(
                "unknown form.kind `{}` (lebesgue | cosine:A | file:path)",
                self.form_kind
            )))
        }
    }

    /// Build the background measure named by `measure.kind`.
    pub fn measure(&self) -> Result<Measure> {
        let grid = self.grid()?;
        if self.measure_kind == "lebesgue" {
            Ok(Measure::lebesgue(grid))
        } else if self.measure_kind == "klt" {
            if self.poles.is_empty() {
                return Err(Error::Invalid(
                    "measure.kind = klt requires measure.poles".into(),
                ));
            }
            let poles: Vec<(Point, f64)> = self
                .poles
                .iter()
                .map(|&(x, y, c)| (Point::new(x, y), c))
                .collect();
            Measure::klt(grid, &poles)
        } else if let Some(path) = self.measure_kind.strip_prefix("file:") {
            let field = read_field_file(&self.base_dir.join(path), grid)?;
            Measure::from_density(field)
        } else {
            Err(Error::Invalid(format!(
                "unknown measure.kind `{}` (lebesgue | klt | file:path)",
                self.measure_kind
            )))
        }
    }

    /// Echo of the effective configuration for the JSON artifacts.
    pub fn echo(&self) -> serde_json::Value {
        let mut poles = String::new();
        for &(x, y, c) in &self.poles {
            let _ = write!(poles, "({x},{y},{c}) ");
        }
        serde_json::json!({
            "grid": { "n_side": self.n_side },
            "form": { "kind": self.form_kind },
            "measure": { "kind": self.measure_kind, "poles": poles.trim() },
            "solver": {
                "beta": self.beta,
                "tol_residual": self.tol_residual,
                "tol_gap": self.tol_gap,
                "max_iter": self.max_iter,
                "damping": self.damping,
                "override_coercivity": self.override_coercivity,
            },
            "sweep": { "betas": self.sweep_betas },
            "output": { "dir": self.output_dir.display().to_string(), "heatmaps": self.heatmaps },
            "seed": self.seed,
        })
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("invalid number `{s}`"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("invalid boolean `{other}`")),
    }
}

/// Parse a whitespace-separated list of `(x,y,c)` triples.
fn parse_poles(s: &str) -> std::result::Result<Vec<(f64, f64, f64)>, String> {
    let mut out = Vec::new();
    for tok in s.split_whitespace() {
        let inner = tok
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| format!("pole `{tok}` is not of the form (x,y,c)"))?;
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("pole `{tok}` needs exactly three components"));
        }
        let x = parse_f64(parts[0])?;
        let y = parse_f64(parts[1])?;
        let c = parse_f64(parts[2])?;
        out.push((x, y, c));
    }
    Ok(out)
}

/// Field file format: first token n_side, then n_side^2 row-major values
/// (whitespace separated).
pub fn read_field_file(path: &Path, grid: GridSpec) -> Result<ScalarField> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut toks = text.split_whitespace();
    let n: usize = toks
        .next()
        .ok_or_else(|| Error::Invalid("empty field file".into()))?
        .parse()
        .map_err(|_| Error::Invalid("field file must start with n_side".into()))?;
    if n != grid.n_side() {
        return Err(Error::Invalid(format!(
            "field file resolution {n} does not match grid.n_side {}",
            grid.n_side()
        )));
    }
    let values: std::result::Result<Vec<f64>, _> = toks.map(|t| t.parse::<f64>()).collect();
    let values = values.map_err(|_| Error::Invalid("non-numeric value in field file".into()))?;
    ScalarField::from_values(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = r#"
seed = 7
[grid]
n_side = 32
[form]
kind = cosine:2.0
[measure]
kind = klt
poles = (0.5,0.5,0.5) (0.25,0.25,-1.0)
[solver]
beta = -1.5
tol_residual = 1e-8
max_iter = 500
damping = 0.25
[sweep]
betas = 1, 4, 16
[output]
dir = artifacts
heatmaps = false
"#;
        let cfg = RunConfig::from_str_at(text).unwrap();
        assert_eq!(cfg.n_side, 32);
        assert_eq!(cfg.form_kind, "cosine:2.0");
        assert_eq!(cfg.poles.len(), 2);
        assert_eq!(cfg.beta, -1.5);
        assert_eq!(cfg.sweep_betas, vec![1.0, 4.0, 16.0]);
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.heatmaps);
        assert!(cfg.background_form().is_ok());
        assert!(cfg.measure().is_ok());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::from_str_at("[grid]\nn_side = not_a_number\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = RunConfig::from_str_at("[grid]\nbogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }
}
