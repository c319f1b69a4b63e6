use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

use padic_ground::spectral::{Potential, RadialPotential};
use padic_ground::{GridSpec, RadialProfile, SolverTolerances};

/// Largest prime accepted for `p`.
pub const MAX_PRIME: u32 = 97;
pub const MAX_DIMENSION: u32 = 4;
/// Cell budget for full-grid runs.
pub const MAX_CELLS: usize = 1 << 20;
/// Largest `M + K` for the radial reduction.
pub const MAX_RADIAL_SLOTS: i32 = 400;

/// Tolerance overrides read from the environment, applied after the file.
pub const ENV_OVERRIDES: [&str; 6] = [
    "PADIC_GROUND_POWER_TOL",
    "PADIC_GROUND_POWER_MAX_ITER",
    "PADIC_GROUND_BISECTION_TOL",
    "PADIC_GROUND_LAMBDA_FLOOR",
    "PADIC_GROUND_KERNEL_TAIL_TOL",
    "PADIC_GROUND_EXTERIOR_SHELLS",
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// Rescale the profile to total mass 1 before use.
    #[serde(default)]
    pub normalize: bool,
    pub profile: RadialProfile,
    pub grid: Option<GridConfig>,
    pub potential: Option<PotentialConfig>,
    #[serde(default)]
    pub solver: SolverTolerances,
    #[serde(default)]
    pub fourier: FourierConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub recurrence: RecurrenceConfig,
    #[serde(default)]
    pub walk: WalkSection,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub m: i32,
    pub k: i32,
    /// Solve on radial slots instead of the full coset grid.
    #[serde(default)]
    pub radial: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// `β·1_{B_ball}`.
    IndicatorBall {
        ball: i32,
        #[serde(default = "one")]
        beta: f64,
    },
    /// Slot values: slot 0 is `B_inner`, slot `s` the sphere `p^(inner+s)`.
    Radial {
        inner: i32,
        values: Vec<f64>,
        #[serde(default = "one")]
        beta: f64,
    },
    /// One value per cell id, read from a CSV file.
    Cells {
        file: PathBuf,
        #[serde(default = "one")]
        beta: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierConfig {
    pub n_min: i32,
    pub n_max: i32,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            n_min: -8,
            n_max: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub lambda: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrenceConfig {
    pub l: i32,
    pub n_max: i32,
    pub ball: i32,
    /// Length of the exact return series; 0 skips it.
    pub m_max: u64,
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        Self {
            l: 0,
            n_max: 40,
            ball: 0,
            m_max: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSection {
    pub steps: u64,
    pub trials: u64,
    pub ball: i32,
    pub k_low: Option<i32>,
    pub k_high: Option<i32>,
}

impl Default for WalkSection {
    fn default() -> Self {
        Self {
            steps: 20,
            trials: 10_000,
            ball: 0,
            k_low: None,
            k_high: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub dissipativity_trials: usize,
    pub lambdas: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            dissipativity_trials: 50,
            lambdas: vec![0.1, 1.0, 10.0],
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text)?;
        config.validate()?;
        if config.normalize {
            config.profile = config.profile.normalize()?;
        }
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let (p, n) = (self.profile.p(), self.profile.n());
        ensure!(p <= MAX_PRIME, "profile.p = {p} exceeds {MAX_PRIME}");
        ensure!(
            n <= MAX_DIMENSION,
            "profile.n = {n} exceeds {MAX_DIMENSION}"
        );
        ensure!(
            self.fourier.n_min <= self.fourier.n_max,
            "fourier.n_min = {} exceeds fourier.n_max = {}",
            self.fourier.n_min,
            self.fourier.n_max
        );
        ensure!(
            self.kernel.lambda > 0.0 && self.kernel.lambda.is_finite(),
            "kernel.lambda = {} must be positive",
            self.kernel.lambda
        );
        ensure!(
            self.recurrence.l <= self.recurrence.n_max,
            "recurrence.l = {} exceeds recurrence.n_max = {}",
            self.recurrence.l,
            self.recurrence.n_max
        );
        ensure!(self.walk.trials > 0, "walk.trials must be positive");
        ensure!(self.walk.steps > 0, "walk.steps must be positive");
        ensure!(
            self.walk.k_low.is_some() == self.walk.k_high.is_some(),
            "walk.k_low and walk.k_high must be given together"
        );
        ensure!(
            self.verify
                .lambdas
                .iter()
                .all(|l| *l > 0.0 && l.is_finite()),
            "verify.lambdas must be positive"
        );
        if let Some(g) = self.grid {
            ensure!(g.k >= 0, "grid.k = {} must be nonnegative", g.k);
            ensure!(g.m + g.k >= 1, "grid.m + grid.k must be at least 1");
            if g.radial {
                ensure!(
                    g.m + g.k <= MAX_RADIAL_SLOTS,
                    "grid.m + grid.k = {} exceeds {MAX_RADIAL_SLOTS}",
                    g.m + g.k
                );
            } else {
                let cells = (p as f64).powi(n as i32 * (g.m + g.k));
                ensure!(
                    cells <= MAX_CELLS as f64,
                    "full grid has p^(n(M+K)) = {cells} cells, above 2^20; set grid.radial = true for radial potentials"
                );
            }
        }
        if let Some(
            PotentialConfig::IndicatorBall { beta, .. }
            | PotentialConfig::Radial { beta, .. }
            | PotentialConfig::Cells { beta, .. },
        ) = &self.potential
        {
            ensure!(
                *beta > 0.0 && *beta <= 1.0,
                "potential.beta = {beta} must lie in (0, 1]"
            );
        }
        Ok(())
    }

    /// Solver tolerances after environment overrides.
    pub fn tolerances(&self) -> Result<SolverTolerances> {
        let mut tol = self.solver;
        for name in ENV_OVERRIDES {
            let Ok(raw) = std::env::var(name) else {
                continue;
            };
            let bad = || format!("{name} = {raw:?} is not a valid number");
            match name {
                "PADIC_GROUND_POWER_TOL" => tol.power_tol = raw.parse().with_context(bad)?,
                "PADIC_GROUND_POWER_MAX_ITER" => {
                    tol.power_max_iter = raw.parse().with_context(bad)?
                }
                "PADIC_GROUND_BISECTION_TOL" => {
                    tol.bisection_tol = raw.parse().with_context(bad)?
                }
                "PADIC_GROUND_LAMBDA_FLOOR" => tol.lambda_floor = raw.parse().with_context(bad)?,
                "PADIC_GROUND_KERNEL_TAIL_TOL" => {
                    tol.kernel_tail_tol = raw.parse().with_context(bad)?
                }
                "PADIC_GROUND_EXTERIOR_SHELLS" => {
                    tol.exterior_shells = raw.parse().with_context(bad)?
                }
                _ => unreachable!(),
            }
        }
        for (key, value) in [
            ("power_tol", tol.power_tol),
            ("bisection_tol", tol.bisection_tol),
            ("lambda_floor", tol.lambda_floor),
            ("kernel_tail_tol", tol.kernel_tail_tol),
        ] {
            ensure!(
                value > 0.0 && value.is_finite(),
                "solver.{key} = {value} must be positive"
            );
        }
        Ok(tol)
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        self.grid.context("this command needs a [grid] section")
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = self.grid_config()?;
        Ok(GridSpec::new(self.profile.p(), self.profile.n(), g.m, g.k)?)
    }

    fn potential_config(&self) -> Result<&PotentialConfig> {
        self.potential
            .as_ref()
            .context("this command needs a [potential] section")
    }

    /// The potential on the slots `B_{-K}, S_{-K+1}, …, S_M`.
    pub fn radial_potential(&self) -> Result<RadialPotential> {
        let g = self.grid_config()?;
        let (p, n) = (self.profile.p(), self.profile.n());
        let v = match self.potential_config()? {
            PotentialConfig::IndicatorBall { ball, beta } => {
                RadialPotential::indicator_ball(p, n, -g.k, g.m, *ball, *beta)?
            }
            PotentialConfig::Radial {
                inner,
                values,
                beta,
            } => {
                ensure!(!values.is_empty(), "potential.values must not be empty");
                ensure!(
                    *inner >= -g.k && *inner + values.len() as i32 - 1 <= g.m,
                    "potential slots B_{inner} .. S_{} do not fit the grid B_{} at resolution p^-{}",
                    inner + values.len() as i32 - 1,
                    g.m,
                    g.k
                );
                // re-express on the slots -K ..= M so the domain is B_M
                let mut slots = vec![values[0] * beta; (inner + g.k + 1) as usize];
                slots.extend(values[1..].iter().map(|v| v * beta));
                slots.resize((g.m + g.k + 1) as usize, 0.0);
                RadialPotential::new(p, n, -g.k, slots)?
            }
            PotentialConfig::Cells { .. } => {
                return self.potential()?.radial_form().map_err(|_| {
                    anyhow::anyhow!(
                        "grid.radial = true needs a radial potential, the cell table is not radial"
                    )
                })
            }
        };
        ensure!(!v.is_zero(), "the potential vanishes identically");
        Ok(v)
    }

    pub fn potential(&self) -> Result<Potential> {
        let grid = self.grid()?;
        let v = match self.potential_config()? {
            PotentialConfig::Cells { file, beta } => {
                let path = self.base_dir.join(file);
                let values = read_cell_values(&path)?;
                Potential::from_cells(grid, values.iter().map(|v| v * beta).collect())
                    .with_context(|| format!("in {}", path.display()))?
            }
            _ => Potential::from_radial(grid, self.radial_potential()?)?,
        };
        ensure!(!v.is_zero(), "the potential vanishes identically");
        Ok(v)
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some() && self.grid.is_some()
    }
}

/// One value per record, first field; `#` starts a comment line.
fn read_cell_values(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("cannot read potential table {}", path.display()))?;
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = record.get(0).unwrap_or_default();
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) => bail!(
                "{}: record {}: `{field}` is not a number",
                path.display(),
                row + 1
            ),
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STANDARD: &str = r#"
        [profile]
        p = 2
        n = 1
        j_min = 0
        j_max = 0
        values = [0.6666666666666666]
        tail = { c = 0.6666666666666666, alpha = 1.0 }

        [grid]
        m = 3
        k = 3

        [potential]
        kind = "indicator_ball"
        ball = 0
    "#;

    #[test]
    fn parses_standard_scenario() {
        let c = ScenarioConfig::parse(STANDARD).unwrap();
        assert_eq!(c.profile.p(), 2);
        assert!((c.profile.total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(c.grid().unwrap().cell_count(), 64);
        let v = c.potential().unwrap();
        assert_eq!(v.values().iter().filter(|x| **x == 1.0).count(), 8);
        assert_eq!(c.recurrence.n_max, 40);
    }

    #[test]
    fn radial_values_cover_the_whole_grid() {
        let text = STANDARD.replace(
            "kind = \"indicator_ball\"\n        ball = 0",
            "kind = \"radial\"\n        inner = -1\n        values = [1.0, 0.5]\n        beta = 0.5",
        );
        let c = ScenarioConfig::parse(&text).unwrap();
        let v = c.radial_potential().unwrap();
        assert_eq!((v.inner(), v.outer()), (-3, 3));
        assert_eq!(v.values(), [0.5, 0.5, 0.5, 0.25, 0.0, 0.0, 0.0]);
        let full = c.potential().unwrap();
        assert_eq!(full.radial_form().unwrap().values(), v.values());
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let text = STANDARD.replace("ball = 0", "ball = 0\nradius = 3");
        let err = format!("{:#}", ScenarioConfig::parse(&text).unwrap_err());
        assert!(err.contains("radius") && err.contains("line"), "{err}");
    }

    #[test]
    fn range_checks() {
        let big_p = STANDARD.replace("p = 2", "p = 101");
        assert!(format!("{:#}", ScenarioConfig::parse(&big_p).unwrap_err()).contains("97"));
        let big_grid = STANDARD.replace("m = 3", "m = 30");
        assert!(ScenarioConfig::parse(&big_grid).is_err());
        let radial = big_grid.replace("k = 3", "k = 3\nradial = true");
        assert!(ScenarioConfig::parse(&radial).is_ok());
        let beta = STANDARD.replace("ball = 0", "ball = 0\nbeta = 1.5");
        assert!(ScenarioConfig::parse(&beta).is_err());
    }

    #[test]
    fn zero_potential_is_rejected() {
        let text = STANDARD.replace(
            "kind = \"indicator_ball\"\n        ball = 0",
            "kind = \"radial\"\n        inner = -3\n        values = [0.0, 0.0]",
        );
        let c = ScenarioConfig::parse(&text).unwrap();
        assert!(format!("{:#}", c.potential().unwrap_err()).contains("vanishes"));
    }

    #[test]
    fn cell_table_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let table: String = (0..64)
            .map(|i| format!("{}\n", if i < 8 { 1.0 } else { 0.0 }))
            .collect();
        std::fs::write(dir.path().join("v.csv"), format!("# cell values\n{table}")).unwrap();
        let text = STANDARD.replace(
            "kind = \"indicator_ball\"\n        ball = 0",
            "kind = \"cells\"\n        file = \"v.csv\"\n        beta = 0.5",
        );
        let path = dir.path().join("s.toml");
        std::fs::write(&path, text).unwrap();
        let c = ScenarioConfig::load(&path).unwrap();
        let v = c.potential().unwrap();
        assert_eq!(v.values()[..8], [0.5; 8]);
        std::fs::write(dir.path().join("v.csv"), "1\n2\n").unwrap();
        assert!(c.potential().is_err());
    }
}
