//! Run configuration, the batch command line, and the file formats:
//! measurement CSV, field grids, iteration history and PGM images.
//!
//! Field grids hold one CSV row per mesh row, bottom row (`y = y0`) first,
//! so row `j` column `i` is node `j * nx + i`. PGM images are flipped so
//! that the top of the picture is the top of the domain.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{NodalField, SolverMethod, SolverSettings};
use crate::forward::{ExperimentSet, ParameterBox};
use crate::levelset::{init_paraboloid, project_smooth, ContrastLevels, LevelSetPair};
use crate::mesh::{build_uniform_mesh, Mesh, Rect};
use crate::phantoms::{make_phantom, synthesize_data, synthesize_data_relative, Phantom, PhantomKind};
use crate::reconstruct::{
    AlphaRule, IterationRecord, IterationState, ReconstructionConfig, Reconstructor, RunOutcome, Stage,
    StageSchedule, Stagnation, StepControl, Truth,
};
use crate::verify;

/// Overrides the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DOT_LEVELSET_OUT";

/// Which iteration `reconstruct` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "c-only")]
    CeeOnly,
    #[serde(rename = "a-only")]
    AyeOnly,
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "three-stage")]
    ThreeStage,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::CeeOnly => "c-only",
            Mode::AyeOnly => "a-only",
            Mode::Joint => "joint",
            Mode::ThreeStage => "three-stage",
        }
    }

    /// The stage of a single-stage mode.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Mode::CeeOnly => Some(Stage::CeeOnly),
            Mode::AyeOnly => Some(Stage::AyeOnly),
            Mode::Joint => Some(Stage::Joint),
            Mode::ThreeStage => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c-only" => Ok(Mode::CeeOnly),
            "a-only" => Ok(Mode::AyeOnly),
            "joint" => Ok(Mode::Joint),
            "three-stage" => Ok(Mode::ThreeStage),
            _ => Err(Error::invalid("mode", format!("unknown mode `{s}`"))),
        }
    }
}

/// Initial level set of one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LevelSetInit {
    /// `radius² - |x - center|²`.
    Paraboloid { center: [f64; 2], radius: f64 },
    /// Reproduces the phantom's field exactly.
    Truth,
    /// The same value at every node.
    Constant { value: f64 },
}

impl LevelSetInit {
    /// `truth` is the phantom's field and `inside` its value on `{φ >= 0}`.
    pub fn build(&self, mesh: &Mesh, truth: &NodalField, inside: f64, eps: f64) -> Result<NodalField> {
        match *self {
            LevelSetInit::Paraboloid { center, radius } => init_paraboloid(mesh, center, radius),
            LevelSetInit::Truth => {
                let m = eps.max(1.0);
                Ok(truth.map(|v| if v == inside { m } else { -m }))
            }
            LevelSetInit::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::invalid("init", "constant level set must be finite"));
                }
                Ok(NodalField::constant(mesh, value))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LevelSetInit::Paraboloid { center, radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::invalid("init", format!("paraboloid radius must be positive, got {radius}")));
                }
                if !center.iter().all(|v| v.is_finite()) {
                    return Err(Error::invalid("init", "paraboloid center must be finite"));
                }
                Ok(())
            }
            LevelSetInit::Truth => Ok(()),
            LevelSetInit::Constant { value } if !value.is_finite() => {
                Err(Error::invalid("init", "constant level set must be finite"))
            }
            LevelSetInit::Constant { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaKeyword {
    Auto,
}

/// `"auto"` or a fixed positive number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Keyword(AlphaKeyword),
    Value(f64),
}

impl FromStr for AlphaSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(AlphaSetting::Keyword(AlphaKeyword::Auto));
        }
        s.parse::<f64>()
            .map(AlphaSetting::Value)
            .map_err(|_| Error::invalid("alpha", format!("expected `auto` or a number, got `{s}`")))
    }
}

/// Every knob of a run. Defaults reproduce the reference setup: 50 nodes
/// per side, four side excitations, `ε = 0.1`, no regularization and no
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Nodes per side of the unit-square mesh.
    pub nodes: usize,
    pub phantom: PhantomKind,
    pub init_a: LevelSetInit,
    pub init_c: LevelSetInit,
    pub levels: ContrastLevels,
    pub bounds: ParameterBox,
    pub eps: f64,
    pub alpha: AlphaSetting,
    /// Step fraction of the automatic `α`.
    pub alpha_fraction: f64,
    pub step_control: StepControl,
    pub beta_a: f64,
    pub beta_c: f64,
    pub eta: f64,
    /// Noise norm per experiment; a fraction of each trace's norm when
    /// `delta_relative` is set.
    pub delta: f64,
    pub delta_relative: bool,
    /// Refinement factor of the data-generating mesh.
    pub refine: usize,
    pub seed: u64,
    pub mode: Mode,
    pub schedule: StageSchedule,
    pub stagnation: Option<Stagnation>,
    pub target_err: Option<f64>,
    pub solver: SolverSettings,
    /// Falls back to `$DOT_LEVELSET_OUT`, then `out`.
    pub output_dir: Option<PathBuf>,
    /// Write field snapshots every this many iterations; 0 disables them.
    pub snapshot_every: usize,
    pub images: bool,
    /// Measurement CSV to reconstruct from instead of synthetic data.
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rc = ReconstructionConfig::default();
        RunConfig {
            nodes: 50,
            phantom: PhantomKind::SinglePair,
            init_a: LevelSetInit::Truth,
            init_c: LevelSetInit::Paraboloid {
                center: [0.5, 0.5],
                radius: 0.2,
            },
            levels: ContrastLevels::default(),
            bounds: ParameterBox::default(),
            eps: 0.1,
            alpha: AlphaSetting::Keyword(AlphaKeyword::Auto),
            alpha_fraction: 0.1,
            step_control: rc.step_control,
            beta_a: 0.0,
            beta_c: 0.0,
            eta: rc.eta,
            delta: 0.0,
            delta_relative: false,
            refine: 1,
            seed: 1,
            mode: Mode::CeeOnly,
            schedule: StageSchedule::default(),
            stagnation: None,
            target_err: rc.target_err,
            solver: SolverSettings::direct(),
            output_dir: None,
            snapshot_every: 250,
            images: false,
            data: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 {
            return Err(Error::invalid("nodes", format!("need at least 3 nodes per side, got {}", self.nodes)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("eps", format!("must be positive, got {}", self.eps)));
        }
        if let AlphaSetting::Value(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("alpha", format!("must be positive or `auto`, got {a}")));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", format!("must be non-negative, got {}", self.delta)));
        }
        if self.refine == 0 {
            return Err(Error::invalid("refine", "must be at least 1"));
        }
        self.init_a.validate()?;
        self.init_c.validate()?;
        self.bounds.validate()?;
        self.levels.validate(&self.bounds)?;
        // Single-stage modes only use `max_iter`.
        if self.mode == Mode::ThreeStage {
            self.schedule.validate()?;
        }
        self.reconstruction_config().validate()
    }

    pub fn reconstruction_config(&self) -> ReconstructionConfig {
        ReconstructionConfig {
            alpha: match self.alpha {
                AlphaSetting::Keyword(AlphaKeyword::Auto) => AlphaRule::Auto {
                    fraction: self.alpha_fraction,
                },
                AlphaSetting::Value(v) => AlphaRule::Fixed(v),
            },
            step_control: self.step_control,
            beta_a: self.beta_a,
            beta_c: self.beta_c,
            eta: self.eta,
            solver: self.solver,
            target_err: self.target_err,
            stagnation: self.stagnation,
            ..ReconstructionConfig::default()
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        build_uniform_mesh(self.nodes, self.nodes, Rect::UNIT)
    }

    pub fn phantom(&self, mesh: &Mesh) -> Phantom {
        let p = make_phantom(self.phantom, mesh);
        if p.levels == self.levels {
            p
        } else {
            p.with_levels(self.levels, mesh)
        }
    }

    /// Synthetic measurements of `phantom` with the configured noise.
    pub fn synthesize(&self, mesh: &Mesh, phantom: &Phantom) -> Result<ExperimentSet> {
        if self.delta_relative {
            synthesize_data_relative(phantom, mesh, self.refine, self.delta, self.seed, &self.solver)
        } else {
            synthesize_data(phantom, mesh, self.refine, self.delta, self.seed, &self.solver)
        }
    }

    pub fn initial_level_sets(&self, mesh: &Mesh, phantom: &Phantom) -> Result<LevelSetPair> {
        let l = self.levels;
        let phi_a = self.init_a.build(mesh, &phantom.a_true, l.a1, self.eps)?;
        let phi_c = self.init_c.build(mesh, &phantom.c_true, l.c1, self.eps)?;
        LevelSetPair::new(phi_a, phi_c, l, self.eps)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a JSON config; an empty document gives the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            line: e.line(),
            msg: e.to_string(),
        })?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        },
        other => other,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn csv_line(err: &csv::Error) -> usize {
    err.position().map(|p| p.line() as usize).unwrap_or(0)
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    m: usize,
    node_index: usize,
    arc_position: f64,
    g: f64,
    h: f64,
}

/// One row per experiment and boundary node, in boundary order:
/// `m,node_index,arc_position,g,h` with `m` counted from 1.
pub fn write_measurements(mesh: &Mesh, set: &ExperimentSet, path: &Path) -> Result<()> {
    set.validate(mesh)?;
    let mut out = String::from("m,node_index,arc_position,g,h\n");
    for (m, (g, h)) in set.excitations.iter().zip(&set.measurements).enumerate() {
        for (k, &node) in mesh.boundary_nodes().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m + 1,
                node,
                num(mesh.arc_positions()[k]),
                num(g[k]),
                num(h[k])
            ));
        }
    }
    write_text(path, &out)
}

/// Reads a file written by [`write_measurements`] for the same mesh.
pub fn read_measurements(mesh: &Mesh, path: &Path, delta: f64) -> Result<ExperimentSet> {
    let mut rdr = csv_reader(path)?;
    let nb = mesh.num_boundary_nodes();
    let mut g: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<Vec<f64>> = Vec::new();
    for row in rdr.deserialize::<MeasurementRow>() {
        let row = row.map_err(|e| parse_err(path, csv_line(&e), e.to_string()))?;
        // Header is line 1.
        let line = g.iter().map(Vec::len).sum::<usize>() + 2;
        if row.m == 0 || row.m > g.len() + 1 {
            return Err(parse_err(path, line, format!("experiment {} out of order", row.m)));
        }
        if row.m == g.len() + 1 {
            g.push(Vec::with_capacity(nb));
            h.push(Vec::with_capacity(nb));
        }
        let k = g[row.m - 1].len();
        if row.m != g.len() || k >= nb || mesh.boundary_nodes()[k] != row.node_index {
            return Err(parse_err(path, line, format!("node {} does not match the mesh boundary order", row.node_index)));
        }
        if (mesh.arc_positions()[k] - row.arc_position).abs() > 1e-9 {
            return Err(parse_err(path, line, format!("arc position {} does not match the mesh", row.arc_position)));
        }
        g[row.m - 1].push(row.g);
        h[row.m - 1].push(row.h);
    }
    ExperimentSet::new(mesh, g, h, delta)
}

/// `ny` rows of `nx` comma-separated values, 17 significant digits.
pub fn write_field_grid(mesh: &Mesh, field: &[f64], path: &Path) -> Result<()> {
    crate::error::check_len("field", mesh.num_nodes(), field.len())?;
    let mut out = String::new();
    for row in field.chunks(mesh.nx()) {
        let cells: Vec<String> = row.iter().map(|&v| num(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Reads a grid back as `(nx, ny, values)` in node order.
pub fn read_field_grid(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        match nx {
            None => nx = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(parse_err(path, i + 1, format!("expected {n} columns, got {}", row.len())));
            }
            _ => {}
        }
        values.extend(row);
        ny += 1;
    }
    let nx = nx.ok_or_else(|| parse_err(path, 1, "empty grid"))?;
    Ok((nx, ny, values))
}

/// Plain 8-bit PGM (P2), min mapped to 0 and max to 255; a constant field
/// is all 0.
pub fn write_pgm(mesh: &Mesh, field: &[f64], path: &Path) -> Result<()> {
    crate::error::check_len("field", mesh.num_nodes(), field.len())?;
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P2\n{} {}\n255\n", mesh.nx(), mesh.ny());
    for row in field.chunks(mesh.nx()).rev() {
        let px: Vec<String> = row
            .iter()
            .map(|&v| {
                let g = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                (g as u8).to_string()
            })
            .collect();
        out.push_str(&px.join(" "));
        out.push('\n');
    }
    write_text(path, &out)
}

pub const HISTORY_HEADER: &str = "iter,stage,misfit,err_a,err_c,step_a,step_c";

pub fn write_history(history: &[IterationRecord], path: &Path) -> Result<()> {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter,
            r.stage,
            num(r.misfit),
            opt_num(r.err_a),
            opt_num(r.err_c),
            num(r.step_a),
            num(r.step_c)
        ));
    }
    write_text(path, &out)
}

#[derive(Debug, Deserialize)]
struct HistoryRow {
    iter: usize,
    stage: String,
    misfit: f64,
    err_a: Option<f64>,
    err_c: Option<f64>,
    step_a: f64,
    step_c: f64,
}

/// Reads a history CSV; absolute errors are not stored and come back empty.
pub fn read_history(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<HistoryRow>() {
        let row = row.map_err(|e| parse_err(path, csv_line(&e), e.to_string()))?;
        let stage = row.stage.parse().map_err(|e: Error| parse_err(path, out.len() + 2, e.to_string()))?;
        out.push(IterationRecord {
            iter: row.iter,
            stage,
            misfit: row.misfit,
            err_a: row.err_a,
            err_c: row.err_c,
            abs_err_a: None,
            abs_err_c: None,
            step_a: row.step_a,
            step_c: row.step_c,
        });
    }
    Ok(out)
}

/// Writes `<dir>/<stem>.csv` and, with `images`, `<dir>/<stem>.pgm`.
fn write_field(mesh: &Mesh, field: &[f64], dir: &Path, stem: &str, images: bool) -> Result<()> {
    write_field_grid(mesh, field, &dir.join(format!("{stem}.csv")))?;
    if images {
        write_pgm(mesh, field, &dir.join(format!("{stem}.pgm")))?;
    }
    Ok(())
}

/// Result of [`reconstruct`].
#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub outcome: RunOutcome,
    pub output_dir: PathBuf,
}

/// Runs the configured reconstruction in memory. `observe` sees the
/// initial state and the state after every step.
pub fn run_configured(
    cfg: &RunConfig,
    mut observe: impl FnMut(&Mesh, &IterationState) -> Result<()>,
) -> Result<(Mesh, RunOutcome)> {
    cfg.validate()?;
    let mesh = cfg.mesh()?;
    let phantom = cfg.phantom(&mesh);
    let data = match &cfg.data {
        Some(path) => read_measurements(&mesh, path, cfg.delta)?,
        None => cfg.synthesize(&mesh, &phantom)?,
    };
    let truth = Truth {
        a: phantom.a_true.clone(),
        c: phantom.c_true.clone(),
    };
    let initial = cfg.initial_level_sets(&mesh, &phantom)?;
    let rc = cfg.reconstruction_config();
    let outcome = {
        let m = &mesh;
        let observer = move |state: &IterationState| observe(m, state);
        let mut r = Reconstructor::new(&mesh, &data, &rc, Some(&truth))?.with_observer(Box::new(observer));
        match cfg.mode.stage() {
            Some(stage) => r.run_fixed(initial, stage, cfg.schedule.max_iter)?,
            None => r.run_three_stage(initial, &cfg.schedule)?,
        }
    };
    Ok((mesh, outcome))
}

/// Runs the configured reconstruction and writes `config.json`,
/// `history.csv`, the final fields and periodic snapshots into the output
/// directory.
pub fn reconstruct(cfg: &RunConfig) -> Result<ReconstructionReport> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("config.json"), &cfg.to_json())?;

    let (every, images) = (cfg.snapshot_every, cfg.images);
    let snapshot = |mesh: &Mesh, state: &IterationState| -> Result<()> {
        if every == 0 || state.iter % every != 0 {
            return Ok(());
        }
        let (a, c) = project_smooth(&state.ls);
        write_field(mesh, &a, &dir, &format!("a_{:05}", state.iter), images)?;
        write_field(mesh, &c, &dir, &format!("c_{:05}", state.iter), images)
    };
    let (mesh, outcome) = run_configured(cfg, snapshot)?;

    let state = &outcome.state;
    write_history(&state.history, &dir.join("history.csv"))?;
    let (a, c) = project_smooth(&state.ls);
    write_field(&mesh, &a, &dir, "a_final", images)?;
    write_field(&mesh, &c, &dir, "c_final", images)?;
    write_field_grid(&mesh, &state.ls.phi_a, &dir.join("phi_a_final.csv"))?;
    write_field_grid(&mesh, &state.ls.phi_c, &dir.join("phi_c_final.csv"))?;
    Ok(ReconstructionReport {
        outcome,
        output_dir: dir,
    })
}

/// Writes the synthetic measurements of the configured phantom to
/// `<output_dir>/measurements.csv` and returns that path.
pub fn synthesize(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mesh = cfg.mesh()?;
    let phantom = cfg.phantom(&mesh);
    let data = cfg.synthesize(&mesh, &phantom)?;
    let dir = cfg.output_dir();
    let path = dir.join("measurements.csv");
    write_measurements(&mesh, &data, &path)?;
    write_text(&dir.join("config.json"), &cfg.to_json())?;
    Ok(path)
}

/// Writes the ground-truth grids `a_true` and `c_true`.
pub fn export_phantom(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mesh = cfg.mesh()?;
    let phantom = cfg.phantom(&mesh);
    let dir = cfg.output_dir();
    write_field(&mesh, &phantom.a_true, &dir, "a_true", cfg.images)?;
    write_field(&mesh, &phantom.c_true, &dir, "c_true", cfg.images)?;
    let geometry = serde_json::to_string_pretty(&phantom.geometry).expect("geometry serializes");
    write_text(&dir.join("geometry.json"), &geometry)?;
    Ok(dir)
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const INVALID: i32 = 1;
    pub const SOLVER: i32 = 2;
    pub const VERIFY_FAILED: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "dot-levelset", version, about = "Level-set reconstruction of diffusion and absorption coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic boundary measurements of a phantom.
    Synthesize(CommonArgs),
    /// Run a reconstruction and write its history and fields.
    Reconstruct(ReconstructArgs),
    /// Run the built-in numerical checks.
    Verify(VerifyArgs),
    /// Export the ground-truth coefficient grids of a phantom.
    Phantom(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub phantom: Option<PhantomKind>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Interpret `delta` as a fraction of each trace's norm.
    #[arg(long)]
    pub delta_relative: bool,
    #[arg(long)]
    pub refine: Option<usize>,
    /// `direct` or `cg`.
    #[arg(long)]
    pub solver: Option<SolverChoice>,
    /// Also write PGM images.
    #[arg(long)]
    pub images: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// `auto` or a positive number.
    #[arg(long)]
    pub alpha: Option<AlphaSetting>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Measurement CSV to invert instead of synthetic data.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub solver: Option<SolverChoice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Direct,
    Cg,
}

impl FromStr for SolverChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SolverChoice::Direct),
            "cg" => Ok(SolverChoice::Cg),
            _ => Err(Error::invalid("solver", format!("expected `direct` or `cg`, got `{s}`"))),
        }
    }
}

impl SolverChoice {
    fn apply(self, s: &mut SolverSettings) {
        s.method = match self {
            SolverChoice::Direct => SolverMethod::DirectFactorization,
            SolverChoice::Cg => SolverMethod::ConjugateGradient,
        };
    }
}

impl CommonArgs {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.nodes {
            cfg.nodes = v;
        }
        if let Some(v) = self.phantom {
            cfg.phantom = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if self.delta_relative {
            cfg.delta_relative = true;
        }
        if let Some(v) = self.refine {
            cfg.refine = v;
        }
        if let Some(v) = self.solver {
            v.apply(&mut cfg.solver);
        }
        if self.images {
            cfg.images = true;
        }
        Ok(cfg)
    }
}

impl ReconstructArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = self.common.resolve()?;
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.max_iter {
            cfg.schedule.max_iter = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.k1 {
            cfg.schedule.k1 = v;
        }
        if let Some(v) = self.k2 {
            cfg.schedule.k2 = v;
        }
        if let Some(v) = self.snapshot_every {
            cfg.snapshot_every = v;
        }
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> i32 {
    if err.is_solver_failure() {
        exit::SOLVER
    } else {
        exit::INVALID
    }
}

fn summarize(outcome: &RunOutcome) -> String {
    let last = outcome.state.last();
    let fmt_err = |e: Option<f64>| e.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into());
    format!(
        "stopped ({:?}) after {} iterations: misfit {:.4e}, err_a {}, err_c {}",
        outcome.stop,
        outcome.state.iter,
        last.misfit,
        fmt_err(last.err_a),
        fmt_err(last.err_c)
    )
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synthesize(args) => {
            let cfg = args.resolve()?;
            let path = synthesize(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Phantom(args) => {
            let cfg = args.resolve()?;
            let dir = export_phantom(&cfg)?;
            println!("wrote ground truth of {} to {}", cfg.phantom, dir.display());
        }
        Command::Reconstruct(args) => {
            let cfg = args.resolve()?;
            let report = reconstruct(&cfg)?;
            println!("{}", summarize(&report.outcome));
            println!("wrote {}", report.output_dir.display());
        }
        Command::Verify(args) => {
            let mut settings = SolverSettings::default();
            if let Some(s) = args.solver {
                s.apply(&mut settings);
            }
            let checks = verify::run_suite(&settings)?;
            for c in &checks {
                println!("{c}");
            }
            if !checks.iter().all(|c| c.passed) {
                return Ok(exit::VERIFY_FAILED);
            }
        }
    }
    Ok(exit::OK)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to standard error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::INVALID } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
