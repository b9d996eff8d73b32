//! The iteration driver: single update steps, stagnation detection, and the
//! three-stage strategy that freezes one coefficient while the other moves.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{l2_norm, NodalField, SolverSettings};
use crate::forward::{misfit, residuals_with, ExperimentSet, ForwardOperator, Residuals};
use crate::gradient::{adjoint_products, assemble_l, UpdateSolver};
use crate::levelset::{project_smooth, Coefficient, LevelSetPair};
use crate::mesh::Mesh;

/// Which level sets an iteration moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    #[serde(rename = "c-only")]
    CeeOnly,
    #[serde(rename = "a-only")]
    AyeOnly,
    Joint,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::CeeOnly => "c-only",
            Stage::AyeOnly => "a-only",
            Stage::Joint => "joint",
        }
    }

    /// `(update_a, update_c)`.
    pub fn flags(&self) -> (bool, bool) {
        match self {
            Stage::CeeOnly => (false, true),
            Stage::AyeOnly => (true, false),
            Stage::Joint => (true, true),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c-only" => Ok(Stage::CeeOnly),
            "a-only" => Ok(Stage::AyeOnly),
            "joint" => Ok(Stage::Joint),
            _ => Err(Error::invalid("stage", format!("unknown stage `{s}`"))),
        }
    }
}

/// Step-size parameter `α` of the update `φ ← φ + δφ / α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaRule {
    /// Calibrated separately for each coefficient at its first update, so
    /// that `max |δφ / α| = fraction · max(1, max |φ₀|)`.
    Auto { fraction: f64 },
    Fixed(f64),
}

impl AlphaRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaRule::Fixed(a) if !(a > 0.0 && a.is_finite()) => {
                Err(Error::invalid("alpha", format!("must be positive, got {a}")))
            }
            AlphaRule::Auto { fraction } if !(fraction > 0.0 && fraction.is_finite()) => {
                Err(Error::invalid("alpha", format!("step fraction must be positive, got {fraction}")))
            }
            _ => Ok(()),
        }
    }
}

/// How the step `δφ / α` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepControl {
    /// Always take the full step.
    Plain,
    /// Scale the step by a gain that is halved while the trial step raises
    /// the misfit and multiplied by `growth` (capped at `max_gain`) after
    /// every accepted step.
    Backtracking { growth: f64, max_gain: f64 },
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::Backtracking {
            growth: 1.05,
            max_gain: 1e3,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if let StepControl::Backtracking { growth, max_gain } = *self {
            if !(growth >= 1.0 && growth.is_finite()) {
                return Err(Error::invalid("growth", format!("must be at least 1, got {growth}")));
            }
            if !(max_gain >= 1.0 && max_gain.is_finite()) {
                return Err(Error::invalid("max_gain", format!("must be at least 1, got {max_gain}")));
            }
        }
        Ok(())
    }
}

/// Smallest gain tried before a backtracking step gives up.
const MIN_GAIN: f64 = 1e-8;

/// Relative-change test on the coefficient fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stagnation {
    pub window: usize,
    pub tol: f64,
}

impl Default for Stagnation {
    fn default() -> Self {
        Stagnation { window: 50, tol: 1e-4 }
    }
}

impl Stagnation {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::invalid("stag_window", "must be at least 2"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("stag_tol", format!("must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub alpha: AlphaRule,
    pub step_control: StepControl,
    pub beta_a: f64,
    pub beta_c: f64,
    /// Regularization of `|∇H_ε(φ)|` in the curvature term.
    pub eta: f64,
    pub solver: SolverSettings,
    /// Error level (relative or absolute) at which a synthetic fixed run
    /// stops. Only used when the truth is known.
    pub target_err: Option<f64>,
    /// Stop a stage or run once the moving coefficients stagnate.
    pub stagnation: Option<Stagnation>,
    /// Window of the misfit monotonicity monitor for noise-free c-only runs
    /// with the exact `a`.
    pub stability_window: Option<usize>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            alpha: AlphaRule::Auto { fraction: 0.1 },
            step_control: StepControl::default(),
            beta_a: 0.0,
            beta_c: 0.0,
            eta: 1e-8,
            solver: SolverSettings::direct(),
            target_err: Some(1e-2),
            stagnation: None,
            stability_window: Some(50),
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate()?;
        self.step_control.validate()?;
        if !(self.beta_a >= 0.0 && self.beta_a.is_finite()) {
            return Err(Error::invalid("beta_a", "must be non-negative"));
        }
        if !(self.beta_c >= 0.0 && self.beta_c.is_finite()) {
            return Err(Error::invalid("beta_c", "must be non-negative"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "must be positive"));
        }
        if let Some(t) = self.target_err {
            if !(t > 0.0) {
                return Err(Error::invalid("target_err", "must be positive"));
            }
        }
        if let Some(s) = &self.stagnation {
            s.validate()?;
        }
        if self.stability_window == Some(0) {
            return Err(Error::invalid("stability_window", "must be positive"));
        }
        self.solver.validate()
    }
}

/// Switching points of the three-stage strategy. `k1` and `k2` are absolute
/// iteration indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSchedule {
    pub k1: usize,
    pub k2: usize,
    /// `(a-steps, c-steps)` per macro-iteration of the last stage.
    pub stage3_ratio: (usize, usize),
    pub max_iter: usize,
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule {
            k1: 250,
            k2: 750,
            stage3_ratio: (2, 1),
            max_iter: 2500,
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.k1 > self.k2 {
            return Err(Error::invalid("k1", format!("must not exceed k2 = {}", self.k2)));
        }
        if self.k2 > self.max_iter {
            return Err(Error::invalid("k2", format!("must not exceed max_iter = {}", self.max_iter)));
        }
        if self.stage3_ratio == (0, 0) {
            return Err(Error::invalid("stage3_ratio", "components must not both be zero"));
        }
        Ok(())
    }

    /// Stage of the first iteration.
    pub fn initial_stage(&self) -> Stage {
        if self.k1 > 0 {
            Stage::CeeOnly
        } else if self.k2 > 0 {
            Stage::AyeOnly
        } else {
            Stage::Joint
        }
    }
}

/// Ground truth for synthetic runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub a: NodalField,
    pub c: NodalField,
}

/// State after `iter` updates. Misfit and errors describe the level sets
/// of that state; step norms describe the update that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub stage: Stage,
    pub misfit: f64,
    pub err_a: Option<f64>,
    pub err_c: Option<f64>,
    pub abs_err_a: Option<f64>,
    pub abs_err_c: Option<f64>,
    pub step_a: f64,
    pub step_c: f64,
}

impl IterationRecord {
    /// Whether the tracked error of `which` is within `target`, relative or
    /// absolute.
    fn within(&self, which: Coefficient, target: f64) -> bool {
        let (rel, abs) = match which {
            Coefficient::A => (self.err_a, self.abs_err_a),
            Coefficient::C => (self.err_c, self.abs_err_c),
        };
        rel.is_some_and(|e| e <= target) || abs.is_some_and(|e| e <= target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub ls: LevelSetPair,
    pub iter: usize,
    pub stage: Stage,
    pub history: Vec<IterationRecord>,
    /// Resolved step parameters, `None` until the first update of that
    /// coefficient under [`AlphaRule::Auto`].
    pub alpha_a: Option<f64>,
    pub alpha_c: Option<f64>,
}

impl IterationState {
    pub fn last(&self) -> &IterationRecord {
        self.history.last().expect("history always holds the initial record")
    }

    pub fn alpha(&self, which: Coefficient) -> Option<f64> {
        match which {
            Coefficient::A => self.alpha_a,
            Coefficient::C => self.alpha_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIter,
    Target,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub state: IterationState,
    pub stop: StopReason,
    /// False when the run only ended because the budget ran out.
    pub converged: bool,
}

/// Last `window + 1` coefficient fields, for stagnation checks.
#[derive(Debug, Clone, Default)]
pub struct CoefficientTrail {
    capacity: usize,
    a: VecDeque<NodalField>,
    c: VecDeque<NodalField>,
}

impl CoefficientTrail {
    pub fn new(window: usize) -> Self {
        CoefficientTrail {
            capacity: window + 1,
            a: VecDeque::new(),
            c: VecDeque::new(),
        }
    }

    pub fn push(&mut self, a: NodalField, c: NodalField) {
        if self.capacity == 0 {
            return;
        }
        if self.a.len() == self.capacity {
            self.a.pop_front();
            self.c.pop_front();
        }
        self.a.push_back(a);
        self.c.push_back(c);
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Drops everything recorded so far.
    pub fn clear(&mut self) {
        self.a.clear();
        self.c.clear();
    }

    fn fields(&self, which: Coefficient) -> &VecDeque<NodalField> {
        match which {
            Coefficient::A => &self.a,
            Coefficient::C => &self.c,
        }
    }
}

/// True iff `max_j ‖x_k - x_{k-j}‖ / max(‖x_k‖, floor) < tol` over
/// `j = 1..=window`; false while fewer than `window + 1` fields are known.
pub fn stagnation_check(mesh: &Mesh, trail: &CoefficientTrail, window: usize, tol: f64, which: Coefficient) -> bool {
    const FLOOR: f64 = 1e-12;
    let fields = trail.fields(which);
    if window < 2 || fields.len() < window + 1 {
        return false;
    }
    let last = fields.back().expect("non-empty");
    let scale = l2_norm(mesh, last).max(FLOOR);
    let change = fields
        .iter()
        .rev()
        .skip(1)
        .take(window)
        .map(|x| {
            let d: Vec<f64> = last.iter().zip(x.iter()).map(|(p, q)| p - q).collect();
            l2_norm(mesh, &d)
        })
        .fold(0.0, f64::max);
    change / scale < tol
}

/// Forward quantities at the current level sets.
struct Cached<'a> {
    ls: LevelSetPair,
    a: NodalField,
    c: NodalField,
    op: ForwardOperator<'a>,
    res: Residuals,
    misfit: f64,
}

/// Holds everything that stays fixed during a run and caches the forward
/// solution at the current state, so each step costs one forward and one
/// adjoint pass.
pub struct Reconstructor<'a> {
    mesh: &'a Mesh,
    experiments: &'a ExperimentSet,
    config: ReconstructionConfig,
    truth: Option<&'a Truth>,
    update: UpdateSolver<'a>,
    cache: Option<Cached<'a>>,
    trail: Option<CoefficientTrail>,
    gain: f64,
    observer: Option<Observer<'a>>,
}

/// Callback invoked with the state after `start` and after every step.
pub type Observer<'a> = Box<dyn FnMut(&IterationState) -> Result<()> + 'a>;

impl<'a> Reconstructor<'a> {
    pub fn new(
        mesh: &'a Mesh,
        experiments: &'a ExperimentSet,
        config: &ReconstructionConfig,
        truth: Option<&'a Truth>,
    ) -> Result<Self> {
        config.validate()?;
        experiments.validate(mesh)?;
        if let Some(t) = truth {
            crate::error::check_len("truth a", mesh.num_nodes(), t.a.len())?;
            crate::error::check_len("truth c", mesh.num_nodes(), t.c.len())?;
        }
        Ok(Reconstructor {
            mesh,
            experiments,
            config: config.clone(),
            truth,
            update: UpdateSolver::new(mesh, &config.solver)?,
            cache: None,
            trail: config.stagnation.map(|s| CoefficientTrail::new(s.window)),
            gain: 1.0,
            observer: None,
        })
    }

    /// Registers a callback that sees every state of later runs; errors it
    /// returns abort the run.
    pub fn with_observer(mut self, observer: Observer<'a>) -> Self {
        self.observer = Some(observer);
        self
    }

    fn notify(&mut self, state: &IterationState) -> Result<()> {
        match self.observer.as_mut() {
            Some(f) => f(state),
            None => Ok(()),
        }
    }

    pub fn config(&self) -> &ReconstructionConfig {
        &self.config
    }

    /// Initial state with its record 0 tagged `stage`.
    pub fn start(&mut self, ls: LevelSetPair, stage: Stage) -> Result<IterationState> {
        crate::error::check_len("phi_a", self.mesh.num_nodes(), ls.phi_a.len())?;
        let (alpha_a, alpha_c) = match self.config.alpha {
            AlphaRule::Fixed(v) => (Some(v), Some(v)),
            AlphaRule::Auto { .. } => (None, None),
        };
        if let Some(t) = self.trail.as_mut() {
            t.clear();
        }
        self.gain = 1.0;
        self.refresh(&ls)?;
        let record = self.record(0, stage, 0.0, 0.0);
        let state = IterationState {
            ls,
            iter: 0,
            stage,
            history: vec![record],
            alpha_a,
            alpha_c,
        };
        self.notify(&state)?;
        Ok(state)
    }

    fn evaluate(&self, ls: &LevelSetPair) -> Result<Cached<'a>> {
        let (a, c) = project_smooth(ls);
        let op = ForwardOperator::new(self.mesh, &a, &c, &self.config.solver)?;
        let res = residuals_with(&op, self.experiments)?;
        let misfit = misfit(self.mesh, &res.r)?;
        if !misfit.is_finite() {
            return Err(Error::Diverged(format!("misfit is {misfit}")));
        }
        Ok(Cached {
            ls: ls.clone(),
            a,
            c,
            op,
            res,
            misfit,
        })
    }

    fn install(&mut self, cached: Cached<'a>) {
        if let Some(t) = self.trail.as_mut() {
            t.push(cached.a.clone(), cached.c.clone());
        }
        self.cache = Some(cached);
    }

    fn refresh(&mut self, ls: &LevelSetPair) -> Result<()> {
        if self.cache.as_ref().is_some_and(|c| &c.ls == ls) {
            return Ok(());
        }
        let cached = self.evaluate(ls)?;
        self.install(cached);
        Ok(())
    }

    fn record(&self, iter: usize, stage: Stage, step_a: f64, step_c: f64) -> IterationRecord {
        let cache = self.cache.as_ref().expect("refreshed");
        let errs = |x: &NodalField, truth: &NodalField| {
            let d: Vec<f64> = x.iter().zip(truth.iter()).map(|(p, q)| p - q).collect();
            let abs = l2_norm(self.mesh, &d);
            let scale = l2_norm(self.mesh, truth);
            (if scale > 0.0 { abs / scale } else { abs }, abs)
        };
        let (ea, ec) = match self.truth {
            Some(t) => (Some(errs(&cache.a, &t.a)), Some(errs(&cache.c, &t.c))),
            None => (None, None),
        };
        IterationRecord {
            iter,
            stage,
            misfit: cache.misfit,
            err_a: ea.map(|e| e.0),
            err_c: ec.map(|e| e.0),
            abs_err_a: ea.map(|e| e.1),
            abs_err_c: ec.map(|e| e.1),
            step_a,
            step_c,
        }
    }

    /// One update of the flagged level sets; the record is tagged `stage`.
    pub fn step(&mut self, state: &mut IterationState, stage: Stage, update_a: bool, update_c: bool) -> Result<()> {
        if !update_a && !update_c {
            return Err(Error::invalid("flags", "at least one coefficient must be updated"));
        }
        if state.stage > stage {
            return Err(Error::invalid("stage", format!("cannot go back from {} to {}", state.stage, stage)));
        }
        self.refresh(&state.ls)?;
        let cache = self.cache.as_ref().expect("refreshed");
        let (sum_da, sum_dc) = adjoint_products(&cache.op, &cache.res)?;

        let mut increments: [Option<NodalField>; 2] = [None, None];
        for (slot, which, flag) in [(0, Coefficient::A, update_a), (1, Coefficient::C, update_c)] {
            if !flag {
                continue;
            }
            let beta = match which {
                Coefficient::A => self.config.beta_a,
                Coefficient::C => self.config.beta_c,
            };
            let alpha = match state.alpha(which) {
                Some(a) => a,
                None => {
                    // Calibrate on the data part alone; the curvature term
                    // itself scales with α.
                    let terms = assemble_l(self.mesh, &state.ls, &sum_da, &sum_dc, 1.0, 0.0, 0.0, self.config.eta)?;
                    let d = self.update.solve(terms.get(which))?;
                    let fraction = match self.config.alpha {
                        AlphaRule::Auto { fraction } => fraction,
                        AlphaRule::Fixed(_) => unreachable!("fixed alpha is always resolved"),
                    };
                    let target = fraction * state.ls.phi(which).max_abs().max(1.0);
                    let alpha = d.max_abs() / target;
                    if !(alpha > 0.0 && alpha.is_finite()) {
                        // No gradient yet (empty band): leave α unresolved.
                        continue;
                    }
                    log::info!("auto alpha for {which:?}: {alpha:.6e}");
                    match which {
                        Coefficient::A => state.alpha_a = Some(alpha),
                        Coefficient::C => state.alpha_c = Some(alpha),
                    }
                    alpha
                }
            };
            let (ba, bc) = match which {
                Coefficient::A => (beta, 0.0),
                Coefficient::C => (0.0, beta),
            };
            let terms = assemble_l(self.mesh, &state.ls, &sum_da, &sum_dc, alpha, ba, bc, self.config.eta)?;
            let d = self.update.solve(terms.get(which))?;
            increments[slot] = Some(d.map(|v| v / alpha));
        }

        let old_misfit = self.cache.as_ref().expect("refreshed").misfit;
        let mut steps = [0.0; 2];
        loop {
            let mut trial = state.ls.clone();
            for (slot, which) in [(0, Coefficient::A), (1, Coefficient::C)] {
                if let Some(d) = &increments[slot] {
                    steps[slot] = self.gain * l2_norm(self.mesh, d);
                    for (p, q) in trial.phi_mut(which).iter_mut().zip(d.iter()) {
                        *p += self.gain * q;
                    }
                }
            }
            let cand = self.evaluate(&trial)?;
            if let StepControl::Backtracking { growth, max_gain } = self.config.step_control {
                if cand.misfit > old_misfit {
                    if self.gain * 0.5 >= MIN_GAIN {
                        self.gain *= 0.5;
                        continue;
                    }
                    // Step can no longer be shrunk: keep the state.
                    steps = [0.0; 2];
                    break;
                }
                self.gain = (self.gain * growth).min(max_gain);
            }
            state.ls = trial;
            self.install(cand);
            break;
        }
        state.iter += 1;
        state.stage = stage;
        let record = self.record(state.iter, stage, steps[0], steps[1]);
        state.history.push(record);
        self.notify(state)
    }

    fn stagnated(&self, update_a: bool, update_c: bool) -> bool {
        let (Some(s), Some(trail)) = (self.config.stagnation, self.trail.as_ref()) else {
            return false;
        };
        let check = |which| stagnation_check(self.mesh, trail, s.window, s.tol, which);
        (!update_a || check(Coefficient::A)) && (!update_c || check(Coefficient::C))
    }

    fn stability_monitor_applies(&self, stage: Stage) -> Option<usize> {
        let window = self.config.stability_window?;
        let truth = self.truth?;
        if stage != Stage::CeeOnly || self.experiments.delta != 0.0 {
            return None;
        }
        let cache = self.cache.as_ref()?;
        let scale = truth.a.max_abs().max(1.0);
        let exact_a = cache.a.iter().zip(truth.a.iter()).all(|(p, q)| (p - q).abs() <= 1e-12 * scale);
        exact_a.then_some(window)
    }

    fn check_stability(state: &IterationState, window: usize) -> Result<()> {
        let k = state.iter;
        if k < window {
            return Ok(());
        }
        let h = &state.history;
        let m0 = h[0].misfit;
        if h[k].misfit > h[k - window].misfit + 1e-10 * m0 {
            return Err(Error::Diverged(format!(
                "misfit rose from {:.6e} at iteration {} to {:.6e} at iteration {k}; reduce the step (larger alpha)",
                h[k - window].misfit,
                k - window,
                h[k].misfit
            )));
        }
        Ok(())
    }

    /// Plain iteration on the coefficients selected by `stage`, up to
    /// `max_iter` steps, stopping early at the target error (truth known)
    /// or on stagnation.
    pub fn run_fixed(&mut self, initial: LevelSetPair, stage: Stage, max_iter: usize) -> Result<RunOutcome> {
        let mut state = self.start(initial, stage)?;
        let (ua, uc) = stage.flags();
        let monitor = self.stability_monitor_applies(stage);
        let target_hit = |r: &IterationRecord, t: Option<f64>| {
            let Some(t) = t else { return false };
            (!ua || r.within(Coefficient::A, t)) && (!uc || r.within(Coefficient::C, t))
        };
        let target = self.truth.and(self.config.target_err);
        if target_hit(state.last(), target) {
            return Ok(RunOutcome {
                state,
                stop: StopReason::Target,
                converged: true,
            });
        }
        while state.iter < max_iter {
            self.step(&mut state, stage, ua, uc)?;
            if let Some(w) = monitor {
                Self::check_stability(&state, w)?;
            }
            if target_hit(state.last(), target) {
                return Ok(RunOutcome {
                    state,
                    stop: StopReason::Target,
                    converged: true,
                });
            }
            if self.stagnated(ua, uc) {
                return Ok(RunOutcome {
                    state,
                    stop: StopReason::Stagnation,
                    converged: true,
                });
            }
        }
        Ok(RunOutcome {
            state,
            stop: StopReason::MaxIter,
            converged: false,
        })
    }

    /// c-only until `k1`, a-only until `k2`, then macro-iterations of
    /// `min(na, nc)` joint steps followed by the surplus single-coefficient
    /// steps, until `max_iter`. With stagnation configured, the first two
    /// stages also end early and the run stops once both coefficients
    /// stagnate in the last stage.
    pub fn run_three_stage(&mut self, initial: LevelSetPair, schedule: &StageSchedule) -> Result<RunOutcome> {
        schedule.validate()?;
        let mut state = self.start(initial, schedule.initial_stage())?;

        while state.iter < schedule.k1 {
            self.step(&mut state, Stage::CeeOnly, false, true)?;
            if self.stagnated(false, true) {
                break;
            }
        }
        self.begin_stage();
        while state.iter < schedule.k2 {
            self.step(&mut state, Stage::AyeOnly, true, false)?;
            if self.stagnated(true, false) {
                break;
            }
        }
        self.begin_stage();

        let (na, nc) = schedule.stage3_ratio;
        let joint = na.min(nc);
        let mut plan = vec![(true, true); joint];
        plan.extend(std::iter::repeat_n((true, false), na - joint));
        plan.extend(std::iter::repeat_n((false, true), nc - joint));
        'outer: while state.iter < schedule.max_iter {
            for &(ua, uc) in &plan {
                if state.iter >= schedule.max_iter {
                    break 'outer;
                }
                self.step(&mut state, Stage::Joint, ua, uc)?;
                if self.stagnated(true, true) {
                    return Ok(RunOutcome {
                        state,
                        stop: StopReason::Stagnation,
                        converged: true,
                    });
                }
            }
        }
        Ok(RunOutcome {
            state,
            stop: StopReason::MaxIter,
            converged: false,
        })
    }

    /// Forgets the stagnation trail and the step gain of the previous stage.
    fn begin_stage(&mut self) {
        self.gain = 1.0;
        if let Some(t) = self.trail.as_mut() {
            t.clear();
            if let Some(c) = &self.cache {
                t.push(c.a.clone(), c.c.clone());
            }
        }
    }
}

/// One update of `state`, without caching across calls.
pub fn iterate_step(
    mesh: &Mesh,
    state: &mut IterationState,
    experiments: &ExperimentSet,
    config: &ReconstructionConfig,
    update_a: bool,
    update_c: bool,
) -> Result<()> {
    let stage = match (update_a, update_c) {
        (true, true) => Stage::Joint,
        (true, false) => Stage::AyeOnly,
        _ => Stage::CeeOnly,
    };
    let stage = stage.max(state.stage);
    let mut r = Reconstructor::new(mesh, experiments, config, None)?;
    r.step(state, stage, update_a, update_c)
}

pub fn run_fixed(
    mesh: &Mesh,
    initial: LevelSetPair,
    experiments: &ExperimentSet,
    config: &ReconstructionConfig,
    which: Stage,
    max_iter: usize,
    truth: Option<&Truth>,
) -> Result<RunOutcome> {
    Reconstructor::new(mesh, experiments, config, truth)?.run_fixed(initial, which, max_iter)
}

pub fn run_three_stage(
    mesh: &Mesh,
    initial: LevelSetPair,
    experiments: &ExperimentSet,
    schedule: &StageSchedule,
    config: &ReconstructionConfig,
    truth: Option<&Truth>,
) -> Result<RunOutcome> {
    Reconstructor::new(mesh, experiments, config, truth)?.run_three_stage(initial, schedule)
}
