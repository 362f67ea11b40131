//! Deterministic simulated big.LITTLE SoC.
//!
//! Evaluates a DRM policy over epoch-structured synthetic applications and
//! returns objective vectors (execution time, energy, negated PPW). The
//! performance/power model is a fixed analytic contract: Amdahl-combined
//! per-cluster rates, cubic dynamic power per active core, and counters that
//! are declared functions of the epoch's work and memory intensity.
//!
//! The decision for epoch `e` is made from the counters observed during
//! epoch `e - 1`; epoch 0 sees a fixed boot state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::ObjectiveVector;
use crate::policy::{
    decide, feature, DrmDecision, PolicyArchitecture, PolicyParams, SystemState, MAX_BIG_CORES,
    MAX_LITTLE_CORES, NUM_FEATURES,
};

/// Model constants: per-cluster IPC and power coefficients, counter
/// coefficients, and the normalization scale per counter feature. Defaults
/// are plausible for a 4+4 mobile part; every value can be overridden from
/// the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// Peak instructions per cycle, Big core.
    pub ipc_big: f64,
    /// Peak instructions per cycle, Little core.
    pub ipc_little: f64,
    /// Dynamic power coefficient, W per GHz^3 per active Big core.
    pub kappa_dyn_big: f64,
    /// Dynamic power coefficient, W per GHz^3 per active Little core.
    pub kappa_dyn_little: f64,
    /// Static power per active Big core, W.
    pub static_big: f64,
    /// Static power per active Little core, W.
    pub static_little: f64,
    /// Always-on uncore power, W.
    pub uncore_power: f64,
    /// Branch mispredictions per instruction.
    pub branch_miss_per_instr: f64,
    /// L2 misses per instruction: base + slope * memory_intensity.
    pub l2_miss_base: f64,
    pub l2_miss_mem_slope: f64,
    /// Data memory accesses per instruction: base + slope * memory_intensity.
    pub mem_access_base: f64,
    pub mem_access_mem_slope: f64,
    /// Non-cache external requests per instruction per unit memory_intensity.
    pub ext_req_mem_slope: f64,
    /// Normalization scales mapping raw counters into [0, 1] features.
    pub scale_instructions: f64,
    pub scale_cycles: f64,
    pub scale_branch_miss: f64,
    pub scale_l2_miss: f64,
    pub scale_mem_access: f64,
    pub scale_ext_req: f64,
    pub scale_power: f64,
    /// Feature level every slot of the epoch-0 boot state reports.
    pub boot_feature_level: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            ipc_big: 2.0,
            ipc_little: 1.0,
            kappa_dyn_big: 0.25,
            kappa_dyn_little: 0.05,
            static_big: 0.10,
            static_little: 0.03,
            uncore_power: 0.10,
            branch_miss_per_instr: 0.01,
            l2_miss_base: 0.001,
            l2_miss_mem_slope: 0.02,
            mem_access_base: 0.05,
            mem_access_mem_slope: 0.25,
            ext_req_mem_slope: 0.01,
            scale_instructions: 1e9,
            scale_cycles: 2e9,
            scale_branch_miss: 1e7,
            scale_l2_miss: 2.1e7,
            scale_mem_access: 3e8,
            scale_ext_req: 1e7,
            scale_power: 12.0,
            boot_feature_level: 0.5,
        }
    }
}

impl Calibration {
    pub fn boot_state(&self) -> SystemState {
        SystemState::new([self.boot_feature_level; NUM_FEATURES])
            .expect("boot state is finite by construction")
    }
}

/// One decision interval of a synthetic application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSpec {
    /// Instruction count, 1e6..=1e9.
    pub work: f64,
    /// Fraction of the work that parallelizes across active cores.
    pub parallel_fraction: f64,
    /// Memory intensity in [0, 1]; scales IPC down and miss counters up.
    pub memory_intensity: f64,
    /// Big-cluster affinity in [0, 1]; scales Big IPC by itself and Little
    /// IPC by (1 - 0.5 * affinity).
    pub big_affinity: f64,
}

impl EpochSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.work >= 1e6 && self.work <= 1e9) {
            return Err(Error::input(format!(
                "epoch work {} outside 1e6..=1e9 instructions",
                self.work
            )));
        }
        for (name, v) in [
            ("parallel_fraction", self.parallel_fraction),
            ("memory_intensity", self.memory_intensity),
            ("big_affinity", self.big_affinity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A named epoch-structured synthetic application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub epochs: Vec<EpochSpec>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs.is_empty() {
            return Err(Error::input(format!("workload {} has no epochs", self.name)));
        }
        for e in &self.epochs {
            e.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: WorkloadSpec =
            toml::from_str(text).map_err(|e| Error::Serde(format!("workload spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn total_work(&self) -> f64 {
        self.epochs.iter().map(|e| e.work).sum()
    }
}

/// Objectives the simulator can report. PPW (instructions per joule, larger
/// better) is negated at this boundary so downstream code always minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveId {
    Time,
    Energy,
    Ppw,
}

impl ObjectiveId {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveId::Time => "time",
            ObjectiveId::Energy => "energy",
            ObjectiveId::Ppw => "ppw",
        }
    }
}

impl std::str::FromStr for ObjectiveId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(ObjectiveId::Time),
            "energy" => Ok(ObjectiveId::Energy),
            "ppw" => Ok(ObjectiveId::Ppw),
            other => Err(Error::input(format!("unknown objective '{other}'"))),
        }
    }
}

/// Per-epoch record in an evaluation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub decision: DrmDecision,
    /// Counters observed during this epoch (they drive the next decision).
    pub state: SystemState,
    pub time: f64,
    pub power: f64,
}

/// Outcome of evaluating one application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub exec_time: f64,
    pub energy: f64,
    /// Instructions per joule (positive, larger better).
    pub ppw: f64,
    pub trace: Vec<EpochTrace>,
}

/// Anything that can map the previous epoch's counters to a decision:
/// parametric policies and the built-in governors.
pub trait Decider {
    fn decide(&mut self, prev: &SystemState) -> Result<DrmDecision>;
    /// Called at the start of each application.
    fn reset(&mut self) {}
}

/// A parametric MLP policy as a decider.
pub struct PolicyDecider<'a> {
    pub arch: &'a PolicyArchitecture,
    pub params: &'a PolicyParams,
}

impl Decider for PolicyDecider<'_> {
    fn decide(&mut self, prev: &SystemState) -> Result<DrmDecision> {
        decide(self.arch, self.params, prev)
    }
}

/// A constant decision regardless of state.
pub struct FixedDecision(pub DrmDecision);

impl Decider for FixedDecision {
    fn decide(&mut self, _prev: &SystemState) -> Result<DrmDecision> {
        Ok(self.0)
    }
}

/// Per-cluster effective per-core rates in instructions per second.
fn core_rates(decision: &DrmDecision, epoch: &EpochSpec, cal: &Calibration) -> (f64, f64) {
    let mem_scale = 1.0 - 0.5 * epoch.memory_intensity;
    let r_big = cal.ipc_big * mem_scale * epoch.big_affinity * decision.f_big_ghz() * 1e9;
    let r_little = cal.ipc_little
        * mem_scale
        * (1.0 - 0.5 * epoch.big_affinity)
        * decision.f_little_ghz()
        * 1e9;
    (r_big, r_little)
}

/// Simulates one epoch under a fixed decision: epoch duration, average
/// power, and the counters the next decision will observe.
pub fn step_model(
    decision: &DrmDecision,
    epoch: &EpochSpec,
    cal: &Calibration,
) -> (f64, f64, SystemState) {
    let (r_big, r_little) = core_rates(decision, epoch, cal);
    let a_big = decision.a_big() as f64;
    let a_little = decision.a_little() as f64;

    let total_rate = a_big * r_big + a_little * r_little;
    let serial_on_big = decision.a_big() > 0 && r_big > r_little;
    let serial_rate = if serial_on_big { r_big } else { r_little };

    let p = epoch.parallel_fraction;
    let t_serial = epoch.work * (1.0 - p) / serial_rate;
    let t_parallel = epoch.work * p / total_rate;
    let time = t_serial + t_parallel;

    // work split: every active core with nonzero rate is busy through the
    // parallel phase; the fastest single core also runs the serial phase
    let u_parallel = if time > 0.0 { t_parallel / time } else { 0.0 };
    let u_serial = if time > 0.0 { (t_serial + t_parallel) / time } else { 0.0 };

    let mut big_utils = [0.0f64; MAX_BIG_CORES];
    for (c, u) in big_utils.iter_mut().enumerate().take(decision.a_big()) {
        *u = if r_big > 0.0 {
            if serial_on_big && c == 0 {
                u_serial
            } else {
                u_parallel
            }
        } else {
            0.0
        };
    }
    let mut little_utils = [0.0f64; MAX_LITTLE_CORES];
    for (c, u) in little_utils.iter_mut().enumerate().take(decision.a_little()) {
        *u = if !serial_on_big && c == 0 { u_serial } else { u_parallel };
    }

    let f_big = decision.f_big_ghz();
    let f_little = decision.f_little_ghz();
    let dyn_big: f64 = big_utils
        .iter()
        .take(decision.a_big())
        .map(|u| cal.kappa_dyn_big * f_big.powi(3) * u)
        .sum();
    let dyn_little: f64 = little_utils
        .iter()
        .take(decision.a_little())
        .map(|u| cal.kappa_dyn_little * f_little.powi(3) * u)
        .sum();
    let power = dyn_big
        + dyn_little
        + a_big * cal.static_big
        + a_little * cal.static_little
        + cal.uncore_power;

    // counters observed during this epoch
    let work = epoch.work;
    let mu = epoch.memory_intensity;
    let cycles = (a_big * f_big + a_little * f_little) * 1e9 * time;
    let mut raw = [0.0f64; NUM_FEATURES];
    raw[feature::INSTRUCTIONS] = work / cal.scale_instructions;
    raw[feature::CYCLES] = cycles / cal.scale_cycles;
    raw[feature::BRANCH_MISSES] = work * cal.branch_miss_per_instr / cal.scale_branch_miss;
    raw[feature::L2_MISSES] =
        work * (cal.l2_miss_base + cal.l2_miss_mem_slope * mu) / cal.scale_l2_miss;
    raw[feature::MEM_ACCESSES] =
        work * (cal.mem_access_base + cal.mem_access_mem_slope * mu) / cal.scale_mem_access;
    raw[feature::EXT_MEM_REQUESTS] = work * cal.ext_req_mem_slope * mu / cal.scale_ext_req;
    raw[feature::LITTLE_UTIL_SUM] = little_utils.iter().sum::<f64>() / MAX_LITTLE_CORES as f64;
    for (c, u) in big_utils.iter().enumerate() {
        raw[feature::BIG_UTIL_BASE + c] = *u;
    }
    raw[feature::CHIP_POWER] = power / cal.scale_power;
    for v in raw.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let state = SystemState::new(raw).expect("clamped features are finite");

    (time, power, state)
}

/// Runs a decider over one application.
pub fn evaluate_app(
    decider: &mut dyn Decider,
    app: &WorkloadSpec,
    cal: &Calibration,
) -> Result<EvalResult> {
    app.validate()?;
    decider.reset();
    let mut prev_state = cal.boot_state();
    let mut exec_time = 0.0;
    let mut energy = 0.0;
    let mut trace = Vec::with_capacity(app.epochs.len());
    for epoch in &app.epochs {
        let decision = decider.decide(&prev_state)?;
        let (time, power, state) = step_model(&decision, epoch, cal);
        exec_time += time;
        energy += power * time;
        trace.push(EpochTrace { decision, state: state.clone(), time, power });
        prev_state = state;
    }
    let ppw = app.total_work() / energy;
    Ok(EvalResult { exec_time, energy, ppw, trace })
}

/// Evaluates a decider over a set of applications and assembles the
/// requested objective vector. Time and energy sum over applications; PPW is
/// work-weighted (total work over total energy) and negated into
/// minimization form.
pub fn evaluate_with(
    decider: &mut dyn Decider,
    apps: &[WorkloadSpec],
    objectives: &[ObjectiveId],
    cal: &Calibration,
) -> Result<ObjectiveVector> {
    if apps.is_empty() {
        return Err(Error::input("at least one application is required"));
    }
    if objectives.len() < 2 {
        return Err(Error::input("at least two objectives are required"));
    }
    let mut time = 0.0;
    let mut energy = 0.0;
    let mut work = 0.0;
    for app in apps {
        let result = evaluate_app(decider, app, cal)?;
        time += result.exec_time;
        energy += result.energy;
        work += app.total_work();
    }
    let values = objectives
        .iter()
        .map(|o| match o {
            ObjectiveId::Time => time,
            ObjectiveId::Energy => energy,
            ObjectiveId::Ppw => -(work / energy),
        })
        .collect();
    ObjectiveVector::new(values)
}

/// Evaluates a parametric policy (the main entry point for optimizers).
pub fn evaluate(
    arch: &PolicyArchitecture,
    params: &PolicyParams,
    apps: &[WorkloadSpec],
    objectives: &[ObjectiveId],
    cal: &Calibration,
) -> Result<ObjectiveVector> {
    let mut decider = PolicyDecider { arch, params };
    evaluate_with(&mut decider, apps, objectives, cal)
}

/// The four built-in frequency governors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Governor {
    Performance,
    Powersave,
    Ondemand,
    Interactive,
}

impl Governor {
    pub const ALL: [Governor; 4] = [
        Governor::Performance,
        Governor::Powersave,
        Governor::Ondemand,
        Governor::Interactive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Governor::Performance => "performance",
            Governor::Powersave => "powersave",
            Governor::Ondemand => "ondemand",
            Governor::Interactive => "interactive",
        }
    }

    pub fn from_name(name: &str) -> Option<Governor> {
        Governor::ALL.iter().copied().find(|g| g.name() == name)
    }

    pub fn decider(&self) -> GovernorDecider {
        GovernorDecider::new(*self)
    }
}

const UTIL_RAISE_THRESHOLD: f64 = 0.8;
const UTIL_LOWER_THRESHOLD: f64 = 0.2;
/// Interactive jumps to max frequency when cluster utilization rises by this
/// much between consecutive epochs.
const RISING_EDGE_DELTA: f64 = 0.2;
const ONDEMAND_INIT_BIG_IDX: usize = 9; // 1100 MHz
const ONDEMAND_INIT_LITTLE_IDX: usize = 6; // 800 MHz

/// Stateful decider for the threshold governors. Performance and powersave
/// are constant; ondemand and interactive track per-cluster utilization and
/// move one 100 MHz step at a time (interactive additionally jumps to max on
/// a rising utilization edge).
pub struct GovernorDecider {
    governor: Governor,
    f_big_idx: usize,
    f_little_idx: usize,
    prev_big_util: Option<f64>,
    prev_little_util: Option<f64>,
}

impl GovernorDecider {
    pub fn new(governor: Governor) -> Self {
        let mut d = GovernorDecider {
            governor,
            f_big_idx: ONDEMAND_INIT_BIG_IDX,
            f_little_idx: ONDEMAND_INIT_LITTLE_IDX,
            prev_big_util: None,
            prev_little_util: None,
        };
        d.reset();
        d
    }

    fn step_index(idx: usize, util: f64, max_idx: usize) -> usize {
        if util > UTIL_RAISE_THRESHOLD {
            (idx + 1).min(max_idx)
        } else if util < UTIL_LOWER_THRESHOLD {
            idx.saturating_sub(1)
        } else {
            idx
        }
    }
}

impl Decider for GovernorDecider {
    fn reset(&mut self) {
        self.f_big_idx = ONDEMAND_INIT_BIG_IDX;
        self.f_little_idx = ONDEMAND_INIT_LITTLE_IDX;
        self.prev_big_util = None;
        self.prev_little_util = None;
    }

    fn decide(&mut self, prev: &SystemState) -> Result<DrmDecision> {
        match self.governor {
            Governor::Performance => DrmDecision::new(
                MAX_BIG_CORES,
                MAX_LITTLE_CORES,
                crate::policy::BIG_FREQ_LEVELS - 1,
                crate::policy::LITTLE_FREQ_LEVELS - 1,
            ),
            Governor::Powersave => DrmDecision::new(0, 1, 0, 0),
            Governor::Ondemand | Governor::Interactive => {
                let f = prev.features();
                let big_util = (0..MAX_BIG_CORES)
                    .map(|c| f[feature::BIG_UTIL_BASE + c])
                    .sum::<f64>()
                    / MAX_BIG_CORES as f64;
                let little_util = f[feature::LITTLE_UTIL_SUM];

                self.f_big_idx = Self::step_index(
                    self.f_big_idx,
                    big_util,
                    crate::policy::BIG_FREQ_LEVELS - 1,
                );
                self.f_little_idx = Self::step_index(
                    self.f_little_idx,
                    little_util,
                    crate::policy::LITTLE_FREQ_LEVELS - 1,
                );
                if self.governor == Governor::Interactive {
                    if let Some(prev_util) = self.prev_big_util {
                        if big_util - prev_util > RISING_EDGE_DELTA {
                            self.f_big_idx = crate::policy::BIG_FREQ_LEVELS - 1;
                        }
                    }
                    if let Some(prev_util) = self.prev_little_util {
                        if little_util - prev_util > RISING_EDGE_DELTA {
                            self.f_little_idx = crate::policy::LITTLE_FREQ_LEVELS - 1;
                        }
                    }
                }
                self.prev_big_util = Some(big_util);
                self.prev_little_util = Some(little_util);
                DrmDecision::new(MAX_BIG_CORES, MAX_LITTLE_CORES, self.f_big_idx, self.f_little_idx)
            }
        }
    }
}
