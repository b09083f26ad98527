//! Slot-driven environment: task arrivals, mode decisions, compute and
//! transmission queues, battery accounting, deadline tracking and metric
//! aggregation for the three policies.
//!
//! Every run is a pure function of (config, sampler, seed): arrivals, the
//! channel, exploration and the SAA samples each draw from their own
//! seed-derived stream, so two runs with the same inputs agree bit for bit
//! and different policies under one seed see identical arrival and channel
//! realizations.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentState, DdqnAgent, Transition};
use crate::channel::GainSampler;
use crate::error::CoreError;
use crate::math;
use crate::model;
use crate::params::SystemParams;
use crate::power::{self, default_loop_cap, PowerSchedule, SaaConfig, TxRequest};

/// Iteration budget for in-episode window allocations. Each budget unit is
/// one candidate evaluation; a couple of steepest-descent sweeps suffice
/// mid-episode, while offline callers use [`default_loop_cap`].
fn inner_loop_cap(tasks: usize, horizon_slots: u32) -> u32 {
    ((2 * tasks * tasks + 16) as u32).min(default_loop_cap(horizon_slots))
}
use crate::seeding::derive_seed;
use crate::task::{Mode, Task};

pub use crate::seeding::derive_seed as derive_stream_seed;

/// The three control policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// The full pipeline: DDQN mode selection with the embedded
    /// chance-constrained power optimizer.
    Opetrl,
    /// Plans every task in isolation over its own full window, ignoring
    /// queue coupling; squeezed tasks fall back to cap-power blasting.
    OneTask,
    /// Decides mode and power from the instantaneous channel only.
    Greedy,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Opetrl => "opetrl",
            Policy::OneTask => "one_task",
            Policy::Greedy => "greedy",
        }
    }

    pub fn parse(s: &str) -> Option<Policy> {
        match s.trim().to_ascii_lowercase().as_str() {
            "opetrl" => Some(Policy::Opetrl),
            "one_task" | "onetask" | "one-task" => Some(Policy::OneTask),
            "greedy" => Some(Policy::Greedy),
            _ => None,
        }
    }

    pub fn all() -> [Policy; 3] {
        [Policy::Opetrl, Policy::OneTask, Policy::Greedy]
    }
}

/// Full run configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub system: SystemParams,
    pub saa: SaaConfig,
    pub agent: crate::agent::AgentConfig,
    pub horizon_slots: u32,
    pub episodes: u32,
    pub seed: u64,
    pub policy: Policy,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            system: SystemParams::default(),
            saa: SaaConfig::default(),
            agent: crate::agent::AgentConfig::default(),
            horizon_slots: 2000,
            episodes: 50,
            seed: 1,
            policy: Policy::Opetrl,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        self.system.validate()?;
        self.saa.validate()?;
        self.agent.validate()?;
        if self.horizon_slots < self.system.deadline_slots {
            return Err(CoreError::InvalidConfig("horizon must cover at least one deadline"));
        }
        if self.episodes < 1 {
            return Err(CoreError::InvalidConfig("at least one episode required"));
        }
        Ok(())
    }
}

/// Per-slot trace record.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u32,
    /// Small-scale channel power gain realized this slot.
    pub gain: f64,
    pub power_w: f64,
    pub rate_bps: f64,
    /// Battery level after the slot's harvest and spend.
    pub battery_j: f64,
    /// Unfinished, non-abandoned tasks after the slot.
    pub queue_len: u32,
}

/// Per-task trace record.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub id: usize,
    pub mode: Mode,
    pub payload_bits: f64,
    pub arrive_slot: u32,
    pub ready_slot: u32,
    pub start_slot: Option<u32>,
    pub finish_slot: Option<u32>,
    pub met: bool,
    /// True when the planner stopped transmitting for this task because its
    /// deadline failed in practically every SAA sample.
    pub abandoned: bool,
    pub delivered_bits: f64,
}

/// Everything one episode recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub slots: Vec<SlotRecord>,
    pub tasks: Vec<TaskRecord>,
}

/// Episode-level outcome numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tasks_generated: u32,
    pub tasks_met: u32,
    /// Fraction of decided tasks delivered before their deadline, where a
    /// task is decided once it is met or its deadline fits the horizon;
    /// defined as 1 when nothing was decided.
    pub success_prob: f64,
    pub energy_tx_j: f64,
    pub energy_comp_j: f64,
    pub total_energy_j: f64,
}

/// Result of [`run_episode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub metrics: Metrics,
    pub trace: EpisodeTrace,
    /// Sum of emitted task rewards, in Joules.
    pub reward_sum: f64,
    /// Training losses incurred during the episode (empty when not
    /// learning or still warming up).
    pub losses: Vec<f64>,
    pub transitions_pushed: u32,
    /// Chance-constrained re-solves performed (OPETRL only).
    pub replans: u64,
}

/// Mean and standard error of the episode metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub episodes: usize,
    pub success_mean: f64,
    pub success_se: f64,
    pub energy_mean_j: f64,
    pub energy_se_j: f64,
}

/// Mean and standard error (sample std over sqrt n; zero for one episode).
pub fn aggregate(metrics: &[Metrics]) -> Aggregate {
    let n = metrics.len();
    assert!(n >= 1, "aggregate needs at least one episode");
    let mean = |f: &dyn Fn(&Metrics) -> f64| metrics.iter().map(|m| f(m)).sum::<f64>() / n as f64;
    let success_mean = mean(&|m| m.success_prob);
    let energy_mean = mean(&|m| m.total_energy_j);
    let se = |f: &dyn Fn(&Metrics) -> f64, mu: f64| {
        if n < 2 {
            return 0.0;
        }
        let var =
            metrics.iter().map(|m| (f(m) - mu) * (f(m) - mu)).sum::<f64>() / (n as f64 - 1.0);
        math::sqrt(var / n as f64)
    };
    Aggregate {
        episodes: n,
        success_mean,
        success_se: se(&|m| m.success_prob, success_mean),
        energy_mean_j: energy_mean,
        energy_se_j: se(&|m| m.total_energy_j, energy_mean),
    }
}

// ---------------------------------------------------------------------------
// Policy decision helpers
// ---------------------------------------------------------------------------

/// Greedy per-slot power: spread the residual evenly over the remaining
/// slots at the current gain, clamped to the cap.
pub fn greedy_power(
    residual_bits: f64,
    remaining_slots: u32,
    effective_h: f64,
    params: &SystemParams,
) -> f64 {
    if residual_bits <= 0.0 || remaining_slots == 0 {
        return 0.0;
    }
    let rate_bps = residual_bits / remaining_slots as f64 / params.slot_s;
    model::power_for_rate(rate_bps, effective_h, params.bandwidth_hz).clamp(0.0, params.p_max_w)
}

/// Greedy transmit-energy estimate: deliver `bits` evenly over `window`
/// slots at the current gain (uncapped, for comparison only).
fn greedy_energy_estimate(bits: f64, window: u32, effective_h: f64, params: &SystemParams) -> f64 {
    if window == 0 {
        return f64::INFINITY;
    }
    let rate_bps = bits / window as f64 / params.slot_s;
    let p = model::power_for_rate(rate_bps, effective_h, params.bandwidth_hz);
    p * window as f64 * params.slot_s
}

/// Greedy mode rule: CT exactly when the current-channel transmit estimate
/// for the feature map plus the full-speed compute energy undercuts the
/// raw-sample estimate.
pub fn greedy_mode(effective_h: f64, params: &SystemParams) -> Mode {
    let c = params.deadline_slots;
    let comp = model::compute_slots(params.f_max_hz, params).unwrap_or(u32::MAX);
    if comp >= c {
        return Mode::Dt;
    }
    let est_dt = greedy_energy_estimate(params.raw_bits, c, effective_h, params);
    let est_ct = greedy_energy_estimate(params.feat_bits(), c - comp, effective_h, params)
        + model::compute_energy(params.f_max_hz, params);
    if est_ct < est_dt {
        Mode::Ct
    } else {
        Mode::Dt
    }
}

/// Compute-speed choice at CT admission: grid over fractions of `f_max`,
/// minimizing compute energy plus the estimated transmit energy of the
/// window left after computing (mean-channel water-filling estimate).
///
/// The residual window is discounted by the number of tasks already queued
/// for the channel: computing slowly is only cheap while the airtime it
/// eats is not contended. Returns `(speed, compute_slots)`; falls back to
/// full speed when no grid point leaves a usable window.
pub fn choose_compute_speed(
    params: &SystemParams,
    queue_wait_slots: u32,
    deadline_slot: u32,
    now_slot: u32,
    pending_tx_tasks: u32,
) -> (f64, u32) {
    let h_mean = params.mean_effective_gain();
    let feat = params.feat_bits();
    let mut best: Option<(f64, f64, u32)> = None; // (cost, f, slots)
    for divisor in [8u32, 4, 2, 1] {
        let f = params.f_max_hz / divisor as f64;
        let slots = match model::compute_slots(f, params) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let ready = now_slot + queue_wait_slots + slots;
        if ready >= deadline_slot {
            continue;
        }
        let window = ((deadline_slot - ready) / (pending_tx_tasks + 1)).max(1) as usize;
        let gains = alloc::vec![h_mean; window];
        let tx_cost = match power::optimal_power_single_task(
            feat,
            &gains,
            params.p_max_w,
            params.slot_s,
            params.bandwidth_hz,
        ) {
            Ok(wf) if wf.feasible => wf.energy_j(params.slot_s),
            // Payload does not fit even at the cap: price the window at cap
            // power so a feasible grid point always wins.
            _ => params.p_max_w * window as f64 * params.slot_s * 1.0e3,
        };
        let cost = model::compute_energy(f, params) + tx_cost;
        if best.map_or(true, |(bc, _, _)| cost < bc) {
            best = Some((cost, f, slots));
        }
    }
    match best {
        Some((_, f, slots)) => (f, slots),
        None => {
            let slots = model::compute_slots(params.f_max_hz, params).unwrap_or(1);
            (params.f_max_hz, slots)
        }
    }
}

// ---------------------------------------------------------------------------
// Episode engine
// ---------------------------------------------------------------------------

struct LiveTask {
    task: Task,
    delivered_bits: f64,
    comp_remaining: u32,
    comp_energy_per_slot: f64,
    ready_slot: u32,
    first_tx_slot: Option<u32>,
    finish_slot: Option<u32>,
    met: bool,
    abandoned: bool,
    done: bool,
    /// One-task policy: this task's isolated mean-channel plan.
    solo_plan: Option<PowerSchedule>,
    /// One-task policy: squeezed past its plan, blast at cap power.
    cap_fallback: bool,
}

impl LiveTask {
    fn residual_bits(&self) -> f64 {
        (self.task.payload_bits - self.delivered_bits).max(0.0)
    }

    fn pending(&self) -> bool {
        !self.done && !self.abandoned
    }
}

struct OpenTransition {
    task_idx: usize,
    state: Vec<f64>,
    action: usize,
    reward: Option<f64>,
    next_state: Option<Vec<f64>>,
}

/// What the standing plan promised the head task when it was solved: its
/// residual then, and the window end a mean-channel allocation grants it.
/// Drives the deadline-risk trigger and the catch-up power floor.
struct PlanAnchor {
    head_id: usize,
    residual_bits: f64,
    window_end: u32,
}

struct Episode<'a> {
    cfg: &'a SimConfig,
    sampler: &'a (dyn GainSampler + Sync),
    agent: Option<&'a mut DdqnAgent>,
    epsilon: f64,
    learn: bool,

    arrival_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    agent_rng: ChaCha8Rng,
    saa_seed_base: u64,
    replans: u64,

    tasks: Vec<LiveTask>,
    compute_queue: Vec<usize>,
    battery: model::BatteryState,
    plan: Option<PowerSchedule>,
    plan_dirty: bool,
    anchor_dirty: bool,
    plan_anchor: Option<PlanAnchor>,

    energy_ledger: Vec<f64>,
    energy_tx_j: f64,
    energy_comp_j: f64,
    reward_sum: f64,
    losses: Vec<f64>,
    transitions_pushed: u32,
    open_transitions: Vec<OpenTransition>,

    slots: Vec<SlotRecord>,
}

impl<'a> Episode<'a> {
    fn params(&self) -> &SystemParams {
        &self.cfg.system
    }

    fn pending_view(&self) -> Vec<(f64, u32)> {
        self.tasks
            .iter()
            .filter(|t| t.pending())
            .map(|t| (t.residual_bits(), t.task.deadline_slot))
            .collect()
    }

    fn agent_state(&self, now: u32) -> AgentState {
        let pending: Vec<(f64, u32)> = self
            .pending_view()
            .into_iter()
            .map(|(bits, deadline)| (bits, deadline.saturating_sub(now)))
            .collect();
        AgentState::build(
            &pending,
            self.battery.energy_j,
            self.params(),
            self.agent.as_ref().map_or(8, |a| a.cfg.max_tasks),
        )
    }

    /// Remaining compute backlog ahead of a new arrival.
    fn compute_backlog(&self) -> u32 {
        self.compute_queue.iter().map(|&i| self.tasks[i].comp_remaining).sum()
    }

    fn select_mode(&mut self, now: u32, h_now: f64) -> Result<(Mode, Option<(Vec<f64>, usize)>), CoreError> {
        match self.cfg.policy {
            Policy::OneTask => {
                let mode = if self.params().feat_bits() < self.params().raw_bits {
                    Mode::Ct
                } else {
                    Mode::Dt
                };
                Ok((mode, None))
            }
            Policy::Greedy => Ok((greedy_mode(h_now, self.params()), None)),
            Policy::Opetrl => {
                let state = self.agent_state(now).features();
                let agent = self.agent.as_mut().expect("policy requires an agent");
                let mode =
                    crate::agent::select_action(&agent.online, &state, self.epsilon, &mut self.agent_rng)?;
                Ok((mode, Some((state, mode.action_index()))))
            }
        }
    }

    fn admit_task(&mut self, now: u32, h_now: f64) -> Result<(), CoreError> {
        let id = self.tasks.len();
        let (mode, decision) = self.select_mode(now, h_now)?;
        let mut task = Task::new(id, now, mode, self.params());
        let mut comp_energy_per_slot = 0.0;
        let mut ready = now;
        if mode == Mode::Ct {
            let wait = self.compute_backlog();
            let pending = self.tasks.iter().filter(|t| t.pending()).count() as u32;
            let (f, slots) = choose_compute_speed(self.params(), wait, task.deadline_slot, now, pending);
            task.comp_speed_hz = f;
            task.comp_slots = slots;
            task.queue_comp_slots = wait;
            comp_energy_per_slot = model::compute_energy(f, self.params()) / slots.max(1) as f64;
            ready = now + wait + slots;
        }
        // Close the previous arrival's transition with the state observed
        // at this decision.
        if let Some((state, action)) = &decision {
            let state_now = state.clone();
            if let Some(open) =
                self.open_transitions.iter_mut().rev().find(|o| o.next_state.is_none())
            {
                open.next_state = Some(state_now);
            }
            self.flush_closed_transitions(false)?;
            self.open_transitions.push(OpenTransition {
                task_idx: id,
                state: state.clone(),
                action: *action,
                reward: None,
                next_state: None,
            });
        }
        let live = LiveTask {
            task,
            delivered_bits: 0.0,
            comp_remaining: 0,
            comp_energy_per_slot,
            ready_slot: ready,
            first_tx_slot: None,
            finish_slot: None,
            met: false,
            abandoned: false,
            done: false,
            solo_plan: None,
            cap_fallback: false,
        };
        self.tasks.push(live);
        let idx = id;
        if mode == Mode::Ct {
            self.tasks[idx].comp_remaining = self.tasks[idx].task.comp_slots;
            self.compute_queue.push(idx);
        }
        if self.cfg.policy == Policy::OneTask {
            self.plan_solo(idx)?;
        }
        self.plan_dirty = true;
        Ok(())
    }

    /// One-task policy: Theorem-1 plan over the task's own full window on
    /// the mean channel, pretending the channel is exclusively its own.
    fn plan_solo(&mut self, idx: usize) -> Result<(), CoreError> {
        let p = self.params();
        let t = &self.tasks[idx];
        let start = t.ready_slot;
        if start >= t.task.deadline_slot {
            return Ok(());
        }
        let window = (t.task.deadline_slot - start) as usize;
        let gains = alloc::vec![p.mean_effective_gain(); window];
        let wf = power::optimal_power_single_task(
            t.task.payload_bits,
            &gains,
            p.p_max_w,
            p.slot_s,
            p.bandwidth_hz,
        )?;
        self.tasks[idx].solo_plan = Some(PowerSchedule {
            start_slot: start,
            powers_w: wf.powers_w,
            feasible: wf.feasible,
        });
        Ok(())
    }

    /// Requests for every pending task, in queue (arrival) order.
    fn tx_requests(&self, now: u32) -> Vec<TxRequest> {
        self.tasks
            .iter()
            .filter(|t| t.pending() && t.task.deadline_slot > now)
            .map(|t| TxRequest {
                id: t.task.id,
                ready_slot: t.ready_slot.max(now),
                deadline_slot: t.task.deadline_slot,
                payload_bits: t.residual_bits().max(1.0),
            })
            .collect()
    }

    /// Full chance-constrained re-solve of the standing plan.
    ///
    /// A task whose deadline fails in practically every SAA sample is a
    /// lost cause: transmitting for it would burn energy without making the
    /// deadline, so it is abandoned (it still collects its penalty at the
    /// deadline) and its slots go to the rest of the queue. Tasks that are
    /// merely short of the chance budget keep their best-effort plan.
    fn opetrl_replan(&mut self, now: u32) -> Result<(), CoreError> {
        const HOPELESS_FRACTION: f64 = 0.9;
        self.plan_dirty = false;
        for _round in 0..4 {
            let requests = self.tx_requests(now);
            if requests.is_empty() {
                self.plan = None;
                return Ok(());
            }
            let horizon = requests.iter().map(|r| r.deadline_slot).max().unwrap() - now;
            let seed = derive_seed(self.saa_seed_base, self.replans);
            self.replans += 1;
            let solution = power::solve_p1b(
                &requests,
                now,
                horizon as usize,
                &self.cfg.saa,
                self.sampler,
                seed,
                self.params(),
                inner_loop_cap(requests.len(), horizon),
            )?;
            let budget = HOPELESS_FRACTION * solution.k_samples as f64;
            let hopeless: Vec<usize> = solution
                .task_failures
                .iter()
                .filter(|(_, fails)| *fails as f64 > budget)
                .map(|(id, _)| *id)
                .collect();
            if hopeless.is_empty() {
                self.plan = Some(solution.schedule);
                self.refresh_anchor(now)?;
                return Ok(());
            }
            for id in hopeless {
                self.tasks[id].abandoned = true;
            }
        }
        let requests = self.tx_requests(now);
        self.plan = if requests.is_empty() { None } else { self.plan.take() };
        Ok(())
    }

    /// Recomputes the head's reference window from a mean-channel
    /// allocation of the current queue. Much cheaper than a full SAA
    /// re-solve; used on task completions, where the standing consensus
    /// plan stays valid for the successors.
    fn refresh_anchor(&mut self, now: u32) -> Result<(), CoreError> {
        self.anchor_dirty = false;
        self.plan_anchor = None;
        let head_idx = match self.head() {
            Some(i) => i,
            None => return Ok(()),
        };
        let requests = self.tx_requests(now);
        if requests.is_empty() {
            return Ok(());
        }
        let horizon = requests.iter().map(|r| r.deadline_slot).max().unwrap() - now;
        let p = self.params().clone();
        let trace = crate::channel::ChannelTrace::mean(&p, now, horizon as usize)?;
        if let Ok((ref_alloc, _)) = power::allocate_feasible(
            &requests,
            &trace,
            now,
            p.p_max_w,
            p.slot_s,
            p.bandwidth_hz,
            inner_loop_cap(requests.len(), horizon),
        ) {
            let head_id = self.tasks[head_idx].task.id;
            if let Some(e) = ref_alloc.entries.iter().find(|e| e.task_id == head_id) {
                self.plan_anchor = Some(PlanAnchor {
                    head_id,
                    residual_bits: self.tasks[head_idx].residual_bits(),
                    window_end: e.end_slot(),
                });
            }
        }
        Ok(())
    }

    /// Mean-channel bits the standing plan expected to have moved over the
    /// slot range `[from, to)`.
    fn plan_expected_bits(&self, from: u32, to: u32) -> f64 {
        let p = self.params();
        let plan = match &self.plan {
            Some(plan) => plan,
            None => return 0.0,
        };
        let h_mean = p.mean_effective_gain();
        (from..to)
            .map(|s| p.slot_s * model::rate_unchecked(plan.power_at(s), h_mean, p.bandwidth_hz))
            .sum()
    }

    /// Deadline-risk test for the head task: actual delivery has fallen
    /// behind the plan's own mean-channel profile by more than one slot of
    /// planned rate. Comparing progress against the plan's profile rather
    /// than absolute headroom cancels the consensus schedule's mean-channel
    /// bias.
    fn plan_at_risk(&self, head: &LiveTask, now: u32) -> bool {
        let anchor = match &self.plan_anchor {
            Some(a) => a,
            None => return true,
        };
        if anchor.head_id != head.task.id {
            return true;
        }
        let plan_start = match &self.plan {
            Some(p) => p.start_slot,
            None => return true,
        };
        let expected = self.plan_expected_bits(plan_start, now).min(anchor.residual_bits);
        let actual = anchor.residual_bits - head.residual_bits();
        let one_slot = self.plan_expected_bits(now, now + 1).max(
            anchor.residual_bits
                / (anchor.window_end.saturating_sub(plan_start).max(1) as f64),
        );
        expected - actual > one_slot
    }

    /// Per-slot re-solve for the head over what is left of its planned
    /// window: a single-task water-filling whose first slot carries the
    /// realized gain and whose future carries the channel mean. A good
    /// realized fade is exploited immediately (draining the queue early); a
    /// delivery shortfall raises the level (catching up); a window blown
    /// past its end escalates toward cap power on the remaining deadline
    /// slots.
    fn head_slot_power(&self, head: &LiveTask, now: u32, h_now: f64) -> f64 {
        let p = self.params();
        let window_end = match &self.plan_anchor {
            Some(a) if a.head_id == head.task.id => a.window_end.min(head.task.deadline_slot),
            _ => head.task.deadline_slot,
        };
        // Target one slot short of the window end: a fade on the final slot
        // is unrecoverable, so keep a spare.
        let mut remaining = window_end.saturating_sub(now).max(1) as usize;
        if remaining >= 3 {
            remaining -= 1;
        }
        let mut gains = alloc::vec![p.mean_effective_gain(); remaining];
        gains[0] = h_now;
        match power::optimal_power_single_task(
            head.residual_bits().max(1.0),
            &gains,
            p.p_max_w,
            p.slot_s,
            p.bandwidth_hz,
        ) {
            Ok(wf) => wf.powers_w[0],
            Err(_) => p.p_max_w,
        }
    }

    /// Index of the transmission head: earliest-arrival pending task.
    fn head(&self) -> Option<usize> {
        self.tasks.iter().position(|t| t.pending())
    }

    fn policy_power(&mut self, now: u32, h_now: f64) -> Result<f64, CoreError> {
        let head_idx = match self.head() {
            Some(i) => i,
            None => return Ok(0.0),
        };
        if self.tasks[head_idx].comp_remaining > 0 || self.tasks[head_idx].ready_slot > now {
            return Ok(0.0);
        }
        let p = self.params().clone();
        let residual = self.tasks[head_idx].residual_bits();
        if residual <= 0.0 {
            return Ok(0.0);
        }

        let raw = match self.cfg.policy {
            Policy::Greedy => {
                let remaining = self.tasks[head_idx].task.deadline_slot - now;
                greedy_power(residual, remaining, h_now, &p)
            }
            Policy::OneTask => {
                let head = &mut self.tasks[head_idx];
                let planned = head.solo_plan.as_ref().map(|s| s.power_at(now)).unwrap_or(0.0);
                if !head.cap_fallback {
                    // Plan sufficiency at the mean channel from here on.
                    let h_mean = p.mean_effective_gain();
                    let plan_rest: f64 = head
                        .solo_plan
                        .as_ref()
                        .map(|s| {
                            (now..head.task.deadline_slot)
                                .map(|t| {
                                    p.slot_s
                                        * model::rate_unchecked(s.power_at(t), h_mean, p.bandwidth_hz)
                                })
                                .sum()
                        })
                        .unwrap_or(0.0);
                    if plan_rest < residual {
                        head.cap_fallback = true;
                    }
                }
                if head.cap_fallback {
                    p.p_max_w
                } else {
                    planned
                }
            }
            Policy::Opetrl => {
                if self.plan_dirty {
                    self.opetrl_replan(now)?;
                } else if self.anchor_dirty {
                    self.refresh_anchor(now)?;
                }
                // Deadline risk: delivery has fallen behind the standing
                // plan by more than one slot's worth of planned rate.
                if let Some(i) = self.head() {
                    let head = &self.tasks[i];
                    if head.comp_remaining == 0
                        && head.ready_slot <= now
                        && self.plan_at_risk(head, now)
                    {
                        self.opetrl_replan(now)?;
                    }
                }
                match self.head() {
                    Some(i)
                        if i == head_idx
                            || (self.tasks[i].comp_remaining == 0 && self.tasks[i].ready_slot <= now) =>
                    {
                        // The restored plan is the base; the per-slot
                        // re-solve overrides it whenever exploiting the
                        // realized fade or catching up a shortfall calls for
                        // more power this slot.
                        let head = &self.tasks[i];
                        let planned = self.plan.as_ref().map(|s| s.power_at(now)).unwrap_or(0.0);
                        let slot_solve = self.head_slot_power(head, now, h_now);
                        planned.max(slot_solve)
                    }
                    _ => 0.0,
                }
            }
        };

        // Final-slot rounding: never spend more than exactly finishing the
        // head task's payload this slot.
        let head_idx = match self.head() {
            Some(i) => i,
            None => return Ok(0.0),
        };
        if self.tasks[head_idx].comp_remaining > 0 || self.tasks[head_idx].ready_slot > now {
            return Ok(0.0);
        }
        let residual = self.tasks[head_idx].residual_bits();
        let needed =
            model::power_for_rate(residual / p.slot_s, h_now, p.bandwidth_hz).max(0.0);
        Ok(raw.clamp(0.0, p.p_max_w).min(needed))
    }

    fn emit_reward(&mut self, task_idx: usize, met: bool, finish_slot: u32) -> Result<(), CoreError> {
        let (reward, has_agent) = match &self.agent {
            Some(agent) => {
                let arrive = self.tasks[task_idx].task.arrive_slot as usize;
                let window_energy: f64 = self.energy_ledger
                    [arrive..=(finish_slot as usize).min(self.energy_ledger.len() - 1)]
                    .iter()
                    .sum();
                (agent.reward_for(window_energy, met), true)
            }
            None => (0.0, false),
        };
        if !has_agent {
            return Ok(());
        }
        self.reward_sum += reward;
        if let Some(open) =
            self.open_transitions.iter_mut().find(|o| o.task_idx == task_idx && o.reward.is_none())
        {
            open.reward = Some(reward);
        }
        self.flush_closed_transitions(false)
    }

    /// Pushes every transition that has both its reward and its next state
    /// (at episode end: force-close with the final state, marked terminal).
    fn flush_closed_transitions(&mut self, episode_end: bool) -> Result<(), CoreError> {
        if self.agent.is_none() {
            return Ok(());
        }
        let final_state = if episode_end {
            Some(self.agent_state(self.cfg.horizon_slots).features())
        } else {
            None
        };
        let mut i = 0;
        while i < self.open_transitions.len() {
            let ready = {
                let o = &self.open_transitions[i];
                o.reward.is_some() && (o.next_state.is_some() || episode_end)
            };
            if !ready {
                if episode_end && self.open_transitions[i].reward.is_none() {
                    // Task still in flight at the horizon: no reward event
                    // ever fired, so no sample is stored.
                    self.open_transitions.remove(i);
                    continue;
                }
                i += 1;
                continue;
            }
            let o = self.open_transitions.remove(i);
            let terminal = o.next_state.is_none();
            let next_state = match o.next_state {
                Some(s) => s,
                None => final_state.clone().expect("episode end provides the final state"),
            };
            let transition = Transition {
                state: o.state,
                action: o.action,
                reward: o.reward.unwrap(),
                next_state,
                terminal,
            };
            self.transitions_pushed += 1;
            if self.learn {
                let agent = self.agent.as_mut().unwrap();
                if let Some(loss) = agent.push_and_train(transition, &mut self.agent_rng)? {
                    self.losses.push(loss);
                }
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<EpisodeOutcome, CoreError> {
        let p = self.params().clone();
        let harvest = p.slot_s * model::solar_power(&p);
        let gain_scale = p.mean_effective_gain();

        for now in 0..self.cfg.horizon_slots {
            // Channel first: one draw per slot, used by transmission and by
            // the greedy decisions.
            let g = self.sampler.sample_gain(&mut self.channel_rng).max(f64::MIN_POSITIVE);
            let h_now = g * gain_scale;

            // Deadline sweep: anything not delivered by now has missed.
            for idx in 0..self.tasks.len() {
                if !self.tasks[idx].done && self.tasks[idx].task.deadline_slot <= now {
                    self.tasks[idx].done = true;
                    self.tasks[idx].met = false;
                    self.emit_reward(idx, false, now)?;
                    self.plan_dirty = true;
                }
            }
            self.compute_queue.retain(|&i| !self.tasks[i].done);

            // Arrival.
            if p.arrival_prob > 0.0 && self.arrival_rng.gen::<f64>() < p.arrival_prob {
                self.admit_task(now, h_now)?;
            }

            // Compute progression: single processor, front of the queue.
            let mut e_comp = 0.0;
            if let Some(&idx) = self.compute_queue.first() {
                let charge = self.tasks[idx].comp_energy_per_slot;
                if self.battery.energy_j + harvest - charge >= 0.0 {
                    e_comp = charge;
                    let t = &mut self.tasks[idx];
                    t.comp_remaining -= 1;
                    if t.comp_remaining == 0 {
                        t.ready_slot = now + 1;
                        t.task.queue_comp_slots =
                            (now + 1).saturating_sub(t.task.arrive_slot + t.task.comp_slots);
                        self.compute_queue.remove(0);
                        self.plan_dirty = true;
                    }
                }
                // An unaffordable compute slot simply stalls.
            }

            // Transmission.
            let mut power_w = self.policy_power(now, h_now)?;
            let mut e_tx = p.slot_s * power_w;
            if self.battery.energy_j + harvest - e_comp - e_tx < 0.0 {
                power_w = 0.0;
                e_tx = 0.0;
                self.plan_dirty = true;
            }
            let mut rate_bps = 0.0;
            if power_w > 0.0 {
                rate_bps = model::rate_unchecked(power_w, h_now, p.bandwidth_hz);
                let head_idx = self.head().expect("power implies a head task");
                let head = &mut self.tasks[head_idx];
                if head.first_tx_slot.is_none() {
                    head.first_tx_slot = Some(now);
                    head.task.start_slot = Some(now);
                    head.task.queue_trans_slots = now.saturating_sub(head.ready_slot);
                }
                let bits = p.slot_s * rate_bps;
                head.delivered_bits += bits;
                if head.delivered_bits >= head.task.payload_bits - 1e-6 {
                    head.delivered_bits = head.task.payload_bits;
                    head.done = true;
                    head.met = true;
                    head.finish_slot = Some(now);
                    head.task.trans_slots = now - head.first_tx_slot.unwrap() + 1;
                    // The consensus plan remains valid for the successors;
                    // only the head's reference window needs recomputing.
                    self.anchor_dirty = self.cfg.policy == Policy::Opetrl;
                }
            }

            // Accounting.
            self.energy_tx_j += e_tx;
            self.energy_comp_j += e_comp;
            self.energy_ledger.push(e_tx + e_comp);
            self.battery =
                model::battery_step(self.battery, harvest, e_tx, e_comp, p.batt_cap_j)
                    .expect("slot spend was checked against the battery");

            // Completion rewards (after the ledger covers this slot).
            for idx in 0..self.tasks.len() {
                if self.tasks[idx].met && self.tasks[idx].finish_slot == Some(now) {
                    self.emit_reward(idx, true, now)?;
                }
            }

            self.slots.push(SlotRecord {
                slot: now,
                gain: g,
                power_w,
                rate_bps,
                battery_j: self.battery.energy_j,
                queue_len: self.tasks.iter().filter(|t| t.pending()).count() as u32,
            });
        }

        self.flush_closed_transitions(true)?;

        let generated = self.tasks.len() as u32;
        let met = self.tasks.iter().filter(|t| t.met).count() as u32;
        // Tasks whose deadline lies past the horizon have no verdict yet;
        // they are censored out of the success ratio (identically for every
        // policy, since arrivals are shared per seed).
        let decided = self
            .tasks
            .iter()
            .filter(|t| t.met || t.task.deadline_slot <= self.cfg.horizon_slots)
            .count() as u32;
        let metrics = Metrics {
            tasks_generated: generated,
            tasks_met: met,
            success_prob: if decided == 0 { 1.0 } else { met as f64 / decided as f64 },
            energy_tx_j: self.energy_tx_j,
            energy_comp_j: self.energy_comp_j,
            total_energy_j: self.energy_tx_j + self.energy_comp_j,
        };
        let tasks = self
            .tasks
            .iter()
            .map(|t| TaskRecord {
                id: t.task.id,
                mode: t.task.mode,
                payload_bits: t.task.payload_bits,
                arrive_slot: t.task.arrive_slot,
                ready_slot: t.ready_slot,
                start_slot: t.first_tx_slot,
                finish_slot: t.finish_slot,
                met: t.met,
                abandoned: t.abandoned,
                delivered_bits: t.delivered_bits,
            })
            .collect();
        Ok(EpisodeOutcome {
            metrics,
            trace: EpisodeTrace { slots: self.slots, tasks },
            reward_sum: self.reward_sum,
            losses: self.losses,
            transitions_pushed: self.transitions_pushed,
            replans: self.replans,
        })
    }
}

/// Runs one episode under the configured policy.
///
/// `agent` is required for the OPETRL policy (exploration rate `epsilon`;
/// `learn` enables replay pushes and gradient steps) and ignored otherwise.
/// Identical `(config, sampler, seed)` yield identical outcomes.
pub fn run_episode(
    cfg: &SimConfig,
    sampler: &(dyn GainSampler + Sync),
    agent: Option<&mut DdqnAgent>,
    epsilon: f64,
    learn: bool,
    seed: u64,
) -> Result<EpisodeOutcome, CoreError> {
    cfg.validate()?;
    if cfg.policy == Policy::Opetrl && agent.is_none() {
        return Err(CoreError::InvalidConfig("the OPETRL policy requires an agent"));
    }
    let episode = Episode {
        cfg,
        sampler,
        agent,
        epsilon,
        learn,
        arrival_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)),
        channel_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
        agent_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2)),
        saa_seed_base: derive_seed(seed, 3),
        replans: 0,
        tasks: Vec::new(),
        compute_queue: Vec::new(),
        battery: model::BatteryState { energy_j: cfg.system.batt_init_j },
        plan: None,
        plan_dirty: false,
        anchor_dirty: false,
        plan_anchor: None,
        energy_ledger: Vec::new(),
        energy_tx_j: 0.0,
        energy_comp_j: 0.0,
        reward_sum: 0.0,
        losses: Vec::new(),
        transitions_pushed: 0,
        open_transitions: Vec::new(),
        slots: Vec::with_capacity(cfg.horizon_slots as usize),
    };
    episode.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ConstantGain, RayleighGain};

    fn base_cfg(policy: Policy) -> SimConfig {
        SimConfig { policy, horizon_slots: 400, ..Default::default() }
    }

    fn agent_for(cfg: &SimConfig, seed: u64) -> DdqnAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DdqnAgent::new(cfg.agent.clone(), &cfg.system, &mut rng).unwrap()
    }

    #[test]
    fn zero_arrivals_episode_is_clean() {
        let mut cfg = base_cfg(Policy::Greedy);
        cfg.system.arrival_prob = 0.0;
        let out = run_episode(&cfg, &RayleighGain, None, 0.0, false, 9).unwrap();
        assert_eq!(out.metrics.tasks_generated, 0);
        assert_eq!(out.metrics.success_prob, 1.0);
        assert_eq!(out.metrics.energy_tx_j, 0.0);
        assert_eq!(out.trace.slots.len(), 400);
    }

    #[test]
    fn identical_seeds_reproduce_bit_for_bit() {
        for policy in [Policy::OneTask, Policy::Greedy] {
            let cfg = base_cfg(policy);
            let a = run_episode(&cfg, &RayleighGain, None, 0.0, false, 1234).unwrap();
            let b = run_episode(&cfg, &RayleighGain, None, 0.0, false, 1234).unwrap();
            assert_eq!(a, b, "{policy:?} episode not deterministic");
        }
        let cfg = base_cfg(Policy::Opetrl);
        let mut ag_a = agent_for(&cfg, 5);
        let mut ag_b = agent_for(&cfg, 5);
        let a = run_episode(&cfg, &RayleighGain, Some(&mut ag_a), 0.1, true, 77).unwrap();
        let b = run_episode(&cfg, &RayleighGain, Some(&mut ag_b), 0.1, true, 77).unwrap();
        assert_eq!(a, b, "OPETRL episode not deterministic");
        assert_eq!(ag_a.online, ag_b.online);
    }

    #[test]
    fn opetrl_requires_agent() {
        let cfg = base_cfg(Policy::Opetrl);
        assert!(run_episode(&cfg, &RayleighGain, None, 0.0, false, 1).is_err());
    }

    #[test]
    fn battery_and_causality_invariants_hold() {
        for policy in Policy::all() {
            let cfg = base_cfg(policy);
            let mut agent = agent_for(&cfg, 3);
            let agent_opt =
                if policy == Policy::Opetrl { Some(&mut agent) } else { None };
            let out = run_episode(&cfg, &RayleighGain, agent_opt, 0.05, false, 31).unwrap();
            for slot in &out.trace.slots {
                assert!(slot.battery_j >= 0.0 && slot.battery_j <= cfg.system.batt_cap_j);
                assert!(slot.power_w <= cfg.system.p_max_w + 1e-15);
            }
            for task in &out.trace.tasks {
                if let Some(start) = task.start_slot {
                    assert!(start >= task.ready_slot, "{policy:?}: transmit before ready");
                    assert!(start >= task.arrive_slot);
                }
                if task.met {
                    assert!(task.finish_slot.unwrap() < task.arrive_slot + cfg.system.deadline_slots);
                }
            }
        }
    }

    #[test]
    fn single_dt_task_with_ample_window_is_met() {
        let mut cfg = base_cfg(Policy::Greedy);
        cfg.system.arrival_prob = 1.0;
        cfg.horizon_slots = cfg.system.deadline_slots;
        // Exactly one arrival at slot 0 fits the horizon; later arrivals
        // miss by design, so only check the first.
        let out = run_episode(&cfg, &ConstantGain(1.0), None, 0.0, false, 2).unwrap();
        let first = &out.trace.tasks[0];
        assert!(first.met, "lone feasible task should be delivered");
    }

    #[test]
    fn greedy_power_limits() {
        let p = SystemParams::default();
        // Huge remaining window: vanishing power.
        let tiny = greedy_power(1000.0, 10_000, p.mean_effective_gain(), &p);
        assert!(tiny < 1e-9);
        // One remaining slot: the exact single-slot inversion, capped.
        let res = 5_000.0;
        let h = p.mean_effective_gain();
        let expect = (crate::math::exp2(res / (p.slot_s * p.bandwidth_hz)) - 1.0) / h;
        let got = greedy_power(res, 1, h, &p);
        assert!((got - expect.min(p.p_max_w)).abs() < 1e-18);
        assert_eq!(greedy_power(0.0, 5, h, &p), 0.0);
    }

    #[test]
    fn greedy_mode_flips_to_dt_on_excellent_channel() {
        // The feature map is much smaller than the raw sample, so CT wins at
        // typical gains; a spectacular channel makes both transmit costs
        // negligible and the compute energy tips the rule to DT.
        let p = SystemParams {
            raw_bits: 25_000.0,
            feat_h: 16,
            feat_w: 16,
            quant_bits: 8,
            ..Default::default()
        };
        assert_eq!(greedy_mode(p.mean_effective_gain() * 0.2, &p), Mode::Ct);
        assert_eq!(greedy_mode(p.mean_effective_gain() * 1e9, &p), Mode::Dt);
    }

    #[test]
    fn compute_speed_grid_is_sane() {
        let p = SystemParams::default();
        let (f, slots) = choose_compute_speed(&p, 0, 30, 0, 0);
        assert!(f > 0.0 && f <= p.f_max_hz);
        assert!(slots >= 1);
        // No usable window: full speed fallback.
        let (f2, _) = choose_compute_speed(&p, 0, 1, 0, 0);
        assert_eq!(f2, p.f_max_hz);
    }

    #[test]
    fn one_task_lone_task_matches_degenerate_opetrl_plan() {
        // Deterministic channel, single arrival: the one-task plan and the
        // K-degenerate SAA plan coincide (both are the mean-channel
        // water-filling over the same window).
        let mut cfg = base_cfg(Policy::OneTask);
        cfg.system.arrival_prob = 0.0;
        cfg.horizon_slots = 60;
        let p = &cfg.system;
        let window = p.deadline_slots as usize;
        let gains = alloc::vec![p.mean_effective_gain(); window];
        let wf = power::optimal_power_single_task(
            p.raw_bits,
            &gains,
            p.p_max_w,
            p.slot_s,
            p.bandwidth_hz,
        )
        .unwrap();
        let reqs = [TxRequest {
            id: 0,
            ready_slot: 0,
            deadline_slot: p.deadline_slots,
            payload_bits: p.raw_bits,
        }];
        let saa = SaaConfig { k_samples: Some(4), ..Default::default() };
        let sol = power::solve_p1b(
            &reqs,
            0,
            window,
            &saa,
            &ConstantGain(1.0),
            11,
            p,
            1000,
        )
        .unwrap();
        for (a, b) in wf.powers_w.iter().zip(&sol.schedule.powers_w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_mean_and_se() {
        let m = |s: f64, e: f64| Metrics {
            tasks_generated: 10,
            tasks_met: (10.0 * s) as u32,
            success_prob: s,
            energy_tx_j: e,
            energy_comp_j: 0.0,
            total_energy_j: e,
        };
        let one = aggregate(&[m(0.5, 2.0)]);
        assert_eq!(one.success_mean, 0.5);
        assert_eq!(one.success_se, 0.0);
        let two = aggregate(&[m(0.4, 2.0), m(0.6, 2.0)]);
        assert!((two.success_mean - 0.5).abs() < 1e-15);
        assert!(two.success_se > 0.0);
        assert_eq!(two.energy_se_j, 0.0);
        let same = aggregate(&[m(0.3, 1.0), m(0.3, 1.0), m(0.3, 1.0)]);
        assert_eq!(same.success_se, 0.0);
    }

    #[test]
    fn rewards_emitted_once_per_task() {
        let mut cfg = base_cfg(Policy::Opetrl);
        cfg.system.arrival_prob = 0.15;
        cfg.horizon_slots = 300;
        let mut agent = agent_for(&cfg, 8);
        let out = run_episode(&cfg, &RayleighGain, Some(&mut agent), 0.3, true, 21).unwrap();
        // Tasks resolved within the horizon emit exactly one reward; the
        // transition count can lag by the still-open tail but never exceeds
        // the resolved task count.
        let resolved = out
            .trace
            .tasks
            .iter()
            .filter(|t| t.finish_slot.is_some() || t.arrive_slot + cfg.system.deadline_slots <= 300)
            .count() as u32;
        assert!(out.transitions_pushed <= resolved);
        assert!(resolved > 0);
    }
}
