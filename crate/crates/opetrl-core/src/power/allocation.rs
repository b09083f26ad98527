//! Transmission-window allocation across the queued tasks.
//!
//! Splits the planning horizon `[now, last deadline)` into contiguous
//! per-task windows. Window lengths are the decision variables; starts
//! follow from contiguity and data readiness. The search starts from the
//! deadline-tight initialization and moves slots between a donor and a
//! receiver window: the pairwise ratio residual (the optimality condition
//! of the continuous relaxation) proposes single-slot moves, every move is
//! verified against the exactly recomputed energy, and when single-slot
//! moves stall the search line-probes whole transfer amounts along each
//! pair before stopping. Under fading the per-split energy is jagged, so
//! the probe is what keeps small instances exactly optimal.

use alloc::vec::Vec;

use crate::channel::ChannelTrace;
use crate::error::CoreError;
use crate::math;
use crate::power::waterfill::WfWorkspace;

/// One task's transmission demand as seen by the allocator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxRequest {
    pub id: usize,
    /// Earliest slot the task's data can be on the air.
    pub ready_slot: u32,
    /// First slot the task may no longer use (exclusive deadline).
    pub deadline_slot: u32,
    /// Bits still to deliver.
    pub payload_bits: f64,
}

/// One task's allowed transmission window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocEntry {
    pub task_id: usize,
    pub start_slot: u32,
    pub len_slots: u32,
}

impl AllocEntry {
    /// First slot past the window.
    pub fn end_slot(&self) -> u32 {
        self.start_slot + self.len_slots
    }
}

/// Per-task transmission windows over the planning horizon, in queue order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeAllocation {
    pub entries: Vec<AllocEntry>,
}

impl TimeAllocation {
    /// Checks the window invariants against the originating requests:
    /// every window at least one slot, starts contiguous up to data
    /// readiness, no window past its deadline, and the last window
    /// exhausting the horizon.
    pub fn validate(&self, requests: &[TxRequest], now_slot: u32) -> Result<(), CoreError> {
        if self.entries.len() != requests.len() {
            return Err(CoreError::Domain("allocation entry count mismatch"));
        }
        let mut prev_end = None;
        for (e, r) in self.entries.iter().zip(requests) {
            if e.task_id != r.id {
                return Err(CoreError::Domain("allocation order mismatch"));
            }
            if e.len_slots < 1 {
                return Err(CoreError::Domain("allocation window shorter than one slot"));
            }
            let floor = match prev_end {
                None => now_slot.max(r.ready_slot),
                Some(end) => core::cmp::max(end, r.ready_slot),
            };
            if e.start_slot != floor {
                return Err(CoreError::Domain("allocation windows not contiguous"));
            }
            if e.end_slot() > r.deadline_slot {
                return Err(CoreError::Domain("allocation window passes its deadline"));
            }
            prev_end = Some(e.end_slot());
        }
        let (last_e, last_r) = (self.entries.last().unwrap(), requests.last().unwrap());
        if last_e.end_slot() != last_r.deadline_slot {
            return Err(CoreError::Domain("last window must exhaust the horizon"));
        }
        Ok(())
    }
}

/// Both sides of the pairwise optimality ratio for windows `m` and `n`:
/// the left side is the window-length ratio `len_n / len_m`, the right side
/// the ratio of per-task water levels. At an interior optimum of the
/// continuous relaxation the two sides agree.
pub fn theorem3_residual(
    alloc: &TimeAllocation,
    m_idx: usize,
    n_idx: usize,
    requests: &[TxRequest],
    trace: &ChannelTrace,
    slot_s: f64,
    bandwidth_hz: f64,
) -> Result<(f64, f64), CoreError> {
    let (em, en) = (&alloc.entries[m_idx], &alloc.entries[n_idx]);
    if em.len_slots == 0 || en.len_slots == 0 {
        return Err(CoreError::Domain("ratio residual needs non-empty windows"));
    }
    let tw = slot_s * bandwidth_hz / core::f64::consts::LN_2;
    let ln_sum = |e: &AllocEntry| -> f64 {
        trace.window(e.start_slot, e.len_slots as usize).iter().map(|&h| math::ln(h)).sum()
    };
    let exponent = |e: &AllocEntry, payload: f64, s: f64| -> f64 {
        (payload / tw - s) / e.len_slots as f64
    };
    let f_left = en.len_slots as f64 / em.len_slots as f64;
    let ln_f_right = exponent(em, requests[m_idx].payload_bits, ln_sum(em))
        - exponent(en, requests[n_idx].payload_bits, ln_sum(en));
    Ok((f_left, math::exp(ln_f_right)))
}

/// Default iteration budget for the slot-moving loop.
pub fn default_loop_cap(horizon_slots: u32) -> u32 {
    10 * horizon_slots.max(1)
}

/// Cost of an allocation: infeasible windows dominate, energy breaks ties.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost {
    infeasible: u32,
    energy_j: f64,
}

impl Cost {
    fn better_than(&self, other: &Cost) -> bool {
        self.infeasible < other.infeasible
            || (self.infeasible == other.infeasible && self.energy_j < other.energy_j)
    }
}

/// Search state: lengths, derived starts, and cached per-window energies.
#[derive(Clone)]
struct SearchPoint {
    lens: Vec<u32>,
    starts: Vec<u32>,
    /// Per task: `(start, len, energy)`, energy `None` when the payload
    /// does not fit the window at cap power.
    energies: Vec<(u32, u32, Option<f64>)>,
    cost: Cost,
}

struct Searcher<'a> {
    requests: &'a [TxRequest],
    trace: &'a ChannelTrace,
    now_slot: u32,
    p_max_w: f64,
    slot_s: f64,
    bandwidth_hz: f64,
    /// Per-slot `ln h` over the trace and its prefix sums, shared by every
    /// window evaluation.
    ln_gains: Vec<f64>,
    ln_prefix: Vec<f64>,
}

impl<'a> Searcher<'a> {
    fn new(
        requests: &'a [TxRequest],
        trace: &'a ChannelTrace,
        now_slot: u32,
        p_max_w: f64,
        slot_s: f64,
        bandwidth_hz: f64,
    ) -> Self {
        let ln_gains: Vec<f64> = trace.gains.iter().map(|&h| math::ln(h)).collect();
        let mut ln_prefix = Vec::with_capacity(ln_gains.len() + 1);
        ln_prefix.push(0.0);
        let mut acc = 0.0;
        for &l in &ln_gains {
            acc += l;
            ln_prefix.push(acc);
        }
        Searcher { requests, trace, now_slot, p_max_w, slot_s, bandwidth_hz, ln_gains, ln_prefix }
    }

    fn window_ln_sum(&self, start: u32, len: u32) -> f64 {
        let off = (start - self.trace.start_slot) as usize;
        self.ln_prefix[off + len as usize] - self.ln_prefix[off]
    }

    /// Window starts implied by the lengths: contiguous, clamped forward by
    /// data readiness.
    fn starts(&self, lens: &[u32]) -> Vec<u32> {
        let mut out = Vec::with_capacity(lens.len());
        let mut prev_end = self.now_slot;
        for (r, &len) in self.requests.iter().zip(lens) {
            let s = core::cmp::max(prev_end, r.ready_slot);
            out.push(s);
            prev_end = s + len;
        }
        out
    }

    fn shape_ok(&self, lens: &[u32], starts: &[u32]) -> bool {
        for ((r, &len), &s) in self.requests.iter().zip(lens).zip(starts) {
            if len < 1 || s + len > r.deadline_slot {
                return false;
            }
        }
        let last = lens.len() - 1;
        starts[last] + lens[last] == self.requests[last].deadline_slot
    }

    /// Per-task minimal energy over the given window, `None` when the
    /// payload does not fit even at the power cap.
    fn window_energy(&self, ws: &mut WfWorkspace, idx: usize, start: u32, len: u32) -> Option<f64> {
        let off = (start - self.trace.start_slot) as usize;
        let gains = &self.trace.gains[off..off + len as usize];
        let ln_gains = &self.ln_gains[off..off + len as usize];
        let out = ws.solve_with_ln(
            self.requests[idx].payload_bits,
            gains,
            ln_gains,
            self.p_max_w,
            self.slot_s,
            self.bandwidth_hz,
        );
        out.feasible.then_some(out.energy_j)
    }

    fn point(&self, ws: &mut WfWorkspace, lens: Vec<u32>, cache: Option<&SearchPoint>) -> SearchPoint {
        let starts = self.starts(&lens);
        let mut energies = Vec::with_capacity(lens.len());
        let mut cost = Cost { infeasible: 0, energy_j: 0.0 };
        for i in 0..lens.len() {
            let cached = cache.and_then(|c| {
                let (s, l, e) = c.energies[i];
                (s == starts[i] && l == lens[i]).then_some(e)
            });
            let energy = match cached {
                Some(e) => e,
                None => self.window_energy(ws, i, starts[i], lens[i]),
            };
            match energy {
                Some(e) => cost.energy_j += e,
                None => {
                    cost.infeasible += 1;
                    cost.energy_j += self.p_max_w * lens[i] as f64 * self.slot_s;
                }
            }
            energies.push((starts[i], lens[i], energy));
        }
        SearchPoint { lens, starts, energies, cost }
    }

    /// The point after moving `amount` slots from `donor` to `receiver`,
    /// `None` when the resulting shape is infeasible.
    fn shifted(
        &self,
        ws: &mut WfWorkspace,
        from: &SearchPoint,
        donor: usize,
        receiver: usize,
        amount: u32,
    ) -> Option<SearchPoint> {
        if donor == receiver || from.lens[donor] <= amount {
            return None;
        }
        let mut lens = from.lens.clone();
        lens[donor] -= amount;
        lens[receiver] += amount;
        let starts = self.starts(&lens);
        if !self.shape_ok(&lens, &starts) {
            return None;
        }
        Some(self.point(ws, lens, Some(from)))
    }

    /// `f_R - f_L` of the pairwise ratio condition for ordered pair
    /// `(n, m)`, via the trace prefix sums.
    fn residual_fast(&self, pt: &SearchPoint, m: usize, n: usize) -> f64 {
        let tw = self.slot_s * self.bandwidth_hz / core::f64::consts::LN_2;
        let expo = |i: usize| -> f64 {
            (self.requests[i].payload_bits / tw - self.window_ln_sum(pt.starts[i], pt.lens[i]))
                / pt.lens[i] as f64
        };
        let f_left = pt.lens[n] as f64 / pt.lens[m] as f64;
        math::exp(expo(m) - expo(n)) - f_left
    }
}

/// Splits the horizon into per-task windows minimizing total transmit
/// energy under the given channel trace.
///
/// Requests must be in queue order (non-decreasing deadlines) with
/// `ready_slot < deadline_slot` and the trace covering
/// `[now, last deadline)`. Tasks that cannot receive a single slot make the
/// queue infeasible; see [`allocate_feasible`] for the dropping wrapper.
pub fn allocate_times(
    requests: &[TxRequest],
    trace: &ChannelTrace,
    now_slot: u32,
    p_max_w: f64,
    slot_s: f64,
    bandwidth_hz: f64,
    loop_cap: u32,
) -> Result<TimeAllocation, CoreError> {
    if requests.is_empty() {
        return Err(CoreError::Domain("allocation needs at least one task"));
    }
    for w in requests.windows(2) {
        if w[0].deadline_slot > w[1].deadline_slot {
            return Err(CoreError::Domain("requests must be in queue order"));
        }
    }
    for r in requests {
        if !(r.payload_bits > 0.0) {
            return Err(CoreError::Domain("request payloads must be positive"));
        }
        if r.ready_slot >= r.deadline_slot || now_slot >= r.deadline_slot {
            return Err(CoreError::Infeasible("a task has no usable slot before its deadline"));
        }
    }
    let last_deadline = requests.last().unwrap().deadline_slot;
    if trace.start_slot > now_slot || trace.end_slot() + 1 < last_deadline {
        return Err(CoreError::Domain("trace does not cover the planning horizon"));
    }

    let searcher = Searcher::new(requests, trace, now_slot, p_max_w, slot_s, bandwidth_hz);
    let mut ws = WfWorkspace::new();
    let k = requests.len();

    // Deadline-tight initialization, capped so every successor keeps at
    // least one usable slot (deadlines may repeat or crowd together).
    let mut lens: Vec<u32> = Vec::with_capacity(k);
    {
        let mut prev_end = now_slot;
        for (i, r) in requests.iter().enumerate() {
            let s = core::cmp::max(prev_end, r.ready_slot);
            if s >= r.deadline_slot {
                return Err(CoreError::Infeasible("a task has no usable slot before its deadline"));
            }
            let mut end = r.deadline_slot;
            for (j, rj) in requests.iter().enumerate().skip(i + 1) {
                end = end.min(rj.deadline_slot - (j - i) as u32);
            }
            let end = end.max(s + 1);
            lens.push(end - s);
            prev_end = end;
        }
    }
    let mut current = searcher.point(&mut ws, lens, None);
    if !searcher.shape_ok(&current.lens, &current.starts) {
        return Err(CoreError::Infeasible("a task has no usable slot before its deadline"));
    }

    if k > 1 {
        let mut budget = loop_cap;

        'outer: while budget > 0 {
            // Phase A: ratio-residual proposal. Largest f_R - f_L, lowest
            // (n, m) on ties; positive residual shrinks m and grows n.
            let mut best_pair: Option<(usize, usize, f64)> = None;
            for n in 0..k {
                for m in 0..k {
                    if n == m {
                        continue;
                    }
                    let resid = searcher.residual_fast(&current, m, n);
                    if best_pair.map_or(true, |(_, _, b)| resid > b) {
                        best_pair = Some((n, m, resid));
                    }
                }
            }
            if let Some((n, m, resid)) = best_pair {
                if resid > 0.0 {
                    budget = budget.saturating_sub(1);
                    if let Some(next) = searcher.shifted(&mut ws, &current, m, n, 1) {
                        if next.cost.better_than(&current.cost) {
                            current = next;
                            continue 'outer;
                        }
                    }
                }
            }

            // Phase B: steepest improving single-slot move.
            let mut best: Option<SearchPoint> = None;
            for donor in 0..k {
                for receiver in 0..k {
                    budget = budget.saturating_sub(1);
                    if let Some(next) = searcher.shifted(&mut ws, &current, donor, receiver, 1) {
                        let beats = match &best {
                            None => next.cost.better_than(&current.cost),
                            Some(b) => next.cost.better_than(&b.cost),
                        };
                        if beats {
                            best = Some(next);
                        }
                    }
                }
            }
            if let Some(next) = best {
                current = next;
                continue 'outer;
            }

            // Phase C: line probe. Single-slot moves stall on the jagged
            // per-split energies fading produces; probing whole transfer
            // amounts along every pair escapes those local minima (and
            // makes two-task instances exactly optimal).
            let mut best: Option<SearchPoint> = None;
            for donor in 0..k {
                for receiver in 0..k {
                    if donor == receiver {
                        continue;
                    }
                    for amount in 2..current.lens[donor].max(1) {
                        if budget == 0 {
                            break;
                        }
                        budget -= 1;
                        match searcher.shifted(&mut ws, &current, donor, receiver, amount) {
                            Some(next) => {
                                let beats = match &best {
                                    None => next.cost.better_than(&current.cost),
                                    Some(b) => next.cost.better_than(&b.cost),
                                };
                                if beats {
                                    best = Some(next);
                                }
                            }
                            // Larger transfers only tighten the same
                            // constraint; stop this direction.
                            None => break,
                        }
                    }
                }
            }
            if let Some(next) = best {
                current = next;
                continue 'outer;
            }

            // Phase D (three-task queues only): pair probes walk a 2-D
            // length lattice along single directions and can still stall in
            // a diagonal valley; sweep both free lengths once before giving
            // up. Budget-capped like everything else, so mid-episode calls
            // skip it and offline calls run it to completion.
            if k == 3 {
                let mut best: Option<SearchPoint> = None;
                let total: u32 = current.lens.iter().sum();
                'sweep: for len0 in 1..total {
                    for len1 in 1..total.saturating_sub(len0) {
                        if budget == 0 {
                            break 'sweep;
                        }
                        budget -= 1;
                        let lens = alloc::vec![len0, len1, total - len0 - len1];
                        let starts = searcher.starts(&lens);
                        if !searcher.shape_ok(&lens, &starts) {
                            continue;
                        }
                        let cand = searcher.point(&mut ws, lens, Some(&current));
                        let beats = match &best {
                            None => cand.cost.better_than(&current.cost),
                            Some(b) => cand.cost.better_than(&b.cost),
                        };
                        if beats {
                            best = Some(cand);
                        }
                    }
                }
                if let Some(next) = best {
                    current = next;
                    continue 'outer;
                }
            }
            break 'outer;
        }
    }

    let entries = requests
        .iter()
        .zip(current.lens.iter().zip(&current.starts))
        .map(|(r, (&len, &s))| AllocEntry { task_id: r.id, start_slot: s, len_slots: len })
        .collect();
    let out = TimeAllocation { entries };
    debug_assert!(out.validate(requests, now_slot).is_ok());
    Ok(out)
}

/// [`allocate_times`] with infeasible tasks dropped: any task without a
/// usable slot before its deadline is removed from the queue (and reported)
/// instead of failing the whole allocation.
pub fn allocate_feasible(
    requests: &[TxRequest],
    trace: &ChannelTrace,
    now_slot: u32,
    p_max_w: f64,
    slot_s: f64,
    bandwidth_hz: f64,
    loop_cap: u32,
) -> Result<(TimeAllocation, Vec<usize>), CoreError> {
    let mut dropped = Vec::new();
    let kept: Vec<TxRequest> = requests
        .iter()
        .filter(|r| {
            let usable = r.ready_slot < r.deadline_slot && now_slot < r.deadline_slot;
            if !usable {
                dropped.push(r.id);
            }
            usable
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Ok((TimeAllocation { entries: Vec::new() }, dropped));
    }
    let alloc = allocate_times(&kept, trace, now_slot, p_max_w, slot_s, bandwidth_hz, loop_cap)?;
    Ok((alloc, dropped))
}
