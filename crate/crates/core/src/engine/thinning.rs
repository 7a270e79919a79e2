use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::rng::RandomSource;
use crate::history::{HistoryRecord, Label};
use crate::kernels::ModelSpec;

/// Counters of the dominating point process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ThinningStats {
    pub candidates: u64,
    pub actor_candidates: u64,
    pub apical_accepted: u64,
    pub death_accepted: u64,
    pub lateral_candidates: u64,
    pub lateral_accepted: u64,
}

impl ThinningStats {
    /// Fraction of actor-band candidates accepted as apical births.
    pub fn apical_fraction(&self) -> f64 {
        self.apical_accepted as f64 / self.actor_candidates as f64
    }

    pub fn accepted(&self) -> u64 {
        self.apical_accepted + self.death_accepted + self.lateral_accepted
    }

    pub fn merge(&mut self, o: &ThinningStats) {
        self.candidates += o.candidates;
        self.actor_candidates += o.actor_candidates;
        self.apical_accepted += o.apical_accepted;
        self.death_accepted += o.death_accepted;
        self.lateral_candidates += o.lateral_candidates;
        self.lateral_accepted += o.lateral_accepted;
    }
}

/// An accepted candidate, not yet applied to the record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlannedEvent {
    Apical {
        time: f64,
        actor: Label,
        mark: f64,
    },
    Lateral {
        time: f64,
        actor: Label,
        theta: f64,
        mark: f64,
    },
    Death {
        time: f64,
        actor: Label,
        mark: f64,
    },
}

impl PlannedEvent {
    pub fn time(&self) -> f64 {
        match *self {
            PlannedEvent::Apical { time, .. }
            | PlannedEvent::Lateral { time, .. }
            | PlannedEvent::Death { time, .. } => time,
        }
    }

    pub fn actor(&self) -> Label {
        match *self {
            PlannedEvent::Apical { actor, .. }
            | PlannedEvent::Lateral { actor, .. }
            | PlannedEvent::Death { actor, .. } => actor,
        }
    }
}

/// Fenwick tree over labels of `(alive, birth if alive, dead lived length)`.
///
/// The lived length of every label at a time `e` is linear in these three
/// sums, so one tree answers prefix queries for any `e`.
#[derive(Debug, Clone, Default)]
pub(crate) struct LateralWeights {
    raw: Vec<[f64; 3]>,
    tree: Vec<[f64; 3]>,
}

#[inline]
fn lowbit(i: usize) -> usize {
    i & i.wrapping_neg()
}

#[inline]
fn weight(n: &[f64; 3], end: f64) -> f64 {
    (end * n[0] - n[1] + n[2]).max(0.0)
}

impl LateralWeights {
    pub(crate) fn from_record(record: &HistoryRecord) -> Self {
        let mut w = Self::default();
        for l in record.lineages() {
            w.push(l.birth());
            if let Some(d) = l.death() {
                w.kill(l.label(), l.birth(), d);
            }
        }
        w
    }

    pub(crate) fn len(&self) -> usize {
        self.raw.len()
    }

    /// Appends the next label, alive since `birth`.
    pub(crate) fn push(&mut self, birth: f64) {
        let v = [1.0, birth, 0.0];
        self.raw.push(v);
        let i = self.raw.len();
        let mut node = v;
        let stop = i - lowbit(i);
        let mut j = i - 1;
        while j > stop {
            let t = self.tree[j - 1];
            for k in 0..3 {
                node[k] += t[k];
            }
            j -= lowbit(j);
        }
        self.tree.push(node);
    }

    pub(crate) fn kill(&mut self, label: Label, birth: f64, death: f64) {
        let delta = [-1.0, -birth, death - birth];
        let mut i = label as usize;
        for (r, d) in self.raw[i - 1].iter_mut().zip(delta) {
            *r += d;
        }
        while i <= self.tree.len() {
            for (n, d) in self.tree[i - 1].iter_mut().zip(delta) {
                *n += d;
            }
            i += lowbit(i);
        }
    }

    /// `Σ_u lived_length(u, end)`.
    pub(crate) fn total(&self, end: f64) -> f64 {
        let mut acc = [0.0; 3];
        let mut i = self.tree.len();
        while i > 0 {
            for (a, n) in acc.iter_mut().zip(self.tree[i - 1]) {
                *a += n;
            }
            i -= lowbit(i);
        }
        weight(&acc, end)
    }

    /// Label whose lived slice contains `target`, and the offset into it.
    pub(crate) fn locate(&self, mut target: f64, end: f64) -> (Label, f64) {
        let n = self.tree.len();
        let mut pos = 0;
        let mut step = if n == 0 {
            0
        } else {
            1usize << (usize::BITS - 1 - n.leading_zeros())
        };
        while step > 0 {
            let next = pos + step;
            if next <= n {
                let w = weight(&self.tree[next - 1], end);
                if w <= target {
                    target -= w;
                    pos = next;
                }
            }
            step >>= 1;
        }
        if pos >= n {
            // rounding pushed us past the last label
            return (n as Label, weight(&self.raw[n - 1], end));
        }
        (pos as Label + 1, target)
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    end: f64,
    actor_slot: f64,
    actor_total: f64,
    total: f64,
}

#[derive(Debug, Clone, Copy)]
enum Candidate {
    At { time: f64, mark: f64, u: f64 },
    Exhausted,
}

/// Exact thinning of the branching/death intensity against its majorant,
/// on windows of fixed length that restart after every accepted event.
#[derive(Debug, Clone)]
pub struct Thinning {
    rng: ChaCha8Rng,
    delta: f64,
    now: f64,
    window: Option<Window>,
    pending: Candidate,
    lateral: LateralWeights,
    stats: ThinningStats,
}

impl Thinning {
    pub fn new(seed: u64, delta: f64, record: &HistoryRecord) -> Self {
        Self {
            rng: RandomSource::event_stream(seed),
            delta,
            now: record.current_time(),
            window: None,
            pending: Candidate::Exhausted,
            lateral: LateralWeights::from_record(record),
            stats: ThinningStats::default(),
        }
    }

    pub fn stats(&self) -> ThinningStats {
        self.stats
    }

    fn open_window(&mut self, record: &HistoryRecord, model: &ModelSpec) -> Window {
        let n = record.alive_count() as f64;
        let end = self.now + self.delta;
        let actor_slot = model.rates.b1_bound + model.death.bound() * n / model.scale_f64();
        let actor_total = actor_slot * n;
        let lateral = if model.rates.b2_bound > 0.0 {
            model.rates.b2_bound * self.lateral.total(end)
        } else {
            0.0
        };
        Window {
            end,
            actor_slot,
            actor_total,
            total: actor_total + lateral,
        }
    }

    /// Draws candidates until one lands in a window, returning its time.
    fn candidate(&mut self, record: &HistoryRecord, model: &ModelSpec, upto: f64) -> Option<(f64, f64, f64)> {
        loop {
            if let Candidate::At { time, mark, u } = self.pending {
                return Some((time, mark, u));
            }
            if self.now > upto {
                return None;
            }
            let w = match self.window {
                Some(w) => w,
                None => {
                    let w = self.open_window(record, model);
                    self.window = Some(w);
                    w
                }
            };
            let gap = -(1.0 - self.rng.random::<f64>()).ln() / w.total;
            let mark = self.rng.random::<f64>() * w.total;
            let u = self.rng.random::<f64>();
            let time = self.now + gap;
            if time > w.end || !time.is_finite() {
                self.now = w.end;
                self.window = None;
                continue;
            }
            self.pending = Candidate::At { time, mark, u };
        }
    }

    /// First accepted event with time `≤ upto`, or `None` once the next
    /// candidate lies beyond `upto`. Positions must be sampled through `upto`.
    pub fn next_event(&mut self, record: &HistoryRecord, model: &ModelSpec, upto: f64) -> Option<PlannedEvent> {
        while let Some((time, mark, u)) = self.candidate(record, model, upto) {
            if time > upto {
                return None;
            }
            self.pending = Candidate::Exhausted;
            self.now = time;
            self.stats.candidates += 1;
            let w = self.window.expect("candidate drawn inside a window");
            if let Some(ev) = self.evaluate(record, model, &w, time, mark, u) {
                return Some(ev);
            }
        }
        None
    }

    fn evaluate(
        &mut self,
        record: &HistoryRecord,
        model: &ModelSpec,
        w: &Window,
        time: f64,
        mark: f64,
        u: f64,
    ) -> Option<PlannedEvent> {
        let alive = record.alive_now();
        if mark < w.actor_total {
            self.stats.actor_candidates += 1;
            let idx = ((mark / w.actor_slot) as usize).min(alive.len() - 1);
            let a = mark - idx as f64 * w.actor_slot;
            let actor = alive[idx];
            let x = record.lineage(actor).ok()?.interpolate(time);
            let b1 = model.rates.b1(x);
            if a < b1 {
                self.stats.apical_accepted += 1;
                return Some(PlannedEvent::Apical { time, actor, mark: a });
            }
            if model.death.is_zero() {
                return None;
            }
            let positions = alive.iter().map(|&v| {
                record
                    .lineage(v)
                    .map(|l| l.interpolate(time))
                    .unwrap_or(crate::Vec2::ZERO)
            });
            let d = model.death.rate_with(x, alive.len(), positions, model.scale_f64());
            if a < b1 + d {
                self.stats.death_accepted += 1;
                return Some(PlannedEvent::Death { time, actor, mark: a });
            }
            return None;
        }
        self.stats.lateral_candidates += 1;
        let b2_bound = model.rates.b2_bound;
        let (actor, rem) = self.lateral.locate((mark - w.actor_total) / b2_bound, w.end);
        let l = record.lineage(actor).ok()?;
        let r = l.birth() + rem;
        if r >= time || l.death().is_some_and(|d| r >= d) {
            return None;
        }
        if u * b2_bound >= model.rates.b2(l.interpolate(r)) {
            return None;
        }
        let mut theta = r / time;
        while theta * time < l.birth() {
            theta = theta.next_up();
        }
        if !(theta > 0.0 && theta < 1.0) || !l.is_alive_at(theta * time) {
            return None;
        }
        self.stats.lateral_accepted += 1;
        Some(PlannedEvent::Lateral {
            time,
            actor,
            theta,
            mark: rem,
        })
    }

    /// Registers an applied event: updates lived weights and restarts the
    /// window at the event time.
    pub fn applied(&mut self, record: &HistoryRecord, time: f64) {
        while self.lateral.len() < record.ever_count() {
            let label = self.lateral.len() as Label + 1;
            let birth = record.lineage(label).map(|l| l.birth()).unwrap_or(time);
            self.lateral.push(birth);
        }
        self.now = time;
        self.window = None;
        self.pending = Candidate::Exhausted;
    }

    /// Registers a death applied to the record.
    pub fn died(&mut self, label: Label, birth: f64, time: f64) {
        self.lateral.kill(label, birth, time);
    }
}
