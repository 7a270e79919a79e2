//! Lived trajectories of every apex ever created.
//!
//! Labels start at 1 for the initial atoms and increase by one per birth, so
//! a label doubles as an index into the record. Dead lineages are kept: their
//! filament still drives the drift and can still branch laterally.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

pub type Label = u64;

#[derive(Debug, Error, PartialEq)]
pub enum HistoryError {
    #[error("time {time} outside the lived interval [{start}, {end}] of label {label}")]
    Domain {
        label: Label,
        time: f64,
        start: f64,
        end: f64,
    },
    #[error("time {time} is beyond the record's current time {current}")]
    Future { time: f64, current: f64 },
    #[error("unknown label {0}")]
    UnknownLabel(Label),
    #[error("invalid state: {0}")]
    State(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BirthKind {
    Apical,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parentage {
    pub label: Label,
    pub kind: BirthKind,
    /// Time on the parent's path where the child starts (the birth time for
    /// apical children).
    pub ancestral_time: f64,
}

/// One apex and its lived path, sampled on the integration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Lineage {
    label: Label,
    birth: f64,
    death: Option<f64>,
    parent: Option<Parentage>,
    times: Vec<f64>,
    positions: Vec<Vec2>,
}

impl Lineage {
    pub fn new(label: Label, birth: f64, start: Vec2, parent: Option<Parentage>) -> Self {
        Self {
            label,
            birth,
            death: None,
            parent,
            times: vec![birth],
            positions: vec![start],
        }
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn birth(&self) -> f64 {
        self.birth
    }

    pub fn death(&self) -> Option<f64> {
        self.death
    }

    pub fn parent(&self) -> Option<Parentage> {
        self.parent
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("lineage has at least one sample")
    }

    pub fn last_position(&self) -> Vec2 {
        *self.positions.last().expect("lineage has at least one sample")
    }

    /// `birth ≤ s < death`.
    #[inline]
    pub fn is_alive_at(&self, s: f64) -> bool {
        self.birth <= s && self.death.is_none_or(|d| s < d)
    }

    /// End of the lived interval, capped at the last stored sample.
    pub fn lived_end(&self) -> f64 {
        self.death.unwrap_or(f64::INFINITY).min(self.last_time())
    }

    /// Piecewise-linear interpolation of the stored samples; never extrapolates.
    pub fn position_at(&self, s: f64) -> Result<Vec2, HistoryError> {
        let end = self.lived_end();
        if !(s >= self.birth && s <= end) {
            return Err(HistoryError::Domain {
                label: self.label,
                time: s,
                start: self.birth,
                end,
            });
        }
        Ok(self.interpolate(s))
    }

    /// Interpolation without the domain check; `s` must lie in the sampled range.
    #[inline]
    pub(crate) fn interpolate(&self, s: f64) -> Vec2 {
        let hi = self.times.partition_point(|&t| t < s);
        if hi < self.times.len() && self.times[hi] == s {
            return self.positions[hi];
        }
        if hi == 0 {
            return self.positions[0];
        }
        if hi == self.times.len() {
            return self.last_position();
        }
        let lo = hi - 1;
        let frac = (s - self.times[lo]) / (self.times[hi] - self.times[lo]);
        self.positions[lo].lerp(self.positions[hi], frac)
    }

    /// `min(t, death) - birth`, clamped at 0.
    pub fn lived_length(&self, t: f64) -> f64 {
        (t.min(self.death.unwrap_or(f64::INFINITY)) - self.birth).max(0.0)
    }

    pub(crate) fn push_sample(&mut self, t: f64, x: Vec2) {
        debug_assert!(t > self.last_time(), "samples must be strictly increasing");
        self.times.push(t);
        self.positions.push(x);
    }

    /// Drops samples after `t` and ends the path exactly at `t`.
    fn truncate_at(&mut self, t: f64) {
        let x = self.interpolate(t);
        let keep = self.times.partition_point(|&s| s <= t);
        self.times.truncate(keep);
        self.positions.truncate(keep);
        if self.last_time() < t {
            self.times.push(t);
            self.positions.push(x);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Apical,
    Lateral,
    Death,
}

/// One branching or death event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    #[serde(rename = "t")]
    pub time: f64,
    pub actor: Label,
    /// Ancestral fraction: a lateral child starts at the parent's position at
    /// `theta * t`.
    pub theta: Option<f64>,
    pub child: Option<Label>,
    /// Accepted mark coordinate of the dominating point process.
    #[serde(skip)]
    pub mark: f64,
}

/// Birth mechanism passed to [`HistoryRecord::spawn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    Apical,
    Lateral { theta: f64 },
}

/// The historical population: all lineages, the current alive set and the
/// event log.
#[derive(Debug, Clone)]
pub struct HistoryRecord {
    lineages: Vec<Lineage>,
    initial_count: usize,
    current_time: f64,
    events: Vec<EventRecord>,
    alive: Vec<Label>,
    alive_slot: Vec<usize>,
}

const NOT_ALIVE: usize = usize::MAX;

impl HistoryRecord {
    /// Starts a record at time 0 with labels `1..=atoms.len()`.
    pub fn new(atoms: &[Vec2]) -> Self {
        let lineages: Vec<Lineage> = atoms
            .iter()
            .enumerate()
            .map(|(i, &x)| Lineage::new(i as Label + 1, 0.0, x, None))
            .collect();
        let alive = (1..=atoms.len() as Label).collect();
        Self {
            initial_count: atoms.len(),
            current_time: 0.0,
            events: Vec::new(),
            alive,
            alive_slot: (0..atoms.len()).collect(),
            lineages,
        }
    }

    pub fn initial_count(&self) -> usize {
        self.initial_count
    }

    pub fn current_time(&self) -> f64 {
        self.current_time
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn lineages(&self) -> &[Lineage] {
        &self.lineages
    }

    /// Number of labels ever created.
    pub fn ever_count(&self) -> usize {
        self.lineages.len()
    }

    /// Labels alive now, in internal slot order.
    pub fn alive_now(&self) -> &[Label] {
        &self.alive
    }

    pub fn alive_count(&self) -> usize {
        self.alive.len()
    }

    pub fn lineage(&self, label: Label) -> Result<&Lineage, HistoryError> {
        label
            .checked_sub(1)
            .and_then(|i| self.lineages.get(i as usize))
            .ok_or(HistoryError::UnknownLabel(label))
    }

    fn lineage_mut(&mut self, label: Label) -> Result<&mut Lineage, HistoryError> {
        label
            .checked_sub(1)
            .and_then(|i| self.lineages.get_mut(i as usize))
            .ok_or(HistoryError::UnknownLabel(label))
    }

    pub fn position_at(&self, label: Label, s: f64) -> Result<Vec2, HistoryError> {
        self.lineage(label)?.position_at(s)
    }

    /// Labels with `birth ≤ s < death`, ascending.
    pub fn alive_at(&self, s: f64) -> Result<Vec<Label>, HistoryError> {
        if s > self.current_time || s < 0.0 {
            return Err(HistoryError::Future {
                time: s,
                current: self.current_time,
            });
        }
        Ok(self
            .lineages
            .iter()
            .filter(|l| l.is_alive_at(s))
            .map(|l| l.label)
            .collect())
    }

    pub fn lived_length(&self, label: Label, t: f64) -> Result<f64, HistoryError> {
        let l = self.lineage(label)?;
        if t < l.birth {
            return Err(HistoryError::Domain {
                label,
                time: t,
                start: l.birth,
                end: l.lived_end(),
            });
        }
        Ok(l.lived_length(t))
    }

    /// Moves the record clock forward; samples up to `t` may then be appended.
    pub(crate) fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.current_time);
        self.current_time = t;
    }

    pub(crate) fn push_sample(&mut self, label: Label, t: f64, x: Vec2) -> Result<(), HistoryError> {
        self.lineage_mut(label)?.push_sample(t, x);
        Ok(())
    }

    fn check_event_time(&self, t: f64) -> Result<(), HistoryError> {
        if t > self.current_time {
            return Err(HistoryError::Future {
                time: t,
                current: self.current_time,
            });
        }
        if let Some(last) = self.events.last() {
            if t < last.time {
                return Err(HistoryError::State(format!(
                    "event at {t} precedes the previous event at {}",
                    last.time
                )));
            }
        }
        Ok(())
    }

    /// Creates a child of `parent` at time `t` and logs the event.
    pub fn spawn(&mut self, parent: Label, branch: Branch, t: f64, mark: f64) -> Result<Label, HistoryError> {
        self.check_event_time(t)?;
        let p = self.lineage(parent)?;
        let (kind, ancestral_time, theta) = match branch {
            Branch::Apical => {
                if !p.is_alive_at(t) {
                    return Err(HistoryError::State(format!(
                        "apical branching from label {parent}, not alive at {t}"
                    )));
                }
                (BirthKind::Apical, t, None)
            }
            Branch::Lateral { theta } => {
                let s = theta * t;
                if !(theta > 0.0 && theta < 1.0) || !p.is_alive_at(s) {
                    return Err(HistoryError::State(format!(
                        "lateral branching from label {parent} at ancestral time {s}, outside its lived interval"
                    )));
                }
                (BirthKind::Lateral, s, Some(theta))
            }
        };
        let start = p.position_at(ancestral_time)?;
        let child = self.lineages.len() as Label + 1;
        self.lineages.push(Lineage::new(
            child,
            t,
            start,
            Some(Parentage {
                label: parent,
                kind,
                ancestral_time,
            }),
        ));
        self.alive_slot.push(self.alive.len());
        self.alive.push(child);
        self.events.push(EventRecord {
            kind: match kind {
                BirthKind::Apical => EventKind::Apical,
                BirthKind::Lateral => EventKind::Lateral,
            },
            time: t,
            actor: parent,
            theta,
            child: Some(child),
            mark,
        });
        Ok(child)
    }

    /// Ends the lineage at `t`. Its path up to `t` is kept.
    pub fn kill(&mut self, label: Label, t: f64, mark: f64) -> Result<(), HistoryError> {
        self.check_event_time(t)?;
        let l = self.lineage(label)?;
        if !l.is_alive_at(t) {
            return Err(HistoryError::State(format!("label {label} is not alive at {t}")));
        }
        if t > l.last_time() {
            return Err(HistoryError::State(format!("label {label} has no samples up to {t}")));
        }
        let l = self.lineage_mut(label)?;
        l.truncate_at(t);
        l.death = Some(t);
        let slot = self.alive_slot[(label - 1) as usize];
        self.alive.swap_remove(slot);
        if let Some(&moved) = self.alive.get(slot) {
            self.alive_slot[(moved - 1) as usize] = slot;
        }
        self.alive_slot[(label - 1) as usize] = NOT_ALIVE;
        self.events.push(EventRecord {
            kind: EventKind::Death,
            time: t,
            actor: label,
            theta: None,
            child: None,
            mark,
        });
        Ok(())
    }

    /// Writes one CSV row per stored sample: `label,birth,death,t,x,y`.
    pub fn write_trajectories<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "label,birth,death,t,x,y")?;
        for l in &self.lineages {
            let death = l.death.map(|d| format!("{d:?}")).unwrap_or_default();
            for (t, x) in l.times.iter().zip(&l.positions) {
                writeln!(w, "{},{:?},{},{:?},{:?},{:?}", l.label, l.birth, death, t, x.x, x.y)?;
            }
        }
        w.flush()
    }

    /// Writes the event log as NDJSON (`kind,t,actor,theta,child`).
    pub fn write_events<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sample_lineage() -> Lineage {
        let mut l = Lineage::new(1, 0.0, Vec2::ZERO, None);
        l.push_sample(1.0, Vec2::new(2.0, 0.0));
        l
    }

    #[test]
    fn interpolates_linearly() {
        let l = two_sample_lineage();
        assert_eq!(l.position_at(0.5).unwrap(), Vec2::new(1.0, 0.0));
        assert_eq!(l.position_at(1.0).unwrap(), Vec2::new(2.0, 0.0));
        assert_eq!(l.position_at(0.0).unwrap(), Vec2::ZERO);
    }

    #[test]
    fn refuses_to_extrapolate() {
        let l = two_sample_lineage();
        assert!(matches!(l.position_at(-0.1), Err(HistoryError::Domain { .. })));
        assert!(matches!(l.position_at(1.1), Err(HistoryError::Domain { .. })));
    }

    #[test]
    fn lived_lengths() {
        let mut l = Lineage::new(4, 1.0, Vec2::ZERO, None);
        assert_eq!(l.lived_length(1.0), 0.0);
        l.push_sample(2.0, Vec2::ZERO);
        l.death = Some(1.5);
        assert_eq!(l.lived_length(2.0), 0.5);
        let l0 = Lineage::new(1, 0.0, Vec2::ZERO, None);
        assert_eq!(l0.lived_length(2.0), 2.0);
    }

    fn record3() -> HistoryRecord {
        let mut r = HistoryRecord::new(&[Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]);
        r.advance_to(1.0);
        for u in 1..=3 {
            let x = r.lineage(u).unwrap().last_position();
            r.push_sample(u, 1.0, x + Vec2::new(1.0, 0.0)).unwrap();
        }
        r
    }

    #[test]
    fn fresh_record_alive_set() {
        let r = HistoryRecord::new(&[Vec2::ZERO; 3]);
        assert_eq!(r.alive_at(0.0).unwrap(), vec![1, 2, 3]);
        assert!(r.alive_at(0.1).is_err());
    }

    #[test]
    fn death_is_right_open() {
        let mut r = record3();
        r.kill(2, 0.5, 0.0).unwrap();
        assert_eq!(r.alive_at(0.5 + 1e-12).unwrap(), vec![1, 3]);
        assert_eq!(r.alive_at(0.5 - 1e-12).unwrap(), vec![1, 2, 3]);
        assert_eq!(r.alive_at(0.5).unwrap(), vec![1, 3]);
        // history retained up to the death time
        assert_eq!(r.position_at(2, 0.25).unwrap(), Vec2::new(1.25, 0.0));
        assert_eq!(r.lineage(2).unwrap().last_time(), 0.5);
        assert!(r.position_at(2, 0.75).is_err());
        assert!(matches!(r.kill(2, 0.6, 0.0), Err(HistoryError::State(_))));
    }

    #[test]
    fn apical_child_starts_at_parent() {
        let mut r = record3();
        let c = r.spawn(1, Branch::Apical, 0.5, 0.0).unwrap();
        assert_eq!(c, 4);
        assert_eq!(r.position_at(4, 0.5).unwrap(), r.position_at(1, 0.5).unwrap());
        assert_eq!(r.alive_now().len(), 4);
        assert_eq!(r.events().len(), 1);
        assert_eq!(r.events()[0].child, Some(4));
    }

    #[test]
    fn lateral_at_parent_birth_uses_initial_position() {
        let mut r = record3();
        // theta * t == 0 is excluded (theta in (0,1)), so use a parent born later.
        let c = r.spawn(2, Branch::Apical, 0.25, 0.0).unwrap();
        let start = r.position_at(c, 0.25).unwrap();
        let t = 0.5;
        let g = r.spawn(c, Branch::Lateral { theta: 0.5 }, t, 0.0).unwrap();
        assert_eq!(r.position_at(g, t).unwrap(), start);
    }

    #[test]
    fn lateral_from_dead_parent() {
        let mut r = record3();
        r.kill(3, 0.4, 0.0).unwrap();
        let c = r.spawn(3, Branch::Lateral { theta: 0.3 }, 1.0, 0.0).unwrap();
        assert_eq!(r.position_at(c, 1.0).unwrap(), r.position_at(3, 0.3).unwrap());
        // ancestral time after death is refused
        assert!(r.spawn(3, Branch::Lateral { theta: 0.9 }, 1.0, 0.0).is_err());
    }

    #[test]
    fn apical_from_dead_parent_refused() {
        let mut r = record3();
        r.kill(1, 0.2, 0.0).unwrap();
        assert!(matches!(
            r.spawn(1, Branch::Apical, 0.5, 0.0),
            Err(HistoryError::State(_))
        ));
    }

    #[test]
    fn trajectory_csv_header() {
        let r = record3();
        let mut buf = Vec::new();
        r.write_trajectories(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("label,birth,death,t,x,y\n1,0.0,,0.0,0.0,0.0\n"));
        assert_eq!(s.lines().count(), 7);
    }

    #[test]
    fn event_ndjson_fields() {
        let mut r = record3();
        r.spawn(1, Branch::Lateral { theta: 0.5 }, 1.0, 0.3).unwrap();
        let mut buf = Vec::new();
        r.write_events(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"kind":"lateral","t":1.0,"actor":1,"theta":0.5,"child":4}"#
        );
    }
}
