//! Exact integer interval sets over nanosecond timelines.
//!
//! All intervals are half-open `[start, end)`. An [`IntervalSet`] is kept in
//! canonical form: sorted, pairwise disjoint, and with adjacent intervals merged,
//! so `[0, 5) + [5, 9)` is stored as `[0, 9)`. Lengths are exact integers.

use crate::trace::{Nanos, StepWindow, TraceEvent};

/// A half-open interval `[start, end)` in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub start: Nanos,
    pub end: Nanos,
}

impl Interval {
    pub const fn new(start: Nanos, end: Nanos) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> Nanos {
        (self.end - self.start).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl From<(Nanos, Nanos)> for Interval {
    fn from((start, end): (Nanos, Nanos)) -> Self {
        Interval { start, end }
    }
}

/// Canonical union of half-open intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IntervalSet {
    intervals: Vec<Interval>,
}

impl IntervalSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sweep-line merge: sort by start, then fold overlapping or touching runs.
    /// Empty and inverted inputs cover no points and are dropped.
    pub fn union_of<I>(raw: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<Interval>,
    {
        let mut items: Vec<Interval> = raw
            .into_iter()
            .map(Into::into)
            .filter(|iv: &Interval| !iv.is_empty())
            .collect();
        items.sort_unstable();

        let mut merged: Vec<Interval> = Vec::with_capacity(items.len());
        for iv in items {
            match merged.last_mut() {
                Some(last) if iv.start <= last.end => {
                    if iv.end > last.end {
                        last.end = iv.end;
                    }
                }
                _ => merged.push(iv),
            }
        }
        IntervalSet { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Total covered length.
    pub fn len(&self) -> Nanos {
        self.intervals.iter().map(Interval::len).sum()
    }

    /// Smallest interval containing every member, if any.
    pub fn span(&self) -> Option<Interval> {
        match (self.intervals.first(), self.intervals.last()) {
            (Some(first), Some(last)) => Some(Interval::new(first.start, last.end)),
            _ => None,
        }
    }

    /// Length of `self ∩ other`, by a two-pointer walk over both canonical lists.
    pub fn intersect_len(&self, other: &IntervalSet) -> Nanos {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut total = 0;
        while i < a.len() && j < b.len() {
            let lo = a[i].start.max(b[j].start);
            let hi = a[i].end.min(b[j].end);
            if hi > lo {
                total += hi - lo;
            }
            if a[i].end <= b[j].end {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    /// Length of `self \ other`.
    pub fn subtract_len(&self, other: &IntervalSet) -> Nanos {
        self.len() - self.intersect_len(other)
    }

    /// Union with another canonical set.
    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        IntervalSet::union_of(self.intervals.iter().chain(other.intervals.iter()).copied())
    }
}

/// Truncates every selected event to `window`; events entirely outside are dropped.
pub fn clip<'a, I, F>(events: I, window: &StepWindow, mut keep: F) -> Vec<Interval>
where
    I: IntoIterator<Item = &'a TraceEvent>,
    F: FnMut(&TraceEvent) -> bool,
{
    events
        .into_iter()
        .filter(|e| keep(e))
        .filter_map(|e| {
            let start = e.t_start.max(window.t_start);
            let end = e.t_end().min(window.t_end);
            (end > start).then_some(Interval::new(start, end))
        })
        .collect()
}
