use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ServerError;
use crate::network::EdgeIdx;
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub w_size: u64,
    pub w_slide: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            w_size: 300,
            w_slide: 30,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), ServerError> {
        if self.w_size == 0 || self.w_slide == 0 {
            return Err(ServerError::InvalidWindow(
                "w_size and w_slide must be positive".into(),
            ));
        }
        if self.w_slide > self.w_size {
            return Err(ServerError::InvalidWindow(format!(
                "w_slide {} exceeds w_size {}",
                self.w_slide, self.w_size
            )));
        }
        Ok(())
    }

    pub fn is_slide(&self, t: u64) -> bool {
        t.is_multiple_of(self.w_slide)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    stamp: Option<u64>,
    sum: f64,
    count: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStats {
    pub accepted: u64,
    pub resampled: u64,
    pub stale_dropped: u64,
    pub future_dropped: u64,
    pub invalid_dropped: u64,
}

/// Last report per sender within one timestep.
#[derive(Debug, Default)]
struct SenderSlot {
    stamp: Option<u64>,
    last: HashMap<Arc<str>, (EdgeIdx, f64)>,
}

/// Per-edge sliding windows of per-timestep cells.
///
/// Timestep `t` is inside the window at time `now` when
/// `now - w_size < t <= now`. Each cell keeps the sum and count of the
/// reports stamped with its timestep; a sender reporting more than once in a
/// timestep is resampled to its last report.
#[derive(Debug)]
pub struct SpeedWindow {
    config: WindowConfig,
    now: u64,
    cells: Vec<Vec<Cell>>,
    senders: Vec<SenderSlot>,
    stats: WindowStats,
}

impl SpeedWindow {
    pub fn new(edge_count: usize, config: WindowConfig) -> Result<Self, ServerError> {
        config.validate()?;
        let size = config.w_size as usize;
        Ok(Self {
            config,
            now: 0,
            cells: vec![vec![Cell::default(); size]; edge_count],
            senders: (0..size).map(|_| SenderSlot::default()).collect(),
            stats: WindowStats::default(),
        })
    }

    pub fn config(&self) -> WindowConfig {
        self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn stats(&self) -> WindowStats {
        self.stats
    }

    fn in_window(&self, t: u64) -> bool {
        t <= self.now && t + self.config.w_size > self.now
    }

    fn slot(&self, t: u64) -> usize {
        (t % self.config.w_size) as usize
    }

    /// Moves the window forward. Time never goes backwards.
    pub fn advance(&mut self, now: u64) {
        debug_assert!(now >= self.now, "window time went backwards");
        self.now = self.now.max(now);
    }

    /// Clears every cell that has left the window.
    pub fn evict(&mut self) {
        let (now, size) = (self.now, self.config.w_size);
        let live = |stamp: Option<u64>| stamp.is_some_and(|t| t + size > now);
        for ring in &mut self.cells {
            for cell in ring.iter_mut() {
                if cell.stamp.is_some() && !live(cell.stamp) {
                    *cell = Cell::default();
                }
            }
        }
        for slot in &mut self.senders {
            if slot.stamp.is_some() && !live(slot.stamp) {
                slot.stamp = None;
                slot.last.clear();
            }
        }
    }

    fn cell_mut(&mut self, edge: EdgeIdx, t: u64) -> &mut Cell {
        let slot = self.slot(t);
        let cell = &mut self.cells[edge.0][slot];
        if cell.stamp != Some(t) {
            *cell = Cell {
                stamp: Some(t),
                sum: 0.0,
                count: 0,
            };
        }
        cell
    }

    /// Adds one report. Returns whether it was accepted.
    pub fn ingest(&mut self, report: &Report) -> bool {
        if report.t > self.now {
            self.stats.future_dropped += 1;
            return false;
        }
        if !self.in_window(report.t) {
            self.stats.stale_dropped += 1;
            return false;
        }
        if report.edge.0 >= self.cells.len() || !(report.speed.is_finite() && report.speed >= 0.0) {
            self.stats.invalid_dropped += 1;
            return false;
        }

        let slot = self.slot(report.t);
        let senders = &mut self.senders[slot];
        if senders.stamp != Some(report.t) {
            senders.stamp = Some(report.t);
            senders.last.clear();
        }
        let previous = senders
            .last
            .insert(report.id.clone(), (report.edge, report.speed));
        if let Some((old_edge, old_speed)) = previous {
            let old = self.cell_mut(old_edge, report.t);
            old.sum -= old_speed;
            old.count -= 1;
            self.stats.resampled += 1;
        } else {
            self.stats.accepted += 1;
        }
        let cell = self.cell_mut(report.edge, report.t);
        cell.sum += report.speed;
        cell.count += 1;
        true
    }

    /// Unweighted mean of the non-empty cell means in the window, with the
    /// number of samples behind it.
    pub fn estimate(&self, edge: EdgeIdx) -> Option<(f64, u64)> {
        let mut total = 0.0;
        let mut cells = 0u32;
        let mut samples = 0u64;
        for cell in &self.cells[edge.0] {
            match cell.stamp {
                Some(t) if cell.count > 0 && self.in_window(t) => {
                    total += cell.sum / cell.count as f64;
                    cells += 1;
                    samples += cell.count as u64;
                }
                _ => {}
            }
        }
        (cells > 0).then(|| (total / cells as f64, samples))
    }

    /// Mean speed of the cell for timestep `t`, if it holds data.
    pub fn cell_mean(&self, edge: EdgeIdx, t: u64) -> Option<f64> {
        let cell = &self.cells[edge.0][self.slot(t)];
        (cell.stamp == Some(t) && cell.count > 0 && self.in_window(t))
            .then(|| cell.sum / cell.count as f64)
    }

    pub fn cell_count(&self, edge: EdgeIdx, t: u64) -> u32 {
        let cell = &self.cells[edge.0][self.slot(t)];
        if cell.stamp == Some(t) && self.in_window(t) {
            cell.count
        } else {
            0
        }
    }
}
