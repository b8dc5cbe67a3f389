use serde::{Deserialize, Serialize};

/// Frames `[start, end]` owned by one local field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFieldSlot {
    pub start: usize,
    pub end: usize,
    /// Camera center that opened the slot.
    pub anchor: [f64; 3],
    pub active: bool,
}

impl LocalFieldSlot {
    pub fn contains(&self, q: usize) -> bool {
        (self.start..=self.end).contains(&q)
    }
}

/// Opens a new slot whenever the camera center strays more than `radius`
/// from the current slot's anchor. A new slot starts `overlap` frames
/// before the frame that triggered it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSchedule {
    pub radius: f64,
    pub overlap: usize,
    pub slots: Vec<LocalFieldSlot>,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl SlotSchedule {
    pub fn new(radius: f64, overlap: usize) -> Self {
        Self {
            radius,
            overlap,
            slots: Vec::new(),
        }
    }

    /// Schedule for a whole trajectory at once.
    pub fn plan(centers: &[[f64; 3]], radius: f64, overlap: usize) -> Self {
        let mut s = Self::new(radius, overlap);
        for (q, &c) in centers.iter().enumerate() {
            s.observe(q, c);
        }
        s
    }

    /// Record frame `q` (frames arrive in order). Returns the index of a
    /// slot opened by this frame.
    pub fn observe(&mut self, q: usize, center: [f64; 3]) -> Option<usize> {
        let Some(cur) = self.slots.last_mut() else {
            self.slots.push(LocalFieldSlot {
                start: q,
                end: q,
                anchor: center,
                active: true,
            });
            return Some(0);
        };
        if dist(center, cur.anchor) <= self.radius || q == cur.start {
            cur.end = cur.end.max(q);
            return None;
        }
        cur.active = false;
        let start = q.saturating_sub(self.overlap).max(cur.start + 1);
        cur.end = q - 1;
        self.slots.push(LocalFieldSlot {
            start,
            end: q,
            anchor: center,
            active: true,
        });
        Some(self.slots.len() - 1)
    }

    /// Slot used to render frame `q`: the earliest one containing it.
    pub fn owner(&self, q: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.contains(q))
    }

    pub fn active(&self) -> Option<usize> {
        self.slots.iter().rposition(|s| s.active)
    }

    pub fn covers(&self, frames: usize) -> bool {
        (0..frames).all(|q| self.owner(q).is_some())
    }
}
