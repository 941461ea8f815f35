//! Test hooks: a predictor that looks positions up in a table instead of
//! forecasting them.
//!
//! Built from the aligned tracks of the replayed file it is an oracle that
//! returns each object's true future position; built from hand-made slices
//! it injects scripted "forecasts".

use std::collections::{BTreeMap, HashMap};

use crate::evolving::TimeSlice;
use crate::flp::{FlpError, LocationPredictor};
use crate::geo::{ObjectId, TimestampedPoint, Trajectory};

#[derive(Debug, Clone, Default)]
pub struct TablePredictor {
    table: HashMap<ObjectId, BTreeMap<i64, (f64, f64)>>,
}

impl TablePredictor {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let mut table: HashMap<ObjectId, BTreeMap<i64, (f64, f64)>> = HashMap::new();
        for tr in trajs {
            let row = table.entry(tr.object_id().clone()).or_default();
            for p in tr.points() {
                if p.t.fract() == 0.0 {
                    row.insert(p.t as i64, (p.lon, p.lat));
                }
            }
        }
        TablePredictor { table }
    }

    pub fn from_slices<'a, I: IntoIterator<Item = &'a TimeSlice>>(slices: I) -> Self {
        let mut table: HashMap<ObjectId, BTreeMap<i64, (f64, f64)>> = HashMap::new();
        for s in slices {
            for (id, &pos) in &s.positions {
                table.entry(id.clone()).or_default().insert(s.t, pos);
            }
        }
        TablePredictor { table }
    }

    fn lookup(&self, id: &ObjectId, t: f64) -> Option<TimestampedPoint> {
        if t.fract() != 0.0 {
            return None;
        }
        let &(lon, lat) = self.table.get(id)?.get(&(t as i64))?;
        Some(TimestampedPoint { object_id: id.clone(), lon, lat, t })
    }
}

impl LocationPredictor for TablePredictor {
    fn name(&self) -> &str {
        "identity"
    }

    fn predict(&self, history: &Trajectory, horizon: f64) -> Result<TimestampedPoint, FlpError> {
        let last = history.last().ok_or(FlpError::InsufficientHistory)?;
        self.lookup(history.object_id(), last.t + horizon).ok_or(FlpError::InsufficientHistory)
    }

    /// Only the times present in the table are returned.
    fn predict_path(&self, history: &Trajectory, times: &[f64]) -> Result<Vec<TimestampedPoint>, FlpError> {
        Ok(times.iter().filter_map(|&t| self.lookup(history.object_id(), t)).collect())
    }
}
