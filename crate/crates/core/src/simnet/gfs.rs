//! GFS metadata contention: file creation latency, a bounded number of
//! concurrent creates, and optional per-directory serialization.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::cluster::CalibrationProfile;

use super::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct GfsModel {
    /// Aggregate bandwidth pool, MB/s.
    pub aggregate_capacity: f64,
    pub create_latency: SimTime,
    /// Added to `create_latency` for every create in service, itself
    /// included, when a create starts.
    pub create_contention: SimTime,
    /// Concurrent creates; `None` is unbounded.
    pub create_slots: Option<u32>,
    /// Creates targeting one directory are served FIFO, one at a time.
    pub same_dir_serialize: bool,
}

impl GfsModel {
    pub fn from_profile(profile: &CalibrationProfile) -> Self {
        GfsModel {
            aggregate_capacity: profile.gfs_mbps,
            create_latency: SimTime::from_secs_f64(profile.gfs_create_latency_s),
            create_contention: SimTime::from_secs_f64(profile.gfs_create_contention_s),
            create_slots: profile.gfs_create_slots,
            same_dir_serialize: profile.same_dir_serialize,
        }
    }
}

impl Default for GfsModel {
    fn default() -> Self {
        Self::from_profile(&CalibrationProfile::bgp_2008())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CreateRequest {
    pub node: crate::cluster::NodeId,
    pub directory: String,
}

/// Admission state for in-flight creates. Ids are event ids owned by the
/// network; this type only decides *when* each create enters service.
#[derive(Debug, Default)]
pub(crate) struct CreateQueue {
    pub requests: HashMap<u64, CreateRequest>,
    dir_waiting: HashMap<String, VecDeque<u64>>,
    dir_busy: HashSet<String>,
    slot_queue: VecDeque<u64>,
    in_service: u32,
}

impl CreateQueue {
    /// Admits a create. Returns the ids that enter service now.
    pub fn admit(&mut self, model: &GfsModel, id: u64) -> Vec<u64> {
        let mut started = Vec::new();
        if model.same_dir_serialize {
            let dir = self.requests[&id].directory.clone();
            if self.dir_busy.contains(&dir) {
                self.dir_waiting.entry(dir).or_default().push_back(id);
                return started;
            }
            self.dir_busy.insert(dir);
        }
        self.enter_slot(model, id, &mut started);
        started
    }

    /// Retires a finished create. Returns the ids that enter service now.
    pub fn complete(&mut self, model: &GfsModel, id: u64) -> (CreateRequest, Vec<u64>) {
        let req = self.requests.remove(&id).expect("completed create was admitted");
        self.in_service -= 1;
        let mut started = Vec::new();
        while self.has_free_slot(model) {
            let Some(next) = self.slot_queue.pop_front() else { break };
            self.in_service += 1;
            started.push(next);
        }
        if model.same_dir_serialize {
            let next = self.dir_waiting.get_mut(&req.directory).and_then(|q| q.pop_front());
            match next {
                Some(next) => self.enter_slot(model, next, &mut started),
                None => {
                    self.dir_waiting.remove(&req.directory);
                    self.dir_busy.remove(&req.directory);
                }
            }
        }
        (req, started)
    }

    fn has_free_slot(&self, model: &GfsModel) -> bool {
        model.create_slots.is_none_or(|s| self.in_service < s)
    }

    fn enter_slot(&mut self, model: &GfsModel, id: u64, started: &mut Vec<u64>) {
        if self.has_free_slot(model) {
            self.in_service += 1;
            started.push(id);
        } else {
            self.slot_queue.push_back(id);
        }
    }

    pub fn in_service(&self) -> u32 {
        self.in_service
    }
}
