use std::collections::HashMap;

use super::EvalError;
use crate::geometry::{CameraPose, TumEntry};

/// Poses keyed by unique frame ids, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    ids: Vec<String>,
    poses: Vec<CameraPose>,
}

impl Trajectory {
    pub fn new(ids: Vec<String>, poses: Vec<CameraPose>) -> Result<Self, EvalError> {
        if ids.len() != poses.len() {
            return Err(EvalError::InvalidInput(format!("{} ids for {} poses", ids.len(), poses.len())));
        }
        let mut seen = HashMap::new();
        for id in &ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(EvalError::DuplicateId(id.clone()));
            }
        }
        Ok(Trajectory { ids, poses })
    }

    /// Ids `0, 1, ...` in order.
    pub fn from_poses(poses: Vec<CameraPose>) -> Self {
        let ids = (0..poses.len()).map(|i| i.to_string()).collect();
        Trajectory { ids, poses }
    }

    pub fn from_tum(entries: Vec<TumEntry>) -> Result<Self, EvalError> {
        let (ids, poses) = entries.into_iter().map(|e| (e.id, e.pose)).unzip();
        Self::new(ids, poses)
    }

    pub fn to_tum(&self) -> Vec<TumEntry> {
        self.ids
            .iter()
            .zip(&self.poses)
            .map(|(id, pose)| TumEntry {
                id: id.clone(),
                pose: *pose,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn pose(&self, id: &str) -> Option<&CameraPose> {
        self.ids.iter().position(|i| i == id).map(|k| &self.poses[k])
    }

    /// Keeps only the listed ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Trajectory, EvalError> {
        let poses = ids
            .iter()
            .map(|id| self.pose(id).copied().ok_or_else(|| EvalError::MissingFrames(vec![id.clone()])))
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::new(ids.to_vec(), poses)
    }
}

/// Pairs estimated and ground-truth poses by id, in ground-truth order.
/// Every ground-truth frame must have an estimate.
pub fn match_frames(est: &Trajectory, gt: &Trajectory) -> Result<(Vec<CameraPose>, Vec<CameraPose>), EvalError> {
    let index: HashMap<&str, usize> = est.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let missing: Vec<String> = gt.ids.iter().filter(|id| !index.contains_key(id.as_str())).cloned().collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingFrames(missing));
    }
    let e = gt.ids.iter().map(|id| est.poses[index[id.as_str()]]).collect();
    Ok((e, gt.poses.clone()))
}
