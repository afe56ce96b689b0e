//! Workspace, labeled regions of interest and the robot footprint.

use std::collections::BTreeSet;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::geometry::{ball_in_box, ball_strictly_in_ball, Aabb, Ball};

pub type RegionIndex = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region<const N: usize> {
    pub id: String,
    pub ball: Ball<N>,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace<const N: usize> {
    pub bounds: Aabb<N>,
    pub robot_radius: f64,
    pub regions: Vec<Region<N>>,
}

impl<const N: usize> Workspace<N> {
    pub fn index_of(&self, id: &str) -> Option<RegionIndex> {
        self.regions.iter().position(|r| r.id == id)
    }

    pub fn robot_ball(&self, pos: &SVector<f64, N>) -> Ball<N> {
        Ball {
            center: *pos,
            radius: self.robot_radius,
        }
    }

    /// Region whose interior strictly contains the robot footprint at `pos`.
    pub fn region_containing_robot(&self, pos: &SVector<f64, N>) -> Option<RegionIndex> {
        let robot = self.robot_ball(pos);
        self.regions
            .iter()
            .position(|r| ball_strictly_in_ball(&robot, &r.ball))
    }

    pub fn robot_inside_bounds(&self, pos: &SVector<f64, N>) -> bool {
        ball_in_box(&self.robot_ball(pos), &self.bounds)
    }

    /// Distance margin between the robot footprint at `pos` and region `idx`
    /// (negative when they overlap).
    pub fn clearance(&self, pos: &SVector<f64, N>, idx: RegionIndex) -> f64 {
        let r = &self.regions[idx].ball;
        (pos - r.center).norm() - r.radius - self.robot_radius
    }

    pub fn alphabet(&self) -> BTreeSet<String> {
        self.regions
            .iter()
            .flat_map(|r| r.labels.iter().cloned())
            .collect()
    }
}
