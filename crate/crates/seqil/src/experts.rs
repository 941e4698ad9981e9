//! Scripted experts: open-loop exploration templates and the full-state skill oracle.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Action, HiddenState, Pose, ReplayStep, Sim, Vec2, WorldState};

/// Number of templates provided by default.
pub const DEFAULT_TEMPLATE_COUNT: usize = 5;
/// Steps spent approaching the corner before the common probe.
pub const APPROACH_STEPS: usize = 55;
/// Default skill plan length.
pub const DEFAULT_SKILL_LEN: usize = 12;

const DIAG: (f64, f64) = (0.01, -0.01);
const SHALLOW: (f64, f64) = (0.01, -0.008);
const STEEP: (f64, f64) = (0.008, -0.01);
const BACKOFF: (f64, f64) = (-0.005, 0.005);

/// Seats the tip in the corner, slides along the floor, then lifts off.
fn probe() -> Vec<Action> {
    let mut a = vec![Action::new(DIAG.0, DIAG.1, 0.0); 3];
    a.extend(std::iter::repeat(Action::new(-0.01, -0.007, 0.0)).take(8));
    a.extend(std::iter::repeat(Action::new(0.0, 0.01, 0.0)).take(3));
    a
}

/// Exploration length of every template built here.
pub fn template_len() -> usize {
    APPROACH_STEPS + probe().len()
}

/// Open-loop exploration trajectory stored as poses relative to the start pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTemplate {
    pub id: usize,
    pub via_points: Vec<Pose>,
}

impl ExplorationTemplate {
    pub fn from_actions(id: usize, actions: &[Action]) -> Self {
        let mut p = [0.0; 3];
        let via_points = actions
            .iter()
            .map(|a| {
                p = [p[0] + a.dx, p[1] + a.dy, p[2] + a.dphi];
                p
            })
            .collect();
        Self { id, via_points }
    }

    /// Displacements between consecutive via-points, starting from the origin.
    pub fn actions(&self) -> Vec<Action> {
        let mut prev = [0.0; 3];
        self.via_points
            .iter()
            .map(|v| {
                let a = Action::new(v[0] - prev[0], v[1] - prev[1], v[2] - prev[2]);
                prev = *v;
                a
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.via_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.via_points.is_empty()
    }
}

fn approach(id: usize, rng: &mut impl Rng) -> Vec<Action> {
    let mv = |(dx, dy): (f64, f64), dphi: f64| Action::new(dx, dy, dphi);
    (0..APPROACH_STEPS)
        .map(|i| match id {
            0 => mv(DIAG, 0.0),
            1 => mv(if i % 2 == 0 { SHALLOW } else { STEEP }, 0.0),
            2 => mv(if i % 15 == 14 { BACKOFF } else { DIAG }, 0.0),
            3 => mv(DIAG, if i >= 43 { [0.05, 0.05, -0.05, -0.05][i % 4] } else { 0.0 }),
            4 => mv(if (i / 3) % 2 == 0 { SHALLOW } else { STEEP }, 0.0),
            _ => mv([DIAG, SHALLOW, STEEP][rng.gen_range(0..3)], 0.0),
        })
        .collect()
}

/// Builds `n` templates. The first five are fixed patterns; further ones mix approach moves at random.
pub fn collect_exploration_templates(n: usize, rng: &mut impl Rng) -> Result<Vec<ExplorationTemplate>> {
    if n == 0 {
        return Err(Error::Contract("at least one template is required".into()));
    }
    Ok((0..n)
        .map(|id| {
            let mut actions = approach(id, rng);
            actions.extend(probe());
            ExplorationTemplate::from_actions(id, &actions)
        })
        .collect())
}

/// The five default templates.
pub fn default_templates() -> Vec<ExplorationTemplate> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    collect_exploration_templates(DEFAULT_TEMPLATE_COUNT, &mut rng).expect("non-zero count")
}

/// Writes templates as a JSON list of via-point arrays.
pub fn save_templates(path: &Path, templates: &[ExplorationTemplate]) -> Result<()> {
    let raw: Vec<&Vec<Pose>> = templates.iter().map(|t| &t.via_points).collect();
    std::fs::write(path, serde_json::to_string_pretty(&raw)?)?;
    Ok(())
}

pub fn load_templates(path: &Path) -> Result<Vec<ExplorationTemplate>> {
    let raw: Vec<Vec<Pose>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(raw.into_iter().enumerate().map(|(id, via_points)| ExplorationTemplate { id, via_points }).collect())
}

/// Observation–action sequence recorded while following a template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTrajectory {
    pub template_id: usize,
    pub steps: Vec<ReplayStep>,
}

impl ExplorationTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Observed pose after the final exploration step.
    pub fn last_pose(&self) -> Option<Pose> {
        self.steps.last().map(|s| s.observation.ee_pose)
    }

    /// The 12-value token `(o_t, a_t)` of each step.
    pub fn tokens(&self) -> Vec<[f64; 12]> {
        self.steps
            .iter()
            .map(|s| {
                let o = s.observation.to_array();
                let a = s.action.to_array();
                let mut t = [0.0; 12];
                t[..9].copy_from_slice(&o);
                t[9..].copy_from_slice(&a);
                t
            })
            .collect()
    }
}

/// Follows a template open-loop from `state`.
pub fn execute_exploration(sim: &Sim, state: &WorldState, template: &ExplorationTemplate) -> Result<(WorldState, ExplorationTrajectory)> {
    let (end, steps) = crate::sim::rollout(sim, state, &template.actions())?;
    Ok((end, ExplorationTrajectory { template_id: template.id, steps }))
}

/// Fixed-length sequence of world-frame via-point poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillTrajectory {
    pub poses: Vec<Pose>,
    pub valid_len: usize,
}

impl SkillTrajectory {
    pub fn full(poses: Vec<Pose>) -> Self {
        let valid_len = poses.len();
        Self { poses, valid_len }
    }
}

/// Full-state skill expert. Plans are a canonical via-point sequence in the
/// target frame mapped into the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    canonical: Vec<Vec2>,
}

/// Clearance above the latch at which the plan turns from approach to insertion.
const ALIGN_HEIGHT: f64 = 0.015;

impl Oracle {
    /// Builds the canonical plan of `m` via-points. The start of the plan is the
    /// post-exploration tip position, measured by replaying `template` against
    /// the nominal target without noise.
    pub fn new(sim: &Sim, template: &ExplorationTemplate, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Contract("skill length must be at least 2".into()));
        }
        let mut quiet = sim.clone();
        quiet.cfg.noise.enabled = false;
        let (start, _) = quiet.reset_with(HiddenState::NOMINAL, 0);
        let (end, _) = execute_exploration(&quiet, &start, template)?;
        let p0 = [end.ee_pose[0], end.ee_pose[1]];
        let g = &sim.cfg.geometry;
        let latch = g.latch();
        let n = g.floor_normal();
        let align = [latch[0] + ALIGN_HEIGHT * n[0], latch[1] + ALIGN_HEIGHT * n[1]];
        let n_approach = (2 * m) / 3;
        let n_insert = m - n_approach;
        let lerp = |a: Vec2, b: Vec2, t: f64| [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
        let mut canonical: Vec<Vec2> = (1..=n_approach).map(|k| lerp(p0, align, k as f64 / n_approach as f64)).collect();
        canonical.extend((1..=n_insert).map(|k| lerp(align, latch, k as f64 / n_insert as f64)));
        Ok(Self { canonical })
    }

    /// Via-points in the target frame.
    pub fn canonical(&self) -> &[Vec2] {
        &self.canonical
    }

    pub fn skill_len(&self) -> usize {
        self.canonical.len()
    }

    /// World-frame plan for a hidden pose; every via-point is aligned with the target.
    pub fn plan(&self, sim: &Sim, hidden: &HiddenState) -> Result<SkillTrajectory> {
        if !sim.cfg.workspace.contains(hidden) {
            return Err(Error::Contract(format!("hidden pose outside workspace: {hidden:?}")));
        }
        let poses = self
            .canonical
            .iter()
            .map(|p| {
                let w = hidden.to_world(*p);
                [w[0], w[1], hidden.theta]
            })
            .collect();
        Ok(SkillTrajectory::full(poses))
    }
}

/// Outcome of tracking a skill plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub state: WorldState,
    pub success: bool,
    pub steps: usize,
    pub trace: Vec<ReplayStep>,
}

/// Tracks the valid via-points of `plan`, one per step, holding the last one
/// until `max_steps`. Stops as soon as the task succeeds.
pub fn execute_plan(sim: &Sim, state: &WorldState, plan: &SkillTrajectory, max_steps: usize) -> Result<Execution> {
    let n = plan.valid_len.min(plan.poses.len());
    if n == 0 {
        return Err(Error::Contract("empty skill plan".into()));
    }
    let mut s = state.clone();
    let mut trace = Vec::new();
    for k in 0..max_steps {
        let target = plan.poses[k.min(n - 1)];
        let a = Action::new(target[0] - s.ee_pose[0], target[1] - s.ee_pose[1], target[2] - s.ee_pose[2]);
        let (next, obs) = sim.step(&s, a)?;
        trace.push(ReplayStep { action: a, observation: obs });
        s = next;
        if s.latched {
            return Ok(Execution { state: s, success: true, steps: k + 1, trace });
        }
    }
    Ok(Execution { state: s, success: false, steps: max_steps, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_templates_share_length_and_probe() {
        let t = default_templates();
        assert_eq!(t.len(), 5);
        let probe_len = probe().len();
        for tpl in &t {
            assert_eq!(tpl.len(), template_len());
            let tail: Vec<_> = tpl.actions()[APPROACH_STEPS..].to_vec();
            assert_eq!(tail.len(), probe_len);
        }
    }

    #[test]
    fn actions_round_trip_through_via_points() {
        let acts = vec![Action::new(0.01, -0.01, 0.0), Action::new(-0.005, 0.005, 0.05)];
        let t = ExplorationTemplate::from_actions(0, &acts);
        for (a, b) in t.actions().iter().zip(&acts) {
            assert!((a.dx - b.dx).abs() < 1e-15 && (a.dy - b.dy).abs() < 1e-15 && (a.dphi - b.dphi).abs() < 1e-15);
        }
    }

    #[test]
    fn canonical_plan_ends_at_latch() {
        let sim = Sim::new(crate::sim::EnvConfig::noiseless()).unwrap();
        let o = Oracle::new(&sim, &default_templates()[0], 12).unwrap();
        let last = *o.canonical().last().unwrap();
        let latch = sim.cfg.geometry.latch();
        assert!((last[0] - latch[0]).abs() < 1e-15 && (last[1] - latch[1]).abs() < 1e-15);
        assert_eq!(o.skill_len(), 12);
    }
}
