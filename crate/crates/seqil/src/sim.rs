//! Planar contact environment with a hidden target pose.
//!
//! The target is a rigid corner ("rail") made of a floor face and a wall face
//! meeting at a vertex. The end-effector tip is a point driven by a Cartesian
//! impedance controller: commanded motion into a face is resolved to the
//! surface, the commanded penetration produces a stiffness wrench, and the
//! tip settles at the compliant equilibrium slightly inside the face.

use std::f64::consts::FRAC_PI_4;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
pub type Pose = [f64; 3];

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn add_scaled(a: Vec2, b: Vec2, s: f64) -> Vec2 {
    [a[0] + s * b[0], a[1] + s * b[1]]
}

fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

/// Rotates `v` by `theta` radians.
pub fn rotate(v: Vec2, theta: f64) -> Vec2 {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r + two_pi
    } else {
        r
    }
}

/// Hidden target pose `e = (x, y, θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl HiddenState {
    pub const NOMINAL: HiddenState = HiddenState { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    /// Maps a point from the target frame to the world frame.
    pub fn to_world(self, p: Vec2) -> Vec2 {
        let r = rotate(p, self.theta);
        [self.x + r[0], self.y + r[1]]
    }

    /// Maps a point from the world frame to the target frame.
    pub fn to_target(self, p: Vec2) -> Vec2 {
        rotate([p[0] - self.x, p[1] - self.y], -self.theta)
    }
}

/// Displacement command for one control step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
}

impl Action {
    pub fn new(dx: f64, dy: f64, dphi: f64) -> Self {
        Self { dx, dy, dphi }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.dphi]
    }

    pub fn is_finite(self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dphi.is_finite()
    }

    /// Clips each component to `±limit`.
    pub fn clipped(self, limit: &[f64; 3]) -> Self {
        Self {
            dx: self.dx.clamp(-limit[0], limit[0]),
            dy: self.dy.clamp(-limit[1], limit[1]),
            dphi: self.dphi.clamp(-limit[2], limit[2]),
        }
    }
}

/// Per-step sensor reading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `(fx, fy, tau)` in N and N·m.
    pub wrench: [f64; 3],
    pub ee_pose: Pose,
    pub ee_velocity: [f64; 3],
}

impl Observation {
    pub const DIM: usize = 9;

    pub fn to_array(&self) -> [f64; 9] {
        let (w, p, v) = (self.wrench, self.ee_pose, self.ee_velocity);
        [w[0], w[1], w[2], p[0], p[1], p[2], v[0], v[1], v[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Full simulator state. `noise_seed` and `t` make the sensor noise a pure
/// function of the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub hidden: HiddenState,
    pub ee_pose: Pose,
    pub ee_velocity: [f64; 3],
    pub latched: bool,
    pub noise_seed: u64,
    pub t: u64,
}

/// Diagonal stiffness values of the contact model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StiffnessConfig {
    /// Environment stiffness (N/m).
    pub k_env: f64,
    /// Cartesian controller stiffness (N/m).
    pub k_ctrl: f64,
    /// Lever arm between contact force and torque (m).
    pub torque_arm: f64,
}

impl Default for StiffnessConfig {
    fn default() -> Self {
        Self { k_env: 5000.0, k_ctrl: 1000.0, torque_arm: 0.1 }
    }
}

impl StiffnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_env > 0.0 && self.k_ctrl > 0.0) {
            return Err(Error::Config(format!("stiffness must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Series stiffness `k_env·k_ctrl / (k_env + k_ctrl)`.
    pub fn effective(&self) -> f64 {
        self.k_env * self.k_ctrl / (self.k_env + self.k_ctrl)
    }

    /// Fraction of the commanded penetration that remains at equilibrium.
    pub fn compliance_ratio(&self) -> f64 {
        self.k_ctrl / (self.k_env + self.k_ctrl)
    }
}

/// Planar wrench from a penetration vector.
///
/// `dp` is the displacement that would carry the commanded tip back to the
/// surface; the force is `k_eff · dp` and the torque is the lever arm times
/// the cross product of the unit tool axis with the force.
pub fn compute_wrench(dp: Vec2, cfg: &StiffnessConfig, tool_axis: Vec2) -> Result<[f64; 3]> {
    cfg.validate()?;
    let k = cfg.effective();
    let f = [k * dp[0], k * dp[1]];
    let tau = cfg.torque_arm * (tool_axis[0] * f[1] - tool_axis[1] * f[0]);
    Ok([f[0], f[1], tau])
}

/// Unit tool axis for end-effector orientation `phi`.
pub fn tool_axis(phi: f64) -> Vec2 {
    let (s, c) = (phi - FRAC_PI_4).sin_cos();
    [c, s]
}

/// Shape of the target corner, expressed in the target frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Inclination of the floor face (rad).
    pub floor_tilt: f64,
    /// Interior angle between floor and wall (rad).
    pub opening: f64,
    /// Distance along the floor from the target origin to the vertex (m).
    pub vertex_offset: f64,
    /// Distance along the floor from the vertex to the latch (m).
    pub latch_depth: f64,
    /// Height of the latch point above the floor (m).
    pub latch_clearance: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            floor_tilt: 10f64.to_radians(),
            opening: 115f64.to_radians(),
            vertex_offset: 0.045,
            latch_depth: 0.03,
            latch_clearance: 0.008,
        }
    }
}

impl Geometry {
    /// Unit direction of the floor ray, pointing away from the vertex.
    pub fn floor_dir(&self) -> Vec2 {
        [-self.floor_tilt.cos(), -self.floor_tilt.sin()]
    }

    /// Unit direction of the wall ray, pointing away from the vertex.
    pub fn wall_dir(&self) -> Vec2 {
        let b = std::f64::consts::PI + self.floor_tilt - self.opening;
        [b.cos(), b.sin()]
    }

    /// Floor normal pointing into free space.
    pub fn floor_normal(&self) -> Vec2 {
        [-self.floor_tilt.sin(), self.floor_tilt.cos()]
    }

    /// Wall normal pointing into free space.
    pub fn wall_normal(&self) -> Vec2 {
        let w = self.wall_dir();
        [-w[1], w[0]]
    }

    pub fn vertex(&self) -> Vec2 {
        [self.vertex_offset * self.floor_tilt.cos(), self.vertex_offset * self.floor_tilt.sin()]
    }

    pub fn latch(&self) -> Vec2 {
        let p = add_scaled(self.vertex(), self.floor_dir(), self.latch_depth);
        add_scaled(p, self.floor_normal(), self.latch_clearance)
    }
}

/// Half-widths of the hidden-pose box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub half_x: f64,
    pub half_y: f64,
    pub half_theta: f64,
    /// Margin by which the end-effector may leave the box.
    pub ee_margin: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self { half_x: 0.15, half_y: 0.15, half_theta: 0.26, ee_margin: 0.05 }
    }
}

impl Workspace {
    pub fn contains(&self, h: &HiddenState) -> bool {
        h.x.abs() <= self.half_x && h.y.abs() <= self.half_y && h.theta.abs() <= self.half_theta
    }

    /// Scale that maps the hidden box onto `[-1, 1]³`.
    pub fn scale(&self) -> [f64; 3] {
        [self.half_x, self.half_y, self.half_theta]
    }

    pub fn ee_limits(&self) -> [f64; 3] {
        [self.half_x + self.ee_margin, self.half_y + self.ee_margin, self.half_theta + self.ee_margin]
    }
}

/// Gaussian sensor noise levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Standard deviation of each wrench component.
    pub sigma_force: f64,
    /// Standard deviation of each pose component; velocities use `sigma_pose / dt`.
    pub sigma_pose: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: true, sigma_force: 0.01, sigma_pose: 1e-4 }
    }
}

/// Complete environment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub workspace: Workspace,
    pub stiffness: StiffnessConfig,
    pub noise: NoiseConfig,
    pub geometry: Geometry,
    pub eps_pos: f64,
    pub eps_ang: f64,
    pub dt: f64,
    pub start_pose: Pose,
    pub action_limit: [f64; 3],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            workspace: Workspace::default(),
            stiffness: StiffnessConfig::default(),
            noise: NoiseConfig::default(),
            geometry: Geometry::default(),
            eps_pos: 0.003,
            eps_ang: 0.03,
            dt: 0.1,
            start_pose: [-0.2, 0.2, 0.0],
            action_limit: [0.01, 0.01, 0.05],
        }
    }
}

impl EnvConfig {
    pub fn noiseless() -> Self {
        let mut c = Self::default();
        c.noise.enabled = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.stiffness.validate()?;
        if !(self.dt > 0.0 && self.eps_pos > 0.0 && self.eps_ang > 0.0) {
            return Err(Error::Config("dt and success thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which part of the target resisted the last commanded motion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contact {
    Free,
    Floor,
    Wall,
    Vertex,
}

/// World-frame faces of the corner for one hidden pose.
#[derive(Clone, Copy, Debug)]
pub struct Faces {
    pub vertex: Vec2,
    pub floor_dir: Vec2,
    pub wall_dir: Vec2,
    pub floor_normal: Vec2,
    pub wall_normal: Vec2,
}

impl Faces {
    pub fn is_free(&self, p: Vec2) -> bool {
        let d = sub(p, self.vertex);
        dot(self.floor_normal, d) >= 0.0 && dot(self.wall_normal, d) >= 0.0
    }

    /// Closest free point to `q` and the face it lies on.
    pub fn project(&self, q: Vec2) -> (Vec2, Contact) {
        if self.is_free(q) {
            return (q, Contact::Free);
        }
        let d = sub(q, self.vertex);
        let on_ray = |dir: Vec2| {
            let t = dot(d, dir).max(0.0);
            let p = add_scaled(self.vertex, dir, t);
            (p, t, norm(sub(q, p)))
        };
        let (pf, tf, df) = on_ray(self.floor_dir);
        let (pw, tw, dw) = on_ray(self.wall_dir);
        if df <= dw {
            (pf, if tf > 0.0 { Contact::Floor } else { Contact::Vertex })
        } else {
            (pw, if tw > 0.0 { Contact::Wall } else { Contact::Vertex })
        }
    }
}

/// Stateless simulator; all state lives in [`WorldState`].
#[derive(Clone, Debug)]
pub struct Sim {
    pub cfg: EnvConfig,
}

impl Sim {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn faces(&self, h: &HiddenState) -> Faces {
        let g = &self.cfg.geometry;
        Faces {
            vertex: h.to_world(g.vertex()),
            floor_dir: rotate(g.floor_dir(), h.theta),
            wall_dir: rotate(g.wall_dir(), h.theta),
            floor_normal: rotate(g.floor_normal(), h.theta),
            wall_normal: rotate(g.wall_normal(), h.theta),
        }
    }

    /// World-frame latch point of a hidden pose.
    pub fn latch_point(&self, h: &HiddenState) -> Vec2 {
        h.to_world(self.cfg.geometry.latch())
    }

    /// Draws a hidden pose uniformly from the workspace box.
    pub fn sample_hidden<R: Rng>(&self, rng: &mut R) -> HiddenState {
        let w = &self.cfg.workspace;
        HiddenState {
            x: rng.gen_range(-w.half_x..=w.half_x),
            y: rng.gen_range(-w.half_y..=w.half_y),
            theta: rng.gen_range(-w.half_theta..=w.half_theta),
        }
    }

    /// Starts an episode. With `randomize = false` the hidden pose is nominal.
    pub fn reset(&self, seed: u64, randomize: bool) -> (WorldState, Observation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = if randomize { self.sample_hidden(&mut rng) } else { HiddenState::NOMINAL };
        let state = WorldState {
            hidden,
            ee_pose: self.cfg.start_pose,
            ee_velocity: [0.0; 3],
            latched: false,
            noise_seed: rng.gen(),
            t: 0,
        };
        let obs = self.observe(&state, [0.0; 3]);
        (state, obs)
    }

    /// Like [`Sim::reset`] but with an explicit hidden pose.
    pub fn reset_with(&self, hidden: HiddenState, noise_seed: u64) -> (WorldState, Observation) {
        let state = WorldState {
            hidden,
            ee_pose: self.cfg.start_pose,
            ee_velocity: [0.0; 3],
            latched: false,
            noise_seed,
            t: 0,
        };
        let obs = self.observe(&state, [0.0; 3]);
        (state, obs)
    }

    pub fn hidden_state(&self, s: &WorldState) -> HiddenState {
        s.hidden
    }

    /// Goal predicate: tip in free space, near the latch, and aligned with the target.
    pub fn success(&self, s: &WorldState) -> bool {
        let tip = [s.ee_pose[0], s.ee_pose[1]];
        let faces = self.faces(&s.hidden);
        let d = norm(sub(tip, self.latch_point(&s.hidden)));
        let da = wrap_angle(s.ee_pose[2] - s.hidden.theta).abs();
        faces.is_free(tip) && d < self.cfg.eps_pos && da < self.cfg.eps_ang
    }

    /// Contact resolution for a commanded tip position: surface point, contact kind and wrench.
    pub fn resolve(&self, h: &HiddenState, q: Vec2, phi: f64) -> Result<(Vec2, Contact, [f64; 3])> {
        let (s, contact) = self.faces(h).project(q);
        let dp = sub(s, q);
        let wrench = compute_wrench(dp, &self.cfg.stiffness, tool_axis(phi))?;
        Ok((s, contact, wrench))
    }

    /// Advances one control step. Out-of-range commands are clipped.
    pub fn step(&self, s: &WorldState, action: Action) -> Result<(WorldState, Observation)> {
        Ok(self.step_contact(s, action)?.0)
    }

    /// [`Sim::step`] that also reports the contact kind.
    pub fn step_contact(&self, s: &WorldState, action: Action) -> Result<((WorldState, Observation), Contact)> {
        if !action.is_finite() {
            return Err(Error::Contract(format!("non-finite action {action:?}")));
        }
        let a = action.clipped(&self.cfg.action_limit);
        let lim = self.cfg.workspace.ee_limits();
        let clamp = |v: f64, i: usize| v.clamp(-lim[i], lim[i]);
        let q = [clamp(s.ee_pose[0] + a.dx, 0), clamp(s.ee_pose[1] + a.dy, 1)];
        let phi = clamp(s.ee_pose[2] + a.dphi, 2);
        let (surface, contact, wrench) = self.resolve(&s.hidden, q, phi)?;
        let r = self.cfg.stiffness.compliance_ratio();
        let tip = [clamp(surface[0] - r * (surface[0] - q[0]), 0), clamp(surface[1] - r * (surface[1] - q[1]), 1)];
        let pose = [tip[0], tip[1], phi];
        let dt = self.cfg.dt;
        let velocity = [(pose[0] - s.ee_pose[0]) / dt, (pose[1] - s.ee_pose[1]) / dt, (pose[2] - s.ee_pose[2]) / dt];
        let mut next = WorldState {
            hidden: s.hidden,
            ee_pose: pose,
            ee_velocity: velocity,
            latched: s.latched,
            noise_seed: s.noise_seed,
            t: s.t + 1,
        };
        next.latched = next.latched || self.success(&next);
        let obs = self.observe(&next, wrench);
        Ok(((next, obs), contact))
    }

    fn observe(&self, s: &WorldState, wrench: [f64; 3]) -> Observation {
        let mut obs = Observation { wrench, ee_pose: s.ee_pose, ee_velocity: s.ee_velocity };
        let n = &self.cfg.noise;
        if n.enabled {
            let mut rng = ChaCha8Rng::seed_from_u64(s.noise_seed);
            rng.set_stream(s.t);
            let mut draw = |sigma: f64| sigma * rng.sample::<f64, _>(StandardNormal);
            for v in &mut obs.wrench {
                *v += draw(n.sigma_force);
            }
            for v in &mut obs.ee_pose {
                *v += draw(n.sigma_pose);
            }
            for v in &mut obs.ee_velocity {
                *v += draw(n.sigma_pose / self.cfg.dt);
            }
        }
        obs
    }
}

/// One line of an episode replay file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub action: Action,
    pub observation: Observation,
}

/// Writes replay steps as JSON lines.
pub fn write_replay<W: Write>(mut w: W, steps: &[ReplayStep]) -> Result<()> {
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads replay steps written by [`write_replay`].
pub fn read_replay<R: BufRead>(r: R) -> Result<Vec<ReplayStep>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

/// Re-executes `actions` from `state` and returns the resulting steps.
pub fn rollout(sim: &Sim, state: &WorldState, actions: &[Action]) -> Result<(WorldState, Vec<ReplayStep>)> {
    let mut s = state.clone();
    let mut steps = Vec::with_capacity(actions.len());
    for &a in actions {
        let (n, o) = sim.step(&s, a)?;
        steps.push(ReplayStep { action: a, observation: o });
        s = n;
    }
    Ok((s, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
        assert!((wrap_angle(-0.1 - 2.0 * std::f64::consts::PI) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn frame_maps_are_inverse() {
        let h = HiddenState { x: 0.1, y: -0.05, theta: 0.2 };
        let p = [0.03, -0.07];
        let back = h.to_target(h.to_world(p));
        assert!((back[0] - p[0]).abs() < 1e-15 && (back[1] - p[1]).abs() < 1e-15);
    }

    #[test]
    fn normals_point_into_the_opening() {
        let g = Geometry::default();
        let bisector = [g.floor_dir()[0] + g.wall_dir()[0], g.floor_dir()[1] + g.wall_dir()[1]];
        assert!(dot(g.floor_normal(), bisector) > 0.0);
        assert!(dot(g.wall_normal(), bisector) > 0.0);
        assert!(dot(g.floor_normal(), g.floor_dir()).abs() < 1e-15);
        assert!(dot(g.wall_normal(), g.wall_dir()).abs() < 1e-15);
        let cos_open = dot(g.floor_dir(), g.wall_dir());
        assert!((cos_open - g.opening.cos()).abs() < 1e-12);
    }

    #[test]
    fn latch_is_free_and_start_is_free_for_box_corners() {
        let sim = Sim::new(EnvConfig::noiseless()).unwrap();
        for &x in &[-0.15, 0.15] {
            for &y in &[-0.15, 0.15] {
                for &theta in &[-0.26, 0.0, 0.26] {
                    let h = HiddenState { x, y, theta };
                    let f = sim.faces(&h);
                    assert!(f.is_free(sim.latch_point(&h)));
                    assert!(f.is_free([sim.cfg.start_pose[0], sim.cfg.start_pose[1]]), "{h:?}");
                }
            }
        }
    }

    #[test]
    fn projection_lands_on_boundary() {
        let sim = Sim::new(EnvConfig::noiseless()).unwrap();
        let f = sim.faces(&HiddenState::NOMINAL);
        let below = add_scaled(add_scaled(f.vertex, f.floor_dir, 0.05), f.floor_normal, -0.004);
        let (p, c) = f.project(below);
        assert_eq!(c, Contact::Floor);
        assert!(dot(sub(p, f.vertex), f.floor_normal).abs() < 1e-15);
        let deep = add_scaled(f.vertex, [-f.floor_normal[0] - f.wall_normal[0], -f.floor_normal[1] - f.wall_normal[1]], 0.01);
        assert_eq!(f.project(deep).1, Contact::Vertex);
    }
}
