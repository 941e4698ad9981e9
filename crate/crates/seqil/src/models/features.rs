//! Normalization between world quantities and model inputs and outputs.
//!
//! Poses are expressed relative to an anchor pose, so the models see
//! translation-invariant inputs. For the Seq2Seq models the anchor is the last
//! observed exploration pose; for the BC policy it is the observed pose at the
//! start of the skill (inputs) or the current observed pose (targets).

use crate::sim::{HiddenState, Observation, Pose, Workspace};

/// Divisors applied to the 12 token components: wrench (N, N, N·m), pose,
/// velocity, and action.
pub const TOKEN_SCALE: [f64; 12] = [10.0, 10.0, 1.0, 0.15, 0.15, 0.26, 0.1, 0.1, 0.5, 0.01, 0.01, 0.05];

/// Pose divisor `(0.15 m, 0.15 m, 0.26 rad)` matching the hidden-pose box.
pub fn pose_scale(ws: &Workspace) -> [f64; 3] {
    ws.scale()
}

/// Encoder inputs for a (prefix of an) exploration trajectory.
pub fn encoder_tokens(tokens: &[[f64; 12]]) -> Vec<[f64; 12]> {
    let Some(last) = tokens.last() else { return Vec::new() };
    let anchor = [last[3], last[4], last[5]];
    tokens
        .iter()
        .map(|t| {
            let mut out = *t;
            for i in 0..3 {
                out[3 + i] -= anchor[i];
            }
            for (v, s) in out.iter_mut().zip(TOKEN_SCALE) {
                *v /= s;
            }
            out
        })
        .collect()
}

pub fn pose_to_model(p: &Pose, anchor: &Pose, scale: &[f64; 3]) -> [f64; 3] {
    [(p[0] - anchor[0]) / scale[0], (p[1] - anchor[1]) / scale[1], (p[2] - anchor[2]) / scale[2]]
}

pub fn pose_from_model(p: &[f64; 3], anchor: &Pose, scale: &[f64; 3]) -> Pose {
    [p[0] * scale[0] + anchor[0], p[1] * scale[1] + anchor[1], p[2] * scale[2] + anchor[2]]
}

/// Hidden pose mapped onto `[-1, 1]³`, the supervision target of the latent.
pub fn hidden_to_model(h: &HiddenState, scale: &[f64; 3]) -> [f64; 3] {
    [h.x / scale[0], h.y / scale[1], h.theta / scale[2]]
}

/// BC input for one observation relative to the skill-start pose.
pub fn bc_input(o: &Observation, base: &Pose) -> [f64; 9] {
    let mut a = o.to_array();
    for i in 0..3 {
        a[3 + i] -= base[i];
    }
    for (v, s) in a.iter_mut().zip(TOKEN_SCALE) {
        *v /= s;
    }
    a
}
