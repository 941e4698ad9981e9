use proptest::prelude::*;
use seqil::eval::evaluate;
use seqil::experts::{collect_exploration_templates, default_templates, execute_exploration, load_templates, save_templates, Oracle, DEFAULT_TEMPLATE_COUNT};
use seqil::pipeline::{Policy, Setup};
use seqil::sim::{rotate, Contact, EnvConfig, HiddenState, Sim};

fn quiet() -> Sim {
    Sim::new(EnvConfig::noiseless()).unwrap()
}

#[test]
fn five_templates_by_default() {
    assert_eq!(DEFAULT_TEMPLATE_COUNT, 5);
    assert_eq!(default_templates().len(), 5);
}

#[test]
fn templates_respect_action_limits() {
    let lim = EnvConfig::default().action_limit;
    let mut rng = rand::rngs::mock::StepRng::new(3, 7);
    for t in default_templates().iter().chain(&collect_exploration_templates(8, &mut rng).unwrap()) {
        for a in t.actions() {
            for (v, l) in a.to_array().iter().zip(lim) {
                assert!(v.abs() <= l + 1e-12, "template {} action {a:?}", t.id);
            }
        }
    }
}

#[test]
fn templates_touch_two_non_parallel_faces() {
    let sim = quiet();
    for t in default_templates() {
        let (mut s, _) = sim.reset_with(HiddenState::NOMINAL, 0);
        let mut events = 0;
        let mut prev = Contact::Free;
        let mut dirs: Vec<[f64; 2]> = Vec::new();
        for a in t.actions() {
            let ((n, o), kind) = sim.step_contact(&s, a).unwrap();
            let norm = o.wrench[0].hypot(o.wrench[1]);
            let kind = if norm > 0.1 { kind } else { Contact::Free };
            if kind != Contact::Free {
                events += usize::from(kind != prev);
                dirs.push([o.wrench[0] / norm, o.wrench[1] / norm]);
            }
            prev = kind;
            s = n;
        }
        assert!(events >= 2, "template {} made {events} contacts", t.id);
        let min_dot = dirs.iter().flat_map(|a| dirs.iter().map(move |b| a[0] * b[0] + a[1] * b[1])).fold(1.0, f64::min);
        assert!(min_dot < 0.9, "template {} wrench directions are parallel", t.id);
    }
}

#[test]
fn zero_templates_rejected() {
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    assert!(collect_exploration_templates(0, &mut rng).is_err());
}

#[test]
fn template_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("templates.json");
    let t = default_templates();
    save_templates(&path, &t).unwrap();
    assert_eq!(load_templates(&path).unwrap(), t);
}

#[test]
fn exploration_is_deterministic_and_full_length() {
    let sim = Sim::new(EnvConfig::default()).unwrap();
    let t = &default_templates()[2];
    let (s, _) = sim.reset(5, true);
    let (end_a, a) = execute_exploration(&sim, &s, t).unwrap();
    let (end_b, b) = execute_exploration(&sim, &s, t).unwrap();
    assert_eq!(a, b);
    assert_eq!(end_a, end_b);
    assert_eq!(a.len(), t.len());
    for (step, act) in a.steps.iter().zip(t.actions()) {
        assert_eq!(step.action, act);
    }
}

#[test]
fn noiseless_exploration_replays_exactly() {
    let sim = quiet();
    let t = &default_templates()[1];
    let (s, _) = sim.reset(11, true);
    let (_, a) = execute_exploration(&sim, &s, t).unwrap();
    let actions: Vec<_> = a.steps.iter().map(|x| x.action).collect();
    let (_, replay) = seqil::sim::rollout(&sim, &s, &actions).unwrap();
    assert_eq!(replay, a.steps);
}

#[test]
fn nominal_plan_is_canonical() {
    let sim = quiet();
    let o = Oracle::new(&sim, &default_templates()[0], 12).unwrap();
    let plan = o.plan(&sim, &HiddenState::NOMINAL).unwrap();
    assert_eq!(plan.valid_len, 12);
    for (p, c) in plan.poses.iter().zip(o.canonical()) {
        assert_eq!([p[0], p[1], p[2]], [c[0], c[1], 0.0]);
    }
}

#[test]
fn rotated_plan_is_rotated_canonical() {
    let sim = quiet();
    let o = Oracle::new(&sim, &default_templates()[0], 12).unwrap();
    let h = HiddenState { x: 0.0, y: 0.0, theta: 0.2 };
    let plan = o.plan(&sim, &h).unwrap();
    for (p, c) in plan.poses.iter().zip(o.canonical()) {
        let r = rotate(*c, 0.2);
        assert!((p[0] - r[0]).abs() < 1e-15 && (p[1] - r[1]).abs() < 1e-15);
        assert_eq!(p[2], 0.2);
    }
}

#[test]
fn pose_outside_workspace_rejected() {
    let sim = quiet();
    let o = Oracle::new(&sim, &default_templates()[0], 12).unwrap();
    assert!(o.plan(&sim, &HiddenState { x: 0.2, y: 0.0, theta: 0.0 }).is_err());
}

#[test]
fn oracle_succeeds_on_random_poses() {
    let setup = Setup::new(Sim::new(EnvConfig::default()).unwrap(), default_templates(), 12).unwrap();
    let report = evaluate(&setup, Policy::Oracle, 200, 2024).unwrap();
    assert!(report.success_rate >= 0.95, "oracle success {}", report.success_rate);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn oracle_is_equivariant(
        e in (-0.07..0.07f64, -0.07..0.07f64, -0.13..0.13f64),
        t in (-0.07..0.07f64, -0.07..0.07f64, -0.13..0.13f64),
    ) {
        let sim = quiet();
        let o = Oracle::new(&sim, &default_templates()[3], 12).unwrap();
        let e = HiddenState { x: e.0, y: e.1, theta: e.2 };
        let moved = |p: [f64; 2]| {
            let r = rotate(p, t.2);
            [r[0] + t.0, r[1] + t.1]
        };
        let ep = moved([e.x, e.y]);
        let te = HiddenState { x: ep[0], y: ep[1], theta: e.theta + t.2 };
        prop_assume!(sim.cfg.workspace.contains(&te));
        let a = o.plan(&sim, &te).unwrap();
        let b = o.plan(&sim, &e).unwrap();
        for (pa, pb) in a.poses.iter().zip(&b.poses) {
            let m = moved([pb[0], pb[1]]);
            prop_assert!((pa[0] - m[0]).abs() < 1e-12 && (pa[1] - m[1]).abs() < 1e-12);
            prop_assert!((pa[2] - (pb[2] + t.2)).abs() < 1e-12);
        }
    }
}
