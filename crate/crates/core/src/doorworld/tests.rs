use super::*;

fn p() -> EnvParams {
    EnvParams::default()
}

fn docked(p: &EnvParams) -> WorldState {
    let (mut s, _) = reset(0, false, p);
    s.base_x = p.door_x - 0.35;
    s.arm_left_h = 1.02;
    s.hand_above_handle = true;
    s
}

fn hold(s: &WorldState, a: Action, n: usize, p: &EnvParams) -> WorldState {
    let mut s = s.clone();
    for _ in 0..n {
        s = step(&s, &a, p).unwrap().0;
    }
    s
}

#[test]
fn reset_is_deterministic_and_closed() {
    let p = p();
    let (a, oa) = reset(42, true, &p);
    let (b, ob) = reset(42, true, &p);
    assert_eq!(a, b);
    assert_eq!(oa, ob);
    assert!(a.latch_engaged);
    assert_eq!(a.door_angle, 0.0);
    assert_eq!(a.handle_angle, 0.0);
    assert_eq!((a.arm_left_h, a.arm_right_r), (0.0, 0.0));
}

#[test]
fn canonical_start_without_randomization() {
    let p = p();
    for seed in 0..5 {
        assert_eq!(reset(seed, false, &p).0.base_x, p.start_x_canonical);
    }
}

#[test]
fn random_starts_avoid_approach_zone() {
    let p = p();
    for seed in 0..500 {
        let (s, _) = reset(seed, true, &p);
        let d = s.distance(&p);
        assert!(s.base_x >= p.start_x_min && s.base_x <= p.start_x_max + 1e-6);
        assert!(!(p.approach_near..=p.approach_far).contains(&d), "d={d}");
        assert_eq!(true_stage(&s, &p), Stage::S1);
    }
}

#[test]
fn latched_push_keeps_door_shut() {
    let p = p();
    let mut s = docked(&p);
    s.arm_left_h = 0.0;
    s.hand_above_handle = false;
    let push = Action {
        d_arm_left: 0.0,
        d_arm_right: 0.1,
        base_v: 0.5,
    };
    for _ in 0..20 {
        s = step(&s, &push, &p).unwrap().0;
        assert_eq!(s.door_angle, 0.0);
        assert!(s.latch_engaged);
    }
    assert!(s.right_contact);
    assert!(s.torque_right > 0.0);
}

#[test]
fn unlatch_at_threshold() {
    let p = p();
    let mut s = docked(&p);
    // Just short of the unlatch angle the latch holds; just past it, it releases.
    let short = p.handle_height - p.handle_lever * (p.theta_unlatch - 1e-6);
    let mut probe = s.clone();
    while probe.arm_left_h > short + 1e-12 {
        let da = (short - probe.arm_left_h).max(-p.arm_rate_limit);
        probe = step(&probe, &Action { d_arm_left: da, ..Action::ZERO }, &p).unwrap().0;
    }
    assert!(probe.latch_engaged);
    let target = p.handle_height - p.handle_lever * (p.theta_unlatch + 1e-9);
    let a = Action {
        d_arm_left: target - s.arm_left_h,
        ..Action::ZERO
    };
    // Move in rate-limited steps until the target is reached.
    while s.arm_left_h > target + 1e-12 {
        let da = (target - s.arm_left_h).max(-p.arm_rate_limit);
        s = step(&s, &Action { d_arm_left: da, ..a }, &p).unwrap().0;
    }
    assert!(s.handle_angle >= p.theta_unlatch);
    assert!(!s.latch_engaged);
}

#[test]
fn relatch_when_handle_springs_back_with_door_closed() {
    let p = p();
    let mut s = docked(&p);
    let press = Action {
        d_arm_left: -0.05,
        ..Action::ZERO
    };
    let mut released = false;
    for _ in 0..10 {
        let (n, _, info) = step(&s, &press, &p).unwrap();
        released |= info.latch_released;
        s = n;
    }
    assert!(released);
    assert!(!s.hand_above_handle, "hand slipped past the lever tip");
    // No push: the handle decays below the relatch angle and the latch returns.
    let mut relatched = false;
    for _ in 0..100 {
        let (n, _, info) = step(&s, &Action::ZERO, &p).unwrap();
        relatched |= info.relatched;
        s = n;
    }
    assert!(relatched);
    assert!(s.latch_engaged);
    assert!(s.handle_angle < p.theta_relatch);
}

#[test]
fn open_door_blocks_relatch() {
    let p = p();
    let mut s = docked(&p);
    s = hold(&s, Action { d_arm_left: -0.05, ..Action::ZERO }, 7, &p);
    assert!(!s.latch_engaged);
    s = hold(&s, Action { d_arm_right: 0.08, ..Action::ZERO }, 6, &p);
    assert!(s.door_angle > p.door_closed_tol);
    // Keep the door ajar while the handle fully returns.
    for _ in 0..80 {
        s = step(&s, &Action::ZERO, &p).unwrap().0;
        if s.door_angle > p.door_closed_tol {
            assert!(!s.latch_engaged);
        }
    }
}

#[test]
fn springs_return_without_contact() {
    let p = p();
    let mut s = docked(&p);
    s.latch_engaged = false;
    s.handle_angle = 1.2;
    s.door_angle = 0.8;
    s.base_x = 0.5;
    s.arm_left_h = 0.0;
    s.hand_above_handle = false;
    for _ in 0..100 {
        let n = step(&s, &Action::ZERO, &p).unwrap().0;
        assert!(n.handle_angle <= s.handle_angle);
        assert!(n.door_angle <= s.door_angle);
        s = n;
    }
    assert!(s.handle_angle < 0.05);
    assert_eq!(s.door_angle, 0.0);
}

#[test]
fn non_finite_action_faults() {
    let p = p();
    let (s, _) = reset(0, false, &p);
    let bad = Action {
        base_v: f64::NAN,
        ..Action::ZERO
    };
    assert!(matches!(step(&s, &bad, &p), Err(Error::Environment { step: 0, .. })));
}

#[test]
fn velocity_is_bounded() {
    let p = p();
    let (s, _) = reset(0, false, &p);
    let n = step(
        &s,
        &Action {
            base_v: 7.0,
            ..Action::ZERO
        },
        &p,
    )
    .unwrap()
    .0;
    assert!((n.base_x - s.base_x - 1.0 * p.dt).abs() < 1e-12);
}

#[test]
fn observation_ignores_latch() {
    let p = p();
    let mut a = docked(&p);
    a.arm_left_h = 0.0;
    let mut b = a.clone();
    b.latch_engaged = !a.latch_engaged;
    assert_eq!(observe(&a, &p), observe(&b, &p));
}

#[test]
fn handle_hidden_beyond_view_radius() {
    let p = p();
    let (mut s, _) = reset(0, false, &p);
    s.base_x = p.door_x - p.view_radius - 0.3;
    s.handle_angle = 0.7;
    let o = observe(&s, &p);
    assert_eq!(o.visual[3], 0.0);
    assert_eq!(o.visual[4], 0.0);
    s.base_x = p.door_x - 1.5;
    let o = observe(&s, &p);
    assert_eq!(o.visual[3], 1.0);
    assert_eq!(o.visual[4], 0.7);
}

#[test]
fn closed_door_at_rest_is_aliased_across_stages() {
    // Docked with arms down: latched (before the press) and unlatched
    // (handle still sprung) look identical.
    let p = p();
    let mut latched = docked(&p);
    latched.arm_left_h = 0.0;
    latched.hand_above_handle = false;
    let mut unlatched = latched.clone();
    unlatched.latch_engaged = false;
    unlatched.handle_angle = 1.1;
    assert_eq!(observe(&latched, &p).visual, observe(&unlatched, &p).visual);
}

#[test]
fn stage_oracle_definitions() {
    let p = p();
    let (far, _) = reset(3, true, &p);
    assert_eq!(true_stage(&far, &p), Stage::S1);

    let mut s = docked(&p);
    assert_eq!(true_stage(&s, &p), Stage::S2);
    s.latch_engaged = false;
    s.right_contact = true;
    s.door_angle = 0.3;
    assert_eq!(true_stage(&s, &p), Stage::S4);

    s.door_angle = p.theta_open;
    s.base_x = p.through_x();
    s.arm_left_h = 0.0;
    s.arm_right_r = 0.0;
    assert_eq!(true_stage(&s, &p), Stage::S5);
    assert!(s.is_success(&p));
}

#[test]
fn outcome_requires_states() {
    assert!(matches!(episode_outcome(&[], &p()), Err(Error::Contract(_))));
}

#[test]
fn outcome_without_handle_contact() {
    let p = p();
    let (mut s, _) = reset(5, true, &p);
    let mut states = vec![s.clone()];
    for _ in 0..60 {
        s = step(&s, &Action { base_v: 0.4, ..Action::ZERO }, &p).unwrap().0;
        states.push(s.clone());
    }
    let out = episode_outcome(&states, &p).unwrap();
    assert!(!out.success);
    assert!(!out.completed[1]);
    assert!(out.completed[2..].iter().all(|c| !c));
    assert!((out.duration_s - 60.0 * p.dt).abs() < 1e-12);
}

#[test]
fn outcome_relatch_never_released_again() {
    let p = p();
    let mut s = docked(&p);
    let mut states = vec![s.clone()];
    for _ in 0..7 {
        s = step(&s, &Action { d_arm_left: -0.05, ..Action::ZERO }, &p).unwrap().0;
        states.push(s.clone());
    }
    for _ in 0..60 {
        s = step(&s, &Action::ZERO, &p).unwrap().0;
        states.push(s.clone());
    }
    assert!(s.latch_engaged);
    let out = episode_outcome(&states, &p).unwrap();
    assert!(out.completed[1]);
    assert!(!out.completed[2]);
    assert!(!out.completed[3] && !out.completed[4]);
}

#[test]
fn param_validation() {
    let mut p = p();
    assert!(p.validate().is_ok());
    p.theta_relatch = 1.5;
    assert!(p.validate().is_err());
}

#[test]
fn shoving_a_latched_door_jars_the_hand_off_the_lever() {
    let p = p();
    let shove = Action {
        base_v: 0.5,
        ..Action::ZERO
    };
    let mut s = docked(&p);
    let mut jarred_at = None;
    for k in 0..40 {
        let (next, _, info) = step(&s, &shove, &p).unwrap();
        assert!(next.latch_engaged);
        assert_eq!(next.door_angle, 0.0);
        if !next.hand_above_handle {
            assert!(info.collision);
            assert_eq!(next.lever_strain, 0.0);
            jarred_at = Some(k);
            break;
        }
        assert!(next.lever_strain >= s.lever_strain);
        assert!(next.lever_strain <= p.shove_slip_tol);
        s = next;
    }
    // The first blocked steps are absorbed before the hand slips.
    assert!(jarred_at.expect("hand never slipped") > 0);
}

#[test]
fn strain_only_builds_with_the_hand_on_the_lever() {
    let p = p();
    let shove = Action {
        base_v: 0.5,
        ..Action::ZERO
    };
    let mut s = docked(&p);
    s.arm_left_h = 0.0;
    s.hand_above_handle = false;
    let s = hold(&s, shove, 30, &p);
    assert_eq!(s.lever_strain, 0.0);

    // Once unlatched a shove opens the door instead.
    let free = EnvParams {
        latch_disabled: true,
        ..p.clone()
    };
    let s = hold(&docked(&free), shove, 10, &free);
    assert_eq!(s.lever_strain, 0.0);
    assert!(s.door_angle > 0.0);
}

#[test]
fn slip_tolerance_scales_the_allowed_shove() {
    let loose = EnvParams {
        shove_slip_tol: 10.0,
        ..p()
    };
    let shove = Action {
        base_v: 0.5,
        ..Action::ZERO
    };
    let s = hold(&docked(&loose), shove, 30, &loose);
    assert!(s.hand_above_handle);
    assert!(s.lever_strain > p().shove_slip_tol);
}
