//! Property tests for the structural invariants of each module.

mod support;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use support::*;
use tracklmi_core::closed_loop::step;
use tracklmi_core::lmi::build_selectors;
use tracklmi_core::plant::steady_state_map;
use tracklmi_core::sdp;
use tracklmi_core::sectors::{local_sectors, propagate_box};
use tracklmi_core::{
    augment, govern, Activation, FeedForwardNN, GovernorConfig, GovernorMode, JointEllipsoid, Layer, LoopSpec,
    Plant, SetpointMap, Slice, SolveStatus, Theorem,
};

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

/// Random plant with a well-conditioned steady-state map.
fn plant(seed: u64, n_x: usize, n_u: usize) -> Plant {
    let mut rng = rng(seed);
    loop {
        let p = Plant::new(
            randn(&mut rng, n_x, n_x, 0.7 / (n_x as f64).sqrt()),
            randn(&mut rng, n_x, n_u, 1.0),
            randn(&mut rng, n_u, n_x, 1.0),
        )
        .unwrap();
        if let Ok(m) = steady_state_map(&p) {
            if m.a_a.clone().svd(false, false).singular_values.min() > 1e-2 {
                return p;
            }
        }
    }
}

fn act_of(k: u8) -> Activation {
    match k % 3 {
        0 => Activation::tanh(),
        1 => Activation::relu(),
        _ => Activation::linear(),
    }
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn steady_map_solves_equilibrium(seed in any::<u64>(), n_x in 1usize..5, n_u in 1usize..3, rs in prop::collection::vec(-5.0f64..5.0, 2)) {
        prop_assume!(n_u <= n_x);
        let p = plant(seed, n_x, n_u);
        let m = steady_state_map(&p).unwrap();
        let r = DVector::from_vec(rs[..n_u].to_vec());
        let mut z = DVector::zeros(n_x + n_u);
        z.rows_mut(0, n_x).copy_from(&(&m.m * &r));
        z.rows_mut(n_x, n_u).copy_from(&(&m.m_u * &r));
        let mut want = DVector::zeros(n_x + n_u);
        want.rows_mut(n_x, n_u).copy_from(&r);
        let res = (&m.a_a * z - &want).norm();
        prop_assert!(res <= 1e-10 * (1.0 + r.norm()), "residual {res}");
    }

    #[test]
    fn steady_state_is_fixed_point(seed in any::<u64>(), n_x in 1usize..4, act in 0u8..3, r0 in -1.0f64..1.0) {
        let p = plant(seed, n_x, 1);
        let mut rng = rng(seed ^ 0x55);
        let nn = random_network(&mut rng, n_x, 1, 1, &[3, 2], act_of(act), 0.7);
        let k = DMatrix::from_element(1, 1, 0.5 + rng.gen::<f64>());
        let spec = LoopSpec::new(p, nn, k).unwrap();
        let aug = spec.augmented().unwrap();
        let r = DVector::from_element(1, r0);
        let xs = spec.setpoints().unwrap().xtil_star(&r);
        let next = step(&aug, &spec.nn, &xs, &r);
        prop_assert!((next - &xs).norm() <= 1e-9 * (1.0 + xs.norm()));
    }

    #[test]
    fn augment_reads_back(seed in any::<u64>(), n_x in 1usize..5, n_u in 1usize..3) {
        prop_assume!(n_u <= n_x);
        let p = plant(seed, n_x, n_u);
        let mut rng = rng(seed);
        let k = randn(&mut rng, n_u, n_u, 1.0) + DMatrix::identity(n_u, n_u) * 3.0;
        let aug = augment(&p, &k).unwrap();
        let back = aug.plant();
        prop_assert_eq!(&back.a, &p.a);
        prop_assert_eq!(&back.b, &p.b);
        prop_assert_eq!(&back.c, &p.c);
        prop_assert_eq!(&aug.k_xi, &k);
        prop_assert_eq!(aug.a_til.view((0, n_x), (n_x, n_u)).into_owned(), &p.b * &k);
    }

    #[test]
    fn linear_network_is_affine(seed in any::<u64>(), x1 in prop::collection::vec(-3.0f64..3.0, 3), x2 in prop::collection::vec(-3.0f64..3.0, 3)) {
        let mut rng = rng(seed);
        let nn = random_network(&mut rng, 3, 1, 2, &[4, 3], Activation::linear(), 1.0);
        let r = DVector::zeros(1);
        let (a, b) = (DVector::from_vec(x1), DVector::from_vec(x2));
        let lhs = nn.output(&a, &r) + nn.output(&b, &r) - nn.output(&DVector::zeros(3), &r);
        let rhs = nn.output(&(&a + &b), &r);
        prop_assert!((lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn traced_chords_respect_global_slope(seed in any::<u64>(), act in 0u8..3) {
        let mut rng = rng(seed);
        let a = act_of(act);
        let nn = random_network(&mut rng, 2, 1, 1, &[5, 4], a, 1.5);
        let r = DVector::zeros(1);
        let t1 = nn.forward(&randn_vec(&mut rng, 2, 2.0), &r).unwrap();
        let t2 = nn.forward(&randn_vec(&mut rng, 2, 2.0), &r).unwrap();
        let (v1, v2) = (t1.v_stacked(), t2.v_stacked());
        for i in 0..v1.len() {
            if (v1[i] - v2[i]).abs() > 1e-9 {
                let s = (a.eval(v1[i]) - a.eval(v2[i])) / (v1[i] - v2[i]);
                prop_assert!(s >= a.alpha - 1e-12 && s <= a.beta + 1e-12);
            }
        }
    }

    #[test]
    fn steady_forward_matches_forward(seed in any::<u64>(), act in 0u8..3) {
        let mut rng = rng(seed);
        let nn = random_network(&mut rng, 3, 2, 1, &[4], act_of(act), 1.0);
        let (x, r) = (randn_vec(&mut rng, 3, 1.0), randn_vec(&mut rng, 2, 1.0));
        prop_assert_eq!(nn.forward(&x, &r).unwrap(), nn.steady_forward(&x, &r).unwrap());
    }

    #[test]
    fn sectors_are_sound_and_within_global(seed in any::<u64>(), relu in any::<bool>(), d0 in 0.01f64..2.0) {
        let mut rng = rng(seed);
        let a = if relu { Activation::relu() } else { Activation::tanh() };
        let nn = random_network(&mut rng, 2, 1, 1, &[3, 3], a, 1.0);
        let tr = nn.forward(&randn_vec(&mut rng, 2, 0.5), &DVector::zeros(1)).unwrap();
        let d = DVector::from_element(3, d0);
        let bb = propagate_box(&nn, &tr.v[0], &d).unwrap();
        let sec = local_sectors(&nn, &bb, &tr).unwrap();
        let vs = tr.v_stacked();
        let (lo, hi): (Vec<f64>, Vec<f64>) = (bb.v_lo.iter().flatten().cloned().collect(), bb.v_hi.iter().flatten().cloned().collect());
        for k in 0..vs.len() {
            prop_assert!(a.alpha <= sec.alpha[k] && sec.beta[k] <= a.beta);
            for _ in 0..500 {
                let v = lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>();
                if (v - vs[k]).abs() > 1e-9 {
                    let s = (a.eval(v) - a.eval(vs[k])) / (v - vs[k]);
                    prop_assert!(s >= sec.alpha[k] - 1e-9 && s <= sec.beta[k] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn sectors_loosen_with_d(seed in any::<u64>(), relu in any::<bool>(), d0 in 0.01f64..1.0, grow in 1.0f64..3.0) {
        let mut rng = rng(seed);
        let a = if relu { Activation::relu() } else { Activation::tanh() };
        let nn = random_network(&mut rng, 2, 1, 1, &[3, 2], a, 1.0);
        let tr = nn.forward(&randn_vec(&mut rng, 2, 0.5), &DVector::zeros(1)).unwrap();
        let small = local_sectors(&nn, &propagate_box(&nn, &tr.v[0], &DVector::from_element(3, d0)).unwrap(), &tr).unwrap();
        let large = local_sectors(&nn, &propagate_box(&nn, &tr.v[0], &DVector::from_element(3, d0 * grow)).unwrap(), &tr).unwrap();
        for k in 0..small.len() {
            prop_assert!(large.alpha[k] <= small.alpha[k] + 1e-12);
            prop_assert!(large.beta[k] >= small.beta[k] - 1e-12);
        }
    }

    #[test]
    fn later_layers_stay_in_their_intervals(seed in any::<u64>(), relu in any::<bool>()) {
        let mut rng = rng(seed);
        let a = if relu { Activation::relu() } else { Activation::tanh() };
        let nn = random_network(&mut rng, 2, 1, 1, &[3, 4, 2], a, 1.0);
        let tr = nn.forward(&randn_vec(&mut rng, 2, 0.5), &DVector::zeros(1)).unwrap();
        let d = DVector::from_fn(3, |_, _| rng.gen_range(0.05..1.0));
        let bb = propagate_box(&nn, &tr.v[0], &d).unwrap();
        for _ in 0..200 {
            let mut w = DVector::from_fn(3, |j, _| {
                let v = bb.v_lo[0][j] + (bb.v_hi[0][j] - bb.v_lo[0][j]) * rng.gen::<f64>();
                a.eval(v)
            });
            for i in 1..nn.layers.len() {
                let v = &nn.layers[i].w * &w + &nn.layers[i].b;
                for j in 0..v.len() {
                    prop_assert!(v[j] >= bb.v_lo[i][j] - 1e-12 && v[j] <= bb.v_hi[i][j] + 1e-12);
                }
                w = v.map(|t| a.eval(t));
            }
        }
    }

    #[test]
    fn selectors_reproduce_traces(seed in any::<u64>(), act in 0u8..3) {
        let mut rng = rng(seed);
        let nn = random_network(&mut rng, 2, 1, 1, &[4, 3], act_of(act), 1.0);
        let n_xt = 3;
        let sel = build_selectors(&nn, n_xt).unwrap();
        let xt = randn_vec(&mut rng, n_xt, 1.0);
        let r = DVector::zeros(1);
        let tr = nn.forward(&xt.rows(0, 2).into_owned(), &r).unwrap();
        let w = tr.w_stacked();
        let n = w.len();
        let mut z = DVector::zeros(n_xt + n);
        z.rows_mut(0, n_xt).copy_from(&xt);
        z.rows_mut(n_xt, n).copy_from(&w);
        let rv = &sel.rv * &z;
        prop_assert!((rv.rows(0, n_xt) - &xt).norm() <= 1e-12);
        prop_assert!((rv.rows(n_xt, 1) - (nn.output(&xt.rows(0, 2).into_owned(), &r) - &nn.bl)).norm() <= 1e-12);
        let rp = &sel.rphi * &z;
        let bias: Vec<f64> = nn.layers.iter().flat_map(|l| l.b.iter().cloned()).collect();
        let v = rp.rows(0, n) + DVector::from_vec(bias);
        prop_assert!((v - tr.v_stacked()).norm() <= 1e-12 * (1.0 + tr.v_stacked().norm()));
        prop_assert!((rp.rows(n, n) - &w).norm() <= 1e-12);
    }
}

/// Pendulum joint ellipsoid from the range certificate, computed once.
fn pendulum_joint() -> &'static JointEllipsoid {
    use std::sync::OnceLock;
    static J: OnceLock<JointEllipsoid> = OnceLock::new();
    J.get_or_init(|| {
        let cfg = tracklmi_core::VerifyConfig::new(
            Theorem::LocalRange,
            DVector::zeros(1),
            Some(DVector::from_element(1, 0.345)),
        );
        tracklmi_core::verify(&pendulum_spec(), &cfg).unwrap().joint().unwrap()
    })
}

proptest! {
    #![proptest_config(cfg(48))]

    #[test]
    fn slice_membership_matches_joint_form(a in prop::collection::vec(-1.5f64..1.5, 3), r0 in -0.3f64..0.3) {
        let j = pendulum_joint();
        let r = DVector::from_element(1, r0);
        let x = j.setpoints.xtil_star(&r) + inv_sqrt_factor(&j.p) * DVector::from_vec(a);
        let joint = j.value(&x, &r);
        match j.slice(&r) {
            Slice::Ellipsoid(e) => {
                let (inside, margin) = e.contains(&x);
                prop_assert_eq!(inside, joint <= 1.0);
                prop_assert!((margin - (1.0 - joint)).abs() <= 1e-12 * (1.0 + joint));
            }
            Slice::Empty => prop_assert!(j.ref_term(&r) > 1.0 && joint > 1.0),
        }
    }

    #[test]
    fn governor_is_idempotent(z in prop::collection::vec(-1.0f64..1.0, 4), r_des in -0.6f64..0.6) {
        let j = pendulum_joint();
        let z = DVector::from_vec(z);
        prop_assume!(z.norm() < 1.0);
        let r = DVector::from_element(1, z[3] / j.q[(0, 0)].sqrt());
        let x = j.setpoints.xtil_star(&r) + inv_sqrt_factor(&j.p) * z.rows(0, 3);
        let cfg = GovernorConfig::default();
        let once = govern(j, &x, &DVector::from_element(1, r_des), &cfg).unwrap();
        let twice = govern(j, &x, &once, &cfg).unwrap();
        prop_assert!((once - twice).norm() <= 1e-9);
    }

    #[test]
    fn output_error_mode_is_the_vanishing_q_limit(seed in any::<u64>(), r_des in -2.0f64..2.0) {
        let mut rng = rng(seed);
        let p = plant(seed, 2, 1);
        let g = randn(&mut rng, 3, 1, 1.0);
        let nn = FeedForwardNN {
            hx0: -&p.c,
            hr0: DMatrix::identity(1, 1),
            layers: vec![Layer { w: g, b: DVector::zeros(3) }],
            wl: randn(&mut rng, 1, 3, 0.5),
            bl: DVector::zeros(1),
            activation: Activation::tanh(),
        };
        let k = DMatrix::from_element(1, 1, 1.0);
        let sp = SetpointMap::new(&p, &nn, &k).unwrap();
        let pm = random_spd(&mut rng, 3);
        let r0 = DVector::from_element(1, rng.gen_range(-1.0..1.0));
        let x = sp.xtil_star(&r0) + inv_sqrt_factor(&pm) * unit_ball(&mut rng, 3) * 0.9;
        let tiny = JointEllipsoid::new(pm.clone(), DMatrix::from_element(1, 1, 1e-14), DVector::zeros(1), sp.clone()).unwrap();
        let oe = GovernorConfig { mode: GovernorMode::OutputError, ..GovernorConfig::default() };
        let full = GovernorConfig::default();
        let rd = DVector::from_element(1, r_des);
        let a = govern(&tiny, &x, &rd, &oe).unwrap();
        let b = govern(&tiny, &x, &rd, &full).unwrap();
        prop_assert!((a - b).norm() <= 1e-6);
    }
}

#[test]
fn union_of_slices_exceeds_nominal_slice() {
    let j = pendulum_joint();
    let r_nom = j.r_nom.clone();
    let nominal = match j.slice(&r_nom) {
        Slice::Ellipsoid(e) => e,
        Slice::Empty => panic!("nominal slice is empty"),
    };
    // the centre of a shifted slice lies in the union but outside the nominal slice
    let mut found = false;
    for k in 1..100 {
        let r = &r_nom + DVector::from_element(1, 0.002 * k as f64);
        if let Slice::Ellipsoid(e) = j.slice(&r) {
            if !nominal.contains(&e.center).0 {
                assert!(e.contains(&e.center).0);
                found = true;
                break;
            }
        }
    }
    assert!(found, "no point of the union outside the nominal slice");
}

#[test]
fn feasible_verdicts_always_certify() {
    let mut rng = rng(0xFEED);
    let mut feasible = 0;
    for _ in 0..15 {
        let p = plant(rng.gen(), 3, 1);
        let nn = random_network(&mut rng, 3, 1, 1, &[3], Activation::tanh(), 0.5);
        let Ok(spec) = LoopSpec::new(p, nn, DMatrix::from_element(1, 1, 0.2)) else { continue };
        for theorem in [Theorem::Global, Theorem::LocalFixed] {
            let cfg = tracklmi_core::VerifyConfig::new(theorem, DVector::zeros(1), Some(DVector::from_element(1, 0.5)));
            let v = tracklmi_core::verify(&spec, &cfg).unwrap();
            if v.status() == SolveStatus::Feasible {
                let cert = sdp::certify(&v.system, &v.solution);
                assert!(cert.passed && v.solution.margins.iter().all(|m| m.ok));
                feasible += 1;
            }
        }
    }
    assert!(feasible > 0);
}

#[test]
fn solves_are_deterministic() {
    let spec = pendulum_spec();
    let cfg = tracklmi_core::VerifyConfig::new(Theorem::LocalFixed, DVector::zeros(1), Some(DVector::from_element(1, 0.3)));
    let a = tracklmi_core::verify(&spec, &cfg).unwrap();
    let b = tracklmi_core::verify(&spec, &cfg).unwrap();
    assert_eq!(a.status(), b.status());
    assert!((a.solution.objective_value - b.solution.objective_value).abs() <= 1e-9);
}
