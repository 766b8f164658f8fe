mod common;

use mirrorflow::dynamics::{
    centralized_md, BaselineForm, Network, RunOutcome, SimulationConfig, StepSchedule,
};
use mirrorflow::graph::{cycle_graph, random_connected_graph};
use mirrorflow::metrics::curve_from_trajectory;
use mirrorflow::mirror::DistanceGenerator;
use mirrorflow::objective::{synthetic_quadratic_costset, LocalCost};
use nalgebra::DVector;
use proptest::prelude::*;

use common::{both_generators, planted_instance};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn feedback_sum_stays_zero(n in 2usize..6, d in 1usize..4, seed in 0u64..1000, entropy in any::<bool>()) {
        let costs = planted_instance(n, d, seed);
        let graph = random_connected_graph(n, 0.5, seed).unwrap();
        let dgf = both_generators(d)[entropy as usize];
        let net = Network::new(&costs, &graph, &dgf).unwrap();
        let init = net.init_uniform(&DVector::from_element(d, 1.0)).unwrap();
        let dt = net.default_step_size(&init).unwrap();
        let traj = net.simulate(&init, &SimulationConfig::new(dt, 500, 50).unwrap()).unwrap();
        for s in traj.states() {
            prop_assert!(s.feedback_sum(d).amax() < 1e-10 * (1.0 + s.y.amax()));
        }
    }

    #[test]
    fn equilibrium_is_fixed_under_euler(n in 2usize..6, d in 1usize..4, seed in 0u64..1000, entropy in any::<bool>()) {
        let costs = planted_instance(n, d, seed);
        let graph = random_connected_graph(n, 0.5, seed).unwrap();
        let dgf = both_generators(d)[entropy as usize];
        let net = Network::new(&costs, &graph, &dgf).unwrap();
        let x_star = costs.closed_form_optimum().unwrap();
        let eq = net.equilibrium(&x_star).unwrap();
        let next = net.euler_step(&eq.as_state(), 0.01).unwrap();
        prop_assert!(eq.distance(&next) < 1e-10 * (1.0 + eq.y_star.amax()));
    }
}

#[test]
fn runs_are_deterministic() {
    let costs = synthetic_quadratic_costset(4, 3, 11).unwrap();
    let graph = cycle_graph(4).unwrap();
    let dgf = DistanceGenerator::euclidean(3);
    let net = Network::new(&costs, &graph, &dgf).unwrap();
    let init = net.init_uniform(&DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
    let config = SimulationConfig::new(0.01, 2000, 100).unwrap();
    let a = net.simulate(&init, &config).unwrap();
    let b = net.simulate(&init, &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stepping_matches_simulate() {
    let costs = planted_instance(3, 2, 5);
    let graph = cycle_graph(3).unwrap();
    let dgf = DistanceGenerator::negative_entropy(2);
    let net = Network::new(&costs, &graph, &dgf).unwrap();
    let mut state = net.init_uniform(&DVector::from_vec(vec![1.0, 0.5])).unwrap();
    let dt = net.default_step_size(&state).unwrap();
    let traj = net.simulate(&state, &SimulationConfig::new(dt, 37, 37).unwrap()).unwrap();
    for _ in 0..37 {
        state = net.euler_step(&state, dt).unwrap();
    }
    assert_eq!(traj.last().unwrap(), &state);
    assert_eq!(traj.steps(), &[0, 37]);
}

#[test]
fn integral_feedback_reaches_optimum_with_entropy() {
    let costs = planted_instance(4, 2, 77);
    let graph = cycle_graph(4).unwrap();
    let dgf = DistanceGenerator::negative_entropy(2);
    let net = Network::new(&costs, &graph, &dgf).unwrap();
    let x_star = costs.closed_form_optimum().unwrap();
    let init = net.init_uniform(&DVector::from_element(2, 1.0)).unwrap();
    let dt = net
        .default_step_size(&init)
        .unwrap()
        .min(net.default_step_size(&net.equilibrium(&x_star).unwrap().as_state()).unwrap());
    let traj = net.simulate(&init, &SimulationConfig::new(dt, 200_000, 1000).unwrap()).unwrap();
    let curve = curve_from_trajectory(&traj, &costs, &x_star).unwrap();
    assert!(*curve.distance_to_opt.last().unwrap() < 1e-8);
    assert!(*curve.consensus_error.last().unwrap() < 1e-8);
}

#[test]
fn centralized_flow_reaches_optimum() {
    let costs = planted_instance(3, 3, 21);
    let x_star = costs.closed_form_optimum().unwrap();
    for dgf in both_generators(3) {
        let global = costs.as_global();
        let traj = centralized_md(
            &global,
            &dgf,
            &DVector::from_element(3, 1.0),
            &SimulationConfig::new(1e-3, 200_000, 200_000).unwrap(),
        )
        .unwrap();
        let x = &traj.last().unwrap().x;
        assert!((x - &x_star).amax() < 1e-8, "{} {x} vs {x_star}", dgf.name());
        assert!(global.gradient(x.as_slice()).norm() < 1e-6);
    }
}

#[test]
fn oversized_step_is_reported_as_divergence() {
    let costs = synthetic_quadratic_costset(3, 2, 1).unwrap();
    let graph = cycle_graph(3).unwrap();
    let dgf = DistanceGenerator::euclidean(2);
    let net = Network::new(&costs, &graph, &dgf).unwrap();
    let init = net.init_uniform(&DVector::from_element(2, 1.0)).unwrap();
    let dt = 50.0 * net.default_step_size(&init).unwrap();
    let traj = net.simulate(&init, &SimulationConfig::new(dt, 100_000, 1).unwrap()).unwrap();
    assert!(matches!(traj.outcome(), RunOutcome::Diverged { .. }));
    assert!(traj.len() > 1);
    assert!(traj.into_result().is_err());
}

#[test]
fn constant_baseline_plateaus_off_optimum() {
    let costs = synthetic_quadratic_costset(5, 3, 3).unwrap();
    let graph = cycle_graph(5).unwrap();
    let dgf = DistanceGenerator::euclidean(3);
    let net = Network::new(&costs, &graph, &dgf).unwrap();
    let x_star = costs.closed_form_optimum().unwrap();
    let init = net.init_uniform(&DVector::from_element(3, 1.0)).unwrap();
    let dt = net.default_step_size(&init).unwrap();
    let config = SimulationConfig::new(dt, 50_000, 500).unwrap();
    let feedback = curve_from_trajectory(&net.simulate(&init, &config).unwrap(), &costs, &x_star).unwrap();
    let constant = net
        .baseline_dmd(&init, StepSchedule::Constant { eta0: dt }, BaselineForm::FullyScaled, &config)
        .unwrap();
    let constant = curve_from_trajectory(&constant, &costs, &x_star).unwrap();
    let (c_mid, c_end) = (constant.suboptimality[constant.len() / 2], *constant.suboptimality.last().unwrap());
    assert!(c_end > 1e-3, "{c_end}");
    assert!((c_mid - c_end).abs() < 1e-9 * c_end);
    assert!(*feedback.suboptimality.last().unwrap() < 1e-10);

    let diminishing = net
        .baseline_dmd(&init, StepSchedule::Diminishing { eta0: dt }, BaselineForm::FullyScaled, &config)
        .unwrap();
    let diminishing = curve_from_trajectory(&diminishing, &costs, &x_star).unwrap();
    assert!(diminishing.last_suboptimality().unwrap() > *feedback.suboptimality.last().unwrap());
    let meta = net
        .baseline_dmd(&init, StepSchedule::Constant { eta0: dt }, BaselineForm::GradientScaled, &config)
        .unwrap()
        .metadata;
    assert!(meta.baseline_definition.unwrap().contains("v2"));
}
