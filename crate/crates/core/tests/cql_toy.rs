use dora::policy::toy::{
    toy_config, toy_dataset, toy_greedy_dataset, toy_q, toy_seen_unseen, toy_value_iteration,
};
use dora::policy::train_policy;

#[test]
fn bellman_fixture_matches_value_iteration_without_penalty() {
    let exact = toy_value_iteration();
    let data = toy_dataset(4000, 1, |_| (-1.0, 1.0));
    let trained = train_policy(&data, &toy_config(0.0, 3000), 7).unwrap();
    for s in 0..2 {
        for (col, a) in [(0, -0.5), (1, 0.5)] {
            let q = toy_q(&trained.state, s, a);
            assert!(
                (q - exact[s][col]).abs() <= 0.05,
                "state {s} action {a}: {q} vs {}",
                exact[s][col]
            );
        }
    }
}

#[test]
fn penalty_keeps_unseen_actions_below_seen_ones() {
    let exact = toy_value_iteration();
    let data = toy_greedy_dataset(4000, 2);
    for seed in 0..3 {
        let trained = train_policy(&data, &toy_config(1.0, 1000), seed).unwrap();
        let (seen, unseen) = toy_seen_unseen(&trained.state);
        assert!(
            unseen <= seen,
            "seed {seed}: unseen {unseen} above seen {seen}"
        );
        assert!(toy_q(&trained.state, 0, -0.6) <= exact[0][0] + 0.05);
        assert!(toy_q(&trained.state, 1, 0.6) <= exact[1][1] + 0.05);
    }
}
