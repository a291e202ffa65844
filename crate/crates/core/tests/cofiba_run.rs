use cofiba_core::cofiba::{Cofiba, CofibaParams, SelectionTrace};
use cofiba_core::environment::{generate_world, SyntheticWorld, WorldParams};
use cofiba_core::rng::{self, tags};

fn run(world: &SyntheticWorld, params: CofibaParams, rounds: u64, seed: u64, mut each: impl FnMut(&Cofiba, &SelectionTrace)) {
    let mut policy = Cofiba::new(world.items(), world.n(), params, seed).unwrap();
    let mut round_rng = rng::stream(seed, tags::ROUNDS);
    let mut noise_rng = rng::stream(seed, tags::NOISE);
    for t in 1..=rounds {
        let round = world.draw_round(t, 10, &mut round_rng).unwrap();
        let trace = policy
            .step(&round, |u, h| world.payoff(u, h, &mut noise_rng))
            .unwrap();
        each(&policy, &trace);
    }
    policy.check_invariants(1e-8).unwrap();
}

#[test]
fn clusterings_only_refine_and_storage_stays_bounded() {
    let n = 100;
    let world = generate_world(WorldParams::new(n, 10, 3, 4, 0.5, 0.1, 5)).unwrap();
    let mut last_items = 1;
    let mut last_counts: Vec<usize> = vec![1];
    let mut worst_ratio: f64 = 0.0;
    run(&world, CofibaParams::new(0.2, 0.3), 6_000, 5, |p, _| {
        let g = p.item_cluster_count();
        assert!(g >= last_items);
        let counts = p.user_cluster_counts_by_graph();
        assert!(counts.len() >= last_counts.len());
        for (now, before) in counts.iter().zip(&last_counts) {
            assert!(now >= before);
        }
        let bound = 6.0 * n as f64 * g as f64 * (n as f64).ln();
        worst_ratio = worst_ratio.max(p.allocated_user_edges() as f64 / bound);
        last_items = g;
        last_counts = counts;
    });
    assert!(last_items > 1);
    assert!(worst_ratio <= 1.0, "edges reached {worst_ratio} of the bound");
}

#[test]
fn traces_are_reproducible() {
    let world = generate_world(WorldParams::new(30, 12, 2, 3, 0.5, 0.1, 9)).unwrap();
    let collect = || {
        let mut traces = Vec::new();
        run(&world, CofibaParams::new(0.3, 0.5), 100, 9, |_, t| traces.push(t.clone()));
        traces
    };
    let a = collect();
    assert_eq!(a.len(), 100);
    assert_eq!(a, collect());
}
