use fedquit_core::data::{
    generate_blobs, generate_blobs_from, Dataset, FederationData, PartitionKind, PartitionSpec,
};
use fedquit_core::federation::{
    aggregate, local_train, recover, run_fedavg, FederationConfig, FederationState,
};
use fedquit_core::nn::{serialized_len, Activation, Architecture, ParameterSet};
use fedquit_core::rng::{stream, Stream};
use proptest::prelude::*;

fn arch() -> Architecture {
    Architecture::new(vec![2, 8, 3], Activation::Relu).unwrap()
}

fn test_set(seed: u64) -> Dataset {
    generate_blobs_from(3, 20, 2, 0.4, &mut stream(seed, Stream::TestData)).unwrap()
}

fn federation(k: usize, alpha: f64, seed: u64) -> FederationData {
    let train = generate_blobs(3, 40, 2, 0.4, seed).unwrap();
    let spec = PartitionSpec {
        kind: PartitionKind::Dirichlet { alpha },
        num_clients: k,
        seed,
    };
    FederationData::from_partition(&train, test_set(seed), &spec).unwrap()
}

fn cfg(rounds: usize, seed: u64) -> FederationConfig {
    FederationConfig {
        rounds,
        batch_size: 8,
        seed,
        ..FederationConfig::default()
    }
}

fn init(seed: u64) -> ParameterSet {
    ParameterSet::glorot_uniform(&arch(), &mut stream(seed, Stream::Init))
}

fn bits(p: &ParameterSet) -> Vec<u64> {
    p.values().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn single_client_fedavg_equals_centralized_training() {
    for seed in 0..5 {
        let train = generate_blobs(3, 30, 2, 0.4, seed).unwrap();
        let fed = FederationData::new(vec![train.clone()], test_set(seed)).unwrap();
        let mut c = cfg(7, seed);
        c.local_epochs = 2;
        let (state, history) = run_fedavg(&fed, &arch(), &c, init(seed), &[]).unwrap();
        assert_eq!(history.len(), 7);

        let mut rng = stream(seed, Stream::ClientTrain(0));
        let mut params = init(seed);
        let mut lr = c.client_lr;
        for _ in 0..c.rounds {
            params = local_train(
                &params,
                &arch(),
                &train,
                c.local_epochs,
                lr,
                c.batch_size,
                &mut rng,
            )
            .unwrap()
            .params;
            lr *= c.lr_decay;
        }
        assert_eq!(bits(state.global()), bits(&params), "seed {seed}");
    }
}

#[test]
fn excluded_shard_is_never_read() {
    let fed = federation(4, 0.5, 3);
    for u in 0..4 {
        fed.reset_access_counts();
        let (_, history) = run_fedavg(&fed, &arch(), &cfg(3, 3), init(3), &[u]).unwrap();
        assert_eq!(fed.access_count(u), 0);
        for k in (0..4).filter(|&k| k != u) {
            assert_eq!(fed.access_count(k), 3);
        }
        assert!(history.iter().all(|r| !r.participants.contains(&u)));

        let mut state = FederationState::new(init(3), &cfg(3, 3), 4);
        recover(&mut state, &fed, &arch(), &cfg(3, 3), &[u], 2.0, 2).unwrap();
        assert_eq!(fed.access_count(u), 0);
    }
}

#[test]
fn every_client_excluded_is_rejected() {
    let fed = federation(2, 1.0, 0);
    assert!(run_fedavg(&fed, &arch(), &cfg(1, 0), init(0), &[0, 1]).is_err());
    assert!(run_fedavg(&fed, &arch(), &cfg(0, 0), init(0), &[]).is_err());
    let (_, h) = run_fedavg(&fed, &arch(), &cfg(1, 0), init(0), &[]).unwrap();
    assert_eq!(h.len(), 1);
}

#[test]
fn fedavg_is_independent_of_thread_count() {
    let fed = federation(5, 0.3, 11);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_fedavg(&fed, &arch(), &cfg(5, 11), init(11), &[2]).unwrap())
    };
    let (a, ha) = run(1);
    let (b, hb) = run(4);
    assert_eq!(bits(a.global()), bits(b.global()));
    assert_eq!(ha, hb);
}

#[test]
fn byte_accounting_matches_participants() {
    let fed = federation(5, 0.3, 2);
    let size = serialized_len(arch().layer_sizes());
    let (mut state, history) = run_fedavg(&fed, &arch(), &cfg(3, 2), init(2), &[1]).unwrap();
    for r in &history {
        assert_eq!(r.bytes, 2 * r.participants.len() as u64 * size);
    }

    // A regular round where only one client takes part.
    let mut one = FederationState::new(init(2), &cfg(1, 2), 5);
    let single = one
        .run_round(&fed, &arch(), &cfg(1, 2), &[0, 1, 2, 4])
        .unwrap();
    assert_eq!(single.participants, vec![3]);

    let before = state.bytes_total();
    let round = state.round();
    let unlearned = init(99);
    let cost = state.unlearning_round(unlearned.clone(), 1).unwrap();
    assert_eq!(cost, single.bytes);
    assert_eq!(state.bytes_total() - before, single.bytes);
    assert_eq!(state.round(), round + 1);
    assert_eq!(bits(state.global()), bits(&unlearned));
}

fn params_strategy() -> impl Strategy<Value = Vec<(Vec<f64>, usize)>> {
    prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 6), 0usize..50), 1..7)
        .prop_filter("some data", |u| u.iter().any(|(_, n)| *n > 0))
}

proptest! {
    #[test]
    fn aggregate_is_permutation_invariant(updates in params_strategy(), rot in 0usize..7, seed in any::<u64>()) {
        let sets: Vec<(ParameterSet, usize)> = updates
            .iter()
            .map(|(v, n)| (ParameterSet::from_values(vec![1, 3], v.clone()).unwrap(), *n))
            .collect();
        let refs: Vec<(&ParameterSet, usize)> = sets.iter().map(|(p, n)| (p, *n)).collect();
        let a = aggregate(&refs).unwrap();

        let mut permuted = refs.clone();
        permuted.rotate_left(rot % refs.len());
        use rand::seq::SliceRandom;
        permuted.shuffle(&mut stream(seed, Stream::Mia));
        let b = aggregate(&permuted).unwrap();
        prop_assert_eq!(bits(&a), bits(&b));

        // Weighted mean within rounding of a direct evaluation.
        let total: usize = updates.iter().map(|(_, n)| n).sum();
        for i in 0..6 {
            let direct: f64 = updates.iter().map(|(v, n)| v[i] * *n as f64).sum::<f64>() / total as f64;
            prop_assert!((a.values()[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_of_identical_inputs_is_identity(v in prop::collection::vec(-1e6f64..1e6, 6), ns in prop::collection::vec(1usize..100, 1..8)) {
        let p = ParameterSet::from_values(vec![1, 3], v).unwrap();
        let refs: Vec<(&ParameterSet, usize)> = ns.iter().map(|&n| (&p, n)).collect();
        prop_assert_eq!(bits(&aggregate(&refs).unwrap()), bits(&p));
    }
}
