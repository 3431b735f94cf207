use proptest::prelude::*;

use comscribe::decompose::{
    build_double_binary_tree, decompose_instance, DecomposeError, ModelConfig, RingOrder,
};
use comscribe::matrix::CommMatrix;
use comscribe::oracle::{aggregate_on, simulate_ring, simulate_tree};
use comscribe::trace::{AlgorithmChoice, CollectiveInstance, CollectiveKind, Endpoint};

fn permutation(n: u32) -> impl Strategy<Value = Vec<u32>> {
    Just((0..n).collect::<Vec<u32>>()).prop_shuffle()
}

fn setup() -> impl Strategy<Value = (u32, Vec<u32>, Vec<u32>)> {
    (1u32..=12).prop_flat_map(|n| {
        (
            Just(n),
            permutation(n),
            proptest::sample::subsequence((0..24).collect::<Vec<u32>>(), n as usize),
        )
            .prop_flat_map(|(n, ring, devices)| (Just(n), Just(ring), Just(devices).prop_shuffle()))
    })
}

proptest! {
    #[test]
    fn ring_models_match_oracle_on_any_ring_and_placement(
        (n, ring, devices) in setup(),
        kind in proptest::sample::select(CollectiveKind::ALL.to_vec()),
        s in 0u64..100_000,
        root_pick in any::<u32>(),
    ) {
        let root = kind.is_rooted().then_some(root_pick % n);
        let inst = CollectiveInstance::synthetic(kind, AlgorithmChoice::Ring, n, s, root)
            .with_devices(devices.clone());
        let order = RingOrder::new(ring.clone()).unwrap();
        let config = ModelConfig { default_ring: Some(order), ..ModelConfig::default() };
        let model = decompose_instance(&inst, &config).unwrap();
        let log = simulate_ring(kind, n, s, root, &ring).unwrap();
        prop_assert_eq!(model.without_zero_transfers(), aggregate_on(&log, &devices).without_zero_transfers());
    }

    #[test]
    fn tree_model_matches_oracle_on_any_placement((n, _ring, devices) in setup(), s in 0u64..100_000) {
        let inst = CollectiveInstance::synthetic(CollectiveKind::AllReduce, AlgorithmChoice::Tree, n, s, None)
            .with_devices(devices.clone());
        let model = decompose_instance(&inst, &ModelConfig::default()).unwrap();
        let log = simulate_tree(n, s, &build_double_binary_tree(n)).unwrap();
        prop_assert_eq!(model.without_zero_transfers(), aggregate_on(&log, &devices).without_zero_transfers());
    }

    #[test]
    fn matrix_totals_follow_decomposition((n, _ring, devices) in setup(), s in 0u64..1 << 40) {
        let inst = CollectiveInstance::synthetic(CollectiveKind::AllReduce, AlgorithmChoice::Auto, n, s, None)
            .with_devices(devices);
        let dec = decompose_instance(&inst, &ModelConfig::default()).unwrap();
        let mut m = CommMatrix::zeros(24);
        m.accumulate(&dec).unwrap();
        prop_assert_eq!(m.total(), dec.total_bytes());
        prop_assert_eq!(m.row_sum(0) + m.col_sum(0), 0);
        let sym = m.symmetrized().unwrap();
        prop_assert_eq!(sym.total(), 2 * m.total());
    }
}

#[test]
fn auto_threshold() {
    let model = |algo, s| {
        let inst = CollectiveInstance::synthetic(CollectiveKind::AllReduce, algo, 8, s, None);
        decompose_instance(&inst, &ModelConfig::default()).unwrap()
    };
    let below = (1 << 20) - 8;
    assert_eq!(
        model(AlgorithmChoice::Auto, below),
        model(AlgorithmChoice::Tree, below)
    );
    assert_eq!(
        model(AlgorithmChoice::Auto, 1 << 20),
        model(AlgorithmChoice::Ring, 1 << 20)
    );
    assert_eq!(
        model(AlgorithmChoice::Auto, 1 << 20).bytes_between(Endpoint::Gpu(7), Endpoint::Gpu(0)),
        2 * 7 * (1 << 20) / 8
    );

    let config = ModelConfig {
        tree_threshold: 0,
        ..ModelConfig::default()
    };
    let inst = CollectiveInstance::synthetic(
        CollectiveKind::AllReduce,
        AlgorithmChoice::Auto,
        8,
        64,
        None,
    );
    assert_eq!(
        decompose_instance(&inst, &config).unwrap().transfers.len(),
        8
    );
}

#[test]
fn per_comm_ring_must_fit() {
    let inst = CollectiveInstance::synthetic(
        CollectiveKind::AllGather,
        AlgorithmChoice::Ring,
        4,
        64,
        None,
    );
    let mut config = ModelConfig::default();
    config
        .comm_rings
        .insert(inst.comm_id.clone(), RingOrder::new(vec![1, 0]).unwrap());
    assert!(matches!(
        decompose_instance(&inst, &config),
        Err(DecomposeError::InvalidRingOrder(_))
    ));

    // A default ring of another size is skipped in favor of the identity.
    let config = ModelConfig {
        default_ring: Some(RingOrder::new(vec![1, 0]).unwrap()),
        ..ModelConfig::default()
    };
    let dec = decompose_instance(&inst, &config).unwrap();
    assert_eq!(dec.bytes_between(Endpoint::Gpu(0), Endpoint::Gpu(1)), 48);
}

#[test]
fn rejects_bad_rings() {
    assert!(RingOrder::new(vec![0, 0, 1]).is_err());
    assert!(RingOrder::new(vec![0, 2]).is_err());
}
