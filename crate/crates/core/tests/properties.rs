use std::io::Cursor;

use proptest::prelude::*;

use hcocoa::analysis::{optimize_schedule, BoundKind, CostModel, RateParams};
use hcocoa::cocoa::OuterSubproblem;
use hcocoa::comm::canonical_sum;
use hcocoa::objective::{prepare_problem, Objective};
use hcocoa::sparse::{
    parse_svmlight, partition_columns, write_chunks, write_svmlight, ChunkStore, PartitionStrategy, SparseColumnMatrix,
};
use hcocoa::synth::{classification, SynthSpec};
use hcocoa::ObjectiveKind;

fn sparse_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = SparseColumnMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(rows, cols)| {
        proptest::collection::vec(proptest::collection::vec(prop_oneof![3 => Just(0.0), 1 => -10.0..10.0f64], rows), cols)
            .prop_map(move |dense_cols| {
                let columns = dense_cols
                    .into_iter()
                    .map(|c| c.into_iter().enumerate().filter(|(_, v)| *v != 0.0).map(|(r, v)| (r as u32, v)).collect())
                    .collect();
                SparseColumnMatrix::from_columns(rows, columns).unwrap()
            })
    })
}

fn labels(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![Just(1.0), Just(-1.0)], n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svmlight_round_trip((x, y) in sparse_matrix(10, 50).prop_flat_map(|x| { let n = x.n_cols(); (Just(x), labels(n)) })) {
        let mut buf = Vec::new();
        write_svmlight(&x, &y, &mut buf).unwrap();
        let (back, back_y) = parse_svmlight::<f64, _>(Cursor::new(&buf), Some(x.n_rows())).unwrap();
        prop_assert_eq!(back, x);
        prop_assert_eq!(back_y, y);
    }

    #[test]
    fn chunk_round_trip(x in sparse_matrix(8, 40), chunk in 1usize..45) {
        let y: Vec<f64> = (0..x.n_cols()).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let with_labels = x.with_labels(y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.chunks");
        write_chunks(&with_labels, chunk, &path).unwrap();
        let store = ChunkStore::open(&path).unwrap();
        prop_assert_eq!(store.n_chunks(), with_labels.n_cols().div_ceil(chunk));
        prop_assert_eq!(store.read_all::<f64>().unwrap(), with_labels);
    }

    #[test]
    fn partitions_are_disjoint_covers(n in 1usize..300, k in 1usize..5, l in 1usize..5, balanced in any::<bool>()) {
        prop_assume!(k * l <= n);
        let nnz: Vec<usize> = (0..n).map(|i| 1 + (i * 7919) % 13).collect();
        let strategy = if balanced { PartitionStrategy::BalancedByNnz(&nnz) } else { PartitionStrategy::Contiguous };
        let parts = partition_columns(n, k, l, strategy).unwrap();
        prop_assert_eq!(parts.len(), k * l);
        let all: Vec<usize> = parts.iter().flat_map(|p| p.coords.iter().copied()).collect();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (i, p) in parts.iter().enumerate() {
            prop_assert!(!p.coords.is_empty());
            prop_assert_eq!((p.node, p.device), (i / l, i % l));
        }
    }

    #[test]
    fn canonical_sum_matches_sequential_sum(parts in proptest::collection::vec(proptest::collection::vec(-1e3..1e3f64, 16), 1..6)) {
        let refs: Vec<&[f64]> = parts.iter().map(Vec::as_slice).collect();
        let total = canonical_sum(&refs).unwrap();
        for (i, t) in total.iter().enumerate() {
            let seq: f64 = parts.iter().map(|p| p[i]).sum();
            prop_assert!((t - seq).abs() <= 1e-12 * (1.0 + seq.abs()));
        }
    }

    #[test]
    fn general_bound_improves_with_inner_rounds(
        theta in 0.0..0.99f64, k in 1usize..8, l in 1usize..8, beta in 0.1..10.0f64, c_a in 0.1..10.0f64, t1 in 1usize..100,
    ) {
        let p = RateParams::new(1.5, beta, 0.0, c_a, theta, k, l).unwrap();
        let (b1, b2, b4) = (p.rate_bound_general(t1, 1), p.rate_bound_general(t1, 2), p.rate_bound_general(t1, 4));
        prop_assert!(b4 <= b2 && b2 <= b1);
        prop_assert!(p.rate_bound_general(t1 + 1, 2) <= b2);
    }

    #[test]
    fn strongly_convex_bound_is_geometric(
        theta in 0.0..0.99f64, mu in 0.01..5.0f64, k in 1usize..8, l in 1usize..8, t1 in 1usize..50, t2 in 1usize..10,
    ) {
        let p = RateParams::new(1.0, 2.0, mu, 3.0, theta, k, l).unwrap();
        let factor = p.rate_bound_strongly_convex(1, t2, 1.0);
        let next = p.rate_bound_strongly_convex(t1 + 1, t2, 2.5);
        let expect = p.rate_bound_strongly_convex(t1, t2, 2.5) * factor;
        prop_assert!((next - expect).abs() <= 1e-12 * expect.max(1e-300));
        prop_assert!(p.rate_bound_strongly_convex(t1, t2 + 1, 1.0) <= p.rate_bound_strongly_convex(t1, t2, 1.0));
    }

    #[test]
    fn one_inner_round_recovers_flat_rate(theta in 0.0..0.99f64, mu in 0.01..5.0f64, k in 1usize..6, l in 1usize..6) {
        let (beta, c_a) = (1.3, 2.1);
        let nested = RateParams::new(1.0, beta, mu, c_a, theta, k, l).unwrap();
        // A single level with σ = KL and device quality θ̄.
        let flat_factor = 1.0 - (1.0 - theta) * mu / (mu + (k * l) as f64 * beta * c_a);
        let nested_factor = nested.rate_bound_strongly_convex(1, 1, 1.0);
        prop_assert!((nested_factor - flat_factor).abs() < 1e-12);
    }

    #[test]
    fn schedule_search_is_exhaustive(
        c1 in 0.5..20.0f64, c2 in 0.0..3.0f64, comp in 0.5..5.0f64, budget in 20.0..200.0f64, theta in 0.0..0.9f64,
        strongly in any::<bool>(),
    ) {
        let p = RateParams::new(1.0, 1.0, if strongly { 0.5 } else { 0.0 }, 1.0, theta, 2, 3).unwrap();
        let cost = CostModel::new(c1, c2, comp, budget).unwrap();
        let kind = BoundKind::for_params(&p, 1.0);
        let best = optimize_schedule(&p, &cost, kind).unwrap();
        prop_assert!(cost.feasible(best.t1, best.t2));
        let max_t = (budget / comp.min(c1)).ceil() as usize + 1;
        for t2 in 1..=max_t {
            for t1 in 1..=max_t {
                if cost.feasible(t1, t2) {
                    prop_assert!(best.bound <= kind.evaluate(&p, t1, t2), "({t1}, {t2}) beats {best:?}");
                }
            }
        }
    }
}

fn dual_instance(kind: ObjectiveKind, n: usize, d: usize, seed: u64, lambda: f64) -> (Objective<f64>, SparseColumnMatrix<f64>) {
    let (x, y) = classification(&SynthSpec::new(n, d, 0.4, seed)).unwrap();
    prepare_problem(kind, lambda, &x, &y).unwrap()
}

fn interior_point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01..0.99f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gap_bounds_suboptimality(alpha in interior_point(30), svm in any::<bool>()) {
        let kind = if svm { ObjectiveKind::DualSvm } else { ObjectiveKind::DualLogistic };
        let (obj, a) = dual_instance(kind, 30, 6, 3, 0.3);
        let f_star = obj.reference_optimum(&a, 1e-12, 1_000_000).unwrap().objective;
        let v = a.matvec(&alpha).unwrap();
        let f = obj.objective_at(&v, &alpha);
        let gap = obj.duality_gap(&a, &alpha, &v).unwrap();
        prop_assert!(f >= f_star - 1e-10);
        prop_assert!(gap >= f - f_star - 1e-10, "gap {gap} < {}", f - f_star);
    }

    #[test]
    fn node_subproblems_upper_bound_the_objective(
        alpha in interior_point(24), step in proptest::collection::vec(-0.5..0.5f64, 24), scale in 0.0..1.0f64,
    ) {
        let (obj, a) = dual_instance(ObjectiveKind::DualLogistic, 24, 5, 8, 0.2);
        let nodes = 3;
        // Keep α + Δ inside (0, 1).
        let delta: Vec<f64> = alpha
            .iter()
            .zip(&step)
            .map(|(&x, &s)| if s >= 0.0 { s * scale * (1.0 - x) } else { s * scale * x })
            .collect();
        let v = a.matvec(&alpha).unwrap();
        let parts = partition_columns(24, nodes, 1, PartitionStrategy::Contiguous).unwrap();
        let mut sum = 0.0;
        for p in &parts {
            let (lo, hi) = (p.coords[0], p.coords[p.coords.len() - 1] + 1);
            let cols = a.column_range(lo, hi);
            let outer = OuterSubproblem::new(&obj, &v, &cols, &alpha[lo..hi], nodes as f64, nodes).unwrap();
            sum += outer.evaluate(&delta[lo..hi]).unwrap();
        }
        let moved: Vec<f64> = alpha.iter().zip(&delta).map(|(x, d)| x + d).collect();
        let exact = obj.primal_objective(&a, &moved).unwrap();
        prop_assert!(sum >= exact - 1e-10 * (1.0 + exact.abs()), "{sum} < {exact}");

        let whole = OuterSubproblem::new(&obj, &v, &a, &alpha, 1.0, 1).unwrap();
        let single = whole.evaluate(&delta).unwrap();
        // f is quadratic, so with K = σ = 1 the model is exact.
        prop_assert!((single - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn device_subproblems_upper_bound_the_node(
        alpha in interior_point(24), d_raw in proptest::collection::vec(-0.3..0.3f64, 24),
        step in proptest::collection::vec(-0.3..0.3f64, 24),
    ) {
        let (obj, a) = dual_instance(ObjectiveKind::DualLogistic, 24, 5, 13, 0.5);
        let (nodes, devices) = (2usize, 3usize);
        let clamp = |x: f64, s: f64| if s >= 0.0 { s * (1.0 - x) } else { s * x };
        let d: Vec<f64> = alpha.iter().zip(&d_raw).map(|(&x, &s)| clamp(x, s)).collect();
        let dd: Vec<f64> = alpha.iter().zip(&d).zip(&step).map(|((&x, &di), &s)| clamp(x + di, s)).collect();
        let v = a.matvec(&alpha).unwrap();
        let parts = partition_columns(24, nodes, devices, PartitionStrategy::Contiguous).unwrap();
        let node_hi = parts[devices - 1].coords.last().unwrap() + 1;
        let node_cols = a.column_range(0, node_hi);
        let outer = OuterSubproblem::new(&obj, &v, &node_cols, &alpha[..node_hi], nodes as f64, nodes).unwrap();
        let vbar = node_cols.matvec(&d[..node_hi]).unwrap();
        let mut at_zero = 0.0;
        let mut at_step = 0.0;
        for p in &parts[..devices] {
            let (lo, hi) = (p.coords[0], p.coords[p.coords.len() - 1] + 1);
            let cols = a.column_range(lo, hi);
            let base: Vec<f64> = (lo..hi).map(|i| alpha[i] + d[i]).collect();
            let inner = outer.inner(&vbar, &cols, &base, devices as f64, devices).unwrap();
            at_zero += inner.evaluate(&vec![0.0; hi - lo]).unwrap();
            at_step += inner.evaluate(&dd[lo..hi]).unwrap();
        }
        let total: Vec<f64> = (0..node_hi).map(|i| d[i] + dd[i]).collect();
        let node_at_d = outer.evaluate(&d[..node_hi]).unwrap();
        let node_at_total = outer.evaluate(&total).unwrap();
        let tol = 1e-10 * (1.0 + node_at_d.abs());
        prop_assert!((at_zero - node_at_d).abs() <= tol, "{at_zero} vs {node_at_d}");
        prop_assert!(at_step >= node_at_total - tol, "{at_step} < {node_at_total}");
    }
}
