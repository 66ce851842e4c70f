use fmax_core::factor::{assemble, f_gfm, merge, parameter_count, recover_d, FactorStats, FgfmOptions};
use fmax_core::gfm::inner_solutions;
use fmax_core::oracle::{brute_force_maximizer, exact_p_matrix, expected_f};
use fmax_core::rng::stream;
use fmax_core::{compute_delta, f_measure, gfm, gfm_from_p_only, JointLabelDistribution, LabelPartition, LabelVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_partition(m: usize, seed: u64) -> LabelPartition {
    let mut rng = stream(seed, &[1]);
    let mut labels: Vec<usize> = (0..m).collect();
    labels.shuffle(&mut rng);
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < m {
        let len = rng.random_range(1..=(m - start).min(4));
        blocks.push(labels[start..start + len].to_vec());
        start += len;
    }
    LabelPartition::new(m, blocks).unwrap()
}

fn factorized(partition: &LabelPartition, seed: u64) -> (JointLabelDistribution, Vec<FactorStats>) {
    let mut rng = stream(seed, &[2]);
    let factors: Vec<JointLabelDistribution> = partition
        .blocks()
        .iter()
        .map(|b| JointLabelDistribution::random(b.len(), &mut rng).unwrap())
        .collect();
    let stats = partition
        .blocks()
        .iter()
        .zip(&factors)
        .map(|(b, f)| FactorStats::new(b.clone(), exact_p_matrix(f).0).unwrap())
        .collect();
    (JointLabelDistribution::from_factors(partition, &factors).unwrap(), stats)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gfm_reaches_the_brute_force_optimum(m in 1usize..=8, seed in any::<u64>()) {
        let dist = JointLabelDistribution::random(m, &mut stream(seed, &[])).unwrap();
        let (p, p_zero) = exact_p_matrix(&dist);
        let pred = gfm(&p, p_zero).unwrap();
        let best = brute_force_maximizer(&dist).unwrap().expected_f;
        prop_assert!((expected_f(&dist, &pred.h).unwrap() - best).abs() <= 1e-10);
        prop_assert!((pred.expected_f - best).abs() <= 1e-10);
    }

    #[test]
    fn f_measure_identity_and_symmetry(m in 1usize..=10, a in any::<u64>(), b in any::<u64>()) {
        let mask = (1u64 << m) - 1;
        let y = LabelVector::from_pattern(a & mask, m);
        let h = LabelVector::from_pattern(b & mask, m);
        let f = f_measure(&y, &h).unwrap();
        prop_assert_eq!(f, f_measure(&h, &y).unwrap());
        prop_assert_eq!(f == 1.0, y == h);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn gfm_is_permutation_equivariant(m in 2usize..=8, seed in any::<u64>()) {
        let mut rng = stream(seed, &[]);
        let dist = JointLabelDistribution::random(m, &mut rng).unwrap();
        let (p, p_zero) = exact_p_matrix(&dist);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        // row r of the permuted matrix is label perm[r]
        let q = p.permute_rows(&perm).unwrap();
        let a = gfm(&p, p_zero).unwrap();
        let b = gfm(&q, p_zero).unwrap();
        prop_assert!((a.expected_f - b.expected_f).abs() <= 1e-12);
        // ties may pick different vectors; both must be optimal in the other frame
        let mapped: Vec<u8> = (0..m).map(|r| a.h.get(perm[r])).collect();
        let mapped = LabelVector::new(mapped).unwrap();
        let inner = inner_solutions(&q);
        let value = if mapped.count_ones() == 0 { p_zero } else { inner[mapped.count_ones() - 1].1 };
        prop_assert!((value - b.expected_f).abs() <= 1e-12);
    }

    #[test]
    fn delta_rows_decrease_and_inner_solutions_have_k_ones(m in 1usize..=8, seed in any::<u64>()) {
        let dist = JointLabelDistribution::random(m, &mut stream(seed, &[])).unwrap();
        let (p, _) = exact_p_matrix(&dist);
        let delta = compute_delta(&p);
        for i in 0..m {
            prop_assert!(delta.row(i).windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }
        for (k, (h, _)) in inner_solutions(&p).iter().enumerate() {
            prop_assert_eq!(h.count_ones(), k + 1);
        }
    }

    #[test]
    fn d_is_recovered_from_p(m in 1usize..=8, seed in any::<u64>()) {
        let dist = JointLabelDistribution::random(m, &mut stream(seed, &[])).unwrap();
        let (p, p_zero) = exact_p_matrix(&dist);
        let d = recover_d(&p).unwrap();
        let direct = dist.count_distribution();
        for s in 0..=m {
            prop_assert!((d.get(s) - direct.get(s)).abs() <= 1e-12);
        }
        prop_assert!((d.sum() - 1.0).abs() <= 1e-9);
        let a = gfm(&p, p_zero).unwrap();
        let b = gfm_from_p_only(&p).unwrap();
        prop_assert!((a.expected_f - b.expected_f).abs() <= 1e-12);
    }

    #[test]
    fn expected_f_is_a_probability(m in 1usize..=8, seed in any::<u64>(), pattern in any::<u64>()) {
        let dist = JointLabelDistribution::random(m, &mut stream(seed, &[])).unwrap();
        let h = LabelVector::from_pattern(pattern & ((1 << m) - 1), m);
        let v = expected_f(&dist, &h).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn merged_matrix_is_exact(m in 2usize..=10, seed in any::<u64>()) {
        let partition = random_partition(m, seed);
        let (joint, stats) = factorized(&partition, seed);
        let assembled = assemble(&partition, &stats, &FgfmOptions::default()).unwrap();
        let (exact, _) = exact_p_matrix(&joint);
        let merged = assembled.p_in_label_order();
        for (a, b) in merged.entries().iter().zip(exact.entries()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn merged_d_is_the_convolution(m1 in 1usize..=5, m2 in 1usize..=5, seed in any::<u64>()) {
        let mut rng = stream(seed, &[]);
        let a = JointLabelDistribution::random(m1, &mut rng).unwrap();
        let b = JointLabelDistribution::random(m2, &mut rng).unwrap();
        let (pa, pb) = (exact_p_matrix(&a).0, exact_p_matrix(&b).0);
        let (da, db) = (recover_d(&pa).unwrap(), recover_d(&pb).unwrap());
        let d = recover_d(&merge(&pa, &da, &pb, &db).unwrap()).unwrap();
        let conv = da.convolve(&db);
        for s in 0..=m1 + m2 {
            prop_assert!((d.get(s) - conv.get(s)).abs() <= 1e-12);
        }
    }

    #[test]
    fn f_gfm_agrees_with_gfm_on_the_joint(m in 2usize..=10, seed in any::<u64>()) {
        let partition = random_partition(m, seed);
        let (joint, stats) = factorized(&partition, seed);
        let fac = f_gfm(&partition, &stats).unwrap();
        let (p, p_zero) = exact_p_matrix(&joint);
        let full = gfm(&p, p_zero).unwrap();
        prop_assert!((fac.expected_f - full.expected_f).abs() <= 1e-10);
        prop_assert!((expected_f(&joint, &fac.h).unwrap() - full.expected_f).abs() <= 1e-10);
    }

    #[test]
    fn block_order_does_not_matter(m in 2usize..=8, seed in any::<u64>()) {
        let partition = random_partition(m, seed);
        let (joint, stats) = factorized(&partition, seed);
        let mut order: Vec<usize> = (0..partition.len()).collect();
        order.reverse();
        let reversed = LabelPartition::new(m, order.iter().map(|&k| partition.blocks()[k].clone()).collect()).unwrap();
        let reversed_stats: Vec<FactorStats> = order.iter().map(|&k| stats[k].clone()).collect();
        let a = f_gfm(&partition, &stats).unwrap();
        let b = f_gfm(&reversed, &reversed_stats).unwrap();
        prop_assert!((a.expected_f - b.expected_f).abs() <= 1e-12);
        // predictions are in original label order in both runs
        prop_assert!((expected_f(&joint, &a.h).unwrap() - expected_f(&joint, &b.h).unwrap()).abs() <= 1e-10);
    }
}

#[test]
fn parameter_counts() {
    for m in 1..=64usize {
        for n in 1..=m {
            if m % n == 0 {
                let size = m / n;
                let equal = LabelPartition::new(m, (0..n).map(|k| (k * size..(k + 1) * size).collect()).collect()).unwrap();
                assert_eq!(parameter_count(&equal), m * m / n);
            }
            let mut blocks: Vec<Vec<usize>> = (0..n - 1).map(|k| vec![k]).collect();
            blocks.push((n - 1..m).collect());
            let worst = LabelPartition::new(m, blocks).unwrap();
            assert_eq!(parameter_count(&worst), (n - 1) + (m - n + 1) * (m - n + 1));
        }
    }
}
