use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::par::Exec;
use crate::schema::{compute_layout, parse_schema};

fn single(f: f64, c: f64, r: f64, p: f64) -> PlacementProblem {
    let mut pr = PlacementProblem::new(&["a"], &["d"]);
    pr.f = vec![f];
    pr.b = vec![1];
    pr.c = vec![vec![c]];
    pr.r = vec![vec![r]];
    pr.p = vec![p];
    pr
}

/// Two fields on dram (A) and pmem (B): 100 ns vs 1000 ns access, 1% failure
/// on both, 10 accesses. Field 2's recompute is 1000 us on A and 10 us on B.
fn two_by_two_instance() -> PlacementProblem {
    let mut p = PlacementProblem::new(&["field1", "field2"], &["dram", "pmem"]);
    p.f = vec![10.0, 10.0];
    p.b = vec![8, 8];
    p.c = vec![vec![100.0, 1000.0]; 2];
    p.p = vec![0.01, 0.01];
    p.r = vec![vec![100_000.0, 10_000.0], vec![1_000_000.0, 10_000.0]];
    p
}

#[test]
fn objective_single_term() {
    assert_eq!(single(1.0, 5.0, 0.0, 0.0).objective(&[0]).unwrap(), 5.0);
    assert_eq!(single(2.0, 5.0, 100.0, 0.5).objective(&[0]).unwrap(), 110.0);
}

#[test]
fn objective_worked_example() {
    let p = two_by_two_instance();
    // field 2 alone: 10*100 + 10*1e6*0.01 on A, 10*1000 + 10*1e4*0.01 on B
    assert_eq!(p.term(1, 0), 101_000.0);
    assert_eq!(p.term(1, 1), 11_000.0);
    let s = solve(&p).unwrap();
    assert_eq!(s.device_of(&p, "field2"), Some("pmem"));
    assert_eq!(s, brute_force(&p).unwrap());
    assert_eq!(p.objective_matrix(&s.matrix(2)).unwrap(), s.objective);
}

#[test]
fn objective_rejects_bad_assignments() {
    let p = two_by_two_instance();
    assert!(matches!(p.objective(&[0]), Err(PlacementError::Dimension(_))));
    assert!(matches!(p.objective(&[0, 2]), Err(PlacementError::Dimension(_))));
    assert!(p.objective_matrix(&[vec![1, 1], vec![0, 1]]).is_err());
    let mut bad = two_by_two_instance();
    bad.c.pop();
    assert!(matches!(solve(&bad), Err(PlacementError::Dimension(_))));
    bad = two_by_two_instance();
    bad.x = 0;
    assert!(solve(&bad).is_err());
    bad = two_by_two_instance();
    bad.p[0] = 1.5;
    assert!(matches!(solve(&bad), Err(PlacementError::InvalidInput(_))));
}

#[test]
fn zero_failure_is_separable() {
    let mut p = PlacementProblem::new(&["a", "b", "c"], &["x", "y", "z"]);
    p.f = vec![3.0, 1.0, 7.0];
    p.b = vec![1, 1, 1];
    p.c = vec![vec![5.0, 2.0, 9.0], vec![1.0, 4.0, 4.0], vec![8.0, 8.0, 3.0]];
    p.r = vec![vec![1e9; 3]; 3];
    let s = solve(&p).unwrap();
    assert_eq!(s.assignment, vec![1, 0, 2]);
    assert_eq!(s.objective, 3.0 * 2.0 + 1.0 + 7.0 * 3.0);
}

#[test]
fn capacity_binds_higher_frequency_field() {
    let mut p = PlacementProblem::new(&["lo", "hi"], &["a", "b"]);
    p.f = vec![2.0, 9.0];
    p.b = vec![8, 8];
    p.s = vec![100, 1_000_000];
    p.x = 10;
    p.c = vec![vec![1.0, 10.0]; 2];
    let s = solve(&p).unwrap();
    assert_eq!(s.assignment, vec![1, 0]);
    assert_eq!(s.used, vec![80, 80]);
    assert_eq!(s, brute_force(&p).unwrap());
}

#[test]
fn exact_fit_is_allowed() {
    let mut p = single(1.0, 1.0, 0.0, 0.0);
    p.b = vec![10];
    p.x = 10;
    p.s = vec![100];
    assert!(solve(&p).is_ok());
    p.s = vec![99];
    assert!(solve(&p).is_err());
}

#[test]
fn infeasible_names_binding_field() {
    let mut p = PlacementProblem::new(&["a", "b", "c"], &["x", "y"]);
    p.b = vec![10, 10, 50];
    p.s = vec![30, 30];
    p.c = vec![vec![1.0, 1.0]; 3];
    let e = solve(&p).unwrap_err();
    assert_eq!(e, brute_force(&p).unwrap_err());
    match e {
        PlacementError::Infeasible { field, demand, capacities } => {
            assert_eq!(field, "c");
            assert_eq!(demand, 50);
            assert_eq!(capacities, "x=30, y=30");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn ties_go_to_lower_device() {
    let mut p = PlacementProblem::new(&["a", "b"], &["x", "y", "z"]);
    p.f = vec![1.0, 0.0];
    p.b = vec![1, 1];
    p.c = vec![vec![4.0, 2.0, 2.0], vec![3.0, 1.0, 2.0]];
    let s = solve(&p).unwrap();
    assert_eq!(s.assignment, vec![1, 0]);
    assert_eq!(s, brute_force(&p).unwrap());
}

#[test]
fn brute_force_size_limit() {
    let p = PlacementProblem::new(&["a"; 12], &["x", "y", "z", "w"]);
    assert!(matches!(brute_force(&p), Err(PlacementError::TooLarge(16_777_216))));
    let p = PlacementProblem::new(&[], &["x"]);
    assert_eq!(solve(&p).unwrap().assignment, Vec::<usize>::new());
    assert_eq!(brute_force(&p).unwrap().objective, 0.0);
}

#[test]
fn solution_csv() {
    let p = two_by_two_instance();
    let s = solve(&p).unwrap();
    assert_eq!(s.to_csv(&p), "field,device,cost_contribution\nfield1,dram,11000\nfield2,pmem,11000\n");
}

const PERSON: &str = "object person {
    age: i32 @pmem
    image: bytes @pmem @disk
    place: string @pmem
    name: string @pmem
}";

fn person_problem() -> PlacementProblem {
    let mut p = PlacementProblem::new(&["age", "image", "place", "name"], &["pmem", "disk"]);
    p.f = vec![1.0; 4];
    p.b = vec![4, 10_000, 8, 8];
    p.c = vec![vec![1.0, 100.0]; 4];
    p
}

#[test]
fn emit_all_pmem() {
    let schema = parse_schema(PERSON).unwrap();
    let p = person_problem();
    let s = solve(&p).unwrap();
    let text = emit_tags(&s, &p, &schema).unwrap();
    assert_eq!(text.matches("@pmem").count(), 4);
    assert!(!text.contains("@disk"));
}

#[test]
fn emit_image_on_disk() {
    let schema = parse_schema(PERSON).unwrap();
    let mut p = person_problem();
    p.s = vec![10_000, u64::MAX];
    let s = solve(&p).unwrap();
    let text = emit_tags(&s, &p, &schema).unwrap();
    assert!(text.contains("image: bytes @disk\n"), "{text}");
    let back = parse_schema(&text).unwrap();
    let layout = compute_layout(&back, &back.preferred_assignment()).unwrap();
    assert_eq!(layout.assignment(), retag(&s, &p, &schema).unwrap().preferred_assignment());
    assert_eq!(layout.assignment()["image"], crate::tiers::TierId::DISK);
    assert_eq!(layout.assignment()["age"], crate::tiers::TierId::PMEM);
}

#[test]
fn emit_rejects_mismatch() {
    let schema = parse_schema(PERSON).unwrap();
    let mut p = PlacementProblem::new(&["age"], &["pmem"]);
    p.b = vec![4];
    let s = solve(&p).unwrap();
    assert!(matches!(emit_tags(&s, &p, &schema), Err(PlacementError::FieldMismatch(_))));
    let mut p = person_problem();
    p.devices = vec!["nvme".into(), "disk".into()];
    let s = solve(&p).unwrap();
    assert!(matches!(emit_tags(&s, &p, &schema), Err(PlacementError::UnknownDevice(_))));
}

#[test]
fn sweep_param_parsing() {
    let p = two_by_two_instance();
    assert_eq!(SweepParam::parse("R:field2:dram", &p).unwrap(), SweepParam::R { field: 1, device: 0 });
    assert_eq!(SweepParam::parse("P:*", &p).unwrap(), SweepParam::P { device: None });
    assert_eq!(SweepParam::parse("F:0", &p).unwrap(), SweepParam::F { field: 0 });
    assert_eq!(
        SweepParam::parse("iters:field1:0:100000", &p).unwrap(),
        SweepParam::Iters { field: 0, device: 0, ns_per_iter: 100_000.0 }
    );
    assert!(SweepParam::parse("R:nope:dram", &p).is_err());
    assert!(SweepParam::parse("Q:1", &p).is_err());
    let axis = SweepAxis::parse("C:field1:pmem@0:10:6", &p).unwrap();
    assert_eq!(axis.values, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    assert!(SweepAxis::parse("C:field1:pmem@0:10", &p).is_err());
    assert!(SweepAxis::parse("C:field1:pmem@0:10:0", &p).is_err());
}

#[test]
fn recompute_sweep_flips_once_at_closed_form() {
    let p = two_by_two_instance();
    let axis = SweepAxis::linear(SweepParam::R { field: 1, device: 0 }, 0.0, 300_000.0, 301);
    let grid = sweep(&p, &axis, None, Exec::Sequential).unwrap();
    let choices: Vec<usize> = (0..grid.rows).map(|r| grid.choice(r, 0, 1).unwrap()).collect();
    let flips = choices.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(flips, 1);
    // 10*100 + 10*R*0.01 = 10*1000 + 10*1e4*0.01  =>  R = 100 000
    let first_b = choices.iter().position(|&c| c == 1).unwrap();
    assert_eq!(axis.values[first_b], 101_000.0);
}

#[test]
fn zero_failure_row_picks_fastest() {
    let p = two_by_two_instance();
    let a1 = SweepAxis::linear(SweepParam::P { device: None }, 0.0, 0.05, 6);
    let a2 = SweepAxis::linear(SweepParam::R { field: 1, device: 0 }, 0.0, 1e7, 11);
    let grid = sweep(&p, &a1, Some(&a2), Exec::Parallel).unwrap();
    for col in 0..grid.cols {
        assert_eq!(grid.choice(0, col, 0), Some(0));
        assert_eq!(grid.choice(0, col, 1), Some(0));
    }
    assert_eq!(grid, sweep(&p, &a1, Some(&a2), Exec::Sequential).unwrap());
    assert_eq!(grid.to_csv().lines().count(), 1 + 6 * 11 * 2);
}

#[test]
fn infeasible_cells_are_marked() {
    let mut p = two_by_two_instance();
    p.s = vec![8, 8];
    let axis = SweepAxis::linear(SweepParam::F { field: 0 }, 1.0, 2.0, 2);
    let grid = sweep(&p, &axis, None, Exec::Sequential).unwrap();
    assert!(grid.cells.iter().all(|c| c.result.is_ok()));
    p.s = vec![8, 0];
    let grid = sweep(&p, &axis, None, Exec::Sequential).unwrap();
    assert!(grid.cells.iter().all(|c| c.result.is_err()));
    assert!(grid.to_csv().contains("1,,field1,infeasible,\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn solve_matches_brute_force(seed in any::<u64>(), n in 0usize..=6, m in 1usize..=4) {
        let p = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), n, m);
        match (solve(&p), brute_force(&p)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.objective, b.objective);
                prop_assert_eq!(&a.assignment, &b.assignment);
                for (u, s) in a.used.iter().zip(&p.s) {
                    prop_assert!(*u <= *s as u128);
                }
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "solve {:?} vs brute force {:?}", a, b),
        }
    }

    #[test]
    fn argmin_scale_invariant(seed in any::<u64>(), n in 1usize..=6, m in 1usize..=4, k in 0.001f64..1000.0) {
        let p = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), n, m);
        let mut q = p.clone();
        q.c.iter_mut().flatten().for_each(|v| *v *= k);
        q.r.iter_mut().flatten().for_each(|v| *v *= k);
        if let (Ok(a), Ok(b)) = (solve(&p), solve(&q)) {
            prop_assert_eq!(&a.assignment, &b.assignment);
            prop_assert!((b.objective - k * a.objective).abs() <= 1e-9 * b.objective.abs().max(1.0));
        }
    }

    #[test]
    fn raising_recompute_never_attracts(seed in any::<u64>(), n in 1usize..=6, m in 2usize..=4, bump in 1.0f64..1e6) {
        let p = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), n, m);
        let Ok(before) = solve(&p) else { return Ok(()) };
        for i in 0..n {
            for j in 0..m {
                let mut q = p.clone();
                q.r[i][j] += bump;
                let after = solve(&q).unwrap();
                if before.assignment[i] != j {
                    prop_assert_ne!(after.assignment[i], j);
                    prop_assert_eq!(&after.assignment, &before.assignment);
                }
            }
        }
    }
}
