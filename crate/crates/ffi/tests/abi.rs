use std::ffi::CStr;
use std::ptr;

use corpusforge::pack::{self, PackPlan};
use corpusforge::select::{self, QuotaRules};
use corpusforge::similarity::{self, SimInput};
use corpusforge::Category;
use corpusforge_ffi::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    let p = cf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn bins(plan: *const CfPackPlan) -> Vec<Vec<usize>> {
    unsafe {
        (0..cf_pack_plan_len(plan))
            .map(|k| {
                let mut buf = vec![usize::MAX; cf_pack_plan_knapsack_len(plan, k)];
                assert_eq!(cf_pack_plan_knapsack(plan, k, buf.as_mut_ptr(), buf.len()), CfStatus::Ok);
                buf
            })
            .collect()
    }
}

fn check_plan(status: CfStatus, plan: *mut CfPackPlan, native: &PackPlan) {
    assert_eq!(status, CfStatus::Ok);
    assert_eq!(bins(plan), native.index_bins());
    unsafe {
        assert_eq!(cf_pack_plan_dropped_empty(plan), native.dropped_empty);
        let mut stats = CfPackStats::default();
        assert_eq!(cf_pack_plan_stats(plan, &mut stats), CfStatus::Ok);
        let s = pack::pack_stats(native).unwrap();
        assert_eq!(stats.count, s.count);
        assert_eq!(stats.fill_std.to_bits(), s.fill_std.to_bits());
        assert_eq!(stats.max_len_std.to_bits(), s.max_len_std.to_bits());
        assert_eq!(stats.efficiency.to_bits(), s.efficiency.to_bits());
        cf_pack_plan_free(plan);
    }
}

#[test]
fn packing_matches_native_on_fuzzed_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let capacity = rng.random_range(64..4096u64);
        let n = rng.random_range(1..300);
        let lengths: Vec<u64> = (0..n).map(|_| rng.random_range(1..=capacity)).collect();
        let delta = rng.random_range(0..30);
        unsafe {
            let mut plan = ptr::null_mut();
            let st = cf_pack_balanced(lengths.as_ptr(), n, capacity, delta, &mut plan);
            check_plan(st, plan, &pack::balanced_knapsack(&lengths, capacity, delta).unwrap());

            let st = cf_pack_naive_greedy(lengths.as_ptr(), n, capacity, &mut plan);
            check_plan(st, plan, &pack::naive_greedy_knapsack(&lengths, capacity).unwrap());

            let st = cf_pack_spfhp(lengths.as_ptr(), n, capacity, &mut plan);
            check_plan(st, plan, &pack::spfhp(&lengths, capacity).unwrap());
        }
    }
}

fn vecs(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f32> {
    (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

#[test]
fn similarity_matches_native_on_fuzzed_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (n, m) = (rng.random_range(1..20), rng.random_range(1..30));
        let (idim, tdim) = (rng.random_range(1..12), rng.random_range(1..12));
        let (ni, nt) = (vecs(&mut rng, n, idim), vecs(&mut rng, n, tdim));
        let (pi, pt) = (vecs(&mut rng, m, idim), vecs(&mut rng, m, tdim));
        let threshold = rng.random_range(0.0..1.0);

        let ids: Vec<String> = (0..n.max(m)).map(|i| format!("x{i}")).collect();
        let sim = |img: &'_ [f32], txt: &'_ [f32], count: usize| -> Vec<(String, Vec<f32>, Vec<f32>)> {
            (0..count)
                .map(|i| (ids[i].clone(), img[i * idim..(i + 1) * idim].to_vec(), txt[i * tdim..(i + 1) * tdim].to_vec()))
                .collect()
        };
        let (new_owned, pool_owned) = (sim(&ni, &nt, n), sim(&pi, &pt, m));
        let new_in: Vec<SimInput<'_>> =
            new_owned.iter().map(|(id, a, b)| SimInput { id, image: a, text: b }).collect();
        let pool_in: Vec<SimInput<'_>> =
            pool_owned.iter().map(|(id, a, b)| SimInput { id, image: a, text: b }).collect();
        let native = similarity::similarity_score("t", Category::GeneralVqa, &new_in, &pool_in, threshold).unwrap();

        unsafe {
            let mut rep = ptr::null_mut();
            let st = cf_similarity_score(
                ni.as_ptr(),
                nt.as_ptr(),
                n,
                pi.as_ptr(),
                pt.as_ptr(),
                m,
                idim,
                tdim,
                threshold,
                &mut rep,
            );
            assert_eq!(st, CfStatus::Ok);
            assert!((cf_similarity_report_score(rep) - native.score).abs() < 1e-9);
            assert!((cf_similarity_report_max_term(rep) - native.max_term).abs() < 1e-9);
            assert_eq!(cf_similarity_report_len(rep), n);
            let mut products = vec![0.0; n];
            let mut best = vec![0usize; n];
            let mut dup = vec![false; n];
            let st = cf_similarity_report_terms(rep, products.as_mut_ptr(), best.as_mut_ptr(), dup.as_mut_ptr(), n);
            assert_eq!(st, CfStatus::Ok);
            for (i, s) in native.per_sample.iter().enumerate() {
                assert!((products[i] - s.product).abs() < 1e-9);
                assert_eq!(ids[best[i]], s.best_pool_id);
                assert_eq!(dup[i], native.duplicates.contains(&s.sample_id));
            }
            cf_similarity_report_free(rep);
        }
    }
}

#[test]
fn quota_kmeans_and_tiles_match_native() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let size = rng.random_range(0..2_000_000u64);
        let mut q = 0;
        assert_eq!(unsafe { cf_quota_for_source(size, false, 0, &mut q) }, CfStatus::Ok);
        assert_eq!(q, select::quota_for_source(size, &QuotaRules::default(), None).unwrap());

        let (w, h) = (rng.random_range(1..4000), rng.random_range(1..4000));
        assert_eq!(
            cf_image_tokens(w, h, 6),
            pack::estimate_image_tokens(pack::select_tile_grid(w, h, 6))
        );
    }

    let (n, dim, k) = (60, 3, 4);
    let flat: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-5.0..5.0)).collect();
    let rows: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
    let native = select::kmeans(&rows, k, 42, 50, 1e-9).unwrap();
    let mut assign = vec![0usize; n];
    let mut obj = 0.0;
    let st = unsafe { cf_kmeans(flat.as_ptr(), n, dim, k, 42, 50, 1e-9, assign.as_mut_ptr(), &mut obj) };
    assert_eq!(st, CfStatus::Ok);
    assert_eq!(assign, native.assignments);
    assert_eq!(obj.to_bits(), native.objective.to_bits());
}

#[test]
fn errors_are_reported_with_status_and_message() {
    unsafe {
        let mut plan = ptr::null_mut();
        assert_eq!(cf_pack_balanced(ptr::null(), 3, 100, 0, &mut plan), CfStatus::InvalidArgument);
        assert!(plan.is_null());
        assert!(last_error().contains("lengths"));

        let lengths = [10u64, 500, 20];
        assert_eq!(cf_pack_spfhp(lengths.as_ptr(), 3, 100, &mut plan), CfStatus::Oversize);
        assert!(plan.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(cf_pack_naive_greedy(lengths.as_ptr(), 3, 1000, ptr::null_mut()), CfStatus::NullPointer);

        assert_eq!(cf_pack_naive_greedy(lengths.as_ptr(), 3, 1000, &mut plan), CfStatus::Ok);
        let mut small = [0usize; 1];
        assert_eq!(cf_pack_plan_knapsack(plan, 0, small.as_mut_ptr(), 1), CfStatus::InvalidArgument);
        assert_eq!(cf_pack_plan_knapsack(plan, 9, small.as_mut_ptr(), 1), CfStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        cf_pack_plan_free(plan);

        assert_eq!(cf_pack_plan_len(ptr::null()), 0);
        assert!(cf_similarity_report_score(ptr::null()).is_nan());
        cf_pack_plan_free(ptr::null_mut());
        cf_similarity_report_free(ptr::null_mut());

        let v = [1.0f32, 0.0];
        let mut rep = ptr::null_mut();
        let st = cf_similarity_score(v.as_ptr(), v.as_ptr(), 0, v.as_ptr(), v.as_ptr(), 1, 2, 2, 0.9, &mut rep);
        assert_eq!(st, CfStatus::InvalidArgument);
        assert!(rep.is_null());

        let mut q = 0;
        assert_eq!(cf_quota_for_source(10, true, 3, &mut q), CfStatus::Ok);
        assert_eq!(q, 3);
    }
    assert!(!unsafe { CStr::from_ptr(cf_version()) }.to_string_lossy().is_empty());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/corpusforge.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
