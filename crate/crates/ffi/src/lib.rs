//! C ABI over the corpusforge numeric routines: knapsack packing, pack
//! statistics, similarity scoring, quota rules, k-means and tile tokens.
//!
//! Conventions:
//! - every fallible call returns a [`CfStatus`]; on failure the message is
//!   available from [`cf_last_error`] on the same thread
//! - results too rich for a struct come back as opaque handles that must be
//!   released with the matching `*_free` function
//! - sample positions are zero-based indices into the caller's arrays

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corpusforge::pack::{self, PackPlan};
use corpusforge::select::{self, QuotaRules};
use corpusforge::similarity::{self, SimInput, SimilarityReport};
use corpusforge::{Category, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Oversize = 3,
    MissingVector = 4,
    Internal = 5,
    Panic = 6,
}

/// Opaque packing result.
pub struct CfPackPlan {
    plan: PackPlan,
}

/// Opaque similarity result.
pub struct CfSimilarityReport {
    report: SimilarityReport,
    best_index: Vec<usize>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfPackStats {
    pub count: usize,
    pub fill_mean: f64,
    pub fill_std: f64,
    pub max_len_std: f64,
    pub efficiency: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> CfStatus {
    match err {
        Error::Oversize { .. } => CfStatus::Oversize,
        Error::MissingVector(_) => CfStatus::MissingVector,
        e if e.is_validation() => CfStatus::InvalidArgument,
        _ => CfStatus::Internal,
    }
}

/// Run `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(e)) => {
            let status = status_of(&e);
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("panic inside corpusforge".into());
            CfStatus::Panic
        }
    }
}

fn null(name: &str) -> Error {
    Error::InvalidArgument(format!("{name} is null"))
}

/// # Safety
/// `ptr` must be null (only when `len` is 0) or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Error> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains a nul byte"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

unsafe fn pack_with(
    lengths: *const u64,
    n: usize,
    out: *mut *mut CfPackPlan,
    run: impl FnOnce(&[u64]) -> Result<PackPlan, Error>,
) -> CfStatus {
    if out.is_null() {
        set_error("out is null".into());
        return CfStatus::NullPointer;
    }
    *out = ptr::null_mut();
    guard(|| {
        let lengths = slice(lengths, n, "lengths")?;
        let mut plan = run(lengths)?;
        plan.stats = pack::pack_stats(&plan).ok();
        *out = Box::into_raw(Box::new(CfPackPlan { plan }));
        Ok(())
    })
}

/// Balance-aware greedy knapsack packing.
///
/// # Safety
/// `lengths` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_pack_balanced(
    lengths: *const u64,
    n: usize,
    capacity: u64,
    delta: usize,
    out: *mut *mut CfPackPlan,
) -> CfStatus {
    pack_with(lengths, n, out, |l| pack::balanced_knapsack(l, capacity, delta))
}

/// Sequential-fill greedy packing.
///
/// # Safety
/// As for [`cf_pack_balanced`].
#[no_mangle]
pub unsafe extern "C" fn cf_pack_naive_greedy(
    lengths: *const u64,
    n: usize,
    capacity: u64,
    out: *mut *mut CfPackPlan,
) -> CfStatus {
    pack_with(lengths, n, out, |l| pack::naive_greedy_knapsack(l, capacity))
}

/// Shortest-pack-first packing.
///
/// # Safety
/// As for [`cf_pack_balanced`].
#[no_mangle]
pub unsafe extern "C" fn cf_pack_spfhp(
    lengths: *const u64,
    n: usize,
    capacity: u64,
    out: *mut *mut CfPackPlan,
) -> CfStatus {
    pack_with(lengths, n, out, |l| pack::spfhp(l, capacity))
}

/// Number of knapsacks, or 0 for null.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_pack_plan_len(plan: *const CfPackPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.plan.knapsacks.len())
}

/// Number of samples in knapsack `k`, or 0 when out of range.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_pack_plan_knapsack_len(plan: *const CfPackPlan, k: usize) -> usize {
    plan.as_ref().and_then(|p| p.plan.knapsacks.get(k)).map_or(0, Vec::len)
}

/// Copy the sample indices of knapsack `k` (in placement order) into
/// `out`, which must hold `cap` entries, at least the knapsack length.
///
/// # Safety
/// `plan` must be a live handle; `out` must be valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn cf_pack_plan_knapsack(
    plan: *const CfPackPlan,
    k: usize,
    out: *mut usize,
    cap: usize,
) -> CfStatus {
    let Some(plan) = plan.as_ref() else {
        set_error("plan is null".into());
        return CfStatus::NullPointer;
    };
    guard(|| {
        let bin = plan
            .plan
            .knapsacks
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("knapsack {k} out of range")))?;
        if cap < bin.len() {
            return Err(Error::InvalidArgument(format!("buffer holds {cap}, knapsack has {}", bin.len())));
        }
        if out.is_null() && !bin.is_empty() {
            return Err(null("out"));
        }
        for (i, e) in bin.iter().enumerate() {
            *out.add(i) = e.index;
        }
        Ok(())
    })
}

/// Trailing empty knapsacks removed from a balanced plan.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_pack_plan_dropped_empty(plan: *const CfPackPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.plan.dropped_empty)
}

/// Balance statistics; fails for an empty plan.
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_pack_plan_stats(plan: *const CfPackPlan, out: *mut CfPackStats) -> CfStatus {
    let (Some(plan), false) = (plan.as_ref(), out.is_null()) else {
        set_error("plan or out is null".into());
        return CfStatus::NullPointer;
    };
    guard(|| {
        let s = pack::pack_stats(&plan.plan)?;
        *out = CfPackStats {
            count: s.count,
            fill_mean: s.fill_mean,
            fill_std: s.fill_std,
            max_len_std: s.max_len_std,
            efficiency: s.efficiency,
        };
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_pack_plan_free(plan: *mut CfPackPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

fn rows<'a>(ids: &'a [String], img: &'a [f32], txt: &'a [f32], count: usize, idim: usize, tdim: usize) -> Vec<SimInput<'a>> {
    (0..count)
        .map(|i| SimInput {
            id: &ids[i],
            image: &img[i * idim..(i + 1) * idim],
            text: &txt[i * tdim..(i + 1) * tdim],
        })
        .collect()
}

/// Similarity of `n` new samples against `m` pool samples. Vectors are
/// row-major: `new_image` is `n * image_dim` floats, and so on.
///
/// # Safety
/// Every array must hold the stated number of floats; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cf_similarity_score(
    new_image: *const f32,
    new_text: *const f32,
    n: usize,
    pool_image: *const f32,
    pool_text: *const f32,
    m: usize,
    image_dim: usize,
    text_dim: usize,
    dedup_threshold: f64,
    out: *mut *mut CfSimilarityReport,
) -> CfStatus {
    if out.is_null() {
        set_error("out is null".into());
        return CfStatus::NullPointer;
    }
    *out = ptr::null_mut();
    guard(|| {
        if image_dim == 0 || text_dim == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let ni = slice(new_image, n * image_dim, "new_image")?;
        let nt = slice(new_text, n * text_dim, "new_text")?;
        let pi = slice(pool_image, m * image_dim, "pool_image")?;
        let pt = slice(pool_text, m * text_dim, "pool_text")?;
        let ids: Vec<String> = (0..n.max(m)).map(|i| i.to_string()).collect();
        let new_in = rows(&ids, ni, nt, n, image_dim, text_dim);
        let pool_in = rows(&ids, pi, pt, m, image_dim, text_dim);
        let report = similarity::similarity_score("ffi", Category::GeneralVqa, &new_in, &pool_in, dedup_threshold)?;
        let best_index = report
            .per_sample
            .iter()
            .map(|s| s.best_pool_id.parse().expect("pool ids are indices"))
            .collect();
        *out = Box::into_raw(Box::new(CfSimilarityReport { report, best_index }));
        Ok(())
    })
}

/// Mean best product, or NaN for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_similarity_report_score(report: *const CfSimilarityReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.score)
}

/// Largest per-sample product, or NaN for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_similarity_report_max_term(report: *const CfSimilarityReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.max_term)
}

/// Number of new samples covered.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_similarity_report_len(report: *const CfSimilarityReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.per_sample.len())
}

/// Per new sample: best product, index of the best pool sample, and
/// whether it reaches the dedup threshold. Any output pointer may be null
/// to skip it; non-null ones must hold `cap` >= report length entries.
///
/// # Safety
/// `report` must be a live handle; outputs valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn cf_similarity_report_terms(
    report: *const CfSimilarityReport,
    products: *mut f64,
    best_index: *mut usize,
    duplicate: *mut bool,
    cap: usize,
) -> CfStatus {
    let Some(r) = report.as_ref() else {
        set_error("report is null".into());
        return CfStatus::NullPointer;
    };
    guard(|| {
        let n = r.report.per_sample.len();
        if cap < n {
            return Err(Error::InvalidArgument(format!("buffer holds {cap}, report has {n}")));
        }
        for (i, s) in r.report.per_sample.iter().enumerate() {
            if !products.is_null() {
                *products.add(i) = s.product;
            }
            if !best_index.is_null() {
                *best_index.add(i) = r.best_index[i];
            }
            if !duplicate.is_null() {
                *duplicate.add(i) = s.product >= r.report.dedup_threshold;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_similarity_report_free(report: *mut CfSimilarityReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Quota under the default rules. `override_quota` is used when
/// `has_override` is true.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_quota_for_source(
    size: u64,
    has_override: bool,
    override_quota: u64,
    out: *mut u64,
) -> CfStatus {
    if out.is_null() {
        set_error("out is null".into());
        return CfStatus::NullPointer;
    }
    guard(|| {
        let over = has_override.then_some(override_quota);
        *out = select::quota_for_source(size, &QuotaRules::default(), over)?;
        Ok(())
    })
}

/// Seeded k-means over `n` row-major points of `dim` values. Writes one
/// cluster index per point and the final objective.
///
/// # Safety
/// `points` must hold `n * dim` values, `assignments` `n` entries;
/// `objective` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_kmeans(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    assignments: *mut usize,
    objective: *mut f64,
) -> CfStatus {
    if assignments.is_null() || objective.is_null() {
        set_error("assignments or objective is null".into());
        return CfStatus::NullPointer;
    }
    guard(|| {
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        let flat = slice(points, n * dim, "points")?;
        let rows: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        let res = select::kmeans(&rows, k, seed, max_iter, tol)?;
        for (i, &c) in res.assignments.iter().enumerate() {
            *assignments.add(i) = c;
        }
        *objective = res.objective;
        Ok(())
    })
}

/// Token cost of one image of the given size under tiling.
#[no_mangle]
pub extern "C" fn cf_image_tokens(width: u32, height: u32, max_tiles: u32) -> u64 {
    pack::estimate_image_tokens(pack::select_tile_grid(width, height, max_tiles))
}
