//! C ABI over the consensus library.
//!
//! Every fallible call returns a status code (`VCI_OK` on success) and
//! records a message retrievable through [`vci_last_error`] on failure.
//! Posteriors are opaque handles created by [`vci_posterior_read`] and
//! released with [`vci_posterior_free`]. Panics never unwind across the
//! boundary; they surface as `VCI_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use vci_core::config::RunConfig;
use vci_core::ot::Metric;
use vci_core::partition::Partition;
use vci_core::pipeline;
use vci_core::posterior::EmpiricalPartitionPosterior;
use vci_core::{io, Error};

/// Success.
pub const VCI_STATUS_OK: i32 = 0;
/// Invalid argument or configuration (mirrors CLI exit code 2).
pub const VCI_STATUS_CONFIG: i32 = 2;
/// Solver failure such as non-convergence (mirrors CLI exit code 3).
pub const VCI_STATUS_SOLVER: i32 = 3;
/// File system or parse failure (mirrors CLI exit code 4).
pub const VCI_STATUS_IO: i32 = 4;
/// A required pointer argument was null.
pub const VCI_STATUS_NULL_POINTER: i32 = 5;
/// A string argument was not valid UTF-8.
pub const VCI_STATUS_UTF8: i32 = 6;
/// The library panicked; the call had no effect.
pub const VCI_STATUS_PANIC: i32 = 7;

/// Ground metric selector for distance calls.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum VciMetric {
    VciMetricVoi = 0,
    VciMetricBinder = 1,
}

impl From<VciMetric> for Metric {
    fn from(m: VciMetric) -> Metric {
        match m {
            VciMetric::VciMetricVoi => Metric::Voi,
            VciMetric::VciMetricBinder => Metric::Binder,
        }
    }
}

/// Opaque empirical posterior over partitions.
pub struct VciPosterior {
    inner: EmpiricalPartitionPosterior,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> i32 {
    err.exit_code()
}

fn fail(err: Error) -> i32 {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

/// Runs `body`, translating panics into `VCI_STATUS_PANIC`.
fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            set_error(&format!("panic: {message}"));
            VCI_STATUS_PANIC
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, i32> {
    if ptr.is_null() {
        set_error("null path");
        return Err(VCI_STATUS_NULL_POINTER);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(VCI_STATUS_UTF8)
        }
    }
}

/// # Safety
/// `labels` must be null or point to `n` readable elements.
unsafe fn partition_arg(labels: *const u32, n: usize) -> Result<Partition, i32> {
    if labels.is_null() {
        set_error("null label array");
        return Err(VCI_STATUS_NULL_POINTER);
    }
    if n == 0 {
        set_error("empty label array");
        return Err(VCI_STATUS_CONFIG);
    }
    let slice = unsafe { std::slice::from_raw_parts(labels, n) };
    Partition::from_labels(slice).map_err(|e| fail(e))
}

fn write_out<T>(out: *mut T, value: T) -> i32 {
    if out.is_null() {
        set_error("null output pointer");
        return VCI_STATUS_NULL_POINTER;
    }
    unsafe { out.write(value) };
    VCI_STATUS_OK
}

/// Message from the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn vci_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Variation of information between two partitions given as label arrays of
/// length `n`. Writes the distance (in nats) to `out`.
///
/// # Safety
/// `a` and `b` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_voi(
    a: *const u32,
    b: *const u32,
    n: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        let (pa, pb) = match unsafe { (partition_arg(a, n), partition_arg(b, n)) } {
            (Ok(pa), Ok(pb)) => (pa, pb),
            (Err(code), _) | (_, Err(code)) => return code,
        };
        match vci_core::partition::voi(&pa, &pb) {
            Ok(d) => write_out(out, d),
            Err(e) => fail(e),
        }
    })
}

/// Binder loss between two partitions given as label arrays of length `n`.
///
/// # Safety
/// `a` and `b` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_binder(
    a: *const u32,
    b: *const u32,
    n: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        let (pa, pb) = match unsafe { (partition_arg(a, n), partition_arg(b, n)) } {
            (Ok(pa), Ok(pb)) => (pa, pb),
            (Err(code), _) | (_, Err(code)) => return code,
        };
        match vci_core::partition::binder(&pa, &pb) {
            Ok(d) => write_out(out, d),
            Err(e) => fail(e),
        }
    })
}

/// Entropy (nats) of the cluster-size distribution of one partition.
///
/// # Safety
/// `labels` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_partition_entropy(
    labels: *const u32,
    n: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| match unsafe { partition_arg(labels, n) } {
        Ok(p) => write_out(out, p.entropy()),
        Err(code) => code,
    })
}

/// Reads an empirical posterior file into a new handle written to `out`.
/// The caller owns the handle and must release it with `vci_posterior_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_posterior_read(
    path: *const c_char,
    out: *mut *mut VciPosterior,
) -> i32 {
    guarded(|| {
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(code) => return code,
        };
        match io::read_posterior(path) {
            Ok(inner) => {
                let handle = Box::into_raw(Box::new(VciPosterior { inner }));
                write_out(out, handle)
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a handle returned by `vci_posterior_read`. Null is a no-op.
///
/// # Safety
/// `posterior` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vci_posterior_free(posterior: *mut VciPosterior) {
    if !posterior.is_null() {
        drop(unsafe { Box::from_raw(posterior) });
    }
}

/// Number of support atoms, written to `out`.
///
/// # Safety
/// `posterior` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_posterior_num_atoms(
    posterior: *const VciPosterior,
    out: *mut usize,
) -> i32 {
    guarded(|| {
        if posterior.is_null() {
            set_error("null posterior handle");
            return VCI_STATUS_NULL_POINTER;
        }
        write_out(out, unsafe { &*posterior }.inner.len())
    })
}

/// Number of items each partition atom covers, written to `out`.
///
/// # Safety
/// `posterior` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_posterior_num_items(
    posterior: *const VciPosterior,
    out: *mut usize,
) -> i32 {
    guarded(|| {
        if posterior.is_null() {
            set_error("null posterior handle");
            return VCI_STATUS_NULL_POINTER;
        }
        write_out(out, unsafe { &*posterior }.inner.n())
    })
}

/// Copies atom `index` into caller-owned storage: its canonical labels into
/// `labels_out` (length `len`, which must equal the item count) and its
/// weight into `weight_out`.
///
/// # Safety
/// `posterior` must be a live handle; `labels_out` must hold `len` writable
/// elements; `weight_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_posterior_atom(
    posterior: *const VciPosterior,
    index: usize,
    labels_out: *mut u32,
    len: usize,
    weight_out: *mut f64,
) -> i32 {
    guarded(|| {
        if posterior.is_null() || labels_out.is_null() {
            set_error("null pointer argument");
            return VCI_STATUS_NULL_POINTER;
        }
        let inner = &unsafe { &*posterior }.inner;
        if index >= inner.len() {
            set_error(&format!(
                "atom index {index} out of range for {} atoms",
                inner.len()
            ));
            return VCI_STATUS_CONFIG;
        }
        let atom = &inner.support()[index];
        if len != atom.n() {
            set_error(&format!(
                "label buffer holds {len} items, partition has {}",
                atom.n()
            ));
            return VCI_STATUS_CONFIG;
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(labels_out, len) };
        dst.copy_from_slice(atom.labels());
        write_out(weight_out, inner.weights()[index])
    })
}

/// Expected ground-metric distance from the posterior to one fixed
/// partition of `n` labels, written to `out`.
///
/// # Safety
/// `posterior` must be a live handle; `labels` must point to `n` readable
/// elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_posterior_expected_distance(
    posterior: *const VciPosterior,
    labels: *const u32,
    n: usize,
    metric: VciMetric,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if posterior.is_null() {
            set_error("null posterior handle");
            return VCI_STATUS_NULL_POINTER;
        }
        let reference = match unsafe { partition_arg(labels, n) } {
            Ok(p) => p,
            Err(code) => return code,
        };
        let inner = &unsafe { &*posterior }.inner;
        let metric: Metric = metric.into();
        let mut total = 0.0;
        for (atom, weight) in inner.iter() {
            match metric.eval(atom, &reference) {
                Ok(d) => total += weight * d,
                Err(e) => return fail(e),
            }
        }
        write_out(out, total)
    })
}

/// Entropic Wasserstein distance between two posterior files under the
/// chosen ground metric. Writes the bare transport cost to
/// `transport_cost_out` and the regularized objective to `objective_out`.
///
/// # Safety
/// Both paths must be NUL-terminated strings; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vci_wasserstein_distance(
    path_a: *const c_char,
    path_b: *const c_char,
    metric: VciMetric,
    epsilon: f64,
    transport_cost_out: *mut f64,
    objective_out: *mut f64,
) -> i32 {
    guarded(|| {
        let a = match unsafe { path_arg(path_a) } {
            Ok(p) => p,
            Err(code) => return code,
        };
        let b = match unsafe { path_arg(path_b) } {
            Ok(p) => p,
            Err(code) => return code,
        };
        match pipeline::wasserstein_distance_files(a, b, metric.into(), epsilon) {
            Ok(result) => {
                let code = write_out(transport_cost_out, result.transport_cost);
                if code != VCI_STATUS_OK {
                    return code;
                }
                write_out(objective_out, result.objective)
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs the full sharded-consensus pipeline described by a JSON config
/// file; artifacts land in the config's output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vci_run_pipeline(config_path: *const c_char) -> i32 {
    guarded(|| {
        let path = match unsafe { path_arg(config_path) } {
            Ok(p) => p,
            Err(code) => return code,
        };
        let config = match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        match pipeline::run_pipeline(&config) {
            Ok(_) => VCI_STATUS_OK,
            Err(e) => fail(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c_path(path: &Path) -> CString {
        CString::new(path.to_str().unwrap()).unwrap()
    }

    fn write_posterior_file(dir: &Path, name: &str, body: &str) -> CString {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        c_path(&path)
    }

    #[test]
    fn voi_and_binder_hand_values() {
        let a = [0u32, 0, 1, 1];
        let b = [0u32, 1, 0, 1];
        let mut d = f64::NAN;
        let code = unsafe { vci_voi(a.as_ptr(), b.as_ptr(), 4, &mut d) };
        assert_eq!(code, VCI_STATUS_OK);
        assert!((d - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        let code = unsafe { vci_binder(a.as_ptr(), b.as_ptr(), 4, &mut d) };
        assert_eq!(code, VCI_STATUS_OK);
        assert!((d - 4.0 / 6.0).abs() < 1e-12);
        let code = unsafe { vci_partition_entropy(a.as_ptr(), 4, &mut d) };
        assert_eq!(code, VCI_STATUS_OK);
        assert!((d - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn null_and_missing_inputs_report_codes() {
        let mut d = 0.0;
        let code = unsafe { vci_voi(std::ptr::null(), std::ptr::null(), 3, &mut d) };
        assert_eq!(code, VCI_STATUS_NULL_POINTER);
        let message = unsafe { CStr::from_ptr(vci_last_error()) };
        assert!(!message.to_bytes().is_empty());

        let missing = CString::new("/nonexistent/posterior.txt").unwrap();
        let mut handle: *mut VciPosterior = std::ptr::null_mut();
        let code = unsafe { vci_posterior_read(missing.as_ptr(), &mut handle) };
        assert_eq!(code, VCI_STATUS_IO);
        assert!(handle.is_null());
    }

    #[test]
    fn posterior_round_trip_through_the_handle() {
        let dir = tempfile::tempdir().unwrap();
        let file = write_posterior_file(
            dir.path(),
            "post.txt",
            "n=4\n0.75;0,0,1,1\n0.25;0,1,2,3\n",
        );
        let mut handle: *mut VciPosterior = std::ptr::null_mut();
        assert_eq!(
            unsafe { vci_posterior_read(file.as_ptr(), &mut handle) },
            VCI_STATUS_OK
        );
        let mut atoms = 0usize;
        let mut items = 0usize;
        unsafe {
            assert_eq!(vci_posterior_num_atoms(handle, &mut atoms), VCI_STATUS_OK);
            assert_eq!(vci_posterior_num_items(handle, &mut items), VCI_STATUS_OK);
        }
        assert_eq!((atoms, items), (2, 4));

        let mut labels = [u32::MAX; 4];
        let mut weight = 0.0;
        assert_eq!(
            unsafe { vci_posterior_atom(handle, 0, labels.as_mut_ptr(), 4, &mut weight) },
            VCI_STATUS_OK
        );
        assert_eq!(labels, [0, 0, 1, 1]);
        assert!((weight - 0.75).abs() < 1e-12);
        assert_eq!(
            unsafe { vci_posterior_atom(handle, 2, labels.as_mut_ptr(), 4, &mut weight) },
            VCI_STATUS_CONFIG
        );

        let truth = [0u32, 0, 1, 1];
        let mut expected = f64::NAN;
        let code = unsafe {
            vci_posterior_expected_distance(
                handle,
                truth.as_ptr(),
                4,
                VciMetric::VciMetricVoi,
                &mut expected,
            )
        };
        assert_eq!(code, VCI_STATUS_OK);
        // 0.75 * 0 + 0.25 * voi([0,0,1,1], [0,1,2,3]) = 0.25 * ln 2.
        assert!((expected - 0.25 * 2.0f64.ln().abs()).abs() < 1e-12);

        unsafe { vci_posterior_free(handle) };
    }

    #[test]
    fn wasserstein_distance_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_posterior_file(dir.path(), "a.txt", "n=4\n1;0,0,1,1\n");
        let b = write_posterior_file(dir.path(), "b.txt", "n=4\n1;0,1,2,3\n");
        let (mut cost, mut objective) = (f64::NAN, f64::NAN);
        let code = unsafe {
            vci_wasserstein_distance(
                a.as_ptr(),
                b.as_ptr(),
                VciMetric::VciMetricVoi,
                0.05,
                &mut cost,
                &mut objective,
            )
        };
        assert_eq!(code, VCI_STATUS_OK);
        // Point masses force the coupling, so the cost is the ground distance.
        assert!((cost - 2.0f64.ln()).abs() < 1e-9);
        assert!(objective.is_finite());

        let code = unsafe {
            vci_wasserstein_distance(
                a.as_ptr(),
                a.as_ptr(),
                VciMetric::VciMetricVoi,
                0.05,
                &mut cost,
                &mut objective,
            )
        };
        assert_eq!(code, VCI_STATUS_OK);
        assert!(cost.abs() < 1e-9);
    }

    #[test]
    fn pipeline_runs_from_a_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.csv");
        let mut rows = String::new();
        let mut state = 9u64;
        for i in 0..24 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let jitter = (state >> 40) as f64 / (1u64 << 24) as f64;
            let center: f64 = if i % 2 == 0 { -4.0 } else { 4.0 };
            rows.push_str(&format!("{},{}\n", center + jitter, center - jitter));
        }
        std::fs::write(&data, rows).unwrap();
        let out = dir.path().join("run");
        let config = dir.path().join("run.json");
        std::fs::write(
            &config,
            serde_json::json!({
                "data": data,
                "shards": {"layout": "contiguous", "k": 2},
                "sampler": {"kind": "gaussian"},
                "chain": {"total_iters": 60, "burn_in": 30},
                "weights": [{"kind": "uniform"}],
                "seed": 5,
                "output": out,
                "workers": 1,
                "report": {"kind": "full"},
            })
            .to_string(),
        )
        .unwrap();
        let cfg = c_path(&config);
        assert_eq!(unsafe { vci_run_pipeline(cfg.as_ptr()) }, VCI_STATUS_OK);
        assert!(out.join("barycenter_uniform.posterior.txt").exists());
        assert!(out.join("report.csv").exists());

        let bogus = c_path(&dir.path().join("missing.json"));
        assert_eq!(unsafe { vci_run_pipeline(bogus.as_ptr()) }, VCI_STATUS_IO);
    }

    #[test]
    fn generated_header_declares_the_api() {
        let header = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vci_ffi.h"),
        )
        .unwrap();
        for symbol in [
            "vci_last_error",
            "vci_voi",
            "vci_binder",
            "vci_posterior_read",
            "vci_posterior_free",
            "vci_posterior_expected_distance",
            "vci_wasserstein_distance",
            "vci_run_pipeline",
            "VciPosterior",
            "VCI_STATUS_SOLVER",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
    }
}
