//! Exercises the C ABI end to end from Rust: handle lifecycle, the
//! compress/reconstruct loop, archive round-trips, and error codes.

use std::ffi::{CStr, CString};
use std::ptr;

use mrtensor_capi::*;

fn ok(code: i32) {
    assert_eq!(code, MrtStatus::Ok as i32, "unexpected status {code}");
}

#[test]
fn compress_reconstruct_roundtrip_via_abi() {
    // A rank-1 16x16 matrix compresses exactly at uniform rank 1.
    let n = 16u64;
    let shape = [n, n];
    let mut data = Vec::with_capacity(256);
    for i in 0..16 {
        for j in 0..16 {
            data.push(((i + 1) as f64) * 0.25 * ((j + 2) as f64));
        }
    }

    unsafe {
        let mut tensor: *mut MrtTensor = ptr::null_mut();
        ok(mrt_tensor_create(2, shape.as_ptr(), data.as_ptr(), &mut tensor));

        let mut order = 0u64;
        ok(mrt_tensor_order(tensor, &mut order));
        assert_eq!(order, 2);
        let mut got_shape = [0u64; 2];
        ok(mrt_tensor_shape(tensor, got_shape.as_mut_ptr()));
        assert_eq!(got_shape, shape);

        // Rank 1 at the finest level represents a rank-1 matrix exactly.
        let ranks = [0u64, 0, 0, 0, 1];
        let opts = MrtCompressOptions {
            base_format: 0,
            batch_size: 2,
            levels: -1,
            ranks: ranks.as_ptr(),
            ranks_len: ranks.len() as u64,
            uniform_rank: 0,
            max_iter: 4,
            seed: 0,
            restructured: 0,
        };
        let mut ms: *mut MrtMs = ptr::null_mut();
        ok(mrt_ms_compress(tensor, &opts, &mut ms));

        let mut levels = 0u64;
        ok(mrt_ms_levels(ms, &mut levels));
        assert_eq!(levels, 4);
        let mut ratio = 0.0f64;
        ok(mrt_ms_compression_ratio(ms, &mut ratio));
        assert!(ratio > 1.0);
        let mut margin = 0.0f64;
        ok(mrt_ms_stability_margin(ms, &mut margin));
        assert!(margin.is_finite());

        let mut err = f64::NAN;
        ok(mrt_ms_relative_error(ms, tensor, &mut err));
        assert!(err <= 1e-10, "rank-1 input should compress losslessly: {err}");

        // Uniform-rank path: lossy but well-formed.
        let uniform = MrtCompressOptions {
            base_format: 0,
            batch_size: 2,
            levels: -1,
            ranks: ptr::null(),
            ranks_len: 0,
            uniform_rank: 1,
            max_iter: 4,
            seed: 0,
            restructured: 0,
        };
        let mut ms_uniform: *mut MrtMs = ptr::null_mut();
        ok(mrt_ms_compress(tensor, &uniform, &mut ms_uniform));
        let mut uniform_err = f64::NAN;
        ok(mrt_ms_relative_error(ms_uniform, tensor, &mut uniform_err));
        assert!(uniform_err.is_finite() && uniform_err < 0.5);
        mrt_ms_free(ms_uniform);

        let mut back: *mut MrtTensor = ptr::null_mut();
        ok(mrt_ms_reconstruct(ms, &mut back));
        let mut len = 0u64;
        ok(mrt_tensor_len(back, &mut len));
        assert_eq!(len, 256);
        let mut out = vec![0.0f64; 256];
        ok(mrt_tensor_copy_data(back, out.as_mut_ptr(), len));
        for (a, b) in data.iter().zip(&out) {
            assert!((a - b).abs() <= 1e-10);
        }

        mrt_tensor_free(back);
        mrt_ms_free(ms);
        mrt_tensor_free(tensor);
    }
}

#[test]
fn file_roundtrip_via_abi() {
    let dir = std::env::temp_dir().join(format!("mrt_capi_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let tensor_path = CString::new(dir.join("t.mrt0").to_str().unwrap()).unwrap();
    let archive_path = CString::new(dir.join("t.mrtc").to_str().unwrap()).unwrap();

    unsafe {
        let shape = [4u64, 4];
        let data: Vec<f64> = (0..16).map(|x| x as f64).collect();
        let mut tensor: *mut MrtTensor = ptr::null_mut();
        ok(mrt_tensor_create(2, shape.as_ptr(), data.as_ptr(), &mut tensor));
        ok(mrt_tensor_write(tensor, tensor_path.as_ptr()));

        let mut loaded: *mut MrtTensor = ptr::null_mut();
        ok(mrt_tensor_read(tensor_path.as_ptr(), &mut loaded));
        let mut out = vec![0.0f64; 16];
        ok(mrt_tensor_copy_data(loaded, out.as_mut_ptr(), 16));
        assert_eq!(out, data);

        let opts = MrtCompressOptions {
            base_format: 0,
            batch_size: 2,
            levels: 2,
            ranks: [0u64, 2, 4].as_ptr(),
            ranks_len: 3,
            uniform_rank: 0,
            max_iter: 3,
            seed: 1,
            restructured: 1,
        };
        let mut ms: *mut MrtMs = ptr::null_mut();
        ok(mrt_ms_compress(tensor, &opts, &mut ms));
        ok(mrt_ms_write(ms, archive_path.as_ptr()));

        let mut loaded_ms: *mut MrtMs = ptr::null_mut();
        ok(mrt_ms_read(archive_path.as_ptr(), &mut loaded_ms));
        let mut p1 = 0u64;
        let mut p2 = 0u64;
        ok(mrt_ms_parameter_count(ms, &mut p1));
        ok(mrt_ms_parameter_count(loaded_ms, &mut p2));
        assert_eq!(p1, p2);

        mrt_ms_free(loaded_ms);
        mrt_ms_free(ms);
        mrt_tensor_free(loaded);
        mrt_tensor_free(tensor);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        // Null arguments.
        let mut out: *mut MrtTensor = ptr::null_mut();
        let code = mrt_tensor_create(2, ptr::null(), ptr::null(), &mut out);
        assert_eq!(code, MrtStatus::NullArgument as i32);

        // Shape/data mismatch surfaces as a shape error with a message.
        let shape = [3u64, 0];
        let data = [0.0f64; 0];
        let code = mrt_tensor_create(2, shape.as_ptr(), data.as_ptr(), &mut out);
        assert_eq!(code, MrtStatus::Shape as i32);
        let msg = CStr::from_ptr(mrt_last_error_message());
        assert!(!msg.to_bytes().is_empty());

        // Missing file is an io error; bad container bytes are distinct.
        let missing = CString::new("/nonexistent/path/x.mrt0").unwrap();
        let code = mrt_tensor_read(missing.as_ptr(), &mut out);
        assert_eq!(code, MrtStatus::Io as i32);

        let dir = std::env::temp_dir().join(format!("mrt_capi_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("bad.mrt0");
        std::fs::write(&bad, b"not a tensor at all").unwrap();
        let bad_c = CString::new(bad.to_str().unwrap()).unwrap();
        let code = mrt_tensor_read(bad_c.as_ptr(), &mut out);
        assert_eq!(code, MrtStatus::Container as i32);
        std::fs::remove_dir_all(&dir).ok();

        // Divisibility violation from compression options.
        let shape = [6u64, 6];
        let data = [1.0f64; 36];
        let mut tensor: *mut MrtTensor = ptr::null_mut();
        ok(mrt_tensor_create(2, shape.as_ptr(), data.as_ptr(), &mut tensor));
        let opts = MrtCompressOptions {
            base_format: 0,
            batch_size: 2,
            levels: 3,
            ranks: ptr::null(),
            ranks_len: 0,
            uniform_rank: 1,
            max_iter: 1,
            seed: 0,
            restructured: 0,
        };
        let mut ms: *mut MrtMs = ptr::null_mut();
        let code = mrt_ms_compress(tensor, &opts, &mut ms);
        assert_eq!(code, MrtStatus::Divisibility as i32);
        mrt_tensor_free(tensor);

        // Freeing null handles is a no-op.
        mrt_tensor_free(ptr::null_mut());
        mrt_ms_free(ptr::null_mut());
    }
}
