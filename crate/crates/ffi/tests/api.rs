use std::ffi::{CStr, CString};
use std::ptr;

use frea_core::frea_unet::{checkpoint, FreaUnetModel, ModelConfig};
use frea_core::image_ops::{denormalize, normalize, ImageFile};
use frea_ffi::*;

fn last_error() -> String {
    let p = frea_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn phantom(size: usize) -> Vec<f64> {
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            let c = size as f64 / 2.0;
            let r = ((y - c).powi(2) + (x - c).powi(2)).sqrt();
            if r < size as f64 * 0.35 {
                100.0 + 40.0 * (x / 5.0).sin()
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(frea_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn predict_matches_the_rust_model() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { frea_model_new_desk(7, &mut handle) }, FreaStatus::Ok);
    assert!(frea_last_error_message().is_null());
    let size = unsafe { frea_model_input_size(handle) };
    assert_eq!(size, 64);

    let mut reference = FreaUnetModel::build(ModelConfig { rng_seed: 7, ..ModelConfig::desk() }).unwrap();
    reference.eval();
    assert_eq!(unsafe { frea_model_param_count(handle) }, reference.param_count());

    let mr = phantom(size);
    let mut out = vec![f64::NAN; size * size];
    let st = unsafe { frea_model_predict(handle, mr.as_ptr(), size, 255.0, out.as_mut_ptr()) };
    assert_eq!(st, FreaStatus::Ok);

    let img = ImageFile::new(size, size, 1, 255.0, mr).unwrap();
    let expect = reference.forward(&normalize(&img).unwrap()).unwrap();
    let expect = denormalize(&expect.final_out, 255.0).unwrap();
    assert_eq!(out, expect.pixels);
    unsafe { frea_model_free(handle) };
}

#[test]
fn checkpoint_round_trip_through_file_and_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut a = ptr::null_mut();
    assert_eq!(unsafe { frea_model_new_desk(3, &mut a) }, FreaStatus::Ok);
    assert_eq!(unsafe { frea_model_save(a, cpath.as_ptr()) }, FreaStatus::Ok);

    let mut b = ptr::null_mut();
    assert_eq!(unsafe { frea_model_load(cpath.as_ptr(), &mut b) }, FreaStatus::Ok);
    let bytes = std::fs::read(&path).unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { frea_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut c) }, FreaStatus::Ok);

    let mr = phantom(64);
    let mut outs = [vec![0.0; 64 * 64], vec![0.0; 64 * 64], vec![0.0; 64 * 64]];
    for (h, o) in [a, b, c].into_iter().zip(outs.iter_mut()) {
        assert_eq!(unsafe { frea_model_predict(h, mr.as_ptr(), 64, 200.0, o.as_mut_ptr()) }, FreaStatus::Ok);
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);

    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.param_count(), unsafe { frea_model_param_count(b) });
    for h in [a, b, c] {
        unsafe { frea_model_free(h) };
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { frea_model_new_desk(0, ptr::null_mut()) }, FreaStatus::NullPointer);
    assert!(last_error().contains("out"));

    let missing = CString::new("/nonexistent/dir/x.ckpt").unwrap();
    assert_eq!(unsafe { frea_model_load(missing.as_ptr(), &mut h) }, FreaStatus::Io);
    assert!(h.is_null());

    let junk = b"not a checkpoint";
    assert_eq!(unsafe { frea_model_from_bytes(junk.as_ptr(), junk.len(), &mut h) }, FreaStatus::Format);
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { frea_model_new_desk(0, &mut h) }, FreaStatus::Ok);
    let mr = vec![0.0; 32 * 32];
    let mut out = vec![0.0; 32 * 32];
    let st = unsafe { frea_model_predict(h, mr.as_ptr(), 32, 255.0, out.as_mut_ptr()) };
    assert_eq!(st, FreaStatus::Shape);
    let st = unsafe { frea_model_predict(h, ptr::null(), 64, 255.0, out.as_mut_ptr()) };
    assert_eq!(st, FreaStatus::NullPointer);
    let st = unsafe { frea_model_predict(ptr::null_mut(), mr.as_ptr(), 64, 255.0, out.as_mut_ptr()) };
    assert_eq!(st, FreaStatus::NullPointer);
    unsafe { frea_model_free(h) };
    unsafe { frea_model_free(ptr::null_mut()) };

    assert_eq!(unsafe { frea_model_input_size(ptr::null()) }, 0);
    assert_eq!(unsafe { frea_model_param_count(ptr::null()) }, 0);

    let img = [1.0; 4];
    let mut lo = [0.0; 4];
    let mut hi = [0.0; 4];
    let st = unsafe { frea_freq_split(img.as_ptr(), 0, 4, 3.0, 13, lo.as_mut_ptr(), hi.as_mut_ptr()) };
    assert_eq!(st, FreaStatus::InvalidArgument);
    let st = unsafe { frea_freq_split(img.as_ptr(), 2, 2, 3.0, 4, lo.as_mut_ptr(), hi.as_mut_ptr()) };
    assert_ne!(st, FreaStatus::Ok);

    let zeros = [0.0; 16];
    let mut m = FreaMetrics::default();
    let st = unsafe { frea_metrics(zeros.as_ptr(), zeros.as_ptr(), 4, 4, 0.01, &mut m) };
    assert_eq!(st, FreaStatus::EmptyMask);

    // A later success clears the message.
    assert_eq!(unsafe { frea_model_new_desk(0, &mut h) }, FreaStatus::Ok);
    assert!(frea_last_error_message().is_null());
    unsafe { frea_model_free(h) };
}

#[test]
fn freq_split_bands_sum_to_the_input() {
    let (h, w) = (20, 17);
    let img: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 23) as f64 / 7.0).collect();
    let mut lo = vec![0.0; h * w];
    let mut hi = vec![0.0; h * w];
    let st = unsafe { frea_freq_split(img.as_ptr(), h, w, 3.0, 13, lo.as_mut_ptr(), hi.as_mut_ptr()) };
    assert_eq!(st, FreaStatus::Ok);
    for i in 0..h * w {
        assert!((lo[i] + hi[i] - img[i]).abs() < 1e-12);
    }
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    let spread = |v: &[f64]| v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    assert!(spread(&lo) < spread(&img));
}

#[test]
fn metrics_on_hand_examples() {
    let real = phantom(16);
    let mut m = FreaMetrics::default();
    assert_eq!(unsafe { frea_metrics(real.as_ptr(), real.as_ptr(), 16, 16, 0.01, &mut m) }, FreaStatus::Ok);
    assert_eq!(m.mae, 0.0);
    assert_eq!(m.psnr, f64::INFINITY);
    assert!((m.ssim - 1.0).abs() < 1e-12);

    let syn: Vec<f64> = real.iter().map(|v| v + 2.0).collect();
    assert_eq!(unsafe { frea_metrics(real.as_ptr(), syn.as_ptr(), 16, 16, 0.01, &mut m) }, FreaStatus::Ok);
    assert!((m.mae - 2.0).abs() < 1e-12);
    let peak = syn.iter().cloned().fold(0.0, f64::max);
    assert!((m.psnr - 10.0 * (peak * peak / 4.0).log10()).abs() < 1e-9);
    assert!(m.ssim < 1.0);
}
