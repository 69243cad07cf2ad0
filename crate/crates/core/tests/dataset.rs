use std::path::Path;

use proptest::prelude::*;

use semrecon::io::{read_dataset, write_dataset, DatasetEntry, MAGIC};
use semrecon::metrics::psnr;
use semrecon::mri::{
    forward_model, generate_mask, zero_filled, AcquisitionData, AcquisitionMeta, ComplexImage,
    SamplingMask,
};
use semrecon::phantom::{make_phantom, simulate_coils, PhantomKind, PhantomSpec};
use semrecon::recon::{reconstruct, ReconConfig, ReconInputs};
use semrecon::Error;

fn entry(id: &str, size: usize, coils: usize, seed: u64, with_truth: bool) -> DatasetEntry {
    let truth = make_phantom(&PhantomSpec::new(PhantomKind::RandomEllipses, size, seed)).unwrap();
    let c = simulate_coils(coils, size, size).unwrap();
    let mask = generate_mask(size, size, 4.0, 4, seed).unwrap();
    let acquisition = AcquisitionData::simulate(&truth, &c, &mask, 0.01, seed).unwrap();
    DatasetEntry {
        id: id.into(),
        image: with_truth.then_some(truth),
        acquisition,
        meta: AcquisitionMeta {
            acceleration: 4.0,
            acs_lines: 4,
            noise_sigma: 0.01,
            seed,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn round_trip_is_bit_identical(size in 16usize..40, coils in 1usize..4, seed in any::<u64>(), truth in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![entry("a", size, coils, seed, truth), entry("b", size, coils, seed ^ 1, true)];
        write_dataset(dir.path(), &entries).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.entries, entries);
    }
}

#[test]
fn missing_file_is_a_format_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &[entry("s0", 32, 2, 1, true)]).unwrap();
    std::fs::remove_file(dir.path().join("s0_coils.arr")).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::Format { path, .. }) => assert!(path.ends_with("s0_coils.arr"), "{}", path.display()),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn shape_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &[entry("s0", 32, 2, 1, true)]).unwrap();
    let other = tempfile::tempdir().unwrap();
    write_dataset(other.path(), &[entry("s0", 16, 2, 1, true)]).unwrap();
    std::fs::copy(other.path().join("s0_image.arr"), dir.path().join("s0_image.arr")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Validation(_))));
}

#[test]
fn corrupt_header_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &[entry("s0", 16, 1, 1, false)]).unwrap();
    let path = dir.path().join("s0_kspace.arr");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[3] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
}

fn header(dims: &[usize], tag: u8) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend((dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend((d as u32).to_le_bytes());
    }
    out.push(tag);
    out
}

/// complex64 stack, written without the library writer.
fn write_c64(path: &Path, images: &[ComplexImage]) {
    let (h, w) = images[0].shape();
    let mut bytes = header(&[images.len(), h, w], 2);
    for img in images {
        for v in &img.data {
            bytes.extend((v.re as f32).to_le_bytes());
            bytes.extend((v.im as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn external_fixture_is_ingested_and_reconstructable() {
    let size = 32;
    let truth = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, size, 0)).unwrap();
    let coils = simulate_coils(3, size, size).unwrap();
    // fully sampled single-precision k-space, as an external scanner export would be
    let kspace = forward_model(&truth, &coils, &SamplingMask::full(size, size)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    write_c64(&dir.path().join("ext_kspace.bin"), &kspace);
    write_c64(&dir.path().join("ext_coils.bin"), &coils.maps);
    write_c64(&dir.path().join("ext_truth.bin"), std::slice::from_ref(&truth));
    let mut bytes = header(&[size, size], 0);
    for r in 0..size {
        let sampled = r % 2 == 0 || (12..20).contains(&r);
        for _ in 0..size {
            bytes.extend(if sampled { 1f32 } else { 0f32 }.to_le_bytes());
        }
    }
    std::fs::write(dir.path().join("ext_mask.bin"), bytes).unwrap();
    // truth is stored as a one-image stack, which the reader must reject...
    let manifest = |image: &str| {
        format!(
            r#"{{"version": 1, "entries": [{{"id": "ext", "image": "{image}", "kspace": "ext_kspace.bin",
            "mask": "ext_mask.bin", "coils": "ext_coils.bin",
            "metadata": {{"acceleration": 2.0, "acs_lines": 8, "noise_sigma": 0.0, "seed": 0}}}}]}}"#
        )
    };
    std::fs::write(dir.path().join("manifest.json"), manifest("ext_truth.bin")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Validation(_))));

    // ...and accept as a rank-2 array
    let mut bytes = header(&[size, size], 2);
    for v in &truth.data {
        bytes.extend((v.re as f32).to_le_bytes());
        bytes.extend((v.im as f32).to_le_bytes());
    }
    std::fs::write(dir.path().join("ext_truth2.bin"), bytes).unwrap();
    std::fs::write(dir.path().join("manifest.json"), manifest("ext_truth2.bin")).unwrap();
    let ds = read_dataset(dir.path()).unwrap();
    let e = &ds.entries[0];
    assert_eq!(e.acquisition.mask.sampled_rows(), 16 + 4);
    // unsampled rows were zeroed on ingestion
    assert!(e.acquisition.kspace[0].data[size..2 * size].iter().all(|v| v.norm() == 0.0));

    let reference = e.image.as_ref().unwrap();
    let zf = zero_filled(&e.acquisition).unwrap();
    let tv = reconstruct(&e.acquisition, &ReconConfig::tv_cs(150, 0.01, 0), ReconInputs::default())
        .unwrap()
        .image;
    let (pz, pt) = (psnr(&zf, reference).unwrap(), psnr(&tv, reference).unwrap());
    assert!(pz.is_finite() && pz > 10.0, "zero-filled {pz}");
    assert!(pt > pz, "tv {pt} vs zero-filled {pz}");
}
