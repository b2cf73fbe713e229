mod common;

use byteorder::{ByteOrder, LittleEndian as LE};
use common::*;
use pbj::cluster::{threshold_label, Connectivity};
use pbj::io::{
    parse_nifti, read_cluster_records, read_covariates, read_nifti, write_covariates, write_nifti, write_results,
    CovariateError, CovariateTable, NiftiError, Volume, VolumeData,
};
use pbj::model::{Mask, StatImage};
use rand::Rng;
use std::io::Write;

/// Hand-built single-file NIfTI-1 image: little-endian, int16, no affine codes.
fn raw_int16(dims: [i16; 3], slope: f32, inter: f32, data: &[i16]) -> Vec<u8> {
    let mut b = vec![0u8; 352];
    LE::write_i32(&mut b[0..], 348);
    let dim = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        LE::write_i16(&mut b[40 + 2 * k..], *d);
    }
    LE::write_i16(&mut b[70..], 4);
    LE::write_i16(&mut b[72..], 16);
    for k in 0..8 {
        LE::write_f32(&mut b[76 + 4 * k..], 1.0);
    }
    LE::write_f32(&mut b[108..], 352.0);
    LE::write_f32(&mut b[112..], slope);
    LE::write_f32(&mut b[116..], inter);
    b[344..348].copy_from_slice(b"n+1\0");
    for v in data {
        let mut x = [0u8; 2];
        LE::write_i16(&mut x, *v);
        b.extend_from_slice(&x);
    }
    b
}

#[test]
fn scaled_int16_fixture() {
    let raw = raw_int16([2, 1, 1], 2.0, 1.0, &[5, -3]);
    let vol = parse_nifti(&raw).unwrap();
    assert_eq!(vol.values(), vec![11.0, -5.0]);
    assert_eq!(vol.data, VolumeData::I16(vec![5, -3]));
    let unscaled = parse_nifti(&raw_int16([2, 1, 1], 0.0, 7.0, &[5, -3])).unwrap();
    assert_eq!(unscaled.values(), vec![5.0, -3.0]);
}

#[test]
fn malformed_headers_are_rejected() {
    let mut raw = raw_int16([2, 1, 1], 0.0, 0.0, &[1, 2]);
    LE::write_i32(&mut raw[0..], 540);
    assert!(matches!(parse_nifti(&raw), Err(NiftiError::NotNifti1(540))));
    let mut raw = raw_int16([2, 1, 1], 0.0, 0.0, &[1, 2]);
    raw[344..348].copy_from_slice(b"ni1\0");
    assert!(matches!(parse_nifti(&raw), Err(NiftiError::BadMagic(_))));
    let mut raw = raw_int16([2, 1, 1], 0.0, 0.0, &[1, 2]);
    LE::write_i16(&mut raw[70..], 1);
    assert!(matches!(parse_nifti(&raw), Err(NiftiError::UnsupportedDatatype(1))));
    let raw = raw_int16([2, 1, 1], 0.0, 0.0, &[1]);
    assert!(matches!(parse_nifti(&raw), Err(NiftiError::Truncated { .. })));
    assert!(parse_nifti(&raw[..100]).is_err());
}

#[test]
fn big_endian_files_are_read() {
    let mut b = vec![0u8; 352];
    byteorder::BigEndian::write_i32(&mut b[0..], 348);
    for (k, d) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
        byteorder::BigEndian::write_i16(&mut b[40 + 2 * k..], *d);
    }
    byteorder::BigEndian::write_i16(&mut b[70..], 16);
    byteorder::BigEndian::write_i16(&mut b[72..], 32);
    byteorder::BigEndian::write_f32(&mut b[108..], 352.0);
    b[344..348].copy_from_slice(b"n+1\0");
    for v in [1.5f32, -2.25] {
        let mut x = [0u8; 4];
        byteorder::BigEndian::write_f32(&mut x, v);
        b.extend_from_slice(&x);
    }
    assert_eq!(parse_nifti(&b).unwrap().values(), vec![1.5, -2.25]);
}

#[test]
fn written_header_is_conformant() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.nii");
    let affine = [[-2.0, 0.0, 0.0, 90.0], [0.0, 2.0, 0.0, -126.0], [0.0, 0.0, 2.0, -72.0], [0.0, 0.0, 0.0, 1.0]];
    let vol = Volume::new(vec![3, 4, 5], vec![2.0, 2.0, 2.0], VolumeData::F32(vec![0.5; 60]))
        .unwrap()
        .with_affine(affine);
    write_nifti(&vol, &path).unwrap();
    let b = std::fs::read(&path).unwrap();
    assert_eq!(b.len(), 352 + 60 * 4);
    assert_eq!(LE::read_i32(&b[0..]), 348);
    assert_eq!(&b[344..348], b"n+1\0");
    assert_eq!(LE::read_f32(&b[108..]), 352.0);
    assert_eq!((LE::read_i16(&b[70..]), LE::read_i16(&b[72..])), (16, 32));
    let dim: Vec<i16> = (0..4).map(|k| LE::read_i16(&b[40 + 2 * k..])).collect();
    assert_eq!(dim, vec![3, 3, 4, 5]);
    assert!(LE::read_i16(&b[254..]) > 0, "sform_code set");
    for (r, off) in [280, 296, 312].iter().enumerate() {
        for c in 0..4 {
            assert_eq!(LE::read_f32(&b[off + 4 * c..]) as f64, affine[r][c]);
        }
    }
    let back = read_nifti(&path).unwrap();
    assert_eq!(back.affine, affine);
    assert_eq!(back.data, vol.data);
}

#[test]
fn random_volumes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(41);
    for case in 0..30 {
        let dims: Vec<usize> = (0..3).map(|_| r.random_range(1..7)).collect();
        let len: usize = dims.iter().product();
        let data = match case % 3 {
            0 => VolumeData::I16((0..len).map(|_| r.random()).collect()),
            1 => VolumeData::F32((0..len).map(|_| r.random_range(-1e6f32..1e6)).collect()),
            _ => VolumeData::F64((0..len).map(|_| r.random_range(-1e12..1e12)).collect()),
        };
        let mut vol = Volume::new(dims, vec![1.5, 2.0, 2.5], data).unwrap();
        if case % 2 == 0 {
            vol = vol.with_scaling(0.5, -3.0);
        }
        let ext = if case % 4 < 2 { "nii" } else { "nii.gz" };
        let path = dir.path().join(format!("v{case}.{ext}"));
        write_nifti(&vol, &path).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.data, vol.data);
        assert_eq!(back.dims, vol.dims);
        assert_eq!(back.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), vol.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn covariates_round_trip_and_report_missing_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(42);
    let n = 1000;
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| r.random_range(-1e3..1e3)).collect()).collect();
    let t = CovariateTable::new(ids, vec!["a".into(), "b".into(), "c".into()], cols.clone()).unwrap();
    let path = dir.path().join("c.csv");
    write_covariates(&t, &path).unwrap();
    let back = read_covariates(&path).unwrap();
    for (k, name) in ["a", "b", "c"].iter().enumerate() {
        assert_eq!(back.column(name).unwrap(), cols[k].as_slice());
    }
    assert_eq!(back.ids(), t.ids());

    let bad = dir.path().join("bad.csv");
    std::fs::File::create(&bad).unwrap().write_all(b"id,age,sex\ns1,10,1\ns2,NA,0\n").unwrap();
    match read_covariates(&bad) {
        Err(CovariateError::MissingValue { row, column }) => assert_eq!((row, column.as_str()), (2, "age")),
        other => panic!("unexpected {other:?}"),
    }
    std::fs::File::create(&bad).unwrap().write_all(b"id,age\ns1,ten\n").unwrap();
    assert!(matches!(read_covariates(&bad), Err(CovariateError::NonNumeric { row: 1, .. })));
}

#[test]
fn results_files_agree_with_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let mask = Mask::ellipsoid([8, 8, 8], [2.0; 3]).unwrap();
    let mut r = rng(43);
    let stat = StatImage::new((0..mask.len()).map(|_| r.random_range(0.0..10.0)).collect(), 1).unwrap();
    let table = threshold_label(&stat, 8.5, Connectivity::TwentySix, &mask).unwrap();
    let paths = write_results(&table, &stat, &mask, dir.path().join("out")).unwrap();
    let (header, records) = read_cluster_records(&paths.records).unwrap();
    assert_eq!(header.n_clusters, table.len());
    assert_eq!(records.len(), table.len());
    let labels = read_nifti(&paths.labels).unwrap().values();
    let stat_back = read_nifti(&paths.stat).unwrap().values();
    assert_eq!(mask.gather(&stat_back), stat.values());
    for rec in &records {
        let count = labels.iter().filter(|&&l| l == rec.label as f64).count();
        assert_eq!(count, rec.size_voxels);
        let site = mask.linear_site(rec.peak_ijk);
        assert_eq!(labels[site], rec.label as f64);
        assert_eq!(stat_back[site], rec.peak_value);
    }
    assert!(labels.iter().enumerate().all(|(s, &l)| l == 0.0 || mask.index_of_site(s).is_some()));

    // Empty and single-cluster tables.
    let empty = threshold_label(&stat, 100.0, Connectivity::Six, &mask).unwrap();
    let p = write_results(&empty, &stat, &mask, dir.path().join("empty")).unwrap();
    let (h, recs) = read_cluster_records(&p.records).unwrap();
    assert_eq!((h.n_clusters, recs.len()), (0, 0));
    assert!(read_nifti(&p.labels).unwrap().values().iter().all(|&l| l == 0.0));
    let all = threshold_label(&stat, -1.0, Connectivity::Six, &mask).unwrap();
    let p = write_results(&all, &stat, &mask, dir.path().join("one")).unwrap();
    let (_, recs) = read_cluster_records(&p.records).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].size_voxels, mask.len());
}
