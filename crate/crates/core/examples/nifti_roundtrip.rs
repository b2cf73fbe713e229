//! Writing and reading NIfTI-1 volumes, with and without gzip and intensity
//! scaling.
//!
//! cargo run --example nifti_roundtrip

use pbj::io::{read_nifti, write_nifti, Volume, VolumeData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("pbj_nifti_example");
    std::fs::create_dir_all(&dir)?;
    let data: Vec<i16> = (0..4 * 3 * 2).map(|i| i * 100 - 1000).collect();
    let vol = Volume::new(vec![4, 3, 2], vec![2.0, 2.0, 2.5], VolumeData::I16(data))?.with_scaling(0.01, 5.0);

    for name in ["scaled.nii", "scaled.nii.gz"] {
        let path = dir.join(name);
        write_nifti(&vol, &path)?;
        let back = read_nifti(&path)?;
        let bytes = std::fs::metadata(&path)?.len();
        println!(
            "{name}: {bytes} bytes, dims {:?}, first values {:?}, identical {}",
            back.dims,
            &back.values()[..3],
            back == vol
        );
    }
    let stat = Volume::new(vec![4, 3, 2], vec![2.0; 3], VolumeData::F64(vec![1.5; 24]))?;
    write_nifti(&stat, dir.join("stat.nii"))?;
    println!("affine of a fresh volume: {:?}", read_nifti(dir.join("stat.nii"))?.affine);
    Ok(())
}
