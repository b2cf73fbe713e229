//! Connected-component labeling of a thresholded image and cluster p-values
//! against a max-size distribution.
//!
//! cargo run --example cluster_labeling

use pbj::cluster::{sei_pvalues, threshold_label, Connectivity, MaxSizeDistribution};
use pbj::model::{Mask, StatImage};

fn main() -> pbj::Result<()> {
    let mask = Mask::full([10, 10, 10], [2.0; 3])?;
    let mut values = vec![0.0; mask.len()];
    let mut set = |lo: [usize; 3], hi: [usize; 3], z: f64| {
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    values[mask.index_of([i, j, k]).unwrap()] = z;
                }
            }
        }
    };
    set([1, 1, 1], [4, 4, 4], 12.0);
    set([6, 6, 6], [8, 7, 7], 9.0);
    set([4, 4, 4], [5, 5, 5], 8.0); // touches the first block only at a corner
    let img = StatImage::new(values, 1)?;

    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let table = threshold_label(&img, 6.63, conn, &mask)?;
        println!("{}-connectivity: sizes {:?}", conn.neighbours(), table.sizes());
    }

    let null = MaxSizeDistribution { z0: 6.63, sizes: vec![0, 1, 2, 2, 3, 5, 8, 13, 21, 30] };
    let table = sei_pvalues(&threshold_label(&img, 6.63, Connectivity::TwentySix, &mask)?, &null)?;
    for c in &table.clusters {
        println!(
            "cluster {}: {} voxels ({} mm³), peak {:.1} at {:?}, p = {:.3}",
            c.label,
            c.size_voxels,
            c.extent_mm3,
            c.peak_value,
            c.peak_site,
            c.p_value.unwrap()
        );
    }
    Ok(())
}
