//! Exact assignment: square, rectangular with a dummy cost, and Mahalanobis.

use nalgebra::Matrix2;
use oapsense::assign::{euclidean_cost, mahalanobis_cost, solve_lap, solve_lap_rect};

fn main() -> oapsense::Result<()> {
    let truths = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let estimates = [[9.0, 1.0], [0.5, 9.0], [1.0, -0.5]];
    let square = solve_lap(&euclidean_cost(&truths, &estimates))?;
    println!(
        "square: pairs {:?}, total {:.3} m",
        square.pairs, square.total_cost
    );

    let extra = [[9.0, 1.0], [0.5, 9.0], [1.0, -0.5], [80.0, 80.0]];
    let rect = solve_lap_rect(&euclidean_cost(&truths[..2], &extra), 5.0)?;
    println!(
        "rectangular: pairs {:?}, unmatched truths {:?}, spurious estimates {:?}",
        rect.pairs, rect.unassigned_refs, rect.unassigned_dets
    );

    // truth 0 is uncertain along x, so the distant estimate on its axis is the likelier match
    let covs = [Matrix2::new(100.0, 0.0, 0.0, 1.0), Matrix2::identity()];
    let refs = [[0.0, 0.0], [2.0, 0.0]];
    let dets = [[1.0, 0.0], [8.0, 0.0]];
    let eu = solve_lap(&euclidean_cost(&refs, &dets))?;
    let ma = solve_lap(&mahalanobis_cost(&refs, &dets, &covs)?)?;
    println!(
        "euclidean pairs {:?}, mahalanobis pairs {:?}",
        eu.pairs, ma.pairs
    );
    Ok(())
}
