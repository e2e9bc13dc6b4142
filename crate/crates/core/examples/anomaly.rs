//! Flag transmitters whose estimated position matches no claimed position.

use oapsense::geom::{flag_anomalies, write_anomaly_csv, GroundEstimate};

fn main() -> oapsense::Result<()> {
    let (z, hu) = (0.03, 300.0);
    let estimates = [[12.0, -40.2], [-70.5, 33.0], [101.0, 88.0], [-5.0, -110.0]]
        .iter()
        .map(|&p| GroundEstimate::from_position(p, z, hu))
        .collect::<oapsense::Result<Vec<_>>>()?;
    // users 0..2 reported their positions; the last estimate has no claim
    let claims = [(0, [12.4, -40.0]), (1, [-70.0, 33.5]), (2, [100.2, 87.1])];
    let report = flag_anomalies(&estimates, &claims, 2.0)?;
    for (i, est) in report.flagged() {
        println!(
            "estimate {i} at ({:.1}, {:.1}) m has no matching claim",
            est.position[0], est.position[1]
        );
    }
    println!("claims without a detection: {:?}", report.missing_claims);
    write_anomaly_csv(std::io::stdout().lock(), &[(0, report)]).map_err(|e| {
        oapsense::Error::Io {
            path: "stdout".into(),
            source: e,
        }
    })?;
    Ok(())
}
