//! Codebook quality metrics.
//!
//! * AMD: mean Euclidean distance from evaluation frames to their nearest center.
//! * MDC: smallest Euclidean distance between any two centers.
//! * QDC: a low percentile (default 5th) of the per-center nearest-neighbor
//!   distances, a version of MDC that is robust to a few outlying pairs.
//!
//! All distances are true (not squared) Euclidean and computed exactly.

use std::io::Write;

use serde::Serialize;

use crate::codebook::Codebook;
use crate::distance;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::fmt::significant;
use crate::quantizer::quantization_error;

pub const DEFAULT_QDC_PERCENTILE: f64 = 0.05;

/// Which distance distribution QDC takes its percentile of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QdcMode {
    /// Each center's distance to its nearest other center (`k` values).
    #[default]
    NearestNeighbor,
    /// Every unordered center pair (`k(k−1)/2` values).
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterQualityReport {
    pub k: usize,
    pub n_eval_frames: usize,
    pub amd: f64,
    pub mdc: f64,
    pub qdc: f64,
    pub qdc_percentile: f64,
}

impl ClusterQualityReport {
    pub const CSV_HEADER: &'static str = "k,n_eval_frames,amd,mdc,qdc,qdc_percentile";
}

pub fn amd(features: &FeatureMatrix, codebook: &Codebook) -> Result<f64> {
    quantization_error(features, codebook)
}

pub fn mdc(codebook: &Codebook) -> Result<f64> {
    let nn = nearest_neighbor_distances(codebook)?;
    Ok(nn.into_iter().fold(f64::INFINITY, f64::min))
}

/// Per-center nearest-neighbor distances, in center order.
pub fn nearest_neighbor_distances(codebook: &Codebook) -> Result<Vec<f64>> {
    if codebook.k() < 2 {
        return Err(Error::TooFewCenters(codebook.k()));
    }
    Ok(distance::nearest_neighbor_distances(codebook.centers(), codebook.dim()))
}

pub fn qdc(codebook: &Codebook, percentile: f64) -> Result<f64> {
    qdc_with_mode(codebook, percentile, QdcMode::NearestNeighbor)
}

pub fn qdc_with_mode(codebook: &Codebook, percentile: f64, mode: QdcMode) -> Result<f64> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::Config(format!("percentile {percentile} is not in (0, 1)")));
    }
    let values = match mode {
        QdcMode::NearestNeighbor => nearest_neighbor_distances(codebook)?,
        QdcMode::AllPairs => {
            if codebook.k() < 2 {
                return Err(Error::TooFewCenters(codebook.k()));
            }
            distance::all_pair_distances(codebook.centers(), codebook.dim())
        }
    };
    Ok(lower_percentile(values, percentile))
}

/// Element `floor(p·(n−1))` of the ascending sort of `values`.
fn lower_percentile(mut values: Vec<f64>, p: f64) -> f64 {
    let rank = ((p * (values.len() - 1) as f64).floor() as usize).min(values.len() - 1);
    let (_, v, _) = values.select_nth_unstable_by(rank, f64::total_cmp);
    *v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportOptions {
    pub qdc_percentile: f64,
    pub qdc_mode: QdcMode,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            qdc_percentile: DEFAULT_QDC_PERCENTILE,
            qdc_mode: QdcMode::NearestNeighbor,
        }
    }
}

/// One report per codebook, all scored on the same evaluation frames.
pub fn report(features: &FeatureMatrix, codebooks: &[Codebook]) -> Result<Vec<ClusterQualityReport>> {
    report_with(features, codebooks, &ReportOptions::default())
}

pub fn report_with(
    features: &FeatureMatrix,
    codebooks: &[Codebook],
    options: &ReportOptions,
) -> Result<Vec<ClusterQualityReport>> {
    codebooks
        .iter()
        .map(|cb| {
            Ok(ClusterQualityReport {
                k: cb.k(),
                n_eval_frames: features.n_frames(),
                amd: amd(features, cb)?,
                mdc: mdc(cb)?,
                qdc: qdc_with_mode(cb, options.qdc_percentile, options.qdc_mode)?,
                qdc_percentile: options.qdc_percentile,
            })
        })
        .collect()
}

/// Wide CSV, one row per codebook, values to 6 significant digits.
pub fn write_csv<W: Write>(mut out: W, reports: &[ClusterQualityReport]) -> std::io::Result<()> {
    writeln!(out, "{}", ClusterQualityReport::CSV_HEADER)?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k,
            r.n_eval_frames,
            significant(r.amd, 6),
            significant(r.mdc, 6),
            significant(r.qdc, 6),
            significant(r.qdc_percentile, 6)
        )?;
    }
    Ok(())
}

/// Long ("tidy") CSV: `k,metric,value`, one row per codebook and metric.
pub fn write_long_csv<W: Write>(mut out: W, reports: &[ClusterQualityReport]) -> std::io::Result<()> {
    writeln!(out, "k,metric,value")?;
    for r in reports {
        for (name, v) in [("amd", r.amd), ("mdc", r.mdc), ("qdc", r.qdc)] {
            writeln!(out, "{},{name},{}", r.k, significant(v, 6))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb(rows: &[[f32; 2]]) -> Codebook {
        Codebook::from_rows(rows).unwrap()
    }

    #[test]
    fn amd_arithmetic_mean() {
        let c = cb(&[[0.0, 0.0], [100.0, 0.0]]);
        let x = FeatureMatrix::from_rows(&[[1.0f32, 0.0], [100.0, 3.0]]).unwrap();
        assert_eq!(amd(&x, &c).unwrap(), 2.0);
        let on = FeatureMatrix::from_rows(&[[100.0f32, 0.0]]).unwrap();
        assert_eq!(amd(&on, &c).unwrap(), 0.0);
    }

    #[test]
    fn mdc_examples() {
        assert_eq!(mdc(&cb(&[[0.0, 0.0], [3.0, 4.0], [100.0, 0.0]])).unwrap(), 5.0);
        assert_eq!(mdc(&cb(&[[1.0, 1.0], [1.0, 1.0]])).unwrap(), 0.0);
        assert!(matches!(mdc(&cb(&[[1.0, 1.0]])), Err(Error::TooFewCenters(1))));
    }

    #[test]
    fn qdc_degenerate_cases() {
        // equilateral triangle: every pairwise distance is 2
        let s = 3f32.sqrt();
        let tri = cb(&[[0.0, 0.0], [2.0, 0.0], [1.0, s]]);
        let m = mdc(&tri).unwrap();
        assert!((qdc(&tri, 0.05).unwrap() - m).abs() < 1e-12);
        let two = cb(&[[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!(qdc(&two, 0.05).unwrap(), mdc(&two).unwrap());
        assert_eq!(qdc(&two, 0.99).unwrap(), 5.0);
    }

    #[test]
    fn percentile_uses_lower_rank() {
        // NN distances: 1, 1, 10, 30 (points 0,1,11,41 on a line)
        let c = cb(&[[0.0, 0.0], [1.0, 0.0], [11.0, 0.0], [41.0, 0.0]]);
        assert_eq!(qdc(&c, 0.05).unwrap(), 1.0);
        assert_eq!(qdc(&c, 0.5).unwrap(), 1.0); // floor(0.5 * 3) = 1
        assert_eq!(qdc(&c, 0.7).unwrap(), 10.0); // floor(2.1) = 2
        assert_eq!(qdc(&c, 0.999).unwrap(), 10.0);
        assert!(qdc(&c, 0.0).is_err());
        assert!(qdc(&c, 1.0).is_err());
    }

    #[test]
    fn all_pairs_mode() {
        // pair distances: 1, 11, 41, 10, 40, 30 -> sorted 1,10,11,30,40,41
        let c = cb(&[[0.0, 0.0], [1.0, 0.0], [11.0, 0.0], [41.0, 0.0]]);
        assert_eq!(qdc_with_mode(&c, 0.5, QdcMode::AllPairs).unwrap(), 11.0);
        assert_eq!(qdc_with_mode(&c, 0.05, QdcMode::AllPairs).unwrap(), 1.0);
    }

    #[test]
    fn csv_output() {
        let c = cb(&[[0.0, 0.0], [3.0, 4.0]]);
        let x = FeatureMatrix::from_rows(&[[0.0f32, 1.0]]).unwrap();
        let reports = report(&x, std::slice::from_ref(&c)).unwrap();
        assert_eq!(reports.len(), 1);
        let mut out = Vec::new();
        write_csv(&mut out, &reports).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "k,n_eval_frames,amd,mdc,qdc,qdc_percentile\n2,1,1,5,5,0.05\n"
        );
        let mut long = Vec::new();
        write_long_csv(&mut long, &reports).unwrap();
        assert_eq!(
            String::from_utf8(long).unwrap(),
            "k,metric,value\n2,amd,1\n2,mdc,5\n2,qdc,5\n"
        );
    }
}
