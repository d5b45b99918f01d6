//! Capon angle estimation on accumulated range slices, peak picking and
//! truth association.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{steering_vector_with, ArrayGeometry};
use crate::error::{Error, Result};
use crate::signal::{AccumulatedCube, RECEIVE_REFERENCE};

pub const DEFAULT_LOADING: f64 = 1e-6;
pub const DEFAULT_ASSOCIATION_DEG: f64 = 10.0;

/// Snapshots of one fast-time bin: `L_R x P` after stage accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSlice {
    samples: DMatrix<Complex64>,
    range_bin: usize,
    num_stages: usize,
}

impl RangeSlice {
    pub fn new(samples: DMatrix<Complex64>, range_bin: usize, num_stages: usize) -> Result<Self> {
        if samples.ncols() == 0 || samples.nrows() == 0 {
            return Err(Error::Empty(
                "range slice needs at least one element and one pulse",
            ));
        }
        if num_stages == 0 {
            return Err(Error::Parameter(
                "range slice needs at least one stage".into(),
            ));
        }
        Ok(Self {
            samples,
            range_bin,
            num_stages,
        })
    }

    pub fn from_cube(cube: &AccumulatedCube, range_bin: usize) -> Result<Self> {
        let (elements, pulses, _) = cube.cube().shape();
        let raw = cube.cube().bin_samples(range_bin)?;
        let samples = DMatrix::from_fn(elements, pulses, |k, p| raw[p * elements + k]);
        Self::new(samples, range_bin, cube.num_stages())
    }

    pub fn samples(&self) -> &DMatrix<Complex64> {
        &self.samples
    }

    pub fn range_bin(&self) -> usize {
        self.range_bin
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    matrix: DMatrix<Complex64>,
    range_bin: usize,
}

impl Covariance {
    pub fn from_matrix(matrix: DMatrix<Complex64>, range_bin: usize) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Shape(format!(
                "covariance must be square, got {:?}",
                matrix.shape()
            )));
        }
        Ok(Self { matrix, range_bin })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn range_bin(&self) -> usize {
        self.range_bin
    }
}

/// `Z Z^H / (P N_stg)` plus `loading * trace / L_R` on the diagonal.
pub fn sample_covariance(slice: &RangeSlice, loading: f64) -> Result<Covariance> {
    if !(loading >= 0.0) {
        return Err(Error::Parameter(format!(
            "diagonal loading must be non-negative, got {loading}"
        )));
    }
    let z = &slice.samples;
    let scale = 1.0 / (z.ncols() * slice.num_stages) as f64;
    let mut r = (z * z.adjoint()).map(|v| v * scale);
    let l = r.nrows();
    // Exact Hermitian symmetry regardless of summation order.
    for i in 0..l {
        r[(i, i)] = Complex64::new(r[(i, i)].re, 0.0);
        for j in i + 1..l {
            let v = r[(i, j)];
            r[(j, i)] = v.conj();
        }
    }
    if loading > 0.0 {
        let tr: f64 = (0..l).map(|i| r[(i, i)].re).sum();
        let delta = loading * tr / l as f64;
        for i in 0..l {
            r[(i, i)] += delta;
        }
    }
    Covariance::from_matrix(r, slice.range_bin)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularSpectrum {
    pub grid: Vec<f64>,
    pub power: Vec<f64>,
}

impl AngularSpectrum {
    /// `10 log10(P / max P)`.
    pub fn normalized_db(&self) -> Vec<f64> {
        let peak = self.power.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
        self.power
            .iter()
            .map(|p| 10.0 * (p / peak).log10())
            .collect()
    }
}

/// Receive steering vectors for a fixed scan grid.
#[derive(Debug, Clone)]
pub struct ScanGrid {
    grid: Vec<f64>,
    steering: Vec<Vec<Complex64>>,
}

impl ScanGrid {
    pub fn new(geometry: &ArrayGeometry, grid: &[f64]) -> Result<Self> {
        let steering = grid
            .iter()
            .map(|&t| steering_vector_with(geometry, t, RECEIVE_REFERENCE))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.to_vec(),
            steering,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

/// `P(theta) = 1 / (a^H R^-1 a)` on the scan grid.
pub fn capon_spectrum(cov: &Covariance, scan: &ScanGrid) -> Result<AngularSpectrum> {
    let singular = || Error::SingularCovariance {
        range_bin: cov.range_bin,
    };
    let l = cov.matrix.nrows();
    if scan.steering.first().is_some_and(|a| a.len() != l) {
        return Err(Error::Shape(format!(
            "covariance is {l}x{l}, receive array has {} elements",
            scan.steering[0].len()
        )));
    }
    let chol = cov.matrix.clone().cholesky().ok_or_else(singular)?;
    let inv = chol.inverse();
    let mut power = Vec::with_capacity(scan.grid.len());
    for a in &scan.steering {
        let mut q = 0.0;
        for i in 0..l {
            let mut row = Complex64::new(0.0, 0.0);
            for j in 0..l {
                row += inv[(i, j)] * a[j];
            }
            q += (a[i].conj() * row).re;
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(singular());
        }
        power.push(1.0 / q);
    }
    Ok(AngularSpectrum {
        grid: scan.grid.clone(),
        power,
    })
}

/// Convenience wrapper building the scan grid on the fly.
pub fn capon_spectrum_on(
    cov: &Covariance,
    geometry: &ArrayGeometry,
    grid: &[f64],
) -> Result<AngularSpectrum> {
    capon_spectrum(cov, &ScanGrid::new(geometry, grid)?)
}

/// Angles of the `count` strongest strict interior local maxima, strongest
/// first.
pub fn find_peaks(spectrum: &AngularSpectrum, count: usize) -> Vec<f64> {
    let p = &spectrum.power;
    let mut peaks: Vec<usize> = (1..p.len().saturating_sub(1))
        .filter(|&i| p[i] > p[i - 1] && p[i] > p[i + 1])
        .collect();
    peaks.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    peaks.truncate(count);
    peaks.into_iter().map(|i| spectrum.grid[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub truth: usize,
    pub estimate: f64,
    /// `estimate - truth` in degrees.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionReport {
    pub estimates: Vec<f64>,
    pub matches: Vec<Match>,
    pub misses: Vec<usize>,
}

impl DetectionReport {
    pub fn is_matched(&self, truth: usize) -> bool {
        self.matches.iter().any(|m| m.truth == truth)
    }

    pub fn match_for(&self, truth: usize) -> Option<&Match> {
        self.matches.iter().find(|m| m.truth == truth)
    }
}

/// Greedy nearest-pair association. Pairs further apart than `threshold`
/// never match; ties go to the lower truth index, then the lower estimate
/// index.
pub fn associate(estimates: &[f64], truths: &[f64], threshold: f64) -> Result<DetectionReport> {
    if !(threshold > 0.0) {
        return Err(Error::Parameter(format!(
            "association threshold must be positive, got {threshold}"
        )));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truths.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            let d = (e - t).abs();
            if d <= threshold {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut truth_used = vec![false; truths.len()];
    let mut est_used = vec![false; estimates.len()];
    let mut matches = Vec::new();
    for (_, i, j) in pairs {
        if truth_used[i] || est_used[j] {
            continue;
        }
        truth_used[i] = true;
        est_used[j] = true;
        matches.push(Match {
            truth: i,
            estimate: estimates[j],
            error: estimates[j] - truths[i],
        });
    }
    matches.sort_by_key(|m| m.truth);
    let misses = (0..truths.len()).filter(|&i| !truth_used[i]).collect();
    Ok(DetectionReport {
        estimates: estimates.to_vec(),
        matches,
        misses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pd: f64,
    pub rmse: Option<f64>,
    pub matched: usize,
    pub total: usize,
}

/// Detection probability and angle RMSE pooled over reports.
pub fn metrics<'a>(reports: impl IntoIterator<Item = &'a DetectionReport>) -> Result<Metrics> {
    let mut acc = MetricsAccumulator::default();
    let mut n = 0;
    for r in reports {
        acc.add_report(r);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("metrics need at least one report"));
    }
    Ok(acc.finish())
}

/// Running PD/RMSE tally, also usable per truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsAccumulator {
    matched: usize,
    total: usize,
    sq_error: f64,
}

impl MetricsAccumulator {
    pub fn add_report(&mut self, report: &DetectionReport) {
        for m in &report.matches {
            self.add(Some(m.error));
        }
        for _ in &report.misses {
            self.add(None);
        }
    }

    /// One truth outcome: `Some(error)` when matched.
    pub fn add(&mut self, error: Option<f64>) {
        self.total += 1;
        if let Some(e) = error {
            self.matched += 1;
            self.sq_error += e * e;
        }
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.matched += other.matched;
        self.total += other.total;
        self.sq_error += other.sq_error;
    }

    pub fn finish(&self) -> Metrics {
        let pd = if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        };
        let rmse = (self.matched > 0).then(|| (self.sq_error / self.matched as f64).sqrt());
        Metrics {
            pd,
            rmse,
            matched: self.matched,
            total: self.total,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::angle_grid;
    use approx::assert_relative_eq;

    fn rx() -> ArrayGeometry {
        ArrayGeometry::half_wavelength(8, 0.0107).unwrap()
    }

    fn a_r(angle: f64) -> Vec<Complex64> {
        steering_vector_with(&rx(), angle, RECEIVE_REFERENCE).unwrap()
    }

    /// Snapshots of sources with distinct Doppler-like phase progressions.
    fn snapshots(
        sources: &[(f64, f64)],
        pulses: usize,
        noise: f64,
        seed: u64,
    ) -> DMatrix<Complex64> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::rng::substream(seed, &[1]);
        let mut z = DMatrix::zeros(8, pulses);
        for (s, &(angle, amp)) in sources.iter().enumerate() {
            let a = a_r(angle);
            for p in 0..pulses {
                let ph = Complex64::cis(0.9 * (s as f64 + 1.0) * p as f64 + s as f64);
                for k in 0..8 {
                    z[(k, p)] += a[k] * ph * amp;
                }
            }
        }
        for v in z.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(re, im) * (noise / 2f64.sqrt());
        }
        z
    }

    #[test]
    fn zero_slice_zero_loading() {
        let s = RangeSlice::new(DMatrix::zeros(8, 32), 3, 1).unwrap();
        let r = sample_covariance(&s, 0.0).unwrap();
        assert!(r.matrix().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        let err = capon_spectrum_on(&r, &rx(), &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::SingularCovariance { range_bin: 3 }));
    }

    #[test]
    fn rank_one_outer_product() {
        let a = a_r(25.0);
        let z = DMatrix::from_fn(8, 32, |k, p| a[k] * Complex64::cis(0.3 * p as f64));
        let s = RangeSlice::new(z, 0, 3).unwrap();
        let r = sample_covariance(&s, 0.0).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = a[i] * a[j].conj() / 3.0;
                assert!((r.matrix()[(i, j)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_is_hermitian_with_loading() {
        let z = snapshots(&[(10.0, 1.0), (-40.0, 0.5)], 32, 0.3, 5);
        let r = sample_covariance(&RangeSlice::new(z, 0, 1).unwrap(), 1e-3).unwrap();
        let m = r.matrix();
        assert_eq!(m, &m.adjoint());
    }

    #[test]
    fn identity_gives_flat_spectrum() {
        let r = Covariance::from_matrix(DMatrix::identity(8, 8), 0).unwrap();
        let grid = angle_grid(-80.0, 80.0, 0.1);
        let s = capon_spectrum_on(&r, &rx(), &grid).unwrap();
        assert!(s.power.iter().all(|p| (p - 0.125).abs() < 1e-12));
        assert!(find_peaks(&s, 3).is_empty());
    }

    #[test]
    fn single_source_peak() {
        let z = snapshots(&[(20.0, 1.0)], 32, 0.0, 1);
        let r = sample_covariance(&RangeSlice::new(z, 0, 1).unwrap(), DEFAULT_LOADING).unwrap();
        let grid = angle_grid(-80.0, 80.0, 0.1);
        let s = capon_spectrum_on(&r, &rx(), &grid).unwrap();
        let peak = find_peaks(&s, 1)[0];
        assert!((peak - 20.0).abs() <= 0.1 + 1e-9, "{peak}");
    }

    #[test]
    fn two_sources_resolved() {
        let amp = 10f64.powf(20.0 / 20.0);
        let z = snapshots(&[(-30.0, amp), (30.0, amp)], 32, 1.0, 2);
        let r = sample_covariance(&RangeSlice::new(z, 0, 1).unwrap(), DEFAULT_LOADING).unwrap();
        let coarse = capon_spectrum_on(&r, &rx(), &angle_grid(-80.0, 80.0, 0.1)).unwrap();
        let mut found = find_peaks(&coarse, 2);
        found.sort_by(f64::total_cmp);
        // Brute-force reference at 0.01 deg around each truth.
        for (est, truth) in found.iter().zip([-30.0, 30.0]) {
            let fine =
                capon_spectrum_on(&r, &rx(), &angle_grid(truth - 2.0, truth + 2.0, 0.01)).unwrap();
            let best = fine.grid[fine
                .power
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0];
            assert!((est - truth).abs() <= 0.5, "{est} vs {truth}");
            assert!((est - best).abs() <= 0.1 + 1e-9);
        }
    }

    #[test]
    fn scaling_invariance() {
        let z = snapshots(&[(-12.0, 2.0), (44.0, 1.0)], 32, 0.5, 3);
        let r = sample_covariance(&RangeSlice::new(z, 0, 1).unwrap(), DEFAULT_LOADING).unwrap();
        let r5 = Covariance::from_matrix(r.matrix().map(|v| v * 5.0), 0).unwrap();
        let grid = angle_grid(-80.0, 80.0, 0.1);
        let a = capon_spectrum_on(&r, &rx(), &grid).unwrap();
        let b = capon_spectrum_on(&r5, &rx(), &grid).unwrap();
        for (x, y) in a.power.iter().zip(&b.power) {
            assert_relative_eq!(*y, 5.0 * x, max_relative = 1e-9);
        }
        assert_eq!(find_peaks(&a, 2), find_peaks(&b, 2));
    }

    #[test]
    fn peaks() {
        let grid: Vec<f64> = (0..10).map(f64::from).collect();
        let mono = AngularSpectrum {
            grid: grid.clone(),
            power: (1..=10).map(f64::from).collect(),
        };
        assert!(find_peaks(&mono, 2).is_empty());
        let mut flat = vec![1.0; 10];
        flat[6] = 2.0;
        assert_eq!(
            find_peaks(
                &AngularSpectrum {
                    grid: grid.clone(),
                    power: flat
                },
                3
            ),
            vec![6.0]
        );
        let bumps = vec![0.0, 3.0, 0.0, 5.0, 0.0, 4.0, 4.0, 0.0, 1.0, 0.0];
        assert_eq!(
            find_peaks(&AngularSpectrum { grid, power: bumps }, 5),
            vec![3.0, 1.0, 8.0]
        );
    }

    #[test]
    fn association_rules() {
        let r = associate(&[7.3], &[7.0], 10.0).unwrap();
        assert_eq!(r.matches.len(), 1);
        assert_relative_eq!(r.matches[0].error, 0.3, epsilon = 1e-12);

        let r = associate(&[18.0], &[7.0], 10.0).unwrap();
        assert!(r.matches.is_empty());
        assert_eq!(r.misses, vec![0]);

        let r = associate(&[5.0], &[0.0, 10.0], 10.0).unwrap();
        assert_eq!(r.matches[0].truth, 0);
        assert_eq!(r.misses, vec![1]);

        let r = associate(&[1.0, 9.0], &[0.0, 10.0], 10.0).unwrap();
        assert_eq!(r.matches.len(), 2);
        assert!(associate(&[], &[], 0.0).is_err());
    }

    #[test]
    fn metric_arithmetic() {
        let full = DetectionReport {
            estimates: vec![1.0],
            matches: vec![Match {
                truth: 0,
                estimate: 1.0,
                error: 0.0,
            }],
            misses: vec![],
        };
        let m = metrics([&full]).unwrap();
        assert_eq!((m.pd, m.rmse), (1.0, Some(0.0)));

        let half = DetectionReport {
            misses: vec![1],
            ..full.clone()
        };
        assert_eq!(metrics([&half]).unwrap().pd, 0.5);

        let errs = DetectionReport {
            estimates: vec![],
            matches: [1.0, 2.0, 2.0, 3.0]
                .iter()
                .enumerate()
                .map(|(i, e)| Match {
                    truth: i,
                    estimate: *e,
                    error: *e,
                })
                .collect(),
            misses: vec![],
        };
        assert_relative_eq!(
            metrics([&errs]).unwrap().rmse.unwrap(),
            (18.0f64 / 4.0).sqrt(),
            epsilon = 1e-12
        );

        let none = DetectionReport {
            estimates: vec![],
            matches: vec![],
            misses: vec![0],
        };
        assert_eq!(metrics([&none]).unwrap().rmse, None);
        assert!(metrics(std::iter::empty()).is_err());
    }
}
